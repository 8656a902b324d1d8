"""Conv1D-LSTM intrusion detection on NSL-KDD with squirrel-search tuning."""

__version__ = "0.1.0"
