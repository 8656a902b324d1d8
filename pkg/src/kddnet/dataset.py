"""NSL-KDD parsing, leak-free encoding, stratified splitting and class weights."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FEATURES: tuple[str, ...] = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in",
    "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files", "num_outbound_cmds",
    "is_host_login", "is_guest_login", "count", "srv_count", "serror_rate",
    "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate",
    "diff_srv_rate", "srv_diff_host_rate", "dst_host_count", "dst_host_srv_count",
    "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)
CATEGORICAL: tuple[str, ...] = ("protocol_type", "service", "flag")
CONTINUOUS: tuple[str, ...] = tuple(f for f in FEATURES if f not in CATEGORICAL)
RATE_FEATURES = frozenset(f for f in CONTINUOUS if f.endswith("_rate"))

CATEGORIES: tuple[str, ...] = ("Normal", "DoS", "Probe", "R2L", "U2R")
BINARY_CLASSES: tuple[str, ...] = ("Normal", "Attack")

ENCODER_FORMAT_VERSION = 1


class ParseError(ValueError):
    def __init__(self, row: int, message: str, expected: str | None = None):
        self.row = row
        self.expected = expected
        super().__init__(f"row {row}: {message}")


class UnknownAttackName(KeyError):
    """Raised when a label is missing from the taxonomy table."""


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class RawRecord:
    continuous: tuple[float, ...]
    protocol_type: str
    service: str
    flag: str
    attack_name: str
    difficulty: int | None = None

    def categorical(self, name: str) -> str:
        return getattr(self, name)

    def feature(self, name: str):
        if name in CATEGORICAL:
            return getattr(self, name)
        return self.continuous[CONTINUOUS.index(name)]


def _parse_row(fields: list[str], row: int, schema: Sequence[str]) -> RawRecord:
    n = len(schema)
    if len(fields) not in (n + 1, n + 2):
        raise ParseError(row, f"expected {n + 1} or {n + 2} fields, got {len(fields)}",
                         expected=f"{n + 1}|{n + 2}")
    cont: list[float] = []
    cats: dict[str, str] = {}
    for name, raw in zip(schema, fields):
        raw = raw.strip()
        if name in CATEGORICAL:
            if not raw:
                raise ParseError(row, f"empty categorical field {name!r}")
            cats[name] = raw
            continue
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(row, f"non-numeric value {raw!r} in {name!r}") from None
        if not math.isfinite(value):
            raise ParseError(row, f"non-finite value in {name!r}")
        if name in RATE_FEATURES and not 0.0 <= value <= 1.0:
            raise ParseError(row, f"rate feature {name!r} outside [0,1]: {value}")
        cont.append(value)
    label = fields[n].strip()
    if not label:
        raise ParseError(row, "empty attack label")
    difficulty = None
    if len(fields) == n + 2:
        try:
            difficulty = int(fields[n + 1])
        except ValueError:
            raise ParseError(row, f"bad difficulty {fields[n + 1]!r}") from None
    return RawRecord(tuple(cont), cats["protocol_type"], cats["service"], cats["flag"],
                     label, difficulty)


def parse_lines(lines: Iterable[str], schema: Sequence[str] = FEATURES) -> list[RawRecord]:
    records = []
    for row, fields in enumerate(csv.reader(lines), start=1):
        if not fields:
            continue
        records.append(_parse_row(fields, row, schema))
    if not records:
        raise ParseError(0, "empty input")
    return records


def parse_nslkdd(path: str | Path, schema: Sequence[str] = FEATURES) -> list[RawRecord]:
    """Read an NSL-KDD text file (41 features, label, optional difficulty).

    Row order is preserved. Malformed rows raise :class:`ParseError` carrying
    the 1-based row number.
    """
    with open(path, newline="") as fh:
        return parse_lines(fh, schema)


def load_taxonomy(path: str | Path | None = None) -> dict[str, str]:
    if path is None:
        text = resources.files("kddnet").joinpath("data/attack_taxonomy.csv").read_text()
    else:
        text = Path(path).read_text()
    mapping: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line == "attack_name,category":
            continue
        name, _, category = line.partition(",")
        category = category.strip()
        if category not in CATEGORIES:
            raise ValueError(f"taxonomy entry {name!r} has unknown category {category!r}")
        mapping[name.strip()] = category
    if not mapping:
        raise ValueError("taxonomy file is empty")
    return mapping


def map_attack_to_category(attack_name: str, mapping: Mapping[str, str]) -> str:
    try:
        return mapping[attack_name.strip()]
    except KeyError:
        raise UnknownAttackName(attack_name) from None


def label_arrays(records: Sequence[RawRecord], mapping: Mapping[str, str]):
    """Return (binary, five-class) integer label vectors."""
    y_class = np.array([CATEGORIES.index(map_attack_to_category(r.attack_name, mapping))
                        for r in records], dtype=np.int64)
    return (y_class != 0).astype(np.int64), y_class


@dataclass(frozen=True)
class FittedEncoder:
    categories: dict[str, tuple[str, ...]]
    minima: tuple[float, ...]
    maxima: tuple[float, ...]

    @property
    def columns(self) -> tuple[str, ...]:
        cols = list(CONTINUOUS)
        for name in CATEGORICAL:
            cols.extend(f"{name}={v}" for v in self.categories[name])
        return tuple(cols)

    @property
    def n_columns(self) -> int:
        return len(CONTINUOUS) + sum(len(v) for v in self.categories.values())

    def column_hash(self) -> str:
        return hashlib.sha256("\n".join(self.columns).encode()).hexdigest()

    def to_document(self) -> dict:
        return {
            "format_version": ENCODER_FORMAT_VERSION,
            "continuous": [
                {"name": n, "min": lo, "max": hi}
                for n, lo, hi in zip(CONTINUOUS, self.minima, self.maxima)
            ],
            "categorical": {n: list(self.categories[n]) for n in CATEGORICAL},
            "column_hash": self.column_hash(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_document(), indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_document(cls, doc: dict) -> "FittedEncoder":
        if doc.get("format_version") != ENCODER_FORMAT_VERSION:
            raise ValueError(f"unsupported encoder format {doc.get('format_version')!r}")
        names = tuple(c["name"] for c in doc["continuous"])
        if names != CONTINUOUS:
            raise ValueError("encoder document does not match the feature schema")
        return cls(
            categories={n: tuple(doc["categorical"][n]) for n in CATEGORICAL},
            minima=tuple(float(c["min"]) for c in doc["continuous"]),
            maxima=tuple(float(c["max"]) for c in doc["continuous"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "FittedEncoder":
        return cls.from_document(json.loads(Path(path).read_text()))


def fit_encoder(train_records: Sequence[RawRecord]) -> FittedEncoder:
    """Fit category lists and min/max ranges on training rows only."""
    if not train_records:
        raise ValueError("cannot fit encoder on an empty training set")
    values = np.array([r.continuous for r in train_records], dtype=np.float64)
    cats = {name: tuple(sorted({r.categorical(name) for r in train_records}))
            for name in CATEGORICAL}
    return FittedEncoder(cats, tuple(values.min(axis=0).tolist()),
                         tuple(values.max(axis=0).tolist()))


@dataclass
class EncodedDataset:
    X: np.ndarray
    y_binary: np.ndarray
    y_class: np.ndarray
    columns: tuple[str, ...]
    column_hash: str
    class_counts: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.X.shape[0]

    def labels(self, task: str) -> np.ndarray:
        if task == "binary":
            return self.y_binary
        if task == "five_class":
            return self.y_class
        raise ValueError(f"unknown task {task!r}")

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        y_class = self.y_class[idx]
        return EncodedDataset(self.X[idx], self.y_binary[idx], y_class, self.columns,
                              self.column_hash, count_categories(y_class))


def count_categories(y_class: np.ndarray) -> dict[str, int]:
    counts = np.bincount(y_class, minlength=len(CATEGORIES))
    return {c: int(n) for c, n in zip(CATEGORIES, counts)}


def scale_continuous(values: np.ndarray, enc: FittedEncoder) -> np.ndarray:
    lo = np.asarray(enc.minima)
    span = np.asarray(enc.maxima) - lo
    const = span == 0
    scaled = (values - lo) / np.where(const, 1.0, span)
    scaled[:, const] = 0.0
    return np.clip(scaled, 0.0, 1.0)


def transform(records: Sequence[RawRecord], enc: FittedEncoder,
              mapping: Mapping[str, str] | None = None) -> EncodedDataset:
    """Encode records into the canonical column layout.

    Continuous features come first (min-max scaled, clamped), followed by
    one one-hot block per categorical feature. Unseen categories give an
    all-zero block. Labels are filled when ``mapping`` is given, otherwise
    they are left as -1.
    """
    n = len(records)
    blocks = [scale_continuous(np.array([r.continuous for r in records],
                                        dtype=np.float64).reshape(n, len(CONTINUOUS)), enc)]
    rows = np.arange(n)
    for name in CATEGORICAL:
        cats = enc.categories[name]
        lookup = {v: i for i, v in enumerate(cats)}
        block = np.zeros((n, len(cats)))
        pos = np.array([lookup.get(r.categorical(name), -1) for r in records], dtype=np.int64)
        seen = pos >= 0
        block[rows[seen], pos[seen]] = 1.0
        blocks.append(block)
    X = np.hstack(blocks)
    if mapping is not None:
        y_binary, y_class = label_arrays(records, mapping)
        counts = count_categories(y_class)
    else:
        y_binary = y_class = np.full(n, -1, dtype=np.int64)
        counts = {}
    return EncodedDataset(X, y_binary, y_class, enc.columns, enc.column_hash(), counts)


def decode_onehot(block: Sequence[float], categories: Sequence[str]) -> str | None:
    hot = np.flatnonzero(np.asarray(block) == 1.0)
    if hot.size == 0:
        return None
    return categories[int(hot[0])]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        if any(f <= 0 for f in fr):
            raise ValueError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


def allocate(count: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``count`` items; ties go to the earlier slot."""
    quotas = [count * f for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    short = count - sum(sizes)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def stratified_partition(labels: np.ndarray, fractions: Sequence[float], seed: int,
                         names: Sequence[str] | None = None,
                         strict: bool = True) -> list[np.ndarray]:
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        sizes = allocate(members.size, fractions)
        if strict and min(sizes) == 0:
            label = names[c] if names is not None else c
            raise SplitError(f"category {label!r} has {members.size} rows, "
                             f"too few to appear in every split {sizes}")
        members = rng.permutation(members)
        start = 0
        for part, size in zip(parts, sizes):
            part.append(members[start:start + size])
            start += size
    return [np.sort(np.concatenate(p)) for p in parts]


def stratified_split(labels, spec: SplitSpec):
    """Split row indices into (train, val, test), stratified on five-class labels.

    ``labels`` may be an :class:`EncodedDataset` or a label vector. Splitting
    on labels alone lets callers split before fitting the encoder.
    """
    if isinstance(labels, EncodedDataset):
        labels = labels.y_class
    train, val, test = stratified_partition(labels, spec.fractions, spec.seed, CATEGORIES)
    return train, val, test


def stratified_subsample(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Indices of a per-class proportional subsample of size ``fraction``."""
    if not 0 < fraction <= 1:
        raise ValueError("subsample fraction must be in (0, 1]")
    if fraction == 1:
        return np.arange(len(labels))
    keep, _ = stratified_partition(labels, (fraction, 1 - fraction), seed, CATEGORIES,
                                   strict=False)
    return keep


def compute_class_weights(counts: Mapping[str, int]) -> dict[str, float]:
    """Balanced inverse-frequency weights ``N / (K * N_c)``."""
    if not counts:
        raise ValueError("no classes given")
    for name, n in counts.items():
        if n <= 0:
            raise ValueError(f"class {name!r} has zero rows; cannot weight it")
    total = sum(counts.values())
    k = len(counts)
    return {name: total / (k * n) for name, n in counts.items()}


def task_class_names(task: str) -> tuple[str, ...]:
    if task == "binary":
        return BINARY_CLASSES
    if task == "five_class":
        return CATEGORIES
    raise ValueError(f"unknown task {task!r}")


def task_counts(y: np.ndarray, task: str) -> dict[str, int]:
    names = task_class_names(task)
    counts = np.bincount(y, minlength=len(names))
    return {c: int(n) for c, n in zip(names, counts)}
