"""Synthetic connection records in the NSL-KDD text format.

Used for tests and smoke runs when the real KDDTrain+/KDDTest+ files are
not at hand. The per-class feature profiles are hand-written caricatures of
the real traffic (SYN floods with high serror rates, scans with high
rerror/diff_srv rates, login-heavy R2L sessions, root-shell U2R sessions),
with a configurable share of rows that borrow normal-traffic statistics so
the classes overlap.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import CONTINUOUS, FEATURES

# share of each category in KDDTrain+
TRAIN_MIX = {"Normal": 0.5346, "DoS": 0.3646, "Probe": 0.0925, "R2L": 0.0079, "U2R": 0.0004}

_ATTACKS = {
    "Normal": ["normal"],
    "DoS": ["neptune", "smurf", "back", "teardrop", "pod"],
    "Probe": ["satan", "ipsweep", "portsweep", "nmap"],
    "R2L": ["warezclient", "guess_passwd", "warezmaster", "imap", "ftp_write"],
    "U2R": ["buffer_overflow", "rootkit", "loadmodule", "perl"],
}
_SERVICES_NORMAL = ["http", "smtp", "domain_u", "ftp_data", "private", "ecr_i", "urp_i",
                    "ftp", "other", "telnet", "finger", "auth"]
_SERVICES_SCAN = ["private", "other", "eco_i", "ecr_i", "http", "ftp", "telnet", "smtp",
                  "domain", "finger", "sunrpc", "uucp", "whois", "gopher"]


def _base(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Normal-looking traffic."""
    f = {name: np.zeros(n) for name in CONTINUOUS}
    f["duration"] = np.where(rng.random(n) < 0.9, 0, rng.integers(1, 3000, n))
    f["src_bytes"] = np.round(rng.lognormal(5.5, 1.2, n))
    f["dst_bytes"] = np.round(rng.lognormal(7.0, 1.5, n)) * (rng.random(n) < 0.8)
    f["logged_in"] = (rng.random(n) < 0.7).astype(float)
    f["hot"] = rng.poisson(0.2, n)
    f["count"] = rng.integers(1, 30, n)
    f["srv_count"] = np.minimum(f["count"] + rng.integers(0, 10, n), 511)
    f["same_srv_rate"] = np.clip(rng.normal(0.97, 0.05, n), 0, 1)
    f["diff_srv_rate"] = np.clip(rng.normal(0.02, 0.04, n), 0, 1)
    f["srv_diff_host_rate"] = np.clip(rng.normal(0.1, 0.15, n), 0, 1)
    f["dst_host_count"] = rng.integers(1, 256, n)
    f["dst_host_srv_count"] = rng.integers(100, 256, n)
    f["dst_host_same_srv_rate"] = np.clip(rng.normal(0.9, 0.15, n), 0, 1)
    f["dst_host_diff_srv_rate"] = np.clip(rng.normal(0.03, 0.05, n), 0, 1)
    f["dst_host_same_src_port_rate"] = np.clip(rng.normal(0.1, 0.15, n), 0, 1)
    f["dst_host_srv_diff_host_rate"] = np.clip(rng.normal(0.03, 0.05, n), 0, 1)
    f["dst_host_serror_rate"] = np.clip(rng.normal(0.01, 0.03, n), 0, 1)
    f["dst_host_rerror_rate"] = np.clip(rng.normal(0.03, 0.07, n), 0, 1)
    return f


def _profile(category: str, n: int, rng: np.random.Generator):
    f = _base(n, rng)
    proto = rng.choice(["tcp", "udp", "icmp"], n, p=[0.8, 0.15, 0.05]).astype(object)
    service = rng.choice(_SERVICES_NORMAL, n).astype(object)
    flag = rng.choice(["SF", "S0", "REJ", "RSTR", "S1"], n,
                      p=[0.93, 0.02, 0.03, 0.01, 0.01]).astype(object)
    if category == "DoS":
        f["src_bytes"] = np.where(rng.random(n) < 0.7, 0.0, rng.choice([520.0, 1032.0, 54540.0], n))
        f["dst_bytes"] = np.zeros(n)
        f["logged_in"] = np.zeros(n)
        f["count"] = rng.integers(100, 512, n)
        f["srv_count"] = rng.integers(1, 40, n)
        f["serror_rate"] = np.clip(rng.normal(0.9, 0.15, n), 0, 1)
        f["srv_serror_rate"] = np.clip(rng.normal(0.9, 0.15, n), 0, 1)
        f["same_srv_rate"] = np.clip(rng.normal(0.08, 0.08, n), 0, 1)
        f["diff_srv_rate"] = np.clip(rng.normal(0.06, 0.04, n), 0, 1)
        f["dst_host_srv_count"] = rng.integers(1, 40, n)
        f["dst_host_same_srv_rate"] = np.clip(rng.normal(0.08, 0.08, n), 0, 1)
        f["dst_host_serror_rate"] = np.clip(rng.normal(0.9, 0.15, n), 0, 1)
        f["dst_host_srv_serror_rate"] = f["dst_host_serror_rate"]
        f["wrong_fragment"] = np.where(rng.random(n) < 0.05, 3.0, 0.0)
        proto = np.where(rng.random(n) < 0.8, "tcp", "icmp").astype(object)
        service = np.where(rng.random(n) < 0.75, "private", "ecr_i").astype(object)
        flag = np.where(rng.random(n) < 0.8, "S0", "SF").astype(object)
    elif category == "Probe":
        f["src_bytes"] = np.where(rng.random(n) < 0.8, 0.0, rng.integers(1, 20, n))
        f["dst_bytes"] = np.zeros(n)
        f["logged_in"] = np.zeros(n)
        f["count"] = rng.integers(1, 200, n)
        f["rerror_rate"] = np.clip(rng.normal(0.6, 0.35, n), 0, 1)
        f["srv_rerror_rate"] = f["rerror_rate"]
        f["same_srv_rate"] = np.clip(rng.normal(0.3, 0.3, n), 0, 1)
        f["diff_srv_rate"] = np.clip(rng.normal(0.5, 0.3, n), 0, 1)
        f["dst_host_srv_count"] = rng.integers(1, 30, n)
        f["dst_host_diff_srv_rate"] = np.clip(rng.normal(0.6, 0.3, n), 0, 1)
        f["dst_host_same_src_port_rate"] = np.clip(rng.normal(0.6, 0.35, n), 0, 1)
        f["dst_host_rerror_rate"] = np.clip(rng.normal(0.6, 0.35, n), 0, 1)
        f["dst_host_srv_rerror_rate"] = f["dst_host_rerror_rate"]
        service = rng.choice(_SERVICES_SCAN, n).astype(object)
        flag = rng.choice(["REJ", "SF", "RSTO", "RSTR", "SH", "S0"], n,
                          p=[0.35, 0.3, 0.1, 0.1, 0.1, 0.05]).astype(object)
        proto = rng.choice(["tcp", "icmp", "udp"], n, p=[0.6, 0.3, 0.1]).astype(object)
    elif category == "R2L":
        f["duration"] = rng.integers(0, 5000, n)
        f["src_bytes"] = np.round(rng.lognormal(7.5, 1.5, n))
        f["num_failed_logins"] = (rng.random(n) < 0.3).astype(float)
        f["is_guest_login"] = (rng.random(n) < 0.4).astype(float)
        f["hot"] = rng.poisson(2.0, n)
        f["logged_in"] = (rng.random(n) < 0.8).astype(float)
        f["count"] = rng.integers(1, 5, n)
        f["dst_host_count"] = rng.integers(1, 60, n)
        f["dst_host_srv_count"] = rng.integers(1, 60, n)
        f["dst_host_same_src_port_rate"] = np.clip(rng.normal(0.5, 0.3, n), 0, 1)
        service = rng.choice(["ftp_data", "ftp", "telnet", "imap4", "http"], n,
                             p=[0.45, 0.25, 0.15, 0.1, 0.05]).astype(object)
        proto = np.full(n, "tcp", dtype=object)
    elif category == "U2R":
        f["duration"] = rng.integers(10, 300, n)
        f["src_bytes"] = np.round(rng.lognormal(7.0, 1.0, n))
        f["dst_bytes"] = np.round(rng.lognormal(8.5, 1.0, n))
        f["root_shell"] = (rng.random(n) < 0.6).astype(float)
        f["num_file_creations"] = rng.poisson(1.5, n)
        f["num_shells"] = (rng.random(n) < 0.3).astype(float)
        f["hot"] = rng.poisson(1.5, n)
        f["logged_in"] = np.ones(n)
        f["count"] = rng.integers(1, 3, n)
        f["dst_host_count"] = rng.integers(1, 30, n)
        f["dst_host_srv_count"] = rng.integers(1, 30, n)
        service = rng.choice(["telnet", "ftp_data", "ftp"], n, p=[0.7, 0.2, 0.1]).astype(object)
        proto = np.full(n, "tcp", dtype=object)
        flag = np.full(n, "SF", dtype=object)
    f["srv_count"] = np.minimum(f["srv_count"], 511)
    f["count"] = np.minimum(f["count"], 511)
    return f, proto, service, flag


def generate_rows(n: int, seed: int = 0, mix: dict[str, float] | None = None,
                  overlap: float = 0.03, min_per_class: int = 20) -> list[str]:
    """Return ``n`` synthetic NSL-KDD lines (43 fields, difficulty included).

    ``overlap`` is the share of attack rows whose continuous features are
    replaced by normal-traffic statistics, which makes those rows hard to
    separate.
    """
    rng = np.random.default_rng(seed)
    mix = mix or TRAIN_MIX
    counts = {c: max(min_per_class, int(round(n * p))) for c, p in mix.items()}
    counts["Normal"] = max(min_per_class, n - sum(v for c, v in counts.items() if c != "Normal"))
    lines: list[tuple[int, str]] = []
    for category, k in counts.items():
        f, proto, service, flag = _profile(category, k, rng)
        if category != "Normal":
            hide = rng.random(k) < overlap
            if hide.any():
                g = _base(int(hide.sum()), rng)
                for name in CONTINUOUS:
                    f[name][hide] = g[name]
        names = rng.choice(_ATTACKS[category], k)
        difficulty = rng.integers(0, 22, k)
        for i in range(k):
            values = []
            for feat in FEATURES:
                if feat == "protocol_type":
                    values.append(proto[i])
                elif feat == "service":
                    values.append(service[i])
                elif feat == "flag":
                    values.append(flag[i])
                else:
                    v = float(f[feat][i])
                    values.append(f"{int(v)}" if v.is_integer() else f"{v:.2f}")
            values.append(str(names[i]))
            values.append(str(difficulty[i]))
            lines.append((int(rng.integers(0, 2**31)), ",".join(values)))
    lines.sort()
    return [line for _, line in lines]


def write_nslkdd(path: str | Path, n: int, seed: int = 0, **kw) -> Path:
    path = Path(path)
    path.write_text("\n".join(generate_rows(n, seed, **kw)) + "\n")
    return path
