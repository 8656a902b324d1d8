"""Pipeline stages behind the CLI: preprocess, tune, train, evaluate, report.

Every stage reads and writes inside one run directory::

    run/
      manifest.json
      encoded/   encoder document, encoded matrices, split indices, class weights
      tune/      winning hyperparameters, SSA trace
      train/     checkpoint, epoch table, learning curve
      eval/      class report, confusion matrix, ROC table, figures

and records its artifacts (with SHA-256 checksums) in the manifest.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from . import metrics, nn, plots, ssa
from .config import ConfigError, RunConfig

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
LOCK = ".lock"
SPLITS = ("train", "val", "test")


class StageError(RuntimeError):
    """A stage failed after validation (exit code 3)."""


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- manifest -----------------------------------------------------------------

def read_manifest(out: Path) -> dict:
    p = out / MANIFEST
    if not p.exists():
        return {}
    return json.loads(p.read_text())


def record_stage(out: Path, cfg: RunConfig, stage: str, artifacts: list[Path],
                 seconds: float, extra: dict | None = None) -> dict:
    man = read_manifest(out)
    man["tool"] = "kddnet"
    man["version"] = __version__
    man["config"] = cfg.snapshot()
    man["seed"] = cfg.seed
    stages = man.setdefault("stages", {})
    entry = {"artifacts": [{"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p),
                            "bytes": p.stat().st_size} for p in sorted(artifacts)]}
    if extra:
        entry.update(extra)
    stages[stage] = entry
    man.setdefault("timings", {})[stage] = round(seconds, 3)
    (out / MANIFEST).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def manifest_without_timings(out: Path) -> str:
    man = read_manifest(out)
    man.pop("timings", None)
    return json.dumps(man, indent=2, sort_keys=True)


@contextmanager
def run_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(f"{out} is locked by another command (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _save_npy(path: Path, arr: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, arr, allow_pickle=False)
    return path


# --- preprocess -----------------------------------------------------------------

def preprocess(cfg: RunConfig) -> list[Path]:
    """Parse, split (stratified on five-class labels), fit the encoder on the
    training split only, encode every split, and derive class weights."""
    cfg.validate(need_data=True)
    out = cfg.output
    t0 = time.perf_counter()
    taxonomy = ds.load_taxonomy(cfg.taxonomy_path)
    records = ds.parse_nslkdd(cfg.train_path)
    _, y_class = ds.label_arrays(records, taxonomy)
    test_records = ds.parse_nslkdd(cfg.test_path) if cfg.test_path else None
    if test_records is not None:
        ds.label_arrays(test_records, taxonomy)

    rows = ds.stratified_subsample(y_class, cfg.subsample, cfg.seed)
    parts = ds.stratified_split(y_class[rows], cfg.split)
    split_rows = {name: rows[p] for name, p in zip(SPLITS, parts)}

    enc = ds.fit_encoder([records[i] for i in split_rows["train"]])
    encoded = {name: ds.transform([records[i] for i in idx], enc, taxonomy)
               for name, idx in split_rows.items()}
    if test_records is not None:
        encoded["official"] = ds.transform(test_records, enc, taxonomy)
    lines = ["task,class,count,weight"]
    for task in ("binary", "five_class"):
        counts = ds.task_counts(encoded["train"].labels(task), task)
        try:
            weights = ds.compute_class_weights(counts)
        except ValueError as exc:
            raise ConfigError(f"training split cannot be weighted: {exc}") from exc
        lines += [f"{task},{c},{counts[c]},{weights[c]!r}" for c in counts]

    enc_dir = out / "encoded"
    artifacts = []
    with run_lock(out):
        artifacts.append(_write(enc_dir / "encoder.json", enc.dumps()))
        for name, idx in split_rows.items():
            artifacts.append(_write(enc_dir / f"split_{name}.txt",
                                    "".join(f"{int(i) + 1}\n" for i in idx)))
        for name, e in encoded.items():
            artifacts.append(_save_npy(enc_dir / f"X_{name}.npy", e.X))
            artifacts.append(_save_npy(enc_dir / f"y_binary_{name}.npy", e.y_binary))
            artifacts.append(_save_npy(enc_dir / f"y_class_{name}.npy", e.y_class))
        artifacts.append(_write(enc_dir / "class_weights.csv", "\n".join(lines) + "\n"))
        summary = {name: {"rows": len(e), "counts": e.class_counts} for name, e in encoded.items()}
        record_stage(out, cfg, "preprocess", artifacts, time.perf_counter() - t0,
                     {"columns": enc.n_columns, "column_hash": enc.column_hash(),
                      "splits": summary})
    log.info("preprocess: %d columns, splits %s", enc.n_columns,
             {k: v["rows"] for k, v in summary.items()})
    return artifacts


def load_split(out: Path, name: str, task: str):
    d = out / "encoded"
    X = np.load(d / f"X_{name}.npy")
    y = np.load(d / (f"y_binary_{name}.npy" if task == "binary" else f"y_class_{name}.npy"))
    return X, y


def load_class_weights(out: Path, task: str) -> np.ndarray:
    names = ds.task_class_names(task)
    table = {}
    for line in (out / "encoded" / "class_weights.csv").read_text().splitlines()[1:]:
        t, c, _, w = line.split(",")
        if t == task:
            table[c] = float(w)
    return np.array([table[c] for c in names])


def _require_encoded(out: Path) -> None:
    needed = [out / "encoded" / f for f in ("encoder.json", "X_train.npy", "X_val.npy",
                                            "X_test.npy", "class_weights.csv")]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise ConfigError(f"preprocess artifacts missing (run `preprocess` first): {missing}")


def _weights(cfg: RunConfig, out: Path):
    if not cfg.training.get("class_weighting", True):
        return None
    return load_class_weights(out, cfg.task)


# --- tune -----------------------------------------------------------------------

class BudgetExceeded(RuntimeError):
    pass


def tune(cfg: RunConfig) -> list[Path]:
    cfg.validate(need_data=False)
    out = cfg.output
    _require_encoded(out)
    enc = ds.FittedEncoder.load(out / "encoded" / "encoder.json")
    Xtr, ytr = load_split(out, "train", cfg.task)
    Xva, yva = load_split(out, "val", cfg.task)
    names = ds.task_class_names(cfg.task)
    weights = _weights(cfg, out)
    opts = cfg.raw["ssa"]
    budget_s = opts.get("time_budget_s")
    tdir = out / "tune"
    trace: list[ssa.FitnessRecord] = []
    t0 = time.perf_counter()

    def on_record(rec):
        trace.append(rec)
        _write(tdir / "trace.csv", ssa.trace_to_csv(trace))
        if budget_s is not None and time.perf_counter() - t0 > float(budget_s):
            raise BudgetExceeded(f"tuning exceeded its {budget_s}s budget")

    with run_lock(out):
        tdir.mkdir(parents=True, exist_ok=True)
        try:
            best, result = ssa.tune(
                (Xtr, ytr), (Xva, yva), names, space=cfg.search_space, cfg=cfg.ssa,
                base=cfg.hyperparams, budget_epochs=int(opts.get("budget_epochs", 3)),
                class_weights=weights, workers=int(opts.get("workers", 1)),
                column_hash=enc.column_hash(), on_record=on_record,
                dtype=cfg.training.get("precision", "float32"))
        except BudgetExceeded as exc:
            _write(tdir / "trace.csv", ssa.trace_to_csv(trace) + f"# FAILED: {exc}\n")
            raise StageError(str(exc)) from exc
        artifacts = [
            _write(tdir / "hyperparams.json", json.dumps(best.to_dict(), indent=2) + "\n"),
            _write(tdir / "trace.csv", result.trace_csv()),
            _write(tdir / "evaluations.csv", _evaluations_csv(result, cfg.search_space)),
        ]
        record_stage(out, cfg, "tune", artifacts, time.perf_counter() - t0,
                     {"best_fitness": result.best_fitness,
                      "evaluations": len(result.evaluations)})
    log.info("tune: best weighted F1 %.4f with %s", result.best_fitness, best)
    return artifacts


def _evaluations_csv(result: ssa.SsaResult, space: ssa.SearchSpace) -> str:
    lines = [",".join(["eval", *space.names, "fitness"])]
    for i, (x, f) in enumerate(result.evaluations):
        vals = ssa.decode(x, space)
        lines.append(",".join([str(i), *(repr(vals[n]) for n in space.names), repr(f)]))
    return "\n".join(lines) + "\n"


# --- train ----------------------------------------------------------------------

def resolve_hyperparams(cfg: RunConfig) -> nn.HyperParams:
    if not cfg.tune_marker:
        return cfg.hyperparams
    p = cfg.output / "tune" / "hyperparams.json"
    if not p.exists():
        raise ConfigError("hyperparams is 'tune' but tune/hyperparams.json is missing; "
                          "run `tune` first")
    return nn.HyperParams.from_dict(json.loads(p.read_text()))


def train(cfg: RunConfig) -> list[Path]:
    cfg.validate(need_data=False)
    out = cfg.output
    _require_encoded(out)
    hp = resolve_hyperparams(cfg)
    enc = ds.FittedEncoder.load(out / "encoded" / "encoder.json")
    Xtr, ytr = load_split(out, "train", cfg.task)
    Xva, yva = load_split(out, "val", cfg.task)
    names = ds.task_class_names(cfg.task)
    weights = _weights(cfg, out)
    t0 = time.perf_counter()
    tdir = out / "train"
    with run_lock(out):
        model = nn.ConvLstmModel.from_hyperparams(
            Xtr.shape[1], names, hp, seed=cfg.seed, column_hash=enc.column_hash(),
            dtype=cfg.training.get("precision", "float32"))
        model, report = nn.train(
            model, (Xtr, ytr), (Xva, yva), hp, weights, seed=cfg.seed,
            patience=int(cfg.training.get("patience", 5)),
            lr_patience=int(cfg.training.get("lr_patience", 3)),
            progress=lambda r: log.info("epoch %d: train %.4f val %.4f acc %.4f",
                                        r.epoch, r.train_loss, r.val_loss, r.val_acc))
        tdir.mkdir(parents=True, exist_ok=True)
        nn.save_checkpoint(model, tdir / "model.ckpt",
                           extra={"task": cfg.task, "hyperparams": hp.to_dict()})
        ep = report.epochs
        artifacts = [
            tdir / "model.ckpt",
            _write(tdir / "report.csv", report.to_csv()),
            _write(tdir / "hyperparams.json", json.dumps(hp.to_dict(), indent=2) + "\n"),
            plots.plot_learning_curve([r.epoch for r in ep], [r.train_loss for r in ep],
                                      [r.val_loss for r in ep], [r.val_acc for r in ep],
                                      tdir / "learning_curve.svg"),
        ]
        record_stage(out, cfg, "train", artifacts, time.perf_counter() - t0,
                     {"stop_reason": report.stop_reason, "epochs": len(ep),
                      "best_epoch": report.best_epoch,
                      "best_val_loss": min(r.val_loss for r in ep)})
    log.info("train: %s after %d epochs", report.stop_reason, len(ep))
    return artifacts


# --- evaluate -------------------------------------------------------------------

def evaluate_split(model: nn.ConvLstmModel, X, y, task: str, column_hash: str,
                   dest: Path, title: str) -> tuple[list[Path], dict]:
    names = ds.task_class_names(task)
    proba = nn.predict_proba(model, X, column_hash=column_hash)
    pred = proba.argmax(axis=1)
    cm = metrics.confusion(y, pred, len(names), names)
    rep = metrics.class_report(cm)
    dest.mkdir(parents=True, exist_ok=True)
    artifacts = [
        _write(dest / "class_report.json", rep.to_json()),
        _write(dest / "confusion.csv", cm.to_csv()),
        plots.plot_confusion(cm.counts, names, dest / "confusion.svg",
                             title=f"{title}: confusion matrix"),
    ]
    summary = {"rows": int(len(y)), "accuracy": rep.accuracy, "weighted_f1": rep.weighted_f1,
               "macro_f1": rep.macro_f1,
               "recall": {n: float(r) for n, r in zip(names, rep.recall)},
               "precision": {n: float(p) for n, p in zip(names, rep.precision)}}
    if task == "binary":
        roc = metrics.roc_auc(proba[:, 1], y)
        artifacts.append(_write(dest / "roc.csv", roc.to_csv()))
        artifacts.append(plots.plot_roc(roc.fpr, roc.tpr, roc.auc, dest / "roc.svg",
                                        title=f"{title}: ROC (Attack score)"))
        summary["auc"] = roc.auc
    artifacts.append(_write(dest / "summary.json", json.dumps(summary, indent=2) + "\n"))
    return artifacts, summary


def evaluate(cfg: RunConfig, checkpoint: Path | None = None) -> dict:
    cfg.validate(need_data=False)
    out = cfg.output
    _require_encoded(out)
    ckpt = checkpoint or out / "train" / "model.ckpt"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model = nn.load_checkpoint(ckpt)
    names = ds.task_class_names(cfg.task)
    if model.class_names != names:
        raise ConfigError(f"checkpoint predicts {list(model.class_names)}, task {cfg.task!r} "
                          f"needs {list(names)}")
    enc = ds.FittedEncoder.load(out / "encoded" / "encoder.json")
    t0 = time.perf_counter()
    with run_lock(out):
        X, y = load_split(out, "test", cfg.task)
        artifacts, summary = evaluate_split(model, X, y, cfg.task, enc.column_hash(),
                                            out / "eval", "Held-out split")
        result = {"test": summary}
        if (out / "encoded" / "X_official.npy").exists():
            X, y = load_split(out, "official", cfg.task)
            more, result["official"] = evaluate_split(model, X, y, cfg.task, enc.column_hash(),
                                                      out / "eval" / "official", "KDDTest+")
            artifacts += more
        record_stage(out, cfg, "evaluate", artifacts, time.perf_counter() - t0,
                     {"headline": result})
    return result


def format_summary(result: dict) -> str:
    lines = []
    for name, s in result.items():
        head = f"[{name}] rows={s['rows']} accuracy={s['accuracy']:.4f} " \
               f"weighted_f1={s['weighted_f1']:.4f}"
        if "auc" in s:
            head += f" auc={s['auc']:.4f}"
        lines.append(head)
        lines.append("  recall:    " + "  ".join(f"{k}={v:.3f}" for k, v in s["recall"].items()))
        lines.append("  precision: " + "  ".join(f"{k}={v:.3f}"
                                                 for k, v in s["precision"].items()))
    return "\n".join(lines)


# --- report ---------------------------------------------------------------------

def verify(out: Path) -> list[str]:
    """Problems found when re-checking every manifest artifact; empty when intact."""
    man = read_manifest(out)
    if not man:
        return [f"{out / MANIFEST}: manifest missing"]
    problems = []
    for stage, entry in man.get("stages", {}).items():
        for art in entry.get("artifacts", []):
            p = out / art["path"]
            if not p.exists():
                problems.append(f"{stage}: missing artifact {art['path']}")
            elif sha256_file(p) != art["sha256"]:
                problems.append(f"{stage}: checksum mismatch for {art['path']}")
    return problems


def report_text(out: Path) -> str:
    man = read_manifest(out)
    lines = [f"run: {out}", f"tool: {man.get('tool')} {man.get('version')}  seed: {man.get('seed')}"]
    for stage, secs in man.get("timings", {}).items():
        lines.append(f"  {stage:<10} {secs:9.2f} s")
    head = man.get("stages", {}).get("evaluate", {}).get("headline")
    if head:
        lines.append(format_summary(head))
    tune_entry = man.get("stages", {}).get("tune")
    if tune_entry:
        lines.append(f"tune: best weighted F1 {tune_entry['best_fitness']:.4f} over "
                     f"{tune_entry['evaluations']} evaluations")
    return "\n".join(lines)


def run_all(cfg: RunConfig) -> dict:
    """preprocess -> (tune) -> train -> evaluate."""
    preprocess(cfg)
    if cfg.tune_marker:
        tune(cfg)
    train(cfg)
    return evaluate(cfg)
