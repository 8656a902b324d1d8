"""Squirrel search over a bounded box, used to tune the classifier.

Positions live in the unit cube; :func:`decode` maps them to concrete
values. Each iteration ranks the population (one hickory-tree squirrel, a
few acorn-tree squirrels, the rest on normal trees), lets non-hickory
squirrels glide toward better trees or flee a predator, and, once the acorn
squirrels have gathered close enough to the hickory, scatters the normal
squirrels with Lévy steps.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

HICKORY, ACORN, NORMAL = "hickory", "acorn", "normal"


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    scale: str = "linear"
    integer: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"{self.name}: unknown scale {self.scale!r}")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"{self.name}: log scale needs positive bounds")

    def decode(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.scale == "log":
            v = math.exp(math.log(self.lower) + u * (math.log(self.upper) - math.log(self.lower)))
        else:
            v = self.lower + u * (self.upper - self.lower)
        if self.integer:
            return int(min(max(math.floor(v + 0.5), self.lower), self.upper))
        return min(max(v, self.lower), self.upper)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def to_dict(self) -> dict:
        return {d.name: {"lower": d.lower, "upper": d.upper, "scale": d.scale,
                         "integer": d.integer} for d in self.dims}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(tuple(Dimension(name, float(v["lower"]), float(v["upper"]),
                                   v.get("scale", "linear"), bool(v.get("integer", False)))
                         for name, v in d.items()))


def hyperparameter_space() -> SearchSpace:
    return SearchSpace((
        Dimension("conv_filters", 4, 128, "linear", integer=True),
        Dimension("lstm_units", 8, 256, "linear", integer=True),
        Dimension("learning_rate", 1e-4, 1e-1, "log"),
    ))


def unit_box(dim: int) -> SearchSpace:
    return SearchSpace(tuple(Dimension(f"x{i}", 0.0, 1.0) for i in range(dim)))


def decode(position, space: SearchSpace) -> dict:
    position = np.asarray(position, dtype=np.float64)
    if position.shape != (len(space),):
        raise ValueError(f"position has {position.size} coordinates, space has {len(space)}")
    return {d.name: d.decode(u) for d, u in zip(space.dims, position)}


@dataclass(frozen=True)
class SsaConfig:
    population: int = 20
    iterations: int = 30
    gliding_constant: float = 1.9
    predator_prob: float = 0.1
    n_acorn: int = 3
    scaling_factor: float = 18.0
    levy_beta: float = 1.5
    glide_low: float = 0.5
    glide_high: float = 1.11
    seed: int = 0

    def __post_init__(self):
        if self.population < self.n_acorn + 2:
            raise ValueError("population must hold a hickory, the acorn squirrels and "
                             "at least one normal squirrel")
        if not 0.0 <= self.predator_prob <= 1.0:
            raise ValueError("predator_prob must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class Population:
    positions: np.ndarray            # (N, D), every coordinate in [0, 1]
    fitness: np.ndarray              # (N,), nan while unevaluated
    roles: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.roles is None:
            self.roles = np.full(len(self.fitness), NORMAL, dtype=object)

    def __len__(self) -> int:
        return len(self.fitness)

    @property
    def hickory(self) -> int:
        return int(np.flatnonzero(self.roles == HICKORY)[0])

    @property
    def acorns(self) -> np.ndarray:
        return np.flatnonzero(self.roles == ACORN)

    @property
    def normals(self) -> np.ndarray:
        return np.flatnonzero(self.roles == NORMAL)

    def copy(self) -> "Population":
        return Population(self.positions.copy(), self.fitness.copy(), self.roles.copy())


@dataclass
class FitnessRecord:
    iteration: int
    best_fitness: float
    best_position: np.ndarray
    evaluations: int


def init_population(cfg: SsaConfig, dim: int, rng: np.random.Generator | None = None) -> Population:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return Population(rng.random((cfg.population, dim)), np.full(cfg.population, np.nan))


def assign_roles(pop: Population, n_acorn: int) -> Population:
    if np.isnan(pop.fitness).any():
        raise ValueError("every squirrel must be evaluated before ranking")
    order = np.argsort(-pop.fitness, kind="stable")
    roles = np.full(len(pop), NORMAL, dtype=object)
    roles[order[0]] = HICKORY
    roles[order[1:1 + n_acorn]] = ACORN
    pop.roles = roles
    return pop


def glide_step(pop: Population, cfg: SsaConfig, rng: np.random.Generator) -> Population:
    """Move every non-hickory squirrel; moved squirrels become unevaluated.

    Acorn squirrels and even-ranked normal squirrels (by position in index
    order) head for the hickory, odd-ranked normal squirrels for a random
    acorn tree. Each glide covers a fraction ``dg * Gc / sf`` of the gap,
    ``dg ~ U(glide_low, glide_high)``. With probability ``predator_prob``
    the squirrel is relocated uniformly instead.
    """
    x = pop.positions
    hick = pop.hickory
    acorns = pop.acorns
    normal_rank = {int(j): r for r, j in enumerate(pop.normals)}
    for j in range(len(pop)):
        if j == hick:
            continue
        if rng.random() < cfg.predator_prob:
            x[j] = rng.random(x.shape[1])
        else:
            if pop.roles[j] == ACORN or normal_rank[j] % 2 == 0 or acorns.size == 0:
                target = x[hick]
            else:
                target = x[acorns[rng.integers(acorns.size)]]
            dg = rng.uniform(cfg.glide_low, cfg.glide_high)
            x[j] = x[j] + (dg * cfg.gliding_constant / cfg.scaling_factor) * (target - x[j])
        np.clip(x[j], 0.0, 1.0, out=x[j])
        pop.fitness[j] = np.nan
    return pop


def seasonal_threshold(iteration: int, max_iterations: int) -> float:
    return 1e-5 / 365.0 ** (2.5 * iteration / max_iterations)


def seasonal_constant(pop: Population) -> float:
    gap = pop.positions[pop.acorns] - pop.positions[pop.hickory]
    if gap.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(gap * gap, axis=1))))


def seasonal_check(pop: Population, iteration: int, cfg: SsaConfig) -> bool:
    """True once the acorn squirrels have gathered around the hickory (winter is over)."""
    return seasonal_constant(pop) < seasonal_threshold(iteration, cfg.iterations)


def mantegna_sigma(beta: float) -> float:
    num = math.gamma(1 + beta) * math.sin(math.pi * beta / 2)
    den = math.gamma((1 + beta) / 2) * beta * 2 ** ((beta - 1) / 2)
    return (num / den) ** (1 / beta)


def levy_steps(shape, beta: float, rng: np.random.Generator) -> np.ndarray:
    u = rng.normal(0.0, mantegna_sigma(beta), shape)
    v = rng.normal(0.0, 1.0, shape)
    return u / np.abs(v) ** (1 / beta)


def levy_relocate(pop: Population, cfg: SsaConfig, rng: np.random.Generator) -> Population:
    idx = pop.normals
    if idx.size == 0:
        return pop
    h = pop.positions[pop.hickory]
    x = pop.positions[idx]
    steps = levy_steps(x.shape, cfg.levy_beta, rng)
    pop.positions[idx] = np.clip(x + 0.01 * steps * (x - h), 0.0, 1.0)
    pop.fitness[idx] = np.nan
    return pop


class FitnessError(RuntimeError):
    def __init__(self, position: np.ndarray, cause: BaseException):
        self.position = np.array(position)
        super().__init__(f"fitness evaluation failed at {self.position.tolist()}: {cause!r}")


@dataclass
class SsaResult:
    best_position: np.ndarray
    best_fitness: float
    best_params: dict
    trace: list[FitnessRecord]
    evaluations: list[tuple[np.ndarray, float]]

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


def trace_to_csv(trace: Sequence[FitnessRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "best_fitness", "evaluations"])
    for r in trace:
        w.writerow([r.iteration, repr(float(r.best_fitness)), r.evaluations])
    return buf.getvalue()


def optimize(space: SearchSpace, cfg: SsaConfig, fitness: Callable[[np.ndarray], float],
             workers: int = 1,
             on_record: Callable[[FitnessRecord], None] | None = None) -> SsaResult:
    """Maximise ``fitness`` over ``space``.

    The initial population is evaluated once, then each iteration ranks,
    moves and re-evaluates the squirrels that moved, so at most
    ``population * (iterations + 1)`` evaluations happen. One
    :class:`FitnessRecord` is produced per iteration. With ``workers > 1``
    evaluations within an iteration run in a thread pool; results are merged
    by member index, so the outcome does not depend on scheduling.
    """
    rng = np.random.default_rng(cfg.seed)
    pop = init_population(cfg, len(space), rng)
    evaluations: list[tuple[np.ndarray, float]] = []
    best = {"f": -math.inf, "x": pop.positions[0].copy()}

    def evaluate() -> None:
        todo = np.flatnonzero(np.isnan(pop.fitness))
        points = [pop.positions[j].copy() for j in todo]

        def run(x):
            try:
                return float(fitness(x))
            except Exception as exc:
                raise FitnessError(x, exc) from exc

        if workers > 1 and len(points) > 1:
            with ThreadPoolExecutor(workers) as ex:
                values = list(ex.map(run, points))
        else:
            values = [run(x) for x in points]
        for j, x, f in zip(todo, points, values):
            if math.isnan(f):
                raise FitnessError(x, ValueError("fitness returned NaN"))
            pop.fitness[j] = f
            evaluations.append((x, f))
            if f > best["f"]:
                best["f"], best["x"] = f, x.copy()

    trace: list[FitnessRecord] = []
    evaluate()
    for it in range(cfg.iterations):
        assign_roles(pop, cfg.n_acorn)
        glide_step(pop, cfg, rng)
        if seasonal_check(pop, it, cfg):
            levy_relocate(pop, cfg, rng)
        evaluate()
        rec = FitnessRecord(it, best["f"], best["x"].copy(), len(evaluations))
        trace.append(rec)
        if on_record is not None:
            on_record(rec)
    return SsaResult(best["x"], best["f"], decode(best["x"], space), trace, evaluations)


def random_search(space: SearchSpace, budget: int, fitness: Callable[[np.ndarray], float],
                  seed: int = 0) -> float:
    """Best fitness of ``budget`` uniform draws; a baseline for the optimiser."""
    rng = np.random.default_rng(seed)
    return max(float(fitness(x)) for x in rng.random((budget, len(space))))


# --- classifier tuning --------------------------------------------------------

def derived_seed(master_seed: int, hp) -> int:
    """Training seed for one candidate; identical candidates always get the same seed."""
    key = f"{master_seed}:{hp.conv_filters}:{hp.lstm_units}:{hp.learning_rate!r}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")


def tune(train_set, val_set, class_names, space: SearchSpace | None = None,
         cfg: SsaConfig | None = None, base=None, budget_epochs: int = 3, class_weights=None,
         workers: int = 1, column_hash: str = "", on_record=None, dtype="float64"):
    """Search conv filters, LSTM units and learning rate for the classifier.

    A candidate's fitness is the validation weighted F1 after a short
    training run of ``budget_epochs`` epochs. Returns the winning
    :class:`HyperParams` (with ``base``'s batch size and epoch budget) and the
    full :class:`SsaResult`.
    """
    from .metrics import class_report, confusion
    from .nn import ConvLstmModel, HyperParams, predict, train

    space = space or hyperparameter_space()
    cfg = cfg or SsaConfig()
    base = base or HyperParams()
    Xtr, ytr = train_set
    Xva, yva = val_set
    k = len(class_names)
    cache: dict[tuple, float] = {}
    lock = threading.Lock()

    def to_hp(values: dict):
        return replace(base, **{n: values[n] for n in space.names})

    def fitness(u: np.ndarray) -> float:
        hp = to_hp(decode(u, space))
        key = (hp.conv_filters, hp.lstm_units, hp.learning_rate)
        with lock:
            if key in cache:
                return cache[key]
        seed = derived_seed(cfg.seed, hp)
        short = replace(hp, max_epochs=budget_epochs)
        model = ConvLstmModel.from_hyperparams(Xtr.shape[1], class_names, short, seed=seed,
                                               column_hash=column_hash, dtype=dtype)
        train(model, (Xtr, ytr), (Xva, yva), short, class_weights, seed=seed)
        score = class_report(confusion(yva, predict(model, Xva), k)).weighted_f1
        with lock:
            cache[key] = score
        return score

    result = optimize(space, cfg, fitness, workers=workers, on_record=on_record)
    return to_hp(result.best_params), result
