"""Train/test splitting, RMSE/MAE, and the components sweep."""

from __future__ import annotations

import hashlib
import io
import json
import math
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .factorization import (
    nmf_fit,
    predict_many,
    sgd_mf_fit,
    svd_iterative,
    svd_truncated,
)
from .ratings import FillStrategy, RatingScale, SparseRatingMatrix, impute_dense

ALGORITHMS = ("nmf", "svd_t", "svd_i", "sgd_mf")

CSV_HEADER = "algorithm,fill,components,rmse,mae,seconds"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EvalSplit:
    train: SparseRatingMatrix
    test_users: np.ndarray
    test_items: np.ndarray
    test_ratings: np.ndarray
    fraction: float
    seed: int

    @property
    def n_test(self) -> int:
        return len(self.test_ratings)

    def test_triples(self) -> list[tuple[int, int, float]]:
        return list(zip(self.test_users.tolist(), self.test_items.tolist(),
                        self.test_ratings.tolist()))


@dataclass(frozen=True)
class MetricPair:
    rmse: float
    mae: float


def split_ratings(m: SparseRatingMatrix, fraction: float = 0.2, seed: int = 0) -> EvalSplit:
    """Hold out ``round(fraction * nnz)`` observed ratings chosen uniformly at random.

    The training matrix keeps the full user and item index spaces of ``m``.
    """
    if not 0.0 <= fraction < 1.0:
        raise EvaluationError(f"test fraction must lie in [0, 1), got {fraction}")
    users, items, values = m.entries()
    n_test = math.floor(fraction * m.nnz + 0.5)
    rng = np.random.default_rng(seed)
    held = np.zeros(m.nnz, dtype=bool)
    held[rng.choice(m.nnz, size=n_test, replace=False)] = True
    train = m.with_entries(users[~held], items[~held], values[~held])
    return EvalSplit(train=train, test_users=users[held], test_items=items[held],
                     test_ratings=values[held], fraction=fraction, seed=seed)


def error_metrics(predicted, actual) -> MetricPair:
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise EvaluationError("predicted and actual must be 1-D and of equal length")
    if predicted.size == 0:
        raise EvaluationError("cannot score zero predictions")
    if not (np.all(np.isfinite(predicted)) and np.all(np.isfinite(actual))):
        raise EvaluationError("predictions and ratings must be finite")
    diff = predicted - actual
    rmse = math.sqrt(float(np.mean(diff * diff)))
    mae = float(np.mean(np.abs(diff)))
    # Rounding can leave mae an ulp above rmse when all |diff| are equal.
    return MetricPair(rmse=rmse, mae=min(mae, rmse))


def evaluate_model(model, split: EvalSplit, scale: RatingScale) -> MetricPair:
    """RMSE/MAE of clamped model predictions on the held-out ratings."""
    if split.n_test == 0:
        raise EvaluationError("the split has no test ratings")
    predicted = predict_many(model, split.test_users, split.test_items, scale)
    return error_metrics(predicted, split.test_ratings)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSettings:
    nmf_max_iterations: int = 1000
    nmf_rel_tolerance: float = 1e-6
    svd_i_threshold: float = 1e-4
    svd_i_max_iterations: int = 50
    sgd_alpha: float = 0.005
    sgd_lambda: float = 0.02
    sgd_epochs: int = 50


@dataclass(frozen=True)
class SweepRow:
    algorithm: str
    fill: str
    components: int
    rmse: float | None
    mae: float | None
    seconds: float | None
    error: str | None = None


@dataclass
class SweepReport:
    rows: list
    seed: int
    fraction: float
    dataset_digest: str
    algorithms: list = field(default_factory=list)
    fills: list = field(default_factory=list)
    components: list = field(default_factory=list)
    settings: SweepSettings = field(default_factory=SweepSettings)
    n_train: int = 0
    n_test: int = 0

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for row in self.rows:
            if row.error is not None:
                rmse = mae = "error"
            else:
                rmse, mae = f"{row.rmse:.6f}", f"{row.mae:.6f}"
            secs = f"{row.seconds:.6f}" if row.seconds is not None else f"{0.0:.6f}"
            out.write(f"{row.algorithm},{row.fill},{row.components},{rmse},{mae},{secs}\n")
        return out.getvalue()

    def provenance(self) -> dict:
        return {
            "seed": self.seed,
            "fraction": self.fraction,
            "dataset_digest": self.dataset_digest,
            "algorithms": list(self.algorithms),
            "fills": list(self.fills),
            "components": list(self.components),
            "settings": vars(self.settings).copy(),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "failures": [
                {"algorithm": r.algorithm, "fill": r.fill, "components": r.components,
                 "error": r.error}
                for r in self.rows if r.error is not None
            ],
        }

    def provenance_json(self) -> str:
        return json.dumps(self.provenance(), indent=2, sort_keys=True) + "\n"

    def best(self, algorithm: str, fill: str | None = None) -> SweepRow:
        rows = [r for r in self.rows if r.algorithm == algorithm and r.error is None
                and (fill is None or r.fill == fill)]
        return min(rows, key=lambda r: (r.rmse, r.components))

    def row(self, algorithm: str, fill: str, components: int) -> SweepRow:
        for r in self.rows:
            if (r.algorithm, r.fill, r.components) == (algorithm, fill, components):
                return r
        raise KeyError((algorithm, fill, components))


def matrix_digest(m: SparseRatingMatrix) -> str:
    """Content hash of a rating matrix, for when no source file is at hand."""
    h = hashlib.sha256()
    h.update(json.dumps([list(map(str, m.user_ids)), list(map(str, m.item_ids)),
                         [m.scale.min, m.scale.max]]).encode())
    for arr in (m.row_offsets, m.col_indices, m.values):
        h.update(np.ascontiguousarray(arr).tobytes())
    return "sha256:" + h.hexdigest()


def combination_seed(master_seed: int, algorithm: str, fill: str, components: int) -> int:
    """Seed for one sweep cell, independent of execution order."""
    key = zlib.crc32(f"{algorithm}|{fill}|{components}".encode())
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(key,))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


def fit_model(algorithm: str, train: SparseRatingMatrix, fill: FillStrategy, r: int,
              seed: int = 0, settings: SweepSettings | None = None, filled=None):
    """Fit one sweep cell on ``train``; returns ``(model, info)``.

    ``filled`` optionally supplies ``impute_dense(train, fill)`` (a callable,
    so sweeps can share one imputed matrix per fill).
    """
    settings = settings or SweepSettings()
    dense = filled or (lambda: impute_dense(train, fill))
    if algorithm == "nmf":
        model = nmf_fit(dense(), r, settings.nmf_max_iterations, settings.nmf_rel_tolerance,
                        seed=seed, fill=fill)
        return model, {"iterations": len(model.objective_trace)}
    if algorithm == "svd_t":
        return svd_truncated(dense(), r, fill=fill), {}
    if algorithm == "svd_i":
        result = svd_iterative(train, fill, r, settings.svd_i_threshold,
                               settings.svd_i_max_iterations)
        return result.model, {"iterations": result.iterations, "converged": result.converged,
                              "threshold": settings.svd_i_threshold,
                              "max_iterations": settings.svd_i_max_iterations}
    if algorithm == "sgd_mf":
        return sgd_mf_fit(train, r, settings.sgd_alpha, settings.sgd_lambda,
                          settings.sgd_epochs, seed=seed), {}
    raise EvaluationError(f"unknown algorithm {algorithm!r}")


def run_sweep(m: SparseRatingMatrix, algorithms, fills, components, fraction: float = 0.2,
              seed: int = 0, settings: SweepSettings | None = None,
              dataset_digest: str | None = None, workers: int = 1,
              timing: bool = False) -> SweepReport:
    """Fit and score every (algorithm, fill, components) combination on one split.

    ``nmf`` and ``svd_t`` factorize ``impute_dense(train, fill)``; ``svd_i``
    starts from the same fill; ``sgd_mf`` ignores the fill and trains on the
    observed ratings. Fill values come from training ratings only.

    A combination that raises is kept as a row carrying the error message
    instead of metrics. With ``timing`` off, the seconds column is zero so
    the report is a pure function of its inputs.
    """
    settings = settings or SweepSettings()
    algorithms = sorted(set(algorithms), key=_algorithm_key)
    fills = sorted(set(fills), key=FillStrategy.sort_key)
    components = sorted(set(int(c) for c in components))
    if not algorithms or not fills or not components:
        raise EvaluationError("algorithms, fills and components must all be non-empty")

    split = split_ratings(m, fraction, seed)
    if split.n_test == 0:
        raise EvaluationError("test fraction leaves no ratings to evaluate")

    filled_cache = {fill: _Lazy(lambda f=fill: impute_dense(split.train, f)) for fill in fills}
    combos = [(a, f, r) for a in algorithms for f in fills for r in components]

    def run_one(combo):
        algorithm, fill, r = combo
        cell_seed = combination_seed(seed, algorithm, fill.name, r)
        start = time.perf_counter()
        try:
            model, _ = fit_model(algorithm, split.train, fill, r, cell_seed, settings,
                                 filled_cache[fill])
            metrics = evaluate_model(model, split, m.scale)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return SweepRow(algorithm, fill.name, r, None, None, None,
                            error=f"{type(exc).__name__}: {exc}")
        seconds = time.perf_counter() - start if timing else None
        return SweepRow(algorithm, fill.name, r, metrics.rmse, metrics.mae, seconds)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, combos))
    else:
        rows = [run_one(c) for c in combos]

    return SweepReport(
        rows=rows, seed=seed, fraction=fraction,
        dataset_digest=dataset_digest or matrix_digest(m),
        algorithms=list(algorithms), fills=[f.name for f in fills], components=components,
        settings=settings, n_train=split.train.nnz, n_test=split.n_test)


def _algorithm_key(name):
    if name not in ALGORITHMS:
        raise EvaluationError(f"unknown algorithm {name!r} (expected one of {', '.join(ALGORITHMS)})")
    return ALGORITHMS.index(name)


class _Lazy:
    """Compute-once value, safe to request from several threads."""

    def __init__(self, fn):
        self._fn = fn
        self._lock = threading.Lock()
        self._value = None

    def __call__(self):
        with self._lock:
            if self._value is None:
                self._value = self._fn()
                self._value.flags.writeable = False
            return self._value
