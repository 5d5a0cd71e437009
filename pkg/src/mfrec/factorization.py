"""Latent-factor models: NMF, truncated SVD, iterative SVD completion, SGD matrix factorization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import svds

from .ratings import FillStrategy, RatingScale, SparseRatingMatrix, impute_dense

# Guards the multiplicative-update denominators against 0/0.
_DENOM_FLOOR = 1e-300


class FactorizationError(ValueError):
    pass


class DivergenceError(FactorizationError):
    def __init__(self, epoch: int):
        super().__init__(f"SGD diverged: non-finite factors after epoch {epoch}; "
                         "lower the learning rate")
        self.epoch = epoch


def _check_dense(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or 0 in x.shape:
        raise FactorizationError(f"{name} must be a non-empty 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise FactorizationError(f"{name} contains non-finite entries")
    return x


def _check_rank(r, x, what):
    limit = min(x.shape)
    if not 1 <= r <= limit:
        raise FactorizationError(f"{what} must lie in [1, {limit}] for a {x.shape[0]}x{x.shape[1]} "
                                 f"matrix, got {r}")


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NmfModel:
    W: np.ndarray
    H: np.ndarray
    fill: FillStrategy | None = None
    objective_trace: tuple = ()
    seed: int | None = None
    max_iterations: int | None = None
    rel_tolerance: float | None = None

    kind = "nmf"

    @property
    def r(self) -> int:
        return self.W.shape[1]

    @property
    def components(self) -> int:
        return self.r

    @property
    def n_users(self) -> int:
        return self.W.shape[0]

    @property
    def n_items(self) -> int:
        return self.H.shape[1]

    def predict_raw(self, users, items):
        return np.einsum("ij,ji->i", self.W[users], self.H[:, items])

    def reconstruct(self) -> np.ndarray:
        return self.W @ self.H


@dataclass(frozen=True, eq=False)
class SvdModel:
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray
    fill: FillStrategy | None = None

    kind = "svd"

    @property
    def k(self) -> int:
        return len(self.S)

    @property
    def components(self) -> int:
        return self.k

    @property
    def n_users(self) -> int:
        return self.U.shape[0]

    @property
    def n_items(self) -> int:
        return self.Vt.shape[1]

    def predict_raw(self, users, items):
        return np.einsum("ij,j,ji->i", self.U[users], self.S, self.Vt[:, items])

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.Vt


@dataclass(frozen=True, eq=False)
class SgdMfModel:
    P: np.ndarray
    Q: np.ndarray
    alpha: float
    lam: float
    epochs: int
    seed: int | None = None

    kind = "sgd_mf"

    @property
    def r(self) -> int:
        return self.P.shape[1]

    @property
    def components(self) -> int:
        return self.r

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[1]

    def predict_raw(self, users, items):
        return np.einsum("ij,ji->i", self.P[users], self.Q[:, items])

    def reconstruct(self) -> np.ndarray:
        return self.P @ self.Q


@dataclass(frozen=True, eq=False)
class SvdIterResult:
    model: SvdModel
    completed: np.ndarray
    iterations: int
    delta_trace: tuple = field(default=())
    converged: bool = True


# ---------------------------------------------------------------------------
# NMF
# ---------------------------------------------------------------------------

def nmf_fit(x, r: int, max_iterations: int = 1000, rel_tolerance: float = 1e-6,
            seed: int = 0, fill: FillStrategy | None = None) -> NmfModel:
    """Lee-Seung multiplicative updates minimising ``||X - WH||_F^2``.

    ``W`` and ``H`` start from seeded uniform draws in (0, 1]. Each iteration
    updates ``H`` then ``W``; fitting stops once the relative decrease of the
    objective drops below ``rel_tolerance`` or after ``max_iterations``.
    """
    x = _check_dense(x)
    if np.any(x < 0):
        raise FactorizationError("NMF input must be non-negative")
    _check_rank(r, x, "NMF component count")
    if max_iterations < 1:
        raise FactorizationError("max_iterations must be >= 1")

    rng = np.random.default_rng(seed)
    n, m = x.shape
    W = 1.0 - rng.random((n, r))
    H = 1.0 - rng.random((r, m))

    trace = []
    prev = None
    for _ in range(max_iterations):
        H *= (W.T @ x) / np.maximum((W.T @ W) @ H, _DENOM_FLOOR)
        W *= (x @ H.T) / np.maximum(W @ (H @ H.T), _DENOM_FLOOR)
        resid = x - W @ H
        obj = float(np.einsum("ij,ij->", resid, resid))
        trace.append(obj)
        if obj == 0.0:
            break
        if prev is not None and (prev - obj) < rel_tolerance * prev:
            break
        prev = obj

    return NmfModel(W=W, H=H, fill=fill, objective_trace=tuple(trace), seed=seed,
                    max_iterations=max_iterations, rel_tolerance=rel_tolerance)


# ---------------------------------------------------------------------------
# SVD
# ---------------------------------------------------------------------------

def _fix_signs(U, Vt):
    # First entry that is nonzero beyond round-off decides each column's sign.
    for j in range(U.shape[1]):
        col = U[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12)
        if lead.size and col[lead[0]] < 0:
            U[:, j] = -col
            Vt[j] = -Vt[j]
    return U, Vt


def _use_arpack(shape, k) -> bool:
    small = min(shape)
    return small >= 200 and k <= small // 4


def svd_truncated(x, k: int, fill: FillStrategy | None = None, method: str = "auto") -> SvdModel:
    """Top-``k`` singular triplets of ``x``.

    ``method="dense"`` takes a full LAPACK decomposition and slices it;
    ``method="arpack"`` runs Lanczos for just ``k`` triplets at machine
    tolerance, which is much cheaper for a few components of a large matrix.
    ``"auto"`` picks ARPACK when ``k`` is at most a quarter of the smaller
    dimension and that dimension is at least 200.
    """
    x = _check_dense(x)
    _check_rank(k, x, "SVD rank k")
    if method == "auto":
        method = "arpack" if _use_arpack(x.shape, k) else "dense"

    if method == "dense":
        U, S, Vt = np.linalg.svd(x, full_matrices=False)
        U, S, Vt = U[:, :k].copy(), S[:k].copy(), Vt[:k].copy()
    elif method == "arpack":
        if k >= min(x.shape):
            raise FactorizationError("ARPACK needs k < min(n_rows, n_cols)")
        v0 = np.random.default_rng(0).uniform(-1.0, 1.0, min(x.shape))
        U, S, Vt = svds(x, k=k, tol=0, v0=v0)
        order = np.argsort(-S, kind="stable")
        U, S, Vt = U[:, order], S[order], Vt[order]
    else:
        raise ValueError(f"unknown SVD method {method!r}")

    U, Vt = _fix_signs(np.ascontiguousarray(U), np.ascontiguousarray(Vt))
    return SvdModel(U=U, S=np.maximum(S, 0.0), Vt=Vt, fill=fill)


def svd_iterative(m: SparseRatingMatrix, initial_fill: FillStrategy, k: int,
                  threshold: float = 1e-4, max_iterations: int = 50) -> SvdIterResult:
    """Complete ``m`` by alternating rank-``k`` SVD and re-imputation.

    Starting from ``impute_dense(m, initial_fill)``, each iteration takes the
    rank-``k`` truncated SVD of the current matrix and overwrites only the
    unobserved cells with its reconstruction; observed cells never change.
    The loop stops when the root-mean-square change of the unobserved cells
    falls below ``threshold`` or after ``max_iterations`` decompositions.
    """
    if threshold <= 0:
        raise FactorizationError("threshold must be > 0")
    if max_iterations < 1:
        raise FactorizationError("max_iterations must be >= 1")

    current = impute_dense(m, initial_fill)
    _check_rank(k, current, "SVD rank k")
    missing = ~m.mask()
    n_missing = int(missing.sum())

    deltas = []
    converged = False
    model = None
    for _ in range(max_iterations):
        model = svd_truncated(current, k, fill=initial_fill)
        updated = np.where(missing, model.reconstruct(), current)
        if n_missing:
            step = (updated - current)[missing]
            delta = float(np.sqrt(np.dot(step, step) / n_missing))
        else:
            delta = 0.0
        current = updated
        deltas.append(delta)
        if delta < threshold:
            converged = True
            break

    return SvdIterResult(model=model, completed=current, iterations=len(deltas),
                         delta_trace=tuple(deltas), converged=converged)


# ---------------------------------------------------------------------------
# SGD matrix factorization
# ---------------------------------------------------------------------------

def sgd_mf_fit(train: SparseRatingMatrix, r: int = 15, alpha: float = 0.005,
               lam: float = 0.02, epochs: int = 50, seed: int = 0) -> SgdMfModel:
    """Regularised matrix factorization fitted by stochastic gradient descent.

    Factors start uniform in (0, 0.1]. Every epoch visits the observed ratings
    in a fresh seeded order and, with ``e = rating - P[u] . Q[:, i]``, applies
    ``P[u] += alpha (e Q[:, i] - lam P[u])`` and
    ``Q[:, i] += alpha (e P[u] - lam Q[:, i])``, both using the pre-step
    values. No bias terms.
    """
    if r < 1:
        raise FactorizationError("r must be >= 1")
    if alpha < 0 or lam < 0:
        raise FactorizationError("alpha and lambda must be non-negative")
    if epochs < 0:
        raise FactorizationError("epochs must be >= 0")

    rng = np.random.default_rng(seed)
    P = 0.1 * (1.0 - rng.random((train.n_users, r)))
    Qt = 0.1 * (1.0 - rng.random((train.n_items, r)))

    users, items, ratings = train.entries()
    users, items, ratings = users.tolist(), items.tolist(), ratings.tolist()
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, epochs + 1):
            for idx in rng.permutation(len(ratings)).tolist():
                pu, qi = P[users[idx]], Qt[items[idx]]
                err = ratings[idx] - pu @ qi
                step_p = alpha * (err * qi - lam * pu)
                qi += alpha * (err * pu - lam * qi)
                pu += step_p
            if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Qt))):
                raise DivergenceError(epoch)

    return SgdMfModel(P=P, Q=np.ascontiguousarray(Qt.T), alpha=alpha, lam=lam,
                      epochs=epochs, seed=seed)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def _check_indices(model, users, items):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= model.n_users):
        raise IndexError(f"user index out of range [0, {model.n_users})")
    if items.size and (items.min() < 0 or items.max() >= model.n_items):
        raise IndexError(f"item index out of range [0, {model.n_items})")
    return users, items


def predict_many(model, users, items, scale: RatingScale) -> np.ndarray:
    """Clamped predictions for aligned arrays of dense user/item indices."""
    users, items = _check_indices(model, users, items)
    return scale.clamp(model.predict_raw(users, items))


def predict_rating(model, user: int, item: int, scale: RatingScale) -> float:
    """The model's reconstruction at ``(user, item)``, clamped into ``scale``."""
    return float(predict_many(model, [user], [item], scale)[0])
