"""K-Means segmentation of users over latent factor features."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .factorization import NmfModel, SgdMfModel, SvdModel


class ClusteringError(ValueError):
    pass


def user_latent_features(model) -> np.ndarray:
    """One row of latent features per user.

    NMF gives the rows of ``W``, SGD-MF the rows of ``P``. SVD rows of ``U``
    are scaled by the singular values so distances reflect captured variance.
    """
    if isinstance(model, NmfModel):
        feats = model.W
    elif isinstance(model, SvdModel):
        feats = model.U * model.S
    elif isinstance(model, SgdMfModel):
        feats = model.P
    else:
        raise TypeError(f"no user features for {type(model).__name__}")
    feats = np.array(feats, dtype=float)
    if not np.all(np.isfinite(feats)):
        raise ClusteringError("latent features contain non-finite values")
    return feats


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    seed: int
    inertia_trace: tuple = ()
    converged: bool = True

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_distances(points, centroids):
    # Explicit differences rather than the |x|^2 - 2x.c + |c|^2 expansion so
    # exactly equidistant points tie exactly.
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign_to_clusters(model: ClusterModel | np.ndarray, points) -> np.ndarray:
    """Nearest-centroid index for every point; ties go to the lowest index."""
    centroids = model.centroids if isinstance(model, ClusterModel) else np.asarray(model, float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != centroids.shape[1]:
        raise ClusteringError(f"points have dimension {points.shape[1]}, "
                              f"centroids {centroids.shape[1]}")
    return np.argmin(_sq_distances(points, centroids), axis=1)


def _inertia(points, centroids, labels):
    diff = points - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def _fill_empty(points, centroids, labels, k):
    """Give every empty cluster the point farthest from its current centroid."""
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        dist = np.einsum("nd,nd->n", points - centroids[labels], points - centroids[labels])
        dist[counts[labels] <= 1] = -np.inf
        far = int(np.argmax(dist))
        counts[labels[far]] -= 1
        labels[far] = empty
        counts[empty] = 1
        centroids[empty] = points[far]
    return labels


def _centroid_means(points, labels, k):
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    counts = np.bincount(labels, minlength=k)
    return sums / counts[:, None]


def _single_run(points, k, rng, max_iterations):
    centroids = points[rng.choice(len(points), size=k, replace=False)].copy()
    labels = None
    trace = []
    converged = False
    for _ in range(max_iterations):
        new_labels = assign_to_clusters(centroids, points)
        new_labels = _fill_empty(points, centroids, new_labels, k)
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        centroids = _centroid_means(points, labels, k)
        trace.append(_inertia(points, centroids, labels))
    return centroids, labels, trace, converged


def kmeans_fit(features, k: int = 10, seed: int = 0, max_iterations: int = 300,
               restarts: int = 10) -> ClusterModel:
    """Lloyd's K-Means with ``restarts`` seeded initialisations.

    Each run starts from ``k`` distinct user rows drawn at random, then
    alternates nearest-centroid assignment (ties to the lowest index) and
    centroid recomputation until no assignment changes. A cluster left empty
    takes over the point farthest from its own centroid. The run with the
    lowest inertia wins; equal inertia goes to the earlier restart.
    """
    points = np.asarray(features, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise ClusteringError("features must be a non-empty 2-D array")
    if not np.all(np.isfinite(points)):
        raise ClusteringError("features contain non-finite values")
    if not 1 <= k <= len(points):
        raise ClusteringError(f"k must lie in [1, {len(points)}], got {k}")
    if max_iterations < 1 or restarts < 1:
        raise ClusteringError("max_iterations and restarts must be >= 1")

    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        centroids, labels, trace, converged = _single_run(
            points, k, np.random.default_rng(child), max_iterations)
        inertia = trace[-1]
        if best is None or inertia < best.inertia:
            best = ClusterModel(centroids=centroids, assignments=labels, inertia=inertia,
                                iterations=len(trace) + converged, seed=seed,
                                inertia_trace=tuple(trace), converged=converged)
    return best


def clusters_csv(model: ClusterModel, user_ids) -> str:
    """``user_id,cluster`` rows in dense user order."""
    if len(user_ids) != len(model.assignments):
        raise ValueError("one raw user id per assignment is required")
    out = io.StringIO()
    out.write("user_id,cluster\n")
    for uid, label in zip(user_ids, model.assignments.tolist()):
        out.write(f"{uid},{label}\n")
    return out.getvalue()


def read_clusters_csv(text: str, user_index: dict) -> np.ndarray:
    """Assignments in dense user order from a ``user_id,cluster`` file."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:2]] != ["user_id", "cluster"]:
        raise ClusteringError("cluster file must start with a user_id,cluster header")
    labels = np.full(len(user_index), -1, dtype=np.int64)
    for row in reader:
        if not row:
            continue
        try:
            labels[user_index[row[0].strip()]] = int(row[1])
        except KeyError:
            raise ClusteringError(f"line {reader.line_num}: unknown user {row[0]!r}") from None
        except (IndexError, ValueError):
            raise ClusteringError(f"line {reader.line_num}: malformed row {row!r}") from None
    if np.any(labels < 0):
        raise ClusteringError("cluster file does not assign every user")
    return labels
