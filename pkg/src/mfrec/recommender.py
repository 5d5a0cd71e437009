"""Top-N recommendation from factor models and from user clusters."""

from __future__ import annotations

import io
from typing import NamedTuple

import numpy as np

from .clustering import ClusterModel
from .factorization import predict_many
from .ratings import RatingScale, SparseRatingMatrix


class Recommendation(NamedTuple):
    item_raw: str
    score: float


class UnknownUserError(KeyError):
    def __str__(self):
        return f"unknown user {self.args[0]!r}"


def _user_index(m: SparseRatingMatrix, user) -> int:
    try:
        return m.user_index[user]
    except KeyError:
        raise UnknownUserError(user) from None


def _rank(m, candidates, scores, n):
    # Descending score, ascending dense item index on ties.
    order = np.lexsort((candidates, -scores))[:n]
    return [Recommendation(m.item_ids[candidates[j]], float(scores[j])) for j in order]


def top_n(model, m: SparseRatingMatrix, user, n: int = 10, exclude_seen: bool = True,
          scale: RatingScale | None = None) -> list[Recommendation]:
    """Highest predicted ratings for ``user`` (a raw id)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    u = _user_index(m, user)
    scale = scale or m.scale
    candidates = np.arange(m.n_items)
    if exclude_seen:
        candidates = np.setdiff1d(candidates, m.row(u)[0])
    if n == 0 or candidates.size == 0:
        return []
    scores = predict_many(model, np.full(candidates.size, u), candidates, scale)
    return _rank(m, candidates, scores, n)


def cluster_top_n(cm: ClusterModel | np.ndarray, m: SparseRatingMatrix, user, n: int = 10,
                  min_support: int = 3) -> list[Recommendation]:
    """Rank the user's unseen items by their mean rating inside the user's cluster.

    ``cm`` is a fitted :class:`ClusterModel` or a bare per-user assignment
    array in dense user order. Items rated by fewer than ``min_support``
    cluster members are scored by their overall mean rating instead (the
    global mean for unrated items).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    u = _user_index(m, user)
    labels = np.asarray(cm.assignments if isinstance(cm, ClusterModel) else cm)
    if len(labels) != m.n_users:
        raise ValueError("cluster assignments do not cover the rating matrix's users")

    users, items, values = m.entries()
    in_cluster = labels[users] == labels[u]
    support = np.bincount(items[in_cluster], minlength=m.n_items)
    sums = np.bincount(items[in_cluster], weights=values[in_cluster], minlength=m.n_items)
    fallback = m.item_means()
    scores = np.where(support >= max(min_support, 1),
                      sums / np.maximum(support, 1), fallback)

    candidates = np.setdiff1d(np.arange(m.n_items), m.row(u)[0])
    if n == 0 or candidates.size == 0:
        return []
    return _rank(m, candidates, scores[candidates], n)


def recommendations_csv(recs) -> str:
    out = io.StringIO()
    out.write("rank,item_id,score\n")
    for rank, (item, score) in enumerate(recs, start=1):
        out.write(f"{rank},{item},{score:.6f}\n")
    return out.getvalue()
