import numpy as np
import pytest

from mfrec.factorization import NmfModel
from mfrec.ratings import RatingScale, RatingTriple, build_matrix
from mfrec.recommender import (
    UnknownUserError,
    cluster_top_n,
    recommendations_csv,
    top_n,
)


@pytest.fixture
def m():
    # u0 has rated only item0; items 1..3 are unseen.
    return build_matrix([RatingTriple("u0", "item0", 1.0), RatingTriple("u1", "item1", 3.0),
                         RatingTriple("u1", "item2", 4.0), RatingTriple("u1", "item3", 2.0)])


def scorer(scores):
    return NmfModel(W=np.ones((2, 1)), H=np.array([scores], dtype=float))


class TestTopN:
    def test_ties_by_item_index(self, m):
        recs = top_n(scorer([0.0, 4.2, 3.9, 4.2]), m, "u0", n=2)
        assert [r.item_raw for r in recs] == ["item1", "item3"]
        assert recs[0].score == 4.2

    def test_zero(self, m):
        assert top_n(scorer([1, 2, 3, 4]), m, "u0", n=0) == []

    def test_excludes_seen(self, m):
        recs = top_n(scorer([5, 2, 3, 4]), m, "u0", n=10)
        assert {r.item_raw for r in recs} <= {"item1", "item2", "item3"} and len(recs) == 3

    def test_include_seen(self, m):
        recs = top_n(scorer([5, 2, 3, 4]), m, "u0", n=1, exclude_seen=False)
        assert recs[0].item_raw == "item0"

    def test_scores_clamped(self, m):
        recs = top_n(scorer([0, 9, 0.2, 0]), m, "u0", n=3, scale=RatingScale(1, 5))
        assert [r.score for r in recs] == [5.0, 1.0, 1.0]

    def test_unknown_user(self, m):
        with pytest.raises(UnknownUserError):
            top_n(scorer([1, 2, 3, 4]), m, "nobody")


class TestClusterTopN:
    def test_peer_rating_ranks_first(self):
        m = build_matrix([RatingTriple("me", "a", 3.0), RatingTriple("peer", "a", 3.0),
                          RatingTriple("peer", "item7", 5.0), RatingTriple("peer", "b", 2.0)])
        recs = cluster_top_n(np.array([0, 0]), m, "me", n=5, min_support=1)
        assert recs[0] == ("item7", 5.0)
        assert [r.item_raw for r in recs] == ["item7", "b"]

    def test_falls_back_to_item_mean_below_support(self):
        rows = [RatingTriple("me", "a", 1.0), RatingTriple("peer", "x", 5.0),
                RatingTriple("o1", "x", 1.0), RatingTriple("o2", "x", 1.0),
                RatingTriple("o1", "y", 4.0)]
        m = build_matrix(rows)
        labels = np.array([0, 0, 1, 1])
        recs = dict(cluster_top_n(labels, m, "me", n=5, min_support=3))
        # x has one in-cluster rating, so it scores its mean over everyone.
        assert recs["x"] == pytest.approx(7 / 3)
        assert recs["y"] == 4.0

    def test_unknown_user(self, m):
        with pytest.raises(UnknownUserError):
            cluster_top_n(np.array([0, 0]), m, "ghost")


def test_csv():
    text = recommendations_csv([("a", 4.5), ("b", 3.0)])
    assert text == "rank,item_id,score\n1,a,4.500000\n2,b,3.000000\n"
