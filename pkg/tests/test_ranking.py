import numpy as np
import numpy.testing as npt
import pytest

from actionseg.core import BBox, ContractError, LabelSet, RegionMask
from actionseg.ranking import (
    RankedCandidate,
    RankerHyperparams,
    RankerModel,
    rank_and_prune,
    train_ranker,
    whole_image_fallback,
)


def labels():
    return LabelSet.with_objects(["obj_a", "obj_b"])


def block(x0, y0, x1, y1, channel=3):
    return RegionMask(
        bbox=BBox(x0, y0, x1, y1),
        mask=np.ones((y1 - y0, x1 - x0), dtype=bool),
        channel=channel,
        source="pred",
    )


def identity_model(dim):
    """Score equals the first feature value: a transparent ranker for tests."""
    w = np.zeros(dim, dtype=np.float32)
    w[0] = 1.0
    return RankerModel(weights=w, bias=0.0, hyperparams=RankerHyperparams())


class TestRankerModel:
    def test_score_is_affine(self):
        model = RankerModel(
            weights=np.array([2.0, -1.0], dtype=np.float32),
            bias=0.5,
            hyperparams=RankerHyperparams(),
        )
        npt.assert_allclose(model.score([[1.0, 1.0], [0.0, 2.0]]), [1.5, -1.5])

    def test_feature_length_checked(self):
        model = identity_model(3)
        with pytest.raises(ContractError):
            model.score(np.zeros((2, 4)))

    def test_weights_frozen_as_float32(self):
        model = identity_model(4)
        assert model.weights.dtype == np.float32
        with pytest.raises(ValueError):
            model.weights[0] = 2.0


class TestTrainRanker:
    def test_learns_monotone_overlap(self):
        # target is a clean linear function of the features; the trained
        # model must order held-out candidates the same way
        rng = np.random.default_rng(21)
        X = rng.random((120, 10))
        w_true = rng.random(10) * 0.2
        y = X @ w_true
        y = y / y.max()
        model = train_ranker(X, y)
        test = rng.random((30, 10))
        got = model.score(test)
        want = test @ w_true
        order_got = np.argsort(-got)
        order_want = np.argsort(-want)
        # ordering agreement measured at the top, where it matters
        assert order_got[0] == order_want[0]
        assert set(order_got[:5]) == set(order_want[:5])

    def test_targets_range_checked(self):
        X = np.zeros((4, 2))
        with pytest.raises(ContractError):
            train_ranker(X, np.array([0.0, 0.5, 1.0, 1.5]))
        with pytest.raises(ContractError):
            train_ranker(X, np.array([-0.1, 0.5, 1.0, 0.2]))

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            train_ranker(np.zeros((4, 2)), np.zeros(5))

    def test_too_few_samples(self):
        with pytest.raises(ContractError):
            train_ranker(np.zeros((1, 2)), np.zeros(1))

    def test_hyperparams_validated(self):
        with pytest.raises(ContractError):
            RankerHyperparams(epsilon=-0.1)
        with pytest.raises(ContractError):
            RankerHyperparams(lam=0.0)
        with pytest.raises(ContractError):
            RankerHyperparams(epochs=0)

    def test_deterministic(self):
        rng = np.random.default_rng(22)
        X = rng.random((40, 6))
        y = rng.random(40)
        m1 = train_ranker(X, y)
        m2 = train_ranker(X, y)
        npt.assert_array_equal(m1.weights, m2.weights)
        assert m1.bias == m2.bias


class TestRankAndPrune:
    def test_top_q_by_score(self):
        regions = [block(i, 0, i + 2, 2) for i in range(0, 10, 2)]
        feats = np.array([[0.9], [0.1], [0.8], [0.7], [0.2]])
        ranked = rank_and_prune(regions, feats, identity_model(1), 3, (20, 20), labels())
        assert [r.score for r in ranked] == pytest.approx([0.9, 0.8, 0.7])
        assert [r.region.bbox.x0 for r in ranked] == [0, 4, 6]
        assert all(not r.is_fallback for r in ranked)

    def test_single_candidate_kept(self):
        ranked = rank_and_prune(
            [block(0, 0, 3, 3)], np.array([[0.5]]), identity_model(1), 3, (8, 8), labels()
        )
        assert len(ranked) == 1
        assert ranked[0].region.bbox == BBox(0, 0, 3, 3)

    def test_tie_breaks_area_then_channel_then_index(self):
        big = block(0, 0, 4, 4, channel=4)
        small_b = block(10, 0, 12, 2, channel=4)
        small_a = block(0, 10, 2, 12, channel=3)
        small_a2 = block(10, 10, 12, 12, channel=3)
        regions = [small_b, small_a, big, small_a2]
        feats = np.zeros((4, 1))
        ranked = rank_and_prune(regions, feats, identity_model(1), 4, (20, 20), labels())
        assert [r.region for r in ranked] == [big, small_a, small_a2, small_b]

    def test_matches_sort_oracle_fuzz(self):
        rng = np.random.default_rng(23)
        ls = labels()
        for _ in range(100):
            n = int(rng.integers(1, 12))
            regions = []
            for _ in range(n):
                x0 = int(rng.integers(0, 20))
                y0 = int(rng.integers(0, 20))
                regions.append(
                    block(
                        x0,
                        y0,
                        x0 + int(rng.integers(1, 8)),
                        y0 + int(rng.integers(1, 8)),
                        channel=int(rng.integers(3, 5)),
                    )
                )
            # quantized scores force ties through the secondary keys
            feats = rng.integers(0, 3, size=(n, 1)) / 2.0
            q = int(rng.integers(1, 6))
            ranked = rank_and_prune(regions, feats, identity_model(1), q, (40, 40), ls)
            keyed = sorted(
                range(n),
                key=lambda i: (-feats[i, 0], -regions[i].area, regions[i].channel, i),
            )
            assert [r.region for r in ranked] == [regions[i] for i in keyed[:q]]

    def test_empty_gets_whole_image_fallback(self):
        ranked = rank_and_prune([], np.zeros((0, 4)), identity_model(4), 3, (6, 9), labels())
        assert len(ranked) == 1
        fb = ranked[0]
        assert fb.is_fallback
        assert fb.score == 0.0
        assert fb.region.bbox == BBox(0, 0, 9, 6)
        assert fb.region.mask.all()
        assert fb.region.channel == labels().object_indices[0]

    def test_fallback_helper_direct(self):
        fb = whole_image_fallback((4, 7), labels())
        assert isinstance(fb, RankedCandidate)
        assert fb.region.area == 28

    def test_row_count_checked(self):
        with pytest.raises(ContractError):
            rank_and_prune(
                [block(0, 0, 2, 2)], np.zeros((2, 1)), identity_model(1), 3, (8, 8), labels()
            )

    def test_q_validated(self):
        with pytest.raises(ContractError):
            rank_and_prune(
                [block(0, 0, 2, 2)], np.zeros((1, 1)), identity_model(1), 0, (8, 8), labels()
            )
