import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from oracles import confidence_oracle, margin_oracle, random_probs

from asvp.features import PoolState
from asvp.strategies import (SelectionError, badge_grad_embed, kmeanspp_select,
                             select, select_confidence, select_margin, select_random)


def pool_of(n, labeled=()):
    labeled = list(labeled)
    unlabeled = [i for i in range(n) if i not in set(labeled)]
    return PoolState(labeled=labeled, unlabeled=unlabeled,
                     acquired_labels={i: 0 for i in labeled})


class TestRandom:
    def test_k_equals_pool(self):
        batch = select_random(pool_of(10), 10, seed=0)
        assert sorted(batch.indices) == list(range(10))

    def test_deterministic(self):
        assert select_random(pool_of(10), 4, 5).indices == select_random(pool_of(10), 4, 5).indices

    def test_k_zero(self):
        assert select_random(pool_of(10), 0, 0).indices == []

    def test_k_too_big(self):
        with pytest.raises(SelectionError):
            select_random(pool_of(3), 4, 0)


class TestMargin:
    def test_hand_example(self):
        probs = np.array([[0.8, 0.1, 0.1], [0.4, 0.35, 0.25], [0.5, 0.3, 0.2]])
        batch = select_margin(probs, pool_of(3), 2)
        assert batch.indices == [1, 2]  # margins 0.7, 0.05, 0.2

    def test_uniform_rows_tie_break_to_low_index(self):
        probs = np.full((6, 3), 1 / 3)
        batch = select_margin(probs, pool_of(6), 3)
        assert batch.indices == [0, 1, 2]

    def test_matches_sort_oracle_100_instances(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            n = int(rng.integers(5, 201))
            c = int(rng.integers(2, 11))
            probs = random_probs(rng, n, c)
            labeled = [int(i) for i in rng.choice(n, size=int(rng.integers(0, n // 2 + 1)),
                                                  replace=False)]
            pool = pool_of(n, labeled)
            k = int(rng.integers(1, len(pool.unlabeled) + 1))
            assert select_margin(probs, pool, k).indices == margin_oracle(probs, pool.unlabeled, k)


class TestConfidence:
    def test_hand_example(self):
        probs = np.array([[0.8, 0.1, 0.1], [0.4, 0.35, 0.25], [0.5, 0.3, 0.2]])
        assert select_confidence(probs, pool_of(3), 1).indices == [1]

    def test_one_hot_rows_selected_last(self):
        probs = np.array([[1.0, 0.0], [0.6, 0.4], [1.0, 0.0], [0.7, 0.3]])
        batch = select_confidence(probs, pool_of(4), 2)
        assert set(batch.indices) == {1, 3}

    def test_matches_sort_oracle_100_instances(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(rng.integers(5, 201))
            c = int(rng.integers(2, 11))
            probs = random_probs(rng, n, c)
            pool = pool_of(n)
            k = int(rng.integers(1, n + 1))
            assert select_confidence(probs, pool, k).indices == confidence_oracle(
                probs, pool.unlabeled, k)


class TestBadgeEmbed:
    def test_confident_correct_is_zero(self):
        g = badge_grad_embed(np.array([[1.0, 0.0]]), np.array([[2.0, 3.0]]))
        assert np.array_equal(g, np.zeros((1, 4)))

    def test_tie_goes_to_class_zero(self):
        g = badge_grad_embed(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))
        assert np.allclose(g, [[-0.5, 0.0, 0.5, 0.0]])

    def test_norm_identity(self):
        rng = np.random.default_rng(0)
        probs = random_probs(rng, 30, 4)
        feats = rng.normal(size=(30, 6))
        g = badge_grad_embed(probs, feats)
        resid = probs.copy()
        resid[np.arange(30), probs.argmax(axis=1)] -= 1.0
        expect = np.linalg.norm(resid, axis=1) * np.linalg.norm(feats, axis=1)
        assert np.allclose(np.linalg.norm(g, axis=1), expect)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            badge_grad_embed(np.zeros((3, 2)), np.zeros((4, 2)))


class TestKmeansPP:
    def far_cluster_embeddings(self):
        emb = np.zeros((12, 2))
        emb[10] = [100.0, 0.0]
        emb[11] = [0.0, 100.0]
        return emb

    def test_k1_uniform(self):
        emb = np.random.default_rng(0).normal(size=(10, 3))
        batch = kmeanspp_select(emb, pool_of(10), 1, seed=4)
        assert len(batch.indices) == 1

    def test_far_points_always_chosen(self):
        emb = self.far_cluster_embeddings()
        for seed in range(100):
            batch = kmeanspp_select(emb, pool_of(12), 3, seed=seed)
            assert {10, 11} <= set(batch.indices)

    def test_deterministic(self):
        emb = np.random.default_rng(1).normal(size=(20, 4))
        a = kmeanspp_select(emb, pool_of(20), 5, seed=17)
        b = kmeanspp_select(emb, pool_of(20), 5, seed=17)
        assert a.indices == b.indices

    def test_all_zero_falls_back_uniform(self):
        batch = kmeanspp_select(np.zeros((8, 3)), pool_of(8), 3, seed=2)
        assert batch.uniform_fallback
        assert len(set(batch.indices)) == 3

    def test_never_picks_zero_distance_duplicate(self):
        # five copies of one point plus three distinct points: k=4 must pick
        # the three distinct ones and only one copy
        emb = np.array([[1.0, 1.0]] * 5 + [[5.0, 0.0], [0.0, 5.0], [-5.0, 0.0]])
        for seed in range(30):
            batch = kmeanspp_select(emb, pool_of(8), 4, seed=seed)
            copies = [i for i in batch.indices if i < 5]
            assert len(copies) == 1
            assert {5, 6, 7} <= set(batch.indices)

    def test_zero_gradient_rows_never_precede_nonzero(self):
        emb = np.zeros((12, 2))
        emb[3] = [1.0, 0.0]
        emb[7] = [0.0, 1.0]
        for seed in range(50):
            batch = kmeanspp_select(emb, pool_of(12), 2, seed=seed)
            assert set(batch.indices) == {3, 7}

    @settings(max_examples=25, deadline=None)
    @given(seed=hst.integers(0, 1000), scale_pow=hst.integers(-3, 6))
    def test_scale_invariance_power_of_two(self, seed, scale_pow):
        rng = np.random.default_rng(seed)
        emb = rng.normal(size=(15, 3))
        base = kmeanspp_select(emb, pool_of(15), 4, seed=seed)
        scaled = kmeanspp_select(emb * (2.0 ** scale_pow), pool_of(15), 4, seed=seed)
        assert base.indices == scaled.indices


class TestDispatch:
    def test_unknown_strategy(self):
        with pytest.raises(SelectionError):
            select("coreset", pool_of(4), 1, 0)

    def test_badge_route(self):
        rng = np.random.default_rng(0)
        probs = random_probs(rng, 10, 3)
        feats = rng.normal(size=(10, 4))
        batch = select("badge", pool_of(10), 3, 7, probs=probs, feats=feats)
        batch.validate(pool_of(10))
        assert len(batch.indices) == 3
