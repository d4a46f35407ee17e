"""Boundary training: extreme selection, hinge trainer, and suite schemes.

The recovery oracle is a planted world: scores are exact projections onto a
known unit direction, so the trained normal can be compared to ground truth.
"""

import numpy as np
import pytest

from latentforge.boundaries import (
    LabeledPool,
    SvmConfig,
    default_per_side,
    evaluate_boundary,
    select_extremes,
    train_attribute_suite,
    train_linear_boundary,
)
from latentforge.errors import ConfigError, InputError, TrainingError
from latentforge.geometry import AttributeBoundary


def planted_pool(dim=16, n=2000, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    latents = rng.standard_normal((n, dim))
    scores = latents @ u + (noise * rng.standard_normal(n) if noise else 0.0)
    return LabeledPool(latents=latents, scores=scores, attribute="planted"), u


class TestSelectExtremes:
    def test_orders_by_score(self):
        pool = LabeledPool(
            latents=np.arange(10.0).reshape(5, 2),
            scores=np.array([0.1, 0.9, 0.5, 0.2, 0.8]),
            attribute="a",
        )
        sel = select_extremes(pool, 2)
        assert set(sel.positive_indices) == {1, 4}
        assert set(sel.negative_indices) == {0, 3}

    def test_all_equal_tie_break_by_index(self):
        pool = LabeledPool(latents=np.zeros((4, 2)) + np.arange(4)[:, None], scores=np.ones(4), attribute="a")
        sel = select_extremes(pool, 1)
        assert list(sel.positive_indices) == [0]
        assert list(sel.negative_indices) == [1]

    def test_per_side_too_large(self):
        pool = LabeledPool(latents=np.zeros((5, 2)), scores=np.zeros(5), attribute="a")
        with pytest.raises(InputError):
            select_extremes(pool, 3)

    def test_sides_equal_and_disjoint(self):
        pool, _ = planted_pool(n=101, seed=3)
        sel = select_extremes(pool, 25)
        assert len(sel.positive_indices) == len(sel.negative_indices) == 25
        assert not set(sel.positive_indices) & set(sel.negative_indices)


class TestTrainLinearBoundary:
    def test_planted_direction_recovery(self):
        pool, u = planted_pool(dim=64, n=10_000, seed=1)
        sel = select_extremes(pool, 2500)
        b = train_linear_boundary(sel.positives, sel.negatives, SvmConfig(seed=1))
        assert abs(float(b.normal @ u)) >= 0.95
        assert b.meta.validation_accuracy >= 0.99

    def test_separable_clusters_perfect_accuracy(self):
        rng = np.random.default_rng(2)
        pos = np.array([3.0, 0.0]) + 0.1 * rng.standard_normal((100, 2))
        neg = np.array([-3.0, 0.0]) + 0.1 * rng.standard_normal((100, 2))
        b = train_linear_boundary(pos, neg, SvmConfig(seed=2))
        assert b.meta.validation_accuracy == 1.0

    def test_degenerate_identical_points(self):
        point = np.ones((1, 4))
        with pytest.raises(TrainingError):
            train_linear_boundary(point, point.copy(), SvmConfig(seed=0))

    def test_orientation_positives_positive(self):
        pool, _ = planted_pool(dim=8, n=500, seed=4)
        sel = select_extremes(pool, 125)
        b = train_linear_boundary(sel.positives, sel.negatives, SvmConfig(seed=4))
        assert float(np.mean(sel.positives @ b.normal) + b.bias) > 0

    def test_deterministic(self):
        pool, _ = planted_pool(dim=8, n=400, seed=5)
        sel = select_extremes(pool, 100)
        b1 = train_linear_boundary(sel.positives, sel.negatives, SvmConfig(seed=9))
        b2 = train_linear_boundary(sel.positives, sel.negatives, SvmConfig(seed=9))
        assert np.array_equal(b1.normal, b2.normal)
        assert b1.bias == b2.bias
        assert b1.meta == b2.meta

    def test_cap_enforced(self):
        pool, _ = planted_pool(dim=4, n=2000, seed=6)
        sel = select_extremes(pool, 500)
        b = train_linear_boundary(sel.positives, sel.negatives, SvmConfig(max_train=100, seed=6))
        assert b.meta.n_train <= 100

    def test_unit_normal(self):
        pool, _ = planted_pool(dim=6, n=200, seed=7)
        sel = select_extremes(pool, 50)
        b = train_linear_boundary(sel.positives, sel.negatives, SvmConfig(seed=7))
        assert np.linalg.norm(b.normal) == pytest.approx(1.0, abs=1e-12)


class TestRecoveryProperty:
    def test_twenty_planted_worlds(self):
        """Margin-selected separable pools recover the planted direction."""
        for seed in range(20):
            pool, u = planted_pool(dim=32, n=1000, seed=100 + seed)
            keep = np.abs(pool.scores) >= 0.5  # enforce a margin around the plane
            pool = LabeledPool(pool.latents[keep], pool.scores[keep], "planted")
            sel = select_extremes(pool, len(pool) // 4)
            b = train_linear_boundary(sel.positives, sel.negatives, SvmConfig(seed=seed))
            assert abs(float(b.normal @ u)) >= 0.95
            assert b.meta.validation_accuracy >= 0.99


class TestEvaluateBoundary:
    def test_perfect_split(self):
        b = AttributeBoundary("a", np.array([0.0, 1.0]))
        res = evaluate_boundary(b, np.array([[0.0, 2.0]]), np.array([[0.0, -2.0]]))
        assert res.accuracy == 1.0
        assert res.average_distance == pytest.approx(2.0)

    def test_inverted(self):
        b = AttributeBoundary("a", np.array([0.0, 1.0]))
        res = evaluate_boundary(b, np.array([[0.0, -1.0]]), np.array([[0.0, 1.0]]))
        assert res.accuracy == 0.0

    def test_chance(self):
        b = AttributeBoundary("a", np.array([0.0, 1.0]))
        res = evaluate_boundary(b, np.array([[0.0, 1.0], [0.0, -1.0]]), np.array([[0.0, -1.0], [0.0, 1.0]]))
        assert res.accuracy == 0.5

    def test_empty_set_rejected(self):
        b = AttributeBoundary("a", np.array([0.0, 1.0]))
        with pytest.raises(InputError):
            evaluate_boundary(b, np.empty((0, 2)), np.array([[0.0, 1.0]]))

    def test_scaling_invariance_of_decisions(self):
        """Scaling (normal, bias) by c > 0 before normalization keeps accuracy."""
        rng = np.random.default_rng(11)
        pos = rng.standard_normal((50, 4)) + 0.5
        neg = rng.standard_normal((50, 4)) - 0.5
        b = train_linear_boundary(pos, neg, SvmConfig(seed=11))
        base = evaluate_boundary(b, pos, neg)
        for c in (0.1, 7.3, 1234.5):
            scaled = AttributeBoundary("a", b.normal * c, bias=b.bias * c)
            assert evaluate_boundary(scaled, pos, neg).accuracy == base.accuracy


class TestAttributeSuite:
    def _class_pool(self, center, n=40, seed=0, dim=6):
        rng = np.random.default_rng(seed)
        return LabeledPool(
            latents=center + 0.3 * rng.standard_normal((n, dim)),
            scores=np.zeros(n),
            attribute="c",
        )

    def test_expressions_vs_neutral(self):
        rng = np.random.default_rng(21)
        dim = 8
        centers = {name: 3.0 * rng.standard_normal(dim) for name in
                   ("happy", "sad", "surprise", "disgust", "anger", "contempt")}
        pools = {name: self._class_pool(c, seed=i, dim=dim) for i, (name, c) in enumerate(centers.items())}
        pools["neutral"] = self._class_pool(np.zeros(dim), seed=77, dim=dim)
        out = train_attribute_suite(pools, "one_vs_one_vs_neutral", SvmConfig(seed=0))
        assert sorted(out) == sorted(centers)
        assert all(b.meta.validation_accuracy > 0.9 for b in out.values())

    def test_one_vs_all_races(self):
        rng = np.random.default_rng(22)
        dim = 8
        names = ("White", "Black", "Latino_Hispanic", "Southeast_Asian", "East_Asian", "Middle_Eastern", "Indian")
        pools = {
            name: self._class_pool(4.0 * rng.standard_normal(dim), seed=i, dim=dim)
            for i, name in enumerate(names)
        }
        out = train_attribute_suite(pools, "one_vs_all", SvmConfig(seed=1))
        assert sorted(out) == sorted(names)

    def test_missing_neutral_pool(self):
        pools = {"happy": self._class_pool(np.ones(4), dim=4)}
        with pytest.raises(ConfigError, match="neutral"):
            train_attribute_suite(pools, "one_vs_one_vs_neutral")

    def test_binary_uses_extremes(self):
        pool, u = planted_pool(dim=16, n=800, seed=30)
        out = train_attribute_suite({"yaw": pool}, "binary", SvmConfig(seed=30))
        assert list(out) == ["yaw"]
        assert abs(float(out["yaw"].normal @ u)) > 0.9

    def test_unknown_scheme(self):
        pool, _ = planted_pool(n=10)
        with pytest.raises(ConfigError, match="scheme"):
            train_attribute_suite({"a": pool}, "pairwise")


def test_default_per_side():
    cfg = SvmConfig(max_train=100)
    assert default_per_side(1000, cfg) == 50  # capped by max_train/2
    assert default_per_side(100, SvmConfig()) == 25  # 25% rule
