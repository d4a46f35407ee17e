"""Analytic backend: planted structure, labeling statistics, embedding oracles."""

import numpy as np
import pytest
from scipy import stats

from latentforge.curation import CurationSample, FilterConfig, GanReference, apply_filters
from latentforge.errors import ConfigError, DegenerateError, InputError
from latentforge.geometry import AttributeBoundary, transform
from latentforge.simworld import (
    AGE_BINS,
    CHILD_AGE_BINS,
    RACES,
    create_world,
    embed,
    sample_labeled_latents,
    simulate_personalization,
)


class TestCreateWorld:
    def test_default_world_valid(self):
        w = create_world()
        assert w.dim == 64 and w.embed_dim == 32
        assert len(w.attribute_names) == 18  # 5 scalar + 6 expressions + 7 races

    def test_directions_orthonormal(self):
        w = create_world(seed=3)
        gram = w.directions @ w.directions.T
        np.testing.assert_allclose(gram, np.eye(len(w.attribute_names)), atol=1e-9)

    def test_same_seed_same_world(self):
        w1, w2 = create_world(seed=5), create_world(seed=5)
        np.testing.assert_array_equal(w1.directions, w2.directions)
        np.testing.assert_array_equal(w1.embed_map, w2.embed_map)

    def test_insufficient_dim(self):
        with pytest.raises(ConfigError):
            create_world(dim=8)

    def test_duplicate_attributes(self):
        with pytest.raises(ConfigError):
            create_world(dim=64, attribute_names=("a", "a"), embed_dim=4)


class TestSampling:
    def test_noiseless_scores_exact(self):
        w = create_world(seed=1)
        samples = sample_labeled_latents(w, 50, seed=2)
        for s in samples:
            assert s.yaw == pytest.approx(float(s.latent @ w.direction("yaw")), abs=1e-12)

    def test_configured_count(self):
        w = create_world(seed=1)
        assert len(sample_labeled_latents(w, 2560, seed=0)) == 2560

    def test_race_labels_uniform_chi_square(self):
        """Isotropic draws over orthonormal race directions are symmetric."""
        w = create_world(seed=7)
        samples = sample_labeled_latents(w, 10_000, seed=8)
        counts = [sum(1 for s in samples if s.race == r) for r in RACES]
        assert stats.chisquare(counts).pvalue > 0.01

    def test_age_bins_follow_configured_probs(self):
        probs = {b: 0.1 for b in CHILD_AGE_BINS}
        remaining = (1.0 - 0.3) / 5
        probs.update({b: remaining for b in AGE_BINS[3:]})
        w = create_world(seed=9, age_bin_probs=probs)
        samples = sample_labeled_latents(w, 10_000, seed=10)
        child_frac = sum(1 for s in samples if s.age_bin in CHILD_AGE_BINS) / len(samples)
        assert child_frac == pytest.approx(0.30, abs=0.02)

    def test_quality_positive_and_independent(self):
        w = create_world(seed=11)
        samples = sample_labeled_latents(w, 2000, seed=12)
        q = np.array([s.quality for s in samples])
        yaw = np.array([s.yaw for s in samples])
        assert np.all(q > 0)
        assert abs(np.corrcoef(q, yaw)[0, 1]) < 0.08


class TestEmbedding:
    def test_unit_norm(self):
        w = create_world(seed=20)
        rng = np.random.default_rng(0)
        for _ in range(20):
            e = embed(w, rng.standard_normal(w.dim))
            assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_on_attribute_direction(self):
        w = create_world(seed=20)
        with pytest.raises(DegenerateError):
            embed(w, w.direction("yaw"))

    def test_attribute_edits_never_change_identity(self):
        """embed(transform(w, planted direction, alpha)) == embed(w)."""
        w = create_world(seed=21)
        rng = np.random.default_rng(1)
        latent = rng.standard_normal(w.dim)
        base = embed(w, latent)
        for name in w.attribute_names:
            b = AttributeBoundary(name, w.direction(name))
            for alpha in (-3.0, -0.5, 1.0, 4.2):
                moved = embed(w, transform(latent, b, alpha))
                np.testing.assert_allclose(moved, base, atol=1e-9)

    def test_small_residual_perturbation_first_order(self):
        """cos(embed(w), embed(w + delta)) ~ 1 - O(|delta|^2) for residual delta."""
        w = create_world(seed=22)
        rng = np.random.default_rng(2)
        latent = rng.standard_normal(w.dim)
        base = embed(w, latent)
        eps_cosines = []
        for eps in (1e-1, 1e-2, 1e-3):
            delta = w.residual(rng.standard_normal(w.dim))
            delta *= eps / np.linalg.norm(delta)
            cos = float(base @ embed(w, latent + delta))
            eps_cosines.append((eps, 1.0 - cos))
        # shrinking eps by 10 shrinks (1 - cos) by ~100
        assert eps_cosines[1][1] < eps_cosines[0][1] / 20
        assert eps_cosines[2][1] < eps_cosines[1][1] / 20


class TestSimulatedPersonalization:
    def test_zero_noise_zero_outliers_ip_one(self):
        w = create_world(seed=30)
        rng = np.random.default_rng(3)
        latent = rng.standard_normal(w.dim)
        sims = simulate_personalization(w, latent, [f"p{i}" for i in range(10)], 0.0, seed=4)
        base = embed(w, latent)
        for s in sims:
            assert float(s.embedding @ base) == pytest.approx(1.0, abs=1e-12)
            assert not s.is_outlier

    def test_outlier_scores_center_on_zero(self):
        """Independent isotropic unit vectors: E[cos]=0, sd ~ 1/sqrt(embed_dim)."""
        w = create_world(seed=31)
        rng = np.random.default_rng(5)
        latent = rng.standard_normal(w.dim)
        base = embed(w, latent)
        sims = simulate_personalization(
            w, latent, [f"p{i}" for i in range(2000)], 0.0, seed=6, outlier_fraction=1.0
        )
        cosines = np.array([float(s.embedding @ base) for s in sims])
        assert abs(cosines.mean()) < 0.02
        assert cosines.std() == pytest.approx(1 / np.sqrt(w.embed_dim), rel=0.2)

    def test_noise_monotonically_lowers_ip(self):
        w = create_world(seed=32)
        rng = np.random.default_rng(7)
        latent = rng.standard_normal(w.dim)
        base = embed(w, latent)
        means = []
        for sigma in (0.0, 0.2, 0.4, 0.8, 1.6):
            sims = simulate_personalization(w, latent, [f"p{i}" for i in range(500)], sigma, seed=8)
            means.append(np.mean([float(s.embedding @ base) for s in sims]))
        assert all(a > b for a, b in zip(means, means[1:]))

    def test_negative_noise_rejected(self):
        w = create_world(seed=33)
        with pytest.raises(InputError):
            simulate_personalization(w, np.ones(w.dim), ["p"], -0.1)


class TestYieldLaw:
    def test_filter_drops_exactly_the_outliers(self):
        """With sigma=0, any t_ip in (0.2, 0.9) separates outliers binomially.

        embed_dim is raised so outlier cosines (sd=1/sqrt(56)) rarely cross
        even the lowest threshold; the dropped count must then be consistent
        with Binomial(n, f).
        """
        w = create_world(dim=96, embed_dim=56, seed=40)
        rng = np.random.default_rng(9)
        f = 0.1
        n = 2000
        latent = rng.standard_normal(w.dim)
        base = embed(w, latent)
        refs = {"id0": GanReference("id0", np.tile(base, (6, 1)), "Male")}
        sims = simulate_personalization(
            w, latent, [f"id0_p_{i}" for i in range(n)], 0.0, seed=10, outlier_fraction=f,
            identity_gender="Male",
        )
        embeddings = {s.prompt_id: s.embedding for s in sims}
        genders = {s.prompt_id: "Male" for s in sims}
        detections = {s.prompt_id: 1 for s in sims}
        for t_ip in (0.21, 0.3, 0.5, 0.89):
            samples = [
                CurationSample(sample_id=s.prompt_id, identity_id="id0", stage="diffusion")
                for s in sims
            ]
            _, report = apply_filters(
                samples, refs, FilterConfig(t_ip=t_ip), genders,
                embeddings=embeddings, detections=detections,
            )
            dropped = report.per_stage_drops["identity"]
            assert stats.binomtest(dropped, n, f).pvalue > 0.01
