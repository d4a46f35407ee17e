"""Identity factory: pool filtering, planning, synthesis, and variations."""

import numpy as np
import pytest

from latentforge.errors import ConfigError, InputError, InvariantError
from latentforge.geometry import AttributeBoundary
from latentforge.identities import (
    CandidateSample,
    DemographicGroup,
    VariationSpec,
    build_candidate_pool,
    default_variation_spec,
    expression_key,
    generate_variations,
    illumination_score,
    illumination_score_image,
    plan_demographic_groups,
    race_key,
    resolve_demographic_alphas,
    select_seed_candidates,
    synthesize_identity,
)
from latentforge.simworld import (
    ADULT_AGE_BINS,
    AGE_BINS,
    CHILD_AGE_BINS,
    GENDERS,
    RACES,
    create_world,
    sample_labeled_latents,
)


def make_candidate(index=0, quality=30.0, race="White", gender="Male", age_bin="20-29",
                   expression="neutral", latent=None, dim=4):
    return CandidateSample(
        index=index,
        latent=latent if latent is not None else np.zeros(dim),
        race=race,
        gender=gender,
        age_bin=age_bin,
        expression=expression,
        yaw=0.0,
        pitch=0.0,
        illumination=0.0,
        quality=quality,
    )


class _ListBackend:
    def __init__(self, samples):
        self.samples = samples

    def sample_candidates(self, n, seed):
        return self.samples[:n]


class _FailingBackend:
    def sample_candidates(self, n, seed):
        raise RuntimeError("backend blew up at sample 3")


class TestBuildCandidatePool:
    def test_quality_drop_count_is_floor(self):
        samples = [make_candidate(i, quality=float(i)) for i in range(2560)]
        result = build_candidate_pool(_ListBackend(samples), 2560, 0.10, seed=0)
        assert result.n_quality_dropped == 256
        assert result.n_age_dropped == 0
        assert len(result.samples) == 2560 - 256

    def test_zero_percentile_drops_nothing(self):
        samples = [make_candidate(i, quality=float(i)) for i in range(100)]
        result = build_candidate_pool(_ListBackend(samples), 100, 0.0, seed=0)
        assert result.n_quality_dropped == 0
        assert len(result.samples) == 100

    def test_drops_lowest_quality(self):
        samples = [make_candidate(i, quality=float(i)) for i in range(10)]
        result = build_candidate_pool(_ListBackend(samples), 10, 0.3, seed=0)
        kept = {s.index for s in result.samples}
        assert kept == set(range(3, 10))

    def test_child_bins_dropped(self):
        samples = [make_candidate(i, age_bin="3-9" if i % 2 else "30-39") for i in range(20)]
        result = build_candidate_pool(_ListBackend(samples), 20, 0.0, seed=0)
        assert result.n_age_dropped == 10
        assert all(s.age_bin == "30-39" for s in result.samples)

    def test_planted_child_fraction(self):
        """Simworld with 30% child mass: age drops track the planted rate."""
        probs = {b: 0.1 for b in CHILD_AGE_BINS}
        probs.update({b: 0.7 / 5 for b in AGE_BINS[3:]})
        world = create_world(seed=13, age_bin_probs=probs)
        result = build_candidate_pool(world, 4000, 0.0, seed=14)
        frac = result.n_age_dropped / 4000
        assert frac == pytest.approx(0.30, abs=0.025)

    def test_backend_failure_wrapped(self):
        from latentforge.errors import BackendError

        with pytest.raises(BackendError, match="sample 3"):
            build_candidate_pool(_FailingBackend(), 10, 0.1, seed=0)

    def test_n_zero_rejected(self):
        with pytest.raises(InputError):
            build_candidate_pool(_ListBackend([]), 0, 0.1, seed=0)


class TestIlluminationScore:
    def test_extreme_asymmetry(self):
        buf = bytes([255] * 2 + [0] * 2) * 3  # 4x3: white left half, black right half
        assert illumination_score(buf, 4, 3) == pytest.approx(1.0)

    def test_uniform_is_zero(self):
        assert illumination_score(bytes([128] * 12), 4, 3) == pytest.approx(0.0)

    def test_odd_width_excludes_middle(self):
        assert illumination_score(bytes([255, 7, 0]), 3, 1) == pytest.approx(1.0)

    def test_short_buffer(self):
        with pytest.raises(InputError):
            illumination_score(bytes([1, 2, 3]), 4, 3)

    def test_width_one_rejected(self):
        with pytest.raises(InputError):
            illumination_score(bytes([1, 2]), 1, 2)

    def test_image_wrapper_matches(self):
        img = np.array([[255, 7, 0]], dtype=np.uint8)
        assert illumination_score_image(img) == pytest.approx(1.0)


class TestPlanGroups:
    def test_defaults_yield_70_groups_700_identities(self):
        groups, quota = plan_demographic_groups(per_group=10)
        assert len(groups) == 70
        assert quota == 700
        assert len({g.group_id for g in groups}) == 70

    def test_per_group_one(self):
        _, quota = plan_demographic_groups(per_group=1)
        assert quota == 70

    def test_small_cross_product(self):
        groups, quota = plan_demographic_groups(
            races=("A", "B"), age_bins=("x",), genders=("M", "F"), per_group=3
        )
        assert len(groups) == 4
        assert quota == 12

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigError):
            plan_demographic_groups(races=("A", "A"), age_bins=("x",), genders=("M", "F"))

    def test_full_cross_product_covered(self):
        groups, _ = plan_demographic_groups(per_group=1)
        combos = {(g.race, g.age_bin, g.gender) for g in groups}
        assert combos == {(r, a, s) for r in RACES for a in ADULT_AGE_BINS for s in GENDERS}


class TestSelectSeeds:
    def _group(self):
        return DemographicGroup(race="White", age_bin="20-29", gender="Male", group_id=0)

    def test_exact_matches_first(self):
        pool = [
            make_candidate(0, race="Black"),
            make_candidate(1),  # exact match
            make_candidate(2, gender="Female"),
            make_candidate(3),  # exact match
        ]
        out = select_seed_candidates(pool, self._group(), 2)
        assert {s.index for s in out} == {1, 3}

    def test_fallback_to_quality(self):
        pool = [
            make_candidate(0, race="Black", gender="Female", age_bin="60+", quality=10.0),
            make_candidate(1, race="Black", gender="Female", age_bin="60+", quality=50.0),
            make_candidate(2, race="Black", gender="Female", age_bin="60+", quality=30.0),
        ]
        out = select_seed_candidates(pool, self._group(), 2)
        assert [s.index for s in out] == [1, 2]

    def test_partial_match_tiers(self):
        pool = [
            make_candidate(0, race="Black", gender="Female", age_bin="60+"),  # 0 of 3
            make_candidate(1, race="White", gender="Female", age_bin="60+"),  # 1 of 3
            make_candidate(2, race="White", gender="Male", age_bin="60+"),    # 2 of 3
        ]
        out = select_seed_candidates(pool, self._group(), 3)
        assert [s.index for s in out] == [2, 1, 0]

    def test_k_zero(self):
        assert select_seed_candidates([make_candidate(0)], self._group(), 0) == []

    def test_k_too_large(self):
        with pytest.raises(InputError):
            select_seed_candidates([make_candidate(0)], self._group(), 2)


def planted_boundaries(world):
    out = {}
    for name in world.attribute_names:
        out[name] = AttributeBoundary(name, world.direction(name))
    return out


class TestSynthesizeIdentity:
    def _setup(self, seed=50):
        world = create_world(seed=seed)
        boundaries = planted_boundaries(world)
        samples = sample_labeled_latents(world, 20, seed=seed + 1)
        return world, boundaries, samples

    def test_identity_pipeline_when_frontal_neutral_zero_alphas(self):
        world, boundaries, _ = self._setup()
        # construct an exactly frontal + neutral seed latent
        rng = np.random.default_rng(0)
        latent = rng.standard_normal(world.dim)
        for name in ("yaw", "pitch"):
            latent -= (latent @ world.direction(name)) * world.direction(name)
        seed = make_candidate(0, latent=latent, expression="neutral", dim=world.dim)
        group = DemographicGroup("White", "20-29", "Male", 0)
        rec = synthesize_identity(seed, group, boundaries, {"race": 0.0, "age": 0.0, "gender": 0.0})
        np.testing.assert_allclose(rec.demographic_latent, seed.latent, atol=1e-9)

    def test_pose_neutralized_after_step_one(self):
        world, boundaries, samples = self._setup()
        s = samples[0]
        group = DemographicGroup(s.race, "30-39", s.gender, 1)
        cand = make_candidate(0, latent=s.latent, race=s.race, gender=s.gender,
                              expression=s.expression, dim=world.dim)
        rec = synthesize_identity(cand, group, boundaries, {"race": 1.0, "age": 1.0, "gender": 1.0, "expression": 1.0})
        for name in ("yaw", "pitch"):
            assert abs(float(rec.demographic_latent @ world.direction(name))) < 1e-6

    def test_expression_shifted_to_minus_alpha(self):
        world, boundaries, _ = self._setup()
        rng = np.random.default_rng(1)
        latent = rng.standard_normal(world.dim)
        cand = make_candidate(0, latent=latent, expression="happy", dim=world.dim)
        group = DemographicGroup("White", "20-29", "Male", 0)
        alpha = 0.8
        rec = synthesize_identity(cand, group, boundaries,
                                  {"race": 0.0, "age": 0.0, "gender": 0.0, "expression": alpha})
        happy_dir = world.direction(expression_key("happy"))
        assert float(rec.neutral_latent @ happy_dir) == pytest.approx(-alpha, abs=1e-9)

    def test_demographic_scores_move_by_exactly_alpha(self):
        """Planted-direction oracle: each configured alpha lands exactly."""
        world, boundaries, samples = self._setup()
        s = samples[3]
        cand = make_candidate(0, latent=s.latent, race=s.race, gender=s.gender,
                              expression=s.expression, dim=world.dim)
        group = DemographicGroup("Indian", "60+", "Female", 5)
        alphas = {"race": 1.7, "age": -0.6, "gender": 0.9, "expression": 1.0}
        before = synthesize_identity(cand, group, boundaries,
                                     {"race": 0.0, "age": 0.0, "gender": 0.0, "expression": 1.0})
        after = synthesize_identity(cand, group, boundaries, alphas)
        race_dir = world.direction(race_key("Indian"))
        for direction, alpha in (
            (race_dir, alphas["race"]),
            (world.direction("age"), alphas["age"]),
            (world.direction("gender"), alphas["gender"]),
        ):
            shift = float((after.demographic_latent - before.demographic_latent) @ direction)
            assert shift == pytest.approx(alpha, abs=1e-9)

    def test_race_edit_does_not_leak_into_pose(self):
        world, boundaries, samples = self._setup()
        s = samples[4]
        cand = make_candidate(0, latent=s.latent, race=s.race, gender=s.gender,
                              expression=s.expression, dim=world.dim)
        group = DemographicGroup("Black", "40-49", "Male", 9)
        rec = synthesize_identity(cand, group, boundaries, {"race": 2.5, "age": 0.0, "gender": 0.0, "expression": 1.0})
        for name in ("yaw", "pitch"):
            assert abs(float(rec.demographic_latent @ world.direction(name))) < 1e-6

    def test_missing_boundary_named(self):
        world, boundaries, samples = self._setup()
        del boundaries["pitch"]
        cand = make_candidate(0, latent=samples[0].latent, dim=world.dim)
        group = DemographicGroup("White", "20-29", "Male", 0)
        with pytest.raises(ConfigError, match="pitch"):
            synthesize_identity(cand, group, boundaries, {})

    def test_deterministic(self):
        world, boundaries, samples = self._setup()
        s = samples[5]
        cand = make_candidate(0, latent=s.latent, race=s.race, gender=s.gender,
                              expression=s.expression, dim=world.dim)
        group = DemographicGroup("White", "20-29", "Male", 0)
        a = synthesize_identity(cand, group, boundaries, {"race": 1.0, "age": 1.0, "gender": 1.0, "expression": 1.0})
        b = synthesize_identity(cand, group, boundaries, {"race": 1.0, "age": 1.0, "gender": 1.0, "expression": 1.0})
        np.testing.assert_array_equal(a.demographic_latent, b.demographic_latent)


class TestResolveAlphas:
    def test_gender_sign_flips(self):
        male = DemographicGroup("White", "40-49", "Male", 0)
        female = DemographicGroup("White", "40-49", "Female", 1)
        assert resolve_demographic_alphas(male)["gender"] == 1.0
        assert resolve_demographic_alphas(female)["gender"] == -1.0

    def test_age_ladder_spans_minus_one_to_one(self):
        coeffs = [resolve_demographic_alphas(DemographicGroup("White", b, "Male", i))["age"]
                  for i, b in enumerate(ADULT_AGE_BINS)]
        np.testing.assert_allclose(coeffs, [-1.0, -0.5, 0.0, 0.5, 1.0])


class TestGenerateVariations:
    def _record(self, world, boundaries):
        rng = np.random.default_rng(2)
        cand = make_candidate(0, latent=rng.standard_normal(world.dim), dim=world.dim)
        group = DemographicGroup("White", "20-29", "Male", 0)
        return synthesize_identity(cand, group, boundaries, {"race": 1.0, "age": 0.0, "gender": 1.0, "expression": 1.0})

    def test_exactly_six_variations(self):
        world = create_world(seed=60)
        boundaries = planted_boundaries(world)
        rec = generate_variations(self._record(world, boundaries), default_variation_spec(), boundaries)
        assert len(rec.variation_latents) == 6
        assert rec.status == "synthesized"
        rec.require_synthesized()

    def test_zero_alpha_recipe_equals_demographic_latent(self):
        world = create_world(seed=61)
        boundaries = planted_boundaries(world)
        spec = VariationSpec(recipes=[
            ("frontal", []),
            ("a", [("yaw", 0.0)]),
            ("b", [("pitch", 0.0)]),
            ("c", [("yaw", 1.0)]),
            ("d", [("yaw", -1.0)]),
            ("e", [("pitch", 1.0)]),
        ])
        rec = generate_variations(self._record(world, boundaries), spec, boundaries)
        np.testing.assert_allclose(rec.variation_latents[1], rec.demographic_latent, atol=1e-12)

    def test_symmetric_yaw_recipes_reflect(self):
        world = create_world(seed=62)
        boundaries = planted_boundaries(world)
        rec = generate_variations(self._record(world, boundaries), default_variation_spec(alpha_yaw=1.39), boundaries)
        yaw = world.direction("yaw")
        tags = dict(zip(rec.variation_tags, rec.variation_latents))
        base = float(rec.demographic_latent @ yaw)
        assert float(tags["yaw_pos"] @ yaw) - base == pytest.approx(1.39, abs=1e-9)
        assert float(tags["yaw_neg"] @ yaw) - base == pytest.approx(-1.39, abs=1e-9)

    def test_unknown_boundary_in_recipe(self):
        world = create_world(seed=63)
        boundaries = planted_boundaries(world)
        spec = VariationSpec(recipes=[
            ("frontal", []), ("a", [("nonexistent", 1.0)]), ("b", []), ("c", []), ("d", []), ("e", []),
        ])
        with pytest.raises(ConfigError, match="nonexistent"):
            generate_variations(self._record(world, boundaries), spec, boundaries)

    def test_spec_requires_six_recipes(self):
        with pytest.raises(InvariantError):
            VariationSpec(recipes=[("only", [])])
