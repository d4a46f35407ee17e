"""Candidate pool building, demographic planning, and identity synthesis.

The factory turns a labeled candidate pool into per-group identities via a
fixed edit sequence: neutralize pose, neutralize the current expression and
push toward neutral, then transform along the target demographic directions.
Each identity finally receives exactly six intra-class variation latents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import BackendError, ConfigError, InputError, InvariantError
from .geometry import AttributeBoundary, EditStep, compose_edits, neutralize, transform
from .simworld import ADULT_AGE_BINS, GENDERS, RACES

N_VARIATIONS = 6

STATUS_ORDER = ("planned", "synthesized", "personalized", "curated")


def expression_key(name: str) -> str:
    return f"expression:{name}"


def race_key(name: str) -> str:
    return f"race:{name}"


@dataclass
class CandidateSample:
    """One labeled, quality-scored candidate from the generator backend."""

    index: int
    latent: np.ndarray
    race: str
    gender: str
    age_bin: str
    expression: str
    yaw: float
    pitch: float
    illumination: float
    quality: float

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float64)
        if not np.isfinite(self.quality):
            raise InvariantError(f"candidate {self.index}: quality must be finite")
        for name in ("race", "gender", "age_bin", "expression"):
            if not getattr(self, name):
                raise InvariantError(f"candidate {self.index}: label {name!r} missing")


@dataclass(frozen=True)
class DemographicGroup:
    race: str
    age_bin: str
    gender: str
    group_id: int


@dataclass
class PoolBuildResult:
    samples: list[CandidateSample]
    n_sampled: int
    n_quality_dropped: int
    n_age_dropped: int


@dataclass
class IdentityRecord:
    identity_id: str
    group: DemographicGroup
    seed_latent: np.ndarray
    neutral_latent: np.ndarray | None = None
    demographic_latent: np.ndarray | None = None
    variation_latents: list[np.ndarray] = field(default_factory=list)
    variation_tags: list[str] = field(default_factory=list)
    variation_images: list[str] | None = None
    status: str = "planned"
    steps: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.status not in STATUS_ORDER:
            raise InvariantError(f"unknown status {self.status!r}")

    def require_synthesized(self):
        if STATUS_ORDER.index(self.status) < STATUS_ORDER.index("synthesized"):
            raise InvariantError(f"identity {self.identity_id} has status {self.status!r}")
        if len(self.variation_latents) != N_VARIATIONS:
            raise InvariantError(
                f"identity {self.identity_id} has {len(self.variation_latents)} variation latents, "
                f"expected {N_VARIATIONS}"
            )


@dataclass
class VariationSpec:
    """Exactly six named edit recipes applied to the demographic latent."""

    recipes: list[tuple[str, list[tuple[str, float]]]]

    def __post_init__(self):
        if len(self.recipes) != N_VARIATIONS:
            raise InvariantError(f"VariationSpec needs exactly {N_VARIATIONS} recipes, got {len(self.recipes)}")
        tags = [tag for tag, _ in self.recipes]
        if len(set(tags)) != len(tags):
            raise InvariantError("variation tags must be distinct")


def default_variation_spec(
    alpha_yaw: float = 1.39,
    alpha_pitch: float = 0.98,
    alpha_expression: float = 1.0,
) -> VariationSpec:
    """frontal, yaw+/-, pitch+, happy+, and a combined yaw+happy recipe.

    The pose magnitudes default to the trained boundaries' typical latent
    distances; illumination stays out of the default set (its boundary is
    the unreliable one) but any recipe may reference it.
    """
    happy = expression_key("happy")
    return VariationSpec(
        recipes=[
            ("frontal", []),
            ("yaw_pos", [("yaw", alpha_yaw)]),
            ("yaw_neg", [("yaw", -alpha_yaw)]),
            ("pitch_pos", [("pitch", alpha_pitch)]),
            ("happy", [(happy, alpha_expression)]),
            ("yaw_happy", [("yaw", alpha_yaw), (happy, alpha_expression)]),
        ]
    )


def build_candidate_pool(backend, n: int, quality_percentile: float = 0.10, seed: int = 0) -> PoolBuildResult:
    """Sample n candidates, drop the lowest-quality fraction, drop children.

    The quality drop count is exactly floor(quality_percentile * n); ties
    are broken by sample index so the result is deterministic. Candidates in
    the three child age bins are then removed entirely.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if not 0.0 <= quality_percentile < 1.0:
        raise InputError(f"quality_percentile must be in [0,1), got {quality_percentile}")
    try:
        samples = list(backend.sample_candidates(n, seed))
    except Exception as exc:
        raise BackendError(f"backend failed while sampling {n} candidates: {exc}") from exc
    if len(samples) != n:
        raise BackendError(f"backend returned {len(samples)} candidates, asked for {n}")

    n_drop = int(np.floor(quality_percentile * n))
    if n_drop:
        order = sorted(range(n), key=lambda i: (samples[i].quality, samples[i].index))
        dropped = set(order[:n_drop])
        survivors = [s for i, s in enumerate(samples) if i not in dropped]
    else:
        survivors = samples

    from .simworld import CHILD_AGE_BINS

    adults = [s for s in survivors if s.age_bin not in CHILD_AGE_BINS]
    return PoolBuildResult(
        samples=adults,
        n_sampled=n,
        n_quality_dropped=n_drop,
        n_age_dropped=len(survivors) - len(adults),
    )


def illumination_score(buffer, width: int, height: int) -> float:
    """Left-right brightness asymmetry of an 8-bit grayscale raster.

    (mean left half - mean right half) / 255, in [-1, 1]; odd widths
    exclude the middle column.
    """
    if width < 2 or height < 1:
        raise InputError(f"need width >= 2 and height >= 1, got {width}x{height}")
    arr = np.frombuffer(bytes(buffer), dtype=np.uint8) if isinstance(buffer, (bytes, bytearray)) else np.asarray(buffer, dtype=np.uint8).ravel()
    if arr.size != width * height:
        raise InputError(f"buffer has {arr.size} bytes, expected {width * height}")
    img = arr.reshape(height, width).astype(np.float64)
    half = width // 2
    left = img[:, :half].mean()
    right = img[:, width - half :].mean()
    return float((left - right) / 255.0)


def illumination_score_image(image: np.ndarray) -> float:
    """Convenience wrapper for a (height, width) uint8 array (e.g. from read_pgm)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise InputError(f"expected a 2-D grayscale image, got shape {image.shape}")
    h, w = image.shape
    return illumination_score(image.astype(np.uint8).tobytes(), w, h)


def plan_demographic_groups(
    races: Sequence[str] = RACES,
    age_bins: Sequence[str] = ADULT_AGE_BINS,
    genders: Sequence[str] = GENDERS,
    per_group: int = 10,
) -> tuple[list[DemographicGroup], int]:
    """Full race x age x gender cross product with an identity quota."""
    for name, values in (("races", races), ("age_bins", age_bins), ("genders", genders)):
        if len(set(values)) != len(values):
            raise ConfigError(f"duplicate {name}: {list(values)}")
    if per_group < 1:
        raise InputError(f"per_group must be >= 1, got {per_group}")
    groups = []
    gid = 0
    for race in races:
        for age_bin in age_bins:
            for gender in genders:
                groups.append(DemographicGroup(race=race, age_bin=age_bin, gender=gender, group_id=gid))
                gid += 1
    return groups, len(groups) * per_group


def select_seed_candidates(
    pool: Sequence[CandidateSample], group: DemographicGroup, k: int
) -> list[CandidateSample]:
    """Rank candidates by demographic proximity to the group and take k.

    Exact (race, gender, age) matches come first, then 2-of-3, 1-of-3,
    0-of-3; ties are broken by quality descending, then pool order.
    """
    if k < 0:
        raise InputError(f"k must be >= 0, got {k}")
    if k == 0:
        return []
    if not pool:
        raise InputError("pool is empty")
    if k > len(pool):
        raise InputError(f"k={k} exceeds pool size {len(pool)}")

    def rank(s: CandidateSample):
        matches = (s.race == group.race) + (s.gender == group.gender) + (s.age_bin == group.age_bin)
        return (-matches, -s.quality, s.index)

    return sorted(pool, key=rank)[:k]


def synthesize_identity(
    seed: CandidateSample,
    group: DemographicGroup,
    boundaries: Mapping[str, AttributeBoundary],
    alphas: Mapping[str, float],
    identity_id: str | None = None,
) -> IdentityRecord:
    """Run the three synthesis steps and record every intermediate latent.

    1. neutralize yaw, then pitch;
    2. if the seed expression is not neutral, neutralize its boundary and
       shift by -alpha['expression'] along it (toward neutral);
    3. transform along race:<group.race>, age, and gender with the given
       signed alphas (resolve_demographic_alphas produces group-aware signs).
    """

    def need(key: str) -> AttributeBoundary:
        if key not in boundaries:
            raise ConfigError(f"missing required boundary {key!r}")
        return boundaries[key]

    record = IdentityRecord(
        identity_id=identity_id or f"g{group.group_id:02d}s{seed.index}",
        group=group,
        seed_latent=seed.latent.copy(),
    )

    w = neutralize(seed.latent, need("yaw"))
    record.steps.append("neutralize:yaw")
    w = neutralize(w, need("pitch"))
    record.steps.append("neutralize:pitch")

    if seed.expression != "neutral":
        b = need(expression_key(seed.expression))
        w = neutralize(w, b)
        record.steps.append(f"neutralize:{expression_key(seed.expression)}")
        w = transform(w, b, -float(alphas.get("expression", 0.0)))
        record.steps.append(f"transform:{expression_key(seed.expression)}")
    record.neutral_latent = w.copy()

    w = transform(w, need(race_key(group.race)), float(alphas.get("race", 0.0)))
    record.steps.append(f"transform:{race_key(group.race)}")
    w = transform(w, need("age"), float(alphas.get("age", 0.0)))
    record.steps.append("transform:age")
    w = transform(w, need("gender"), float(alphas.get("gender", 0.0)))
    record.steps.append("transform:gender")
    record.demographic_latent = w
    return record


def resolve_demographic_alphas(
    group: DemographicGroup,
    base: Mapping[str, float] | None = None,
    gender_positive: str = "Male",
    age_coefficients: Mapping[str, float] | None = None,
) -> dict[str, float]:
    """Turn unsigned edit magnitudes into group-aware signed alphas.

    Gender flips sign when the target is not the boundary's positive class;
    age scales by the bin's position on the young-to-old axis
    (-1, -0.5, 0, +0.5, +1 across the five adult bins by default).
    """
    base = dict(base or {})
    race_a = base.get("race", 1.0)
    age_a = base.get("age", 1.0)
    gender_a = base.get("gender", 1.0)
    expr_a = base.get("expression", 1.0)
    if age_coefficients is None:
        n = len(ADULT_AGE_BINS)
        age_coefficients = {b: -1.0 + 2.0 * i / (n - 1) for i, b in enumerate(ADULT_AGE_BINS)}
    if group.age_bin not in age_coefficients:
        raise ConfigError(f"no age coefficient for bin {group.age_bin!r}")
    return {
        "race": race_a,
        "age": age_a * age_coefficients[group.age_bin],
        "gender": gender_a if group.gender == gender_positive else -gender_a,
        "expression": expr_a,
    }


def generate_variations(
    record: IdentityRecord,
    spec: VariationSpec,
    boundaries: Mapping[str, AttributeBoundary],
) -> IdentityRecord:
    """Apply the six variation recipes to the demographic latent."""
    if record.demographic_latent is None:
        raise InvariantError(f"identity {record.identity_id} has no demographic latent yet")
    latents = []
    tags = []
    for tag, recipe in spec.recipes:
        steps = []
        for attr, alpha in recipe:
            if attr not in boundaries:
                raise ConfigError(f"variation {tag!r} references unknown boundary {attr!r}")
            steps.append(EditStep(boundary=boundaries[attr], alpha=float(alpha)))
        latents.append(compose_edits(record.demographic_latent, steps))
        tags.append(tag)
    record.variation_latents = latents
    record.variation_tags = tags
    record.status = "synthesized"
    return record
