"""Analytic stand-in backend with planted ground truth.

The world plants pairwise-orthonormal attribute directions in latent space
and defines identity as what is left after removing every attribute
component: embed(w) = normalize(P @ r(w)), with r the residual projector and
P a fixed seeded linear map. Attribute edits along planted directions
therefore never move the embedding, which turns every pipeline claim about
identity preservation into an exact, desk-scale check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateError, DimensionError, InputError

RACES = ("White", "Black", "Latino_Hispanic", "Southeast_Asian", "East_Asian", "Middle_Eastern", "Indian")
GENDERS = ("Male", "Female")
EXPRESSIONS = ("neutral", "happy", "sad", "surprise", "disgust", "anger", "contempt")
NONNEUTRAL_EXPRESSIONS = tuple(e for e in EXPRESSIONS if e != "neutral")
CHILD_AGE_BINS = ("0-2", "3-9", "10-19")
ADULT_AGE_BINS = ("20-29", "30-39", "40-49", "50-59", "60+")
AGE_BINS = CHILD_AGE_BINS + ADULT_AGE_BINS

SCALAR_ATTRIBUTES = ("yaw", "pitch", "gender", "age", "illumination")


def default_attribute_names() -> tuple[str, ...]:
    """yaw, pitch, gender, age, illumination, 6 expressions, 7 races."""
    return (
        SCALAR_ATTRIBUTES
        + tuple(f"expression:{e}" for e in NONNEUTRAL_EXPRESSIONS)
        + tuple(f"race:{r}" for r in RACES)
    )


def _norm_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.array([math.erf(v / math.sqrt(2.0)) for v in np.atleast_1d(x)]))


@dataclass
class SimSample:
    """One labeled candidate drawn from the world."""

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


@dataclass
class SimulatedSample:
    """One synthetic diffusion output: embedding plus oracle flags."""

    prompt_id: str
    embedding: np.ndarray
    is_outlier: bool
    gender: str


@dataclass
class World:
    dim: int
    attribute_names: tuple[str, ...]
    directions: np.ndarray  # (n_attr, dim), pairwise orthonormal
    embed_map: np.ndarray  # (embed_dim, dim)
    embed_dim: int
    noise_sigma: float
    seed: int
    age_bin_probs: dict[str, float] = field(default_factory=dict)

    def direction(self, name: str) -> np.ndarray:
        try:
            return self.directions[self.attribute_names.index(name)]
        except ValueError:
            raise ConfigError(f"world has no attribute direction {name!r}") from None

    def attribute_score(self, latent, name: str) -> float:
        """Noiseless planted score: latent . direction."""
        return float(np.asarray(latent, dtype=np.float64) @ self.direction(name))

    def residual(self, latent) -> np.ndarray:
        """Latent with every attribute component removed."""
        w = np.asarray(latent, dtype=np.float64)
        if w.shape != (self.dim,):
            raise DimensionError(f"latent has shape {w.shape}, world dim is {self.dim}")
        return w - self.directions.T @ (self.directions @ w)

    def sample_candidates(self, n: int, seed: int):
        """Generator+labeler backend protocol used by the identity factory."""
        return sample_labeled_latents(self, n, seed)


def create_world(
    dim: int = 64,
    attribute_names: tuple[str, ...] | None = None,
    embed_dim: int = 32,
    seed: int = 0,
    noise_sigma: float = 0.0,
    age_bin_probs: dict[str, float] | None = None,
) -> World:
    """Build a world with seeded Gram-Schmidt attribute directions.

    Requires len(attribute_names) + embed_dim <= dim so the identity
    residual subspace can fill all embed_dim output dimensions.
    """
    names = tuple(attribute_names) if attribute_names is not None else default_attribute_names()
    if len(set(names)) != len(names):
        raise ConfigError("attribute names must be distinct")
    if len(names) + embed_dim > dim:
        raise ConfigError(
            f"dim={dim} too small for {len(names)} attributes + embed_dim={embed_dim}"
        )
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    probs = dict(age_bin_probs) if age_bin_probs else {b: 1.0 / len(AGE_BINS) for b in AGE_BINS}
    if set(probs) != set(AGE_BINS):
        raise ConfigError(f"age_bin_probs must cover exactly {AGE_BINS}")
    total = sum(probs.values())
    if total <= 0:
        raise ConfigError("age_bin_probs must have positive total mass")
    probs = {b: p / total for b, p in probs.items()}

    rng = np.random.default_rng(seed)
    # One Gram-Schmidt chain: first the attribute directions, then embed_dim
    # further rows for the embedding map. Orthonormal embed rows inside the
    # residual subspace make embeddings of independent identities exactly
    # isotropic unit vectors (cosine sd = 1/sqrt(embed_dim)); this is why
    # attributes + embed_dim must fit inside dim.
    basis = np.empty((len(names) + embed_dim, dim))
    for k in range(basis.shape[0]):
        v = rng.standard_normal(dim)
        for j in range(k):
            v -= (v @ basis[j]) * basis[j]
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise ConfigError("degenerate draw during direction construction")
        basis[k] = v / norm
    directions = basis[: len(names)]
    embed_map = basis[len(names) :]
    return World(
        dim=dim,
        attribute_names=names,
        directions=directions,
        embed_map=embed_map,
        embed_dim=embed_dim,
        noise_sigma=float(noise_sigma),
        seed=seed,
        age_bin_probs=probs,
    )


def _age_bin_edges(probs: dict[str, float]) -> list[float]:
    cum = 0.0
    edges = []
    for b in AGE_BINS[:-1]:
        cum += probs[b]
        edges.append(cum)
    return edges


def sample_labeled_latents(world: World, n: int, seed: int = 0) -> list[SimSample]:
    """Draw n standard-normal latents with planted labels and scores.

    Scalar scores are latent.direction + N(0, noise_sigma). The categorical
    labels are argmaxes over their direction group (expression includes a
    neutral pseudo-score of 0); the age bin is the age score's percentile
    mapped through the world's per-bin probabilities.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    latents = rng.standard_normal((n, world.dim))

    def noisy(clean: np.ndarray) -> np.ndarray:
        if world.noise_sigma == 0.0:
            return clean
        return clean + world.noise_sigma * rng.standard_normal(clean.shape)

    scores = {name: noisy(latents @ world.direction(name)) for name in world.attribute_names}

    race_names = [a for a in world.attribute_names if a.startswith("race:")]
    expr_names = [a for a in world.attribute_names if a.startswith("expression:")]
    race_matrix = np.stack([scores[a] for a in race_names], axis=1)
    expr_matrix = np.stack([scores[a] for a in expr_names] + [np.zeros(n)], axis=1)
    expr_labels = [a.split(":", 1)[1] for a in expr_names] + ["neutral"]

    # age score ~ N(0, 1 + sigma^2); percentile -> configured bin masses
    age_sd = math.sqrt(1.0 + world.noise_sigma**2)
    age_pct = _norm_cdf(scores["age"] / age_sd)
    edges = _age_bin_edges(world.age_bin_probs)
    bin_idx = np.searchsorted(edges, age_pct, side="right")

    quality = np.maximum(rng.normal(30.0, 4.0, size=n), 1.0)

    samples = []
    for i in range(n):
        samples.append(
            SimSample(
                index=i,
                latent=latents[i],
                race=race_names[int(np.argmax(race_matrix[i]))].split(":", 1)[1],
                gender=GENDERS[0] if scores["gender"][i] > 0 else GENDERS[1],
                age_bin=AGE_BINS[int(bin_idx[i])],
                expression=expr_labels[int(np.argmax(expr_matrix[i]))],
                yaw=float(scores["yaw"][i]),
                pitch=float(scores["pitch"][i]),
                illumination=float(scores["illumination"][i]),
                quality=float(quality[i]),
            )
        )
    return samples


def embed(world: World, latent) -> np.ndarray:
    """Closed-form identity embedding: normalize(P @ residual(latent)).

    Raises DegenerateError when the latent lies (numerically) inside the
    attribute subspace and has no identity content.
    """
    r = world.residual(latent)
    if float(np.linalg.norm(r)) <= 1e-9:
        raise DegenerateError("latent has no residual outside the attribute subspace")
    e = world.embed_map @ r
    norm = float(np.linalg.norm(e))
    if norm <= 1e-12:
        raise DegenerateError("residual collapsed under the embedding map")
    return e / norm


def simulate_personalization(
    world: World,
    identity_latent,
    prompts,
    per_prompt_noise: float | list[float] = 0.0,
    seed: int = 0,
    outlier_fraction: float = 0.0,
    identity_gender: str | None = None,
) -> list[SimulatedSample]:
    """Produce one synthetic diffusion embedding per prompt entry.

    Each embedding is normalize(embed(identity) + sigma * noise); an
    outlier_fraction of samples instead embed a fresh random identity,
    modeling identity-loss failures the curation filter must catch.
    per_prompt_noise may be a single sigma or a list cycled across samples.
    """
    sigmas = per_prompt_noise if isinstance(per_prompt_noise, (list, tuple)) else [per_prompt_noise]
    if any(s < 0 for s in sigmas):
        raise InputError("per_prompt_noise must be >= 0")
    if not 0.0 <= outlier_fraction <= 1.0:
        raise InputError(f"outlier_fraction must be in [0,1], got {outlier_fraction}")
    base = embed(world, identity_latent)
    rng = np.random.default_rng(seed)
    out: list[SimulatedSample] = []
    for i, prompt_id in enumerate(prompts):
        if rng.random() < outlier_fraction:
            fresh = rng.standard_normal(world.dim)
            e = embed(world, fresh)
            gender = GENDERS[0] if float(fresh @ world.direction("gender")) > 0 else GENDERS[1]
            out.append(SimulatedSample(prompt_id=str(prompt_id), embedding=e, is_outlier=True, gender=gender))
            continue
        sigma = float(sigmas[i % len(sigmas)])
        e = base + sigma * rng.standard_normal(world.embed_dim)
        norm = float(np.linalg.norm(e))
        if norm <= 1e-12:  # vanishing-probability collapse; keep the base
            e = base.copy()
        else:
            e = e / norm
        gender = identity_gender if identity_gender is not None else GENDERS[0]
        out.append(SimulatedSample(prompt_id=str(prompt_id), embedding=e, is_outlier=False, gender=gender))
    return out
