"""Attribute direction discovery: linear max-margin separators on latent pools.

Populations are picked at the two extremes of an attribute's score
distribution, then an L2-regularized hinge loss is minimized by seeded
full-batch subgradient descent. The trained weight vector, unit-normalized
and oriented so positives score positive, is the attribute's edit direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, InputError, TrainingError
from .geometry import AttributeBoundary, BoundaryMeta

SCHEMES = ("binary", "one_vs_one_vs_neutral", "one_vs_all")


@dataclass
class SvmConfig:
    max_train: int = 100_000
    holdout_fraction: float = 0.1
    l2_lambda: float = 1e-4
    epochs: int = 50
    learning_rate: float = 0.1  # decays as lr/t per epoch
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 0.5:
            raise ConfigError(f"holdout_fraction must be in (0, 0.5), got {self.holdout_fraction}")
        if self.max_train < 2:
            raise ConfigError(f"max_train must be >= 2, got {self.max_train}")
        if self.epochs < 1 or self.learning_rate <= 0 or self.l2_lambda < 0:
            raise ConfigError("epochs >= 1, learning_rate > 0 and l2_lambda >= 0 required")


@dataclass
class LabeledPool:
    """Latents plus one attribute score per latent."""

    latents: np.ndarray  # (n, d)
    scores: np.ndarray  # (n,)
    attribute: str = ""

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.latents.ndim != 2:
            raise InputError(f"pool latents must be (n, d), got shape {self.latents.shape}")
        if self.scores.shape != (self.latents.shape[0],):
            raise InputError(
                f"pool has {self.latents.shape[0]} latents but {self.scores.shape} scores"
            )
        if not np.all(np.isfinite(self.scores)):
            raise InputError("pool scores contain non-finite values")

    def __len__(self) -> int:
        return self.latents.shape[0]


class ExtremeSelection(NamedTuple):
    positives: np.ndarray
    negatives: np.ndarray
    positive_indices: np.ndarray
    negative_indices: np.ndarray


class BoundaryEval(NamedTuple):
    accuracy: float
    average_distance: float


def select_extremes(pool: LabeledPool, per_side: int) -> ExtremeSelection:
    """Pick the per_side highest- and lowest-scored latents.

    Positives are selected first (ties broken by ascending pool index), then
    negatives from the remaining latents, so the two sides never overlap.
    """
    n = len(pool)
    if per_side < 1:
        raise InputError(f"per_side must be >= 1, got {per_side}")
    if 2 * per_side > n:
        raise InputError(f"per_side={per_side} needs {2 * per_side} latents, pool has {n}")
    order_desc = np.lexsort((np.arange(n), -pool.scores))
    pos_idx = np.sort(order_desc[:per_side])
    taken = np.zeros(n, dtype=bool)
    taken[pos_idx] = True
    order_asc = np.lexsort((np.arange(n), pool.scores))
    neg_idx = np.sort(np.array([i for i in order_asc if not taken[i]][:per_side], dtype=int))
    return ExtremeSelection(
        positives=pool.latents[pos_idx],
        negatives=pool.latents[neg_idx],
        positive_indices=pos_idx,
        negative_indices=neg_idx,
    )


def default_per_side(pool_size: int, cfg: SvmConfig) -> int:
    """25% of the pool per side, capped by max_train/2."""
    return max(1, min(pool_size // 4, cfg.max_train // 2))


def _check_sides(pos: np.ndarray, neg: np.ndarray):
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.ndim != 2 or neg.ndim != 2:
        raise InputError("pos and neg must be (n, d) arrays")
    if pos.shape[0] < 1 or neg.shape[0] < 1:
        raise InputError("pos and neg must each contain at least one latent")
    if pos.shape[1] != neg.shape[1]:
        raise DimensionError(f"pos dim {pos.shape[1]} != neg dim {neg.shape[1]}")
    return pos, neg


def train_linear_boundary(pos, neg, cfg: SvmConfig | None = None) -> AttributeBoundary:
    """Train a unit-normal boundary separating two latent populations.

    Deterministic for fixed inputs and seed: each side is shuffled with the
    seeded generator, truncated to max_train/2, and split so the last
    holdout_fraction of each side is held out for validation accuracy.
    Orientation is fixed so positives have positive mean signed distance.
    """
    cfg = cfg or SvmConfig()
    pos, neg = _check_sides(pos, neg)

    rng = np.random.default_rng(cfg.seed)
    cap = max(1, cfg.max_train // 2)
    pos = pos[rng.permutation(pos.shape[0])][:cap]
    neg = neg[rng.permutation(neg.shape[0])][:cap]

    def _split(side: np.ndarray):
        n_hold = int(np.floor(cfg.holdout_fraction * side.shape[0]))
        n_hold = min(n_hold, side.shape[0] - 1)  # keep at least one training point
        if n_hold <= 0:
            return side, side[:0]
        return side[:-n_hold], side[-n_hold:]

    pos_tr, pos_ho = _split(pos)
    neg_tr, neg_ho = _split(neg)

    x = np.vstack([pos_tr, neg_tr])
    y = np.concatenate([np.ones(pos_tr.shape[0]), -np.ones(neg_tr.shape[0])])
    if np.allclose(x, x[0], atol=0.0):
        raise TrainingError("all training latents are identical; no separating direction exists")

    theta = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for t in range(1, cfg.epochs + 1):
        eta = cfg.learning_rate / t
        margins = y * (x @ theta + b)
        active = margins < 1.0
        if np.any(active):
            grad_theta = cfg.l2_lambda * theta - (y[active, None] * x[active]).sum(axis=0) / n
            grad_b = -float(y[active].sum()) / n
        else:
            grad_theta = cfg.l2_lambda * theta
            grad_b = 0.0
        theta = theta - eta * grad_theta
        b = b - eta * grad_b

    if float(np.linalg.norm(theta)) == 0.0:
        raise TrainingError("training produced a zero weight vector")
    boundary = AttributeBoundary(attribute="", normal=theta, bias=b)  # normalizes (theta, b) jointly
    if float(np.mean(pos_tr @ boundary.normal)) + boundary.bias < 0:
        boundary.normal = -boundary.normal
        boundary.bias = -boundary.bias
    ho_pos = pos_ho if pos_ho.shape[0] else pos_tr
    ho_neg = neg_ho if neg_ho.shape[0] else neg_tr
    evaluation = evaluate_boundary(boundary, ho_pos, ho_neg)
    all_train = np.vstack([pos, neg])
    avg_dist = float(np.mean(np.abs(all_train @ boundary.normal + boundary.bias)))
    boundary.meta = BoundaryMeta(
        n_train=pos.shape[0] + neg.shape[0],
        validation_accuracy=evaluation.accuracy,
        average_distance=avg_dist,
    )
    return boundary


def evaluate_boundary(boundary: AttributeBoundary, pos, neg) -> BoundaryEval:
    """Accuracy (positives strictly positive side) and mean |signed distance|."""
    pos, neg = _check_sides(pos, neg)
    if pos.shape[1] != boundary.dim:
        raise DimensionError(f"latent dim {pos.shape[1]} != boundary dim {boundary.dim}")
    d_pos = pos @ boundary.normal + boundary.bias
    d_neg = neg @ boundary.normal + boundary.bias
    correct = int(np.count_nonzero(d_pos > 0)) + int(np.count_nonzero(d_neg <= 0))
    total = d_pos.size + d_neg.size
    avg = float(np.mean(np.abs(np.concatenate([d_pos, d_neg]))))
    return BoundaryEval(accuracy=correct / total, average_distance=avg)


def train_attribute_suite(
    pools: Mapping[str, LabeledPool],
    scheme: str,
    cfg: SvmConfig | None = None,
    per_side: int | None = None,
) -> dict[str, AttributeBoundary]:
    """Train one or many boundaries per the population scheme.

    binary: single pool, extremes of its score distribution.
    one_vs_one_vs_neutral: boundary per non-neutral pool against the pool
    named 'neutral'.
    one_vs_all: boundary per pool against the union of the others,
    subsampled (seeded) to the positive class size.
    """
    cfg = cfg or SvmConfig()
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    if not pools:
        raise ConfigError("no pools given")

    out: dict[str, AttributeBoundary] = {}
    if scheme == "binary":
        if len(pools) != 1:
            raise ConfigError(f"binary scheme needs exactly one pool, got {len(pools)}")
        (name, pool), = pools.items()
        side = per_side if per_side is not None else default_per_side(len(pool), cfg)
        sel = select_extremes(pool, side)
        boundary = train_linear_boundary(sel.positives, sel.negatives, cfg)
        boundary.attribute = name
        out[name] = boundary
        return out

    if scheme == "one_vs_one_vs_neutral":
        if "neutral" not in pools:
            raise ConfigError("one_vs_one_vs_neutral requires a pool named 'neutral'")
        neutral = pools["neutral"]
        for name, pool in pools.items():
            if name == "neutral":
                continue
            boundary = train_linear_boundary(pool.latents, neutral.latents, cfg)
            boundary.attribute = name
            out[name] = boundary
        if not out:
            raise ConfigError("one_vs_one_vs_neutral needs at least one non-neutral pool")
        return out

    # one_vs_all
    if len(pools) < 2:
        raise ConfigError(f"one_vs_all needs >= 2 pools, got {len(pools)}")
    rng = np.random.default_rng(cfg.seed)
    for name, pool in pools.items():
        rest = np.vstack([p.latents for other, p in pools.items() if other != name])
        k = min(len(pool), rest.shape[0])
        neg = rest[rng.permutation(rest.shape[0])[:k]]
        boundary = train_linear_boundary(pool.latents, neg, cfg)
        boundary.attribute = name
        out[name] = boundary
    return out


def suite_report_rows(boundaries: Mapping[str, AttributeBoundary]):
    """Rows for the per-attribute training report CSV."""
    for name in boundaries:
        b = boundaries[name]
        yield (
            name,
            b.meta.n_train,
            f"{b.meta.validation_accuracy:.4f}",
            f"{b.meta.average_distance:.4f}",
        )
