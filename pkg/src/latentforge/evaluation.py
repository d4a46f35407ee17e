"""Score-distribution evaluation of curated datasets.

Per identity, a seeded protocol selects images and draws mated / non-mated
comparison pairs; pairs are scored by embedding cosine similarity. The
distributions are summarized (population mean/std, fixed-bin histogram on
[-1, 1]), divergence against reference datasets uses an epsilon-smoothed
histogram KL estimate, and the operating point where the false match and
false non-match rates cross gives the equal error rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .curation import cosine_similarity
from .errors import ConfigError, DataError, InputError

SCORE_RANGE = (-1.0, 1.0)


@dataclass
class ComparisonSet:
    dataset_id: str
    mated: list[tuple[str, str]]
    nonmated: list[tuple[str, str]]
    seed: int
    per_identity: int
    skipped_identities: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "per_identity": self.per_identity,
            "mated": [list(p) for p in self.mated],
            "nonmated": [list(p) for p in self.nonmated],
            "skipped_identities": list(self.skipped_identities),
        }


@dataclass
class ScoreDistribution:
    scores: np.ndarray
    mean: float
    std: float
    bin_edges: np.ndarray
    probabilities: np.ndarray

    @classmethod
    def from_scores(cls, scores, bins: int = 100) -> "ScoreDistribution":
        arr = np.asarray(scores, dtype=np.float64)
        if arr.size == 0:
            raise InputError("cannot summarize an empty score list")
        if bins < 2:
            raise InputError(f"bins must be >= 2, got {bins}")
        edges = np.linspace(SCORE_RANGE[0], SCORE_RANGE[1], bins + 1)
        counts, _ = np.histogram(np.clip(arr, *SCORE_RANGE), bins=edges)
        return cls(
            scores=arr,
            mean=float(arr.mean()),
            std=float(arr.std()),  # population std
            bin_edges=edges,
            probabilities=counts / arr.size,
        )

    def summary(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"


class EerResult(NamedTuple):
    eer: float
    threshold: float


@dataclass
class EvaluatedDataset:
    name: str
    mated: ScoreDistribution
    nonmated: ScoreDistribution
    n_identities: int


def sample_comparisons(
    samples_by_identity: Mapping[str, Sequence[str]],
    per_identity: int = 10,
    mated_per_id: int = 20,
    nonmated_per_id: int = 20,
    seed: int = 0,
    dataset_id: str = "dataset",
) -> ComparisonSet:
    """Seeded selection of images and comparison pairs per identity.

    Identities with fewer than per_identity images are skipped (and listed);
    mated pairs are drawn without replacement from the C(per_identity, 2)
    possibilities, capped there with a warning; non-mated pairs combine an
    image of the identity with an image of a uniformly drawn other identity,
    rejecting duplicates. Input ordering never affects the result: identities
    are processed in sorted order by a single seeded generator.
    """
    if per_identity < 2:
        raise InputError(f"per_identity must be >= 2, got {per_identity}")
    if mated_per_id < 1 or nonmated_per_id < 1:
        raise InputError("mated_per_id and nonmated_per_id must be >= 1")

    eligible: dict[str, list[str]] = {}
    skipped: list[str] = []
    for identity in sorted(samples_by_identity):
        ids = list(samples_by_identity[identity])
        if len(ids) < per_identity:
            skipped.append(identity)
        else:
            eligible[identity] = ids
    if len(eligible) < 2:
        raise InputError(f"need >= 2 identities with >= {per_identity} images, have {len(eligible)}")
    if skipped:
        warnings.warn(f"skipped {len(skipped)} identities with < {per_identity} images", stacklevel=2)

    max_mated = per_identity * (per_identity - 1) // 2
    if mated_per_id > max_mated:
        warnings.warn(
            f"mated_per_id={mated_per_id} exceeds C({per_identity},2)={max_mated}; capping", stacklevel=2
        )
        mated_per_id = max_mated

    rng = np.random.default_rng(seed)
    names = list(eligible)
    selected = {
        identity: [eligible[identity][j] for j in rng.choice(len(eligible[identity]), size=per_identity, replace=False)]
        for identity in names
    }

    mated: list[tuple[str, str]] = []
    nonmated: list[tuple[str, str]] = []
    seen_nonmated: set[tuple[str, str]] = set()  # no pair repeats anywhere in the list
    for identity in names:
        mine = selected[identity]
        all_pairs = [(mine[a], mine[b]) for a in range(per_identity) for b in range(a + 1, per_identity)]
        picks = rng.choice(len(all_pairs), size=mated_per_id, replace=False)
        mated.extend(all_pairs[int(j)] for j in picks)

        others = [n for n in names if n != identity]
        drawn = 0
        attempts = 0
        while drawn < nonmated_per_id:
            attempts += 1
            if attempts > 200 * nonmated_per_id:
                raise InputError(
                    f"cannot draw {nonmated_per_id} distinct non-mated pairs for {identity!r}"
                )
            a = mine[int(rng.integers(per_identity))]
            other = others[int(rng.integers(len(others)))]
            b = selected[other][int(rng.integers(per_identity))]
            key = (a, b) if a <= b else (b, a)
            if key in seen_nonmated:
                continue
            seen_nonmated.add(key)
            nonmated.append((a, b))
            drawn += 1

    return ComparisonSet(
        dataset_id=dataset_id,
        mated=mated,
        nonmated=nonmated,
        seed=seed,
        per_identity=per_identity,
        skipped_identities=skipped,
    )


def score_comparisons(
    cset: ComparisonSet, embeddings: Mapping[str, np.ndarray], bins: int = 100
) -> tuple[ScoreDistribution, ScoreDistribution]:
    """Cosine similarity for every pair; missing embeddings are an error."""

    def _score(pairs):
        out = np.empty(len(pairs))
        for i, (a, b) in enumerate(pairs):
            for sid in (a, b):
                if sid not in embeddings:
                    raise DataError(f"no embedding for sample {sid!r}")
            out[i] = cosine_similarity(embeddings[a], embeddings[b])
        return out

    return (
        ScoreDistribution.from_scores(_score(cset.mated), bins=bins),
        ScoreDistribution.from_scores(_score(cset.nonmated), bins=bins),
    )


def kl_divergence(p: ScoreDistribution, q: ScoreDistribution, bins: int = 100, epsilon: float = 1e-6) -> float:
    """Histogram KL estimate D(P || Q) in nats on shared [-1, 1] bins.

    Both score lists are re-binned on identical equal-width edges; epsilon
    is added to every bin mass and both histograms renormalized, so the
    estimate is finite for empty bins and zero when the lists coincide.
    """
    if bins < 2:
        raise InputError(f"bins must be >= 2, got {bins}")
    if epsilon <= 0:
        raise InputError(f"epsilon must be > 0, got {epsilon}")
    if p.scores.size == 0 or q.scores.size == 0:
        raise InputError("cannot compare empty distributions")
    edges = np.linspace(SCORE_RANGE[0], SCORE_RANGE[1], bins + 1)
    p_mass, _ = np.histogram(np.clip(p.scores, *SCORE_RANGE), bins=edges)
    q_mass, _ = np.histogram(np.clip(q.scores, *SCORE_RANGE), bins=edges)
    p_hat = p_mass / p_mass.sum() + epsilon
    q_hat = q_mass / q_mass.sum() + epsilon
    p_hat /= p_hat.sum()
    q_hat /= q_hat.sum()
    return float(np.sum(p_hat * np.log(p_hat / q_hat)))


def compute_eer(mated, nonmated) -> EerResult:
    """Equal error rate at the FMR/FNMR crossing, linearly interpolated.

    FMR(t) is the fraction of non-mated scores >= t; FNMR(t) the fraction of
    mated scores < t. Candidate thresholds are the sorted distinct scores;
    between adjacent candidates both rates are interpolated linearly and the
    crossing solved in closed form.
    """
    mated = np.asarray(mated, dtype=np.float64)
    nonmated = np.asarray(nonmated, dtype=np.float64)
    if mated.size == 0 or nonmated.size == 0:
        raise InputError("mated and nonmated score lists must be nonempty")

    lo = min(mated.min(), nonmated.min())
    hi = max(mated.max(), nonmated.max())
    candidates = np.unique(np.concatenate([mated, nonmated, [lo - 1.0, hi + 1.0]]))

    mated_sorted = np.sort(mated)
    nonmated_sorted = np.sort(nonmated)
    # FMR = 1 - F_nonmated(t^-); FNMR = F_mated(t^-)
    fmr = 1.0 - np.searchsorted(nonmated_sorted, candidates, side="left") / nonmated.size
    fnmr = np.searchsorted(mated_sorted, candidates, side="left") / mated.size

    diff = fnmr - fmr  # goes from -1 (low t) to +1 (high t)
    idx = int(np.argmax(diff >= 0))
    if diff[idx] == 0.0:
        return EerResult(eer=float(fmr[idx]), threshold=float(candidates[idx]))
    i0, i1 = idx - 1, idx
    d0, d1 = diff[i0], diff[i1]
    lam = float(d0 / (d0 - d1)) if d1 != d0 else 0.0
    eer = float(fmr[i0] + lam * (fmr[i1] - fmr[i0]))
    eer_other = float(fnmr[i0] + lam * (fnmr[i1] - fnmr[i0]))
    threshold = float(candidates[i0] + lam * (candidates[i1] - candidates[i0]))
    return EerResult(eer=0.5 * (eer + eer_other), threshold=threshold)


def distribution_report(
    datasets: Mapping[str, EvaluatedDataset],
    reference_names: Sequence[str],
    bins: int = 100,
    epsilon: float = 1e-6,
) -> tuple[str, str]:
    """Render the summary CSV and histogram plot-data CSV.

    One row per dataset: identity count, mated/non-mated mean and std (plus
    the human-readable 'mean ± std' rendering), EER, and a KL column pair
    per reference dataset. The estimator settings ride in the header comment
    so reported numbers are reproducible.
    """
    for ref in reference_names:
        if ref not in datasets:
            raise ConfigError(f"unknown reference dataset {ref!r}")

    header = ["dataset", "n_identities", "mated_mean", "mated_std", "mated_scores",
              "nonmated_mean", "nonmated_std", "nonmated_scores", "eer"]
    for ref in reference_names:
        header.append(f"kl_mated_vs_{ref}")
        header.append(f"kl_nonmated_vs_{ref}")

    lines = [f"# kl_bins={bins} kl_epsilon={epsilon:g} std=population", ",".join(header)]
    for name, ds in datasets.items():
        eer = compute_eer(ds.mated.scores, ds.nonmated.scores)
        row = [
            name,
            str(ds.n_identities),
            f"{ds.mated.mean:.6f}",
            f"{ds.mated.std:.6f}",
            f"\"{ds.mated.summary()}\"",
            f"{ds.nonmated.mean:.6f}",
            f"{ds.nonmated.std:.6f}",
            f"\"{ds.nonmated.summary()}\"",
            f"{eer.eer:.6f}",
        ]
        for ref in reference_names:
            refds = datasets[ref]
            row.append(f"{kl_divergence(ds.mated, refds.mated, bins=bins, epsilon=epsilon):.6f}")
            row.append(f"{kl_divergence(ds.nonmated, refds.nonmated, bins=bins, epsilon=epsilon):.6f}")
        lines.append(",".join(row))
    report_csv = "\n".join(lines) + "\n"

    hist_lines = ["bin_center,probability,series"]
    for name, ds in datasets.items():
        for series, dist in (("mated", ds.mated), ("nonmated", ds.nonmated)):
            centers = 0.5 * (dist.bin_edges[:-1] + dist.bin_edges[1:])
            for c, prob in zip(centers, dist.probabilities):
                hist_lines.append(f"{c:.6f},{prob:.8f},{name}_{series}")
    hist_csv = "\n".join(hist_lines) + "\n"
    return report_csv, hist_csv
