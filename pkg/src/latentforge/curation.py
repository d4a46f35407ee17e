"""Three-stage post-generation filtering.

Stage 1 drops images where the face detector found nothing, stage 2 drops
diffusion images whose mean cosine similarity against their identity's six
source embeddings falls strictly below t_ip, stage 3 drops images whose
gender label disagrees with the identity's source gender. Verdicts only
move pending -> kept/dropped_*; nothing ever revives a dropped sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InputError, InvariantError

VERDICTS = ("pending", "kept", "dropped_detection", "dropped_identity", "dropped_gender")
N_REFERENCES = 6


@dataclass
class FilterConfig:
    t_ip: float = 0.3

    def __post_init__(self):
        if not -1.0 < self.t_ip < 1.0:
            raise ConfigError(f"t_ip must be in (-1, 1), got {self.t_ip}")


@dataclass
class CurationSample:
    """Filterable record for one generated image."""

    sample_id: str
    identity_id: str
    stage: str  # gan | diffusion
    prompt_id: str | None = None
    embedding_ref: str | None = None
    detected_face: bool | None = None
    gender_label: str | None = None
    ip_score: float | None = None
    verdict: str = "pending"

    def __post_init__(self):
        if self.stage not in ("gan", "diffusion"):
            raise InvariantError(f"sample {self.sample_id}: unknown stage {self.stage!r}")
        if self.verdict not in VERDICTS:
            raise InvariantError(f"sample {self.sample_id}: unknown verdict {self.verdict!r}")


@dataclass
class GanReference:
    """The six source-image embeddings and single gender of one identity."""

    identity_id: str
    embeddings: np.ndarray  # (6, e)
    gender: str

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != N_REFERENCES:
            raise ConfigError(
                f"identity {self.identity_id}: need exactly {N_REFERENCES} reference embeddings, "
                f"got shape {self.embeddings.shape}"
            )


def build_gan_reference(identity_id: str, embeddings, genders: Sequence[str]) -> GanReference:
    """Assemble a reference, refusing mixed gender labels among the six images."""
    distinct = set(genders)
    if len(distinct) != 1:
        raise ConfigError(f"identity {identity_id}: reference gender labels disagree: {sorted(distinct)}")
    return GanReference(identity_id=identity_id, embeddings=embeddings, gender=next(iter(distinct)))


@dataclass
class FilterReport:
    t_ip: float
    per_stage_drops: dict[str, int] = field(default_factory=lambda: {"detection": 0, "identity": 0, "gender": 0})
    per_identity_survivors: dict[str, int] = field(default_factory=dict)
    n_kept: int = 0
    n_processed: int = 0

    def to_dict(self) -> dict:
        return {
            "t_ip": self.t_ip,
            "per_stage_drops": dict(self.per_stage_drops),
            "per_identity_survivors": dict(sorted(self.per_identity_survivors.items())),
            "n_kept": self.n_kept,
            "n_processed": self.n_processed,
        }


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise InputError("cosine similarity of a zero vector is undefined")
    return float(a @ b) / (na * nb)


def detection_gate(samples: Sequence[CurationSample], detections: Mapping[str, int]) -> list[CurationSample]:
    """Stage 1: mark faces found; a missing detections entry means zero faces."""
    for s in samples:
        if s.verdict != "pending":
            continue
        count = int(detections.get(s.sample_id, 0))
        if count >= 1:
            s.detected_face = True
        else:
            s.detected_face = False
            s.verdict = "dropped_detection"
    return list(samples)


def identity_preservation_score(sample_emb, gan_embs, stage: str = "diffusion") -> float:
    """Mean cosine similarity between one diffusion embedding and the 6 sources.

    Scores are cross-domain only: gan-stage inputs are rejected, since
    comparing an image against its own domain would not measure identity
    transfer.
    """
    if stage == "gan":
        raise InputError("identity preservation scores only apply to diffusion-stage samples")
    gan_embs = np.asarray(gan_embs, dtype=np.float64)
    if gan_embs.ndim != 2 or gan_embs.shape[0] != N_REFERENCES:
        raise InvariantError(f"need exactly {N_REFERENCES} reference embeddings, got shape {gan_embs.shape}")
    sims = [cosine_similarity(sample_emb, gan_embs[i]) for i in range(N_REFERENCES)]
    return float(np.mean(sims))


def apply_filters(
    samples: Sequence[CurationSample],
    gan_records: Mapping[str, GanReference],
    cfg: FilterConfig,
    gender_labels: Mapping[str, str],
    embeddings: Mapping[str, np.ndarray] | None = None,
    detections: Mapping[str, int] | None = None,
) -> tuple[list[CurationSample], FilterReport]:
    """Run the three stages in order over diffusion-stage samples.

    Stage 2 drops strictly below t_ip (a score exactly at the threshold is
    kept). gan-stage samples pass through untouched; they are the
    references, not the filtered population. Re-applying to the output is a
    no-op: non-pending samples are never reconsidered.

    embeddings maps sample_id to the sample's embedding (required for any
    pending diffusion sample that passes detection); detections, when given,
    runs stage 1, otherwise previously set detected_face flags are used and
    unset flags count as zero faces.
    """
    report = FilterReport(t_ip=cfg.t_ip)
    diffusion = [s for s in samples if s.stage == "diffusion"]

    # stage 1: face detection
    pending_before = [s for s in diffusion if s.verdict == "pending"]
    if detections is not None:
        detection_gate(pending_before, detections)
    else:
        for s in pending_before:
            if s.detected_face is not True:
                s.detected_face = False
                s.verdict = "dropped_detection"
    report.per_stage_drops["detection"] = sum(1 for s in pending_before if s.verdict == "dropped_detection")

    # stage 2: identity preservation
    for s in diffusion:
        if s.verdict != "pending":
            continue
        if s.identity_id not in gan_records:
            raise ConfigError(f"sample {s.sample_id}: no GAN reference for identity {s.identity_id!r}")
        ref = gan_records[s.identity_id]
        if s.ip_score is None:
            if embeddings is None or s.sample_id not in embeddings:
                raise ConfigError(f"sample {s.sample_id}: no embedding available for scoring")
            s.ip_score = identity_preservation_score(embeddings[s.sample_id], ref.embeddings, stage=s.stage)
        if s.ip_score < cfg.t_ip:
            s.verdict = "dropped_identity"
            report.per_stage_drops["identity"] += 1

    # stage 3: gender preservation (missing label counts as a mismatch)
    for s in diffusion:
        if s.verdict != "pending":
            continue
        ref = gan_records[s.identity_id]
        label = s.gender_label if s.gender_label is not None else gender_labels.get(s.sample_id)
        s.gender_label = label
        if label != ref.gender:
            s.verdict = "dropped_gender"
            report.per_stage_drops["gender"] += 1
        else:
            s.verdict = "kept"

    report.n_processed = len(diffusion)
    report.n_kept = sum(1 for s in diffusion if s.verdict == "kept")
    for s in sorted(diffusion, key=lambda s: s.identity_id):
        if s.verdict == "kept":
            report.per_identity_survivors[s.identity_id] = report.per_identity_survivors.get(s.identity_id, 0) + 1
    return list(samples), report
