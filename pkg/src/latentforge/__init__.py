"""latentforge: latent-space face dataset toolkit.

Closed-form hyperplane edits, max-margin attribute boundary training,
demographic identity synthesis planning, personalization job orchestration,
embedding-based curation filtering, and score-distribution evaluation —
plus an analytic simulated backend that makes every stage verifiable at
desk scale.
"""

from .boundaries import (
    LabeledPool,
    SvmConfig,
    evaluate_boundary,
    select_extremes,
    train_attribute_suite,
    train_linear_boundary,
)
from .curation import (
    CurationSample,
    FilterConfig,
    GanReference,
    apply_filters,
    cosine_similarity,
    detection_gate,
    identity_preservation_score,
)
from .evaluation import (
    ComparisonSet,
    EvaluatedDataset,
    ScoreDistribution,
    compute_eer,
    distribution_report,
    kl_divergence,
    sample_comparisons,
    score_comparisons,
)
from .geometry import (
    AttributeBoundary,
    BoundaryMeta,
    EditStep,
    compose_edits,
    neutralize,
    signed_distance,
    transform,
)
from .identities import (
    CandidateSample,
    DemographicGroup,
    IdentityRecord,
    VariationSpec,
    build_candidate_pool,
    default_variation_spec,
    generate_variations,
    illumination_score,
    plan_demographic_groups,
    resolve_demographic_alphas,
    select_seed_candidates,
    synthesize_identity,
)
from .personalization import (
    FinetuneConfig,
    FinetuneJob,
    InferenceManifest,
    PromptSpec,
    build_prompt_bank,
    emit_finetune_job,
    emit_inference_manifest,
    ingest_generated_samples,
)
from .simworld import World, create_world, embed, sample_labeled_latents, simulate_personalization

__version__ = "0.1.0"
