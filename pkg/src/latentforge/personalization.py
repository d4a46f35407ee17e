"""Fine-tuning job specs, prompt banks, and inference manifests.

This module only emits and ingests inert data files; running the
text-to-image model behind them is an external runner's job (exit status 0
means every expected output was produced).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, InputError, InvariantError, IoError
from .fileio import read_json, write_json

DEFAULT_TOKEN = "xyz"
DEFAULT_CLASS_NAME = "person"
DEFAULT_NEGATIVE_PROMPT = "photo with the style of painting, comics, drawing, or containing text"

PROMPT_CATEGORIES = (
    "accessorization",
    "advanced_poses",
    "advanced_expressions",
    "recontextualization",
)

# Four templates per category; the first of each is the canonical example.
DEFAULT_PROMPT_TEMPLATES: dict[str, list[str]] = {
    "accessorization": [
        "{subject} wearing scarf",
        "{subject} wearing sunglasses",
        "{subject} wearing a red hat",
        "{subject} with silver earrings",
    ],
    "advanced_poses": [
        "full body {subject} with accurate details of face in an indoor place",
        "profile view of {subject}",
        "{subject} looking over the shoulder",
        "{subject} leaning against a wall",
    ],
    "advanced_expressions": [
        "skeptical {subject}",
        "laughing {subject}",
        "surprised {subject}",
        "thoughtful {subject}",
    ],
    "recontextualization": [
        "close photo of {subject} at the beach",
        "photo of {subject} in the city at night",
        "{subject} in a snowy forest",
        "{subject} sitting in a cafe",
    ],
}


@dataclass
class FinetuneConfig:
    regularization_images: int = 200
    epochs: int = 1000
    token: str = DEFAULT_TOKEN
    class_name: str = DEFAULT_CLASS_NAME
    train_text_encoder: bool = True

    def __post_init__(self):
        if not self.token:
            raise InvariantError("token must be nonempty")
        if self.epochs < 1 or self.regularization_images < 0:
            raise ConfigError("epochs >= 1 and regularization_images >= 0 required")


@dataclass
class FinetuneJob:
    identity_id: str
    input_images: list[str]
    regularization_images: int = 200
    epochs: int = 1000
    token: str = DEFAULT_TOKEN
    class_name: str = DEFAULT_CLASS_NAME
    train_text_encoder: bool = True

    def __post_init__(self):
        if len(self.input_images) != 6:
            raise InvariantError(f"finetune job needs exactly 6 input images, got {len(self.input_images)}")
        if not self.token:
            raise InvariantError("token must be nonempty")

    @property
    def subject_phrase(self) -> str:
        return f"{self.token} {self.class_name}"

    def to_dict(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "input_images": list(self.input_images),
            "regularization_images": self.regularization_images,
            "epochs": self.epochs,
            "token": self.token,
            "class_name": self.class_name,
            "train_text_encoder": self.train_text_encoder,
        }


@dataclass
class PromptSpec:
    prompt_id: str
    category: str
    text: str
    negative_text: str = DEFAULT_NEGATIVE_PROMPT

    def __post_init__(self):
        if self.category not in PROMPT_CATEGORIES:
            raise ConfigError(f"unknown prompt category {self.category!r}")

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "category": self.category,
            "text": self.text,
            "negative_text": self.negative_text,
        }


@dataclass
class InferenceManifest:
    identity_id: str
    prompts: list[PromptSpec]
    samples_per_prompt: int
    output_dir: str
    seed: int

    def expected_outputs(self) -> list[str]:
        return [
            f"{self.identity_id}_{p.prompt_id}_{k}.png"
            for p in self.prompts
            for k in range(self.samples_per_prompt)
        ]

    def to_dict(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "prompts": [p.to_dict() for p in self.prompts],
            "samples_per_prompt": self.samples_per_prompt,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "expected_outputs": self.expected_outputs(),
        }


@dataclass
class IngestReport:
    found: list[str]
    missing: list[str]
    unexpected: list[str]


@dataclass
class DiffusionSample:
    """Minimal record for one ingested diffusion image."""

    sample_id: str
    identity_id: str
    prompt_id: str
    stage: str = "diffusion"
    path: str = ""


def emit_finetune_job(record, cfg: FinetuneConfig | None = None, out_dir=None) -> FinetuneJob:
    """Build (and optionally write) the per-identity fine-tuning job.

    The record must be synthesized; image references default to
    '<identity>_<variation tag>.png' when the record carries none.
    """
    cfg = cfg or FinetuneConfig()
    record.require_synthesized()
    images = record.variation_images
    if images is None:
        images = [f"{record.identity_id}_{tag}.png" for tag in record.variation_tags]
    if len(images) != 6:
        raise InvariantError(f"identity {record.identity_id} has {len(images)} image refs, expected 6")
    job = FinetuneJob(
        identity_id=record.identity_id,
        input_images=list(images),
        regularization_images=cfg.regularization_images,
        epochs=cfg.epochs,
        token=cfg.token,
        class_name=cfg.class_name,
        train_text_encoder=cfg.train_text_encoder,
    )
    if out_dir is not None:
        write_json(Path(out_dir) / f"{job.identity_id}.job.json", job.to_dict())
    return job


def build_prompt_bank(
    templates: Mapping[str, Sequence[str]] | None = None,
    token: str = DEFAULT_TOKEN,
    class_name: str = DEFAULT_CLASS_NAME,
) -> list[PromptSpec]:
    """Substitute the subject phrase into every template, keeping categories.

    Every template must contain a '{subject}' placeholder; every resulting
    prompt carries the default negative prompt.
    """
    templates = templates if templates is not None else DEFAULT_PROMPT_TEMPLATES
    subject = f"{token} {class_name}"
    bank: list[PromptSpec] = []
    for category, items in templates.items():
        for i, template in enumerate(items):
            if "{subject}" not in template:
                raise ConfigError(f"template {template!r} ({category}) lacks a {{subject}} placeholder")
            bank.append(
                PromptSpec(
                    prompt_id=f"{category}-{i}",
                    category=category,
                    text=template.format(subject=subject),
                )
            )
    return bank


def emit_inference_manifest(
    identity_id: str,
    bank: Sequence[PromptSpec],
    samples_per_prompt: int = 4,
    seed: int = 0,
    output_dir: str = ".",
    out_path=None,
) -> InferenceManifest:
    """List every expected output filename for one identity's inference run."""
    if not bank:
        raise InputError("prompt bank is empty")
    if samples_per_prompt < 1:
        raise InputError(f"samples_per_prompt must be >= 1, got {samples_per_prompt}")
    manifest = InferenceManifest(
        identity_id=identity_id,
        prompts=list(bank),
        samples_per_prompt=samples_per_prompt,
        output_dir=str(output_dir),
        seed=seed,
    )
    if out_path is not None:
        write_json(out_path, manifest.to_dict())
    return manifest


def load_inference_manifest(path) -> InferenceManifest:
    doc = read_json(path)
    prompts = [
        PromptSpec(
            prompt_id=p["prompt_id"],
            category=p["category"],
            text=p["text"],
            negative_text=p.get("negative_text", DEFAULT_NEGATIVE_PROMPT),
        )
        for p in doc["prompts"]
    ]
    return InferenceManifest(
        identity_id=doc["identity_id"],
        prompts=prompts,
        samples_per_prompt=int(doc["samples_per_prompt"]),
        output_dir=doc["output_dir"],
        seed=int(doc["seed"]),
    )


def ingest_generated_samples(manifest: InferenceManifest, directory) -> tuple[list[DiffusionSample], IngestReport]:
    """Match a directory's contents against the manifest's expected outputs.

    Partial results are fine: found files become sample records, missing
    ones are reported, unexpected files are listed as warnings and ignored.
    """
    directory = Path(directory)
    try:
        present = {p.name for p in directory.iterdir() if p.is_file()}
    except OSError as exc:
        raise IoError(f"cannot read directory {directory}: {exc}") from exc

    expected = manifest.expected_outputs()
    found, missing = [], []
    samples: list[DiffusionSample] = []
    for name in expected:
        if name in present:
            found.append(name)
            stem = name[: -len(".png")]
            k = stem.rsplit("_", 1)[1]
            prompt_id = stem[len(manifest.identity_id) + 1 : -(len(k) + 1)]
            samples.append(
                DiffusionSample(
                    sample_id=stem,
                    identity_id=manifest.identity_id,
                    prompt_id=prompt_id,
                    path=str(directory / name),
                )
            )
        else:
            missing.append(name)
    unexpected = sorted(present - set(expected))
    return samples, IngestReport(found=found, missing=missing, unexpected=unexpected)
