"""Model resolution and the recorded fixture models.

Model identifiers have a scheme prefix:

  fixture:gan | fixture:embedder | fixture:labeler | fixture:detector |
  fixture:quality     -- tiny deterministic linear models recorded as .npz
                         files under $LATENTFORGE_MODEL_DIR
  stub:diffusion      -- seeded noise-around-the-inputs generator, no weights

Anything else is treated as a real pretrained checkpoint that must be
provided under $LATENTFORGE_MODEL_DIR by the operator; a missing file is a
clean load failure, never a crash.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

MODEL_DIR_ENV = "LATENTFORGE_MODEL_DIR"

IMG_SIZE = 32
FIXTURE_LATENT_DIM = 64
FIXTURE_EMBED_DIM = 32

RACES = ("White", "Black", "Latino_Hispanic", "Southeast_Asian", "East_Asian", "Middle_Eastern", "Indian")
EXPRESSIONS = ("neutral", "happy", "sad", "surprise", "disgust", "anger", "contempt")
AGE_BINS = ("0-2", "3-9", "10-19", "20-29", "30-39", "40-49", "50-59", "60+")


class ModelLoadError(Exception):
    def __init__(self, model_id: str, message: str):
        super().__init__(message)
        self.model_id = model_id


def model_dir() -> Path:
    root = os.environ.get(MODEL_DIR_ENV)
    if not root:
        raise ModelLoadError("", f"{MODEL_DIR_ENV} is not set")
    return Path(root)


def _fixture_path(name: str) -> Path:
    return model_dir() / f"fixture_{name}.npz"


def make_fixture_models(seed: int = 0) -> list[Path]:
    """Record the tiny deterministic models used by tests and smoke runs."""
    rng = np.random.default_rng(seed)
    root = model_dir()
    root.mkdir(parents=True, exist_ok=True)
    written = []

    # linear renderer: latent -> 32x32 grayscale
    w_render = rng.standard_normal((IMG_SIZE * IMG_SIZE, FIXTURE_LATENT_DIM)) / np.sqrt(FIXTURE_LATENT_DIM)
    path = _fixture_path("gan")
    np.savez(path, weights=w_render, latent_dim=FIXTURE_LATENT_DIM, img_size=IMG_SIZE)
    written.append(path)

    # linear embedder: pixels -> unit vector
    w_embed = rng.standard_normal((FIXTURE_EMBED_DIM, IMG_SIZE * IMG_SIZE)) / IMG_SIZE
    path = _fixture_path("embedder")
    np.savez(path, weights=w_embed, img_size=IMG_SIZE, embed_dim=FIXTURE_EMBED_DIM)
    written.append(path)

    # labeler: fixed projections of the pixel vector per attribute family
    n_proj = 2 + len(RACES) + (len(EXPRESSIONS) - 1) + 3  # gender/age + classes + pose/illum
    w_label = rng.standard_normal((n_proj, IMG_SIZE * IMG_SIZE)) / IMG_SIZE
    path = _fixture_path("labeler")
    np.savez(path, weights=w_label, img_size=IMG_SIZE)
    written.append(path)
    return written


class FixtureGan:
    def __init__(self):
        path = _fixture_path("gan")
        if not path.exists():
            raise ModelLoadError("fixture:gan", f"missing fixture weights {path}")
        blob = np.load(path)
        self.weights = blob["weights"]
        self.latent_dim = int(blob["latent_dim"])
        self.img_size = int(blob["img_size"])

    def render(self, latent: np.ndarray) -> np.ndarray:
        if latent.shape != (self.latent_dim,):
            raise ValueError(f"expected latent dim {self.latent_dim}, got {latent.shape}")
        flat = 128.0 + 64.0 * (self.weights @ latent)
        return np.clip(flat, 0, 255).astype(np.uint8).reshape(self.img_size, self.img_size)


class FixtureEmbedder:
    def __init__(self):
        path = _fixture_path("embedder")
        if not path.exists():
            raise ModelLoadError("fixture:embedder", f"missing fixture weights {path}")
        blob = np.load(path)
        self.weights = blob["weights"]
        self.img_size = int(blob["img_size"])
        self.embed_dim = int(blob["embed_dim"])

    def embed(self, image: np.ndarray) -> np.ndarray:
        pixels = image.astype(np.float64).ravel() / 255.0 - 0.5
        e = self.weights @ pixels
        norm = np.linalg.norm(e)
        if norm < 1e-12:
            e = np.ones_like(e)
            norm = np.linalg.norm(e)
        return e / norm


class FixtureLabeler:
    """Deterministic pseudo-labels from fixed pixel projections.

    Gender comes from mean brightness (stable across small image edits);
    the rest come from the recorded projection rows.
    """

    def __init__(self):
        path = _fixture_path("labeler")
        if not path.exists():
            raise ModelLoadError("fixture:labeler", f"missing fixture weights {path}")
        blob = np.load(path)
        self.weights = blob["weights"]
        self.img_size = int(blob["img_size"])

    def label(self, image: np.ndarray) -> dict:
        pixels = image.astype(np.float64).ravel() / 255.0 - 0.5
        scores = self.weights @ pixels
        n_race = len(RACES)
        n_expr = len(EXPRESSIONS) - 1
        race = RACES[int(np.argmax(scores[2 : 2 + n_race]))]
        expr_scores = np.concatenate([scores[2 + n_race : 2 + n_race + n_expr], [0.0]])
        expression = (list(EXPRESSIONS[1:]) + ["neutral"])[int(np.argmax(expr_scores))]
        pose_illum = scores[2 + n_race + n_expr :]
        age_idx = int(np.clip((scores[1] + 2.0) / 4.0 * len(AGE_BINS), 0, len(AGE_BINS) - 1))
        return {
            "gender": "Male" if image.mean() >= 128.0 else "Female",
            "age_bin": AGE_BINS[age_idx],
            "race": race,
            "expression": expression,
            "yaw": float(pose_illum[0]),
            "pitch": float(pose_illum[1]),
            "illumination": float(pose_illum[2]),
        }


class FixtureDetector:
    """A face is 'detected' when the image has any texture at all."""

    def detect(self, image: np.ndarray) -> int:
        return 1 if float(image.std()) >= 1.0 else 0


class FixtureQuality:
    def score(self, image: np.ndarray) -> float:
        return float(image.std()) + 1.0


class StubDiffusion:
    """Seeded generator: each output is the mean of the job's input images
    plus noise whose scale cycles per output index. The top level swamps the
    signal, so identity-preservation filtering has genuine failures to catch.
    No weights needed."""

    NOISE_CYCLE = (4.0, 16.0, 500.0)

    def generate(self, input_images: list[np.ndarray], seed: int, index: int) -> np.ndarray:
        base = np.mean([img.astype(np.float64) for img in input_images], axis=0)
        rng = np.random.default_rng((seed, index))
        noise = rng.standard_normal(base.shape) * self.NOISE_CYCLE[index % len(self.NOISE_CYCLE)]
        return np.clip(base + noise, 0, 255).astype(np.uint8)


_FIXTURES = {
    "fixture:gan": FixtureGan,
    "fixture:embedder": FixtureEmbedder,
    "fixture:labeler": FixtureLabeler,
    "fixture:detector": FixtureDetector,
    "fixture:quality": FixtureQuality,
    "stub:diffusion": StubDiffusion,
}


def resolve(model_id: str):
    """Instantiate a model by identifier; unknown/unprovisioned ids fail cleanly."""
    if model_id in _FIXTURES:
        try:
            return _FIXTURES[model_id]()
        except ModelLoadError:
            raise
        except Exception as exc:
            raise ModelLoadError(model_id, f"cannot load {model_id}: {exc}") from exc
    checkpoint = model_dir() / model_id
    if not checkpoint.exists():
        raise ModelLoadError(model_id, f"no checkpoint {checkpoint} for model {model_id!r}")
    raise ModelLoadError(model_id, f"no loader registered for real model {model_id!r}")


def load_grayscale(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def save_grayscale(path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="L").save(path, format="PNG")
