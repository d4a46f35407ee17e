"""Closed-form latent-vector edits against attribute hyperplanes.

A face latent is a plain float64 vector. An attribute direction is the unit
normal of a separating hyperplane; moving along it changes the attribute,
projecting onto the hyperplane neutralizes it. Both edits are exact linear
algebra, so every property here is testable to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InputError, InvariantError

UNIT_NORM_TOL = 1e-9


@dataclass
class BoundaryMeta:
    """Training provenance carried with a boundary."""

    n_train: int = 0
    validation_accuracy: float = 0.0
    average_distance: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.validation_accuracy <= 1.0:
            raise InvariantError(f"validation_accuracy must be in [0,1], got {self.validation_accuracy}")
        if self.average_distance < 0.0:
            raise InvariantError(f"average_distance must be >= 0, got {self.average_distance}")


@dataclass
class AttributeBoundary:
    """Unit normal + bias of a trained attribute hyperplane.

    The normal is unit-normalized at construction; zero or non-finite
    normals are rejected. The bias participates only in signed_distance,
    never in neutralization (the projection is a pure direction removal).
    """

    attribute: str
    normal: np.ndarray
    bias: float = 0.0
    meta: BoundaryMeta = field(default_factory=BoundaryMeta)

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64)
        if self.normal.ndim != 1 or self.normal.size < 1:
            raise InvariantError(f"boundary normal must be a 1-D vector, got shape {self.normal.shape}")
        if not np.all(np.isfinite(self.normal)):
            raise InvariantError("boundary normal contains non-finite values")
        norm = float(np.linalg.norm(self.normal))
        if norm == 0.0:
            raise InvariantError("boundary normal must be nonzero")
        self.bias = float(self.bias)
        if not np.isfinite(self.bias):
            raise InvariantError("boundary bias must be finite")
        # rescale normal and bias together so the hyperplane is unchanged
        self.normal = self.normal / norm
        self.bias = self.bias / norm

    @property
    def dim(self) -> int:
        return self.normal.size


@dataclass
class EditStep:
    """One edit: shift by alpha along a boundary, or neutralize against it."""

    boundary: AttributeBoundary
    alpha: Optional[float] = None
    neutralize: bool = False

    def __post_init__(self):
        if (self.alpha is None) == (not self.neutralize):
            raise InvariantError("EditStep needs exactly one of alpha or neutralize")


def _as_latent(w, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"latent must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("latent contains non-finite values")
    if dim is not None and arr.size != dim:
        raise DimensionError(f"latent has dim {arr.size}, boundary has dim {dim}")
    return arr


def transform(w, boundary: AttributeBoundary, alpha: float) -> np.ndarray:
    """Shift a latent along the boundary normal: w + alpha * n.

    Moves the signed distance to the hyperplane by exactly alpha; the input
    is not modified.
    """
    arr = _as_latent(w, boundary.dim)
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise InputError(f"alpha must be finite, got {alpha}")
    return arr + alpha * boundary.normal


def neutralize(w, boundary: AttributeBoundary) -> np.ndarray:
    """Project a latent onto the boundary hyperplane: w - (w.n) n.

    The result's component along the normal is zero, which puts the edited
    attribute in its neutral condition.
    """
    arr = _as_latent(w, boundary.dim)
    n = boundary.normal
    if abs(float(np.linalg.norm(n)) - 1.0) > 1e-6:
        raise InvariantError(f"boundary {boundary.attribute!r} normal is not unit length")
    return arr - float(arr @ n) * n


def signed_distance(w, boundary: AttributeBoundary) -> float:
    """Signed distance of a latent from the hyperplane: w.n + bias."""
    arr = _as_latent(w, boundary.dim)
    return float(arr @ boundary.normal) + boundary.bias


def compose_edits(w, steps: Sequence[EditStep]) -> np.ndarray:
    """Apply edit steps left to right; an empty list is the identity.

    Any step failure is re-raised with the offending step index prefixed.
    """
    arr = _as_latent(w)
    for i, step in enumerate(steps):
        try:
            if step.neutralize:
                arr = neutralize(arr, step.boundary)
            else:
                arr = transform(arr, step.boundary, step.alpha)
        except (InputError, InvariantError) as exc:
            raise type(exc)(f"step {i} ({step.boundary.attribute}): {exc}") from exc
    return arr
