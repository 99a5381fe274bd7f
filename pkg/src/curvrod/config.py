"""TOML experiment configuration, validated with pydantic (unknown keys rejected)."""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TOMLDecodeError = tomllib.TOMLDecodeError

TOLERANCE_PROFILES = {
    "default": {"q2_rel": 0.02, "gtol_factor": 1.0},
    "strict": {"q2_rel": 0.01, "gtol_factor": 0.1},
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometryConfig(_Strict):
    curve: Literal["line", "circle-arc", "helix", "sampled-file"] = "line"
    length: float = Field(1.0, gt=0)
    radius: float = Field(1.0, gt=0)
    pitch: float = 0.5
    file: Optional[str] = None
    n: int = Field(201, ge=5)
    seed_normal: Optional[List[float]] = Field(None, min_length=3, max_length=3)
    twist: float = 0.0
    twist_with_torsion: bool = False

    @model_validator(mode="after")
    def _file_needed(self):
        if self.curve == "sampled-file" and not self.file:
            raise ValueError("geometry.file is required for curve = 'sampled-file'")
        return self


class SectionConfig(_Strict):
    kind: Literal["disc", "rectangle", "mesh-file"] = "disc"
    triangles: int = Field(2000, ge=20)
    width: float = Field(1.0, gt=0)
    height: float = Field(1.0, gt=0)
    file: Optional[str] = None

    @model_validator(mode="after")
    def _file_needed(self):
        if self.kind == "mesh-file" and not self.file:
            raise ValueError("section.file is required for kind = 'mesh-file'")
        return self


class MaterialConfig(_Strict):
    kind: Literal["svk", "svk_barrier", "graded_svk", "fiber"] = "svk"
    mu: float = Field(1.0, gt=0)
    lam: float = Field(1.0, ge=0)
    barrier: float = Field(1.0, ge=0)
    grading: Literal["linear", "quadratic", "sine"] = "linear"
    fiber_k: float = Field(1.0, ge=0)
    fiber_direction: List[float] = Field(default_factory=lambda: [1.0, 1.0, 0.0], min_length=3, max_length=3)


class Q2Config(_Strict):
    stations: List[float] = Field(default_factory=lambda: [0.0])
    ladder: List[int] = Field(default_factory=list)
    method: Literal["fem", "pointwise", "closed-form"] = "fem"


class RodConfig(_Strict):
    n: int = Field(200, ge=2)
    boundary: Literal["clamped-both", "clamped-free"] = "clamped-both"
    start: Literal["reference", "twist", "bend"] = "reference"
    turns: float = 1.0
    wobble: float = 0.0
    kappa: float = 1.0
    end_quaternion: Optional[List[float]] = Field(None, min_length=4, max_length=4)
    q2_source: Literal["fem", "pointwise", "closed-form", "explicit"] = "fem"
    q2_matrix: Optional[List[List[float]]] = None
    gtol: Optional[float] = Field(None, gt=0)
    max_iter: int = Field(100_000, ge=0)

    @model_validator(mode="after")
    def _explicit(self):
        if self.q2_source == "explicit":
            Q = self.q2_matrix
            if Q is None or len(Q) != 3 or any(len(r) != 3 for r in Q):
                raise ValueError("rod.q2_matrix must be a 3x3 list when q2_source = 'explicit'")
        return self


class GammaConfig(_Strict):
    h: List[float] = Field(default_factory=lambda: [2.0**-k for k in range(3, 8)])
    alpha: float = Field(2.0, ge=0, le=2)
    deformation: Literal["reference", "rotation", "string-stretch"] = "rotation"
    rate: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0], min_length=3, max_length=3)
    correctors: Literal["optimal", "zero"] = "optimal"
    stretch: float = Field(1.2, gt=0)
    stations: int = Field(5, ge=1)
    n_panels: int = Field(32, ge=1)

    @model_validator(mode="after")
    def _h_positive(self):
        if not self.h or any(x <= 0 for x in self.h):
            raise ValueError("gamma.h must be a nonempty list of positive numbers")
        return self


class StringConfig(_Strict):
    r_max: float = Field(3.0, ge=2)
    samples: int = Field(512, ge=200)
    stretch: float = Field(1.2, gt=0)
    n: int = Field(200, ge=2)


class IntermediateConfig(_Strict):
    alpha: float = Field(1.0, ge=0, lt=2)
    beta: float = Field(0.5, gt=0)
    s0: float = 0.5
    angle: float = 1.5707963267948966
    axis: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0], min_length=3, max_length=3)
    h: List[float] = Field(default_factory=lambda: [2.0**-k for k in range(3, 8)])

    @model_validator(mode="after")
    def _beta_range(self):
        if not self.beta < 2.0 - self.alpha:
            raise ValueError("intermediate.beta must be smaller than 2 - alpha")
        return self


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    section: SectionConfig = Field(default_factory=SectionConfig)
    material: MaterialConfig = Field(default_factory=MaterialConfig)
    q2: Q2Config = Field(default_factory=Q2Config)
    rod: RodConfig = Field(default_factory=RodConfig)
    gamma: GammaConfig = Field(default_factory=GammaConfig)
    string: StringConfig = Field(default_factory=StringConfig)
    intermediate: IntermediateConfig = Field(default_factory=IntermediateConfig)


def load_config(path) -> tuple[ExperimentConfig, str, Path]:
    """Parse and validate; returns (config, sha256 of the file bytes, base directory)."""
    path = Path(path)
    raw = path.read_bytes()
    data = tomllib.loads(raw.decode("utf-8"))
    return ExperimentConfig.model_validate(data), hashlib.sha256(raw).hexdigest(), path.parent
