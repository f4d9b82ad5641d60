"""Run configuration: YAML files validated against pydantic models.

Unknown keys anywhere are errors. Every random draw is seeded from a value
in the config. Relative file paths resolve against the config file's
directory.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .field import WavelengthPair

BUNDLED = ("demo", "unwrap", "precision", "nlos", "video")


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Shape = Tuple[int, int]
Carrier = Tuple[float, float]


def _check_shape(v):
    if min(v) < 16:
        raise ValueError(f"grid must be at least 16x16, got {v}")
    return v


class SceneConfig(_Model):
    kind: Literal["demo", "plane", "staircase", "file"] = "demo"
    shape: Shape = (512, 512)
    fov: float = Field(66e-3, gt=0)
    depth_span: float = Field(20e-3, ge=0)
    tilt: Tuple[float, float] = (0.0, 0.0)
    n_steps: int = Field(4, ge=2)
    roughness_std: float = Field(50 * 850e-9, ge=0)
    roughness_corr_len: float = Field(1.0, ge=0)
    background_reflectivity: float = Field(0.1, ge=0, le=1)
    height_file: Optional[str] = None
    seed: int = 1

    _shape = field_validator("shape")(_check_shape)

    @model_validator(mode="after")
    def _file_kind(self):
        if (self.kind == "file") != (self.height_file is not None):
            raise ValueError("height_file is required for kind 'file' and only allowed there")
        return self


class OpticsConfig(_Model):
    lambda1: float = Field(850e-9, gt=0)
    synthetic_wavelengths: List[float] = [50e-3]
    pupil_cutoff: float = Field(0.08, gt=0, le=0.5)
    carriers: List[Carrier] = [(1 / 3, 0.0), (0.0, 1 / 3)]
    reference_amplitude: Optional[float] = Field(None, gt=0)
    filter_shape: Literal["hann", "gaussian"] = "hann"
    filter_radius: Optional[float] = Field(None, gt=0)

    @field_validator("synthetic_wavelengths")
    @classmethod
    def _lams(cls, v):
        if not v:
            raise ValueError("need at least one synthetic wavelength")
        if len(set(v)) != len(v):
            raise ValueError("synthetic wavelengths must be distinct")
        return v

    @field_validator("carriers")
    @classmethod
    def _carriers(cls, v):
        if len(v) < 1:
            raise ValueError("need at least one carrier")
        for u, w in v:
            if abs(u) > 0.5 or abs(w) > 0.5 or (u == 0 and w == 0):
                raise ValueError(f"carrier {(u, w)} must be non-zero and within Nyquist")
        return v

    @model_validator(mode="after")
    def _synthetic_above_optical(self):
        for lam in self.synthetic_wavelengths:
            if not lam > self.lambda1:
                raise ValueError(f"synthetic wavelength {lam} must exceed lambda1 {self.lambda1}")
        return self

    def pair(self, synthetic: float) -> WavelengthPair:
        return WavelengthPair.from_synthetic(self.lambda1, synthetic)

    @property
    def radius(self) -> float:
        return self.filter_radius if self.filter_radius is not None else self.pupil_cutoff


class CameraConfig(_Model):
    bit_depth: Literal[8, 10, 12, 16] = 12
    full_well_scale: Optional[float] = Field(None, gt=0)
    noise_std: float = Field(0.002, ge=0)
    seed: int = 3


class ReconConfig(_Model):
    mode: Literal["single-shot", "double-shot"] = "single-shot"
    smoothing_sigma: float = Field(2.0, ge=0)
    coherence_threshold: float = Field(0.5, ge=0, le=1)
    guidance_sigma: float = Field(3.0, ge=0)
    max_depth: Optional[float] = Field(None, gt=0)
    offset: Literal["zero-min", "zero-mean", "raw"] = "zero-min"


class SequenceConfig(_Model):
    frames: int = Field(10, ge=1)
    decorrelate: bool = True
    synthetic_wavelength: float = Field(30e-3, gt=0)
    bob_height: float = 5e-3
    bob_sigma_px: float = Field(36.0, gt=0)
    pendulum_amplitude_px: float = 40.0
    pendulum_period: float = Field(10.0, gt=0)


class SourceConfig(_Model):
    x: float = 0.0
    y: float = 0.0
    z: float = Field(0.2, gt=0)
    amplitude: float = Field(1.0, gt=0)


class NlosConfig(_Model):
    shape: Shape = (512, 512)
    pitch: float = Field(0.2e-3, gt=0)
    synthetic_wavelength: float = Field(1e-3, gt=0)
    sources: List[SourceConfig] = [SourceConfig(x=1.4e-3, y=-0.6e-3, z=0.2)]
    z_range: Tuple[float, float, float] = (0.1, 0.3, 0.005)
    smoothing_sigma: float = Field(0.0, ge=0)
    seed: int = 1

    _shape = field_validator("shape")(_check_shape)

    @field_validator("z_range")
    @classmethod
    def _zr(cls, v):
        if not v[2] > 0 or v[1] < v[0]:
            raise ValueError("z_range must be (min, max, step) with step > 0 and max >= min")
        return v


class PrecisionConfig(_Model):
    synthetic_wavelengths: List[float] = [40e-3, 10e-3, 5e-3, 3e-3, 1e-3]
    modes: List[Literal["single-shot", "double-shot"]] = ["single-shot", "double-shot"]
    roi: Optional[str] = None

    @field_validator("roi")
    @classmethod
    def _roi(cls, v):
        if v is not None:
            from .metrology import Roi
            try:
                Roi.parse(v)
            except ConfigError as exc:
                raise ValueError(str(exc)) from None
        return v


class RunConfig(_Model):
    scene: SceneConfig = SceneConfig()
    optics: OpticsConfig = OpticsConfig()
    camera: CameraConfig = CameraConfig()
    reconstruction: ReconConfig = ReconConfig()
    sequence: SequenceConfig = SequenceConfig()
    nlos: NlosConfig = NlosConfig()
    precision: PrecisionConfig = PrecisionConfig()


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"])
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a mapping; file paths are made absolute against ``base_dir``."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_validation(exc)}") from None
    hf = cfg.scene.height_file
    if hf is not None:
        p = Path(hf)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.is_file():
            raise ConfigError(f"scene.height_file not found: {p}")
        cfg = cfg.model_copy(update={"scene": cfg.scene.model_copy(update={"height_file": str(p)})})
    return cfg


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("swicam") / "data" / f"{name}.yaml"))


def load_config(source) -> RunConfig:
    """Load a YAML file, or a bundled config by name (``demo``, ``nlos``, ...)."""
    src = str(source)
    path = bundled_path(src) if src in BUNDLED else Path(src)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return parse_config(data, path.parent)


def config_dict(cfg: RunConfig) -> dict:
    """JSON-compatible dump (tuples become lists)."""
    return json.loads(cfg.model_dump_json())


def schema() -> dict:
    return RunConfig.model_json_schema()


def build_scene(sc: SceneConfig):
    from .gridio import read_grid
    from .scene import SceneSpec, demo_scene, plane_scene, staircase_scene

    if sc.kind == "demo":
        return demo_scene(sc.shape, sc.depth_span, sc.fov, sc.roughness_std, sc.roughness_corr_len, sc.seed,
                          sc.background_reflectivity)
    if sc.kind == "plane":
        return plane_scene(sc.shape, sc.tilt, 0.0, sc.fov, sc.roughness_std, sc.roughness_corr_len, sc.seed)
    if sc.kind == "staircase":
        return staircase_scene(sc.shape, sc.n_steps, sc.depth_span, sc.fov, sc.roughness_std,
                               sc.roughness_corr_len, sc.seed)
    depth = read_grid(sc.height_file, role="depth")
    z = np.where(depth.mask, depth.z, 0.0)
    return SceneSpec(z, sc.roughness_std, sc.roughness_corr_len, np.where(depth.mask, 1.0, 0.0),
                     depth.pitch * z.shape[1], sc.seed)


def build_camera(cc: CameraConfig):
    from .scene import CameraSpec

    return CameraSpec(cc.bit_depth, cc.full_well_scale, cc.noise_std, cc.seed)
