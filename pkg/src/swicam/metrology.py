"""Depth precision: plane fit over an ROI and residual standard deviation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateFitError
from .field import TWO_PI, WavelengthPair, wrap_signed
from .recon import DepthMap, SyntheticField, double_shot, single_shot

MIN_POINTS = 100
DEFAULT_ROI_SIZE = 23e-3
MODES = ("single-shot", "double-shot")


@dataclass(frozen=True)
class Roi:
    """Pixel rectangle ``[row, row + height) x [col, col + width)``."""

    row: int
    col: int
    height: int
    width: int

    def __post_init__(self):
        if min(self.row, self.col) < 0 or min(self.height, self.width) <= 0:
            raise ConfigError(f"invalid ROI {self}")

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.row, self.row + self.height), slice(self.col, self.col + self.width)

    def check(self, shape) -> None:
        if self.row + self.height > shape[0] or self.col + self.width > shape[1]:
            raise ConfigError(f"ROI {self} exceeds image of shape {shape}")

    def __str__(self) -> str:
        return f"{self.row}:{self.col}:{self.height}:{self.width}"

    @classmethod
    def parse(cls, text: str) -> "Roi":
        try:
            r, c, h, w = (int(t) for t in text.split(":"))
        except ValueError:
            raise ConfigError(f"ROI must be 'row:col:height:width', got {text!r}") from None
        return cls(r, c, h, w)


def default_roi(shape, pitch: float, size: float = DEFAULT_ROI_SIZE) -> Roi:
    """Centred square patch of ``size`` meters (clipped to the image)."""
    h, w = shape
    n = int(round(size / pitch))
    nh, nw = min(n, h), min(n, w)
    return Roi((h - nh) // 2, (w - nw) // 2, nh, nw)


def _roi_points(depth, roi: Roi):
    if isinstance(depth, DepthMap):
        z, mask = depth.z, depth.mask
    else:
        z = np.asarray(depth, float)
        mask = np.isfinite(z)
    roi.check(z.shape)
    rs, cs = roi.slices
    y, x = np.mgrid[rs, cs]
    sel = mask[rs, cs] & np.isfinite(z[rs, cs])
    return x[sel].astype(float), y[sel].astype(float), z[rs, cs][sel]


def _fit(x, y, z):
    if z.size < 3:
        raise DegenerateFitError(f"need at least 3 valid pixels for a plane, got {z.size}")
    # centre for conditioning, then map the intercept back to pixel (0, 0)
    xm, ym, zm = x.mean(), y.mean(), z.mean()
    A = np.column_stack([x - xm, y - ym, np.ones_like(x)])
    coef, _, rank, _ = np.linalg.lstsq(A, z - zm, rcond=None)
    if rank < 3:
        raise DegenerateFitError("valid ROI pixels are collinear; plane is undetermined")
    a, b, c = coef
    return float(a), float(b), float(c + zm - a * xm - b * ym)


def fit_plane(depth, roi: Roi) -> tuple[float, float, float]:
    """Least-squares ``z = a x + b y + c`` over valid ROI pixels.

    ``x`` is the column and ``y`` the row index in the full image.
    """
    return _fit(*_roi_points(depth, roi))


def plane_residuals(depth, roi: Roi) -> np.ndarray:
    x, y, z = _roi_points(depth, roi)
    a, b, c = _fit(x, y, z)
    return z - (a * x + b * y + c)


@dataclass(frozen=True)
class PrecisionReport:
    synthetic_wavelength: float
    mode: str
    roi: Roi
    delta_z: float
    n_points: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.delta_z < 0:
            raise ConfigError("delta_z must be non-negative")


def precision(depth, roi: Roi, synthetic_wavelength: Optional[float] = None,
              mode: str = "single-shot") -> PrecisionReport:
    """Population std of the plane-fit residuals; no outlier rejection."""
    r = plane_residuals(depth, roi)
    if r.size < MIN_POINTS:
        raise DegenerateFitError(f"only {r.size} valid pixels in ROI, need {MIN_POINTS}")
    lam = synthetic_wavelength
    if lam is None and isinstance(depth, DepthMap):
        lam = depth.synthetic_wavelength
    return PrecisionReport(float(lam or 0.0), mode, roi, float(np.std(r)), int(r.size))


def centred_depth(syn: SyntheticField, roi: Roi) -> DepthMap:
    """Depth of a wrap-free patch with the datum moved to the ROI's mean phase.

    The circular mean over the ROI is rotated to zero before scaling, so a
    noisy patch near the 0/2 pi seam is not split in two.
    """
    pm = syn.phase()
    rs, cs = roi.slices
    sel = pm.valid[rs, cs]
    if not sel.any():
        raise DegenerateFitError("no valid pixels in ROI")
    ref = np.angle(np.mean(np.exp(1j * pm.phase[rs, cs][sel])))
    phi = wrap_signed(pm.phase - ref)
    z = phi * syn.synthetic_wavelength / (2 * TWO_PI)
    return DepthMap(np.where(pm.valid, z, np.nan), pm.valid, "raw", syn.synthetic_wavelength, syn.pitch)


@dataclass(frozen=True, eq=False)
class PrecisionRun:
    """Inputs of one precision-table row.

    ``images`` holds one crossed-fringe image (single-shot) or the two
    single-reference images (double-shot); ``carriers`` the matching
    reference tilts (two for single-shot, one for double-shot).
    """

    pair: WavelengthPair
    mode: str
    images: tuple
    carriers: tuple
    pupil_cutoff: Optional[float] = None
    roi: Optional[Roi] = None
    smoothing_sigma: float = 2.0
    extras: dict = field(default_factory=dict)


def evaluate_run(run: PrecisionRun) -> PrecisionReport:
    if run.mode == "single-shot":
        syn = single_shot(run.images[0], run.carriers, run.pair, run.pupil_cutoff, run.smoothing_sigma)
    elif run.mode == "double-shot":
        if len(run.images) != 2:
            raise ConfigError("double-shot needs two images")
        syn = double_shot(run.images[0], run.images[1], run.carriers[0], run.pair,
                          run.pupil_cutoff, run.smoothing_sigma)
    else:
        raise ConfigError(f"mode must be one of {MODES}")
    roi = run.roi or default_roi(syn.shape, syn.pitch)
    return precision(centred_depth(syn, roi), roi, syn.synthetic_wavelength, run.mode)


def precision_table(runs: Sequence[PrecisionRun], jobs: int = 1) -> list[PrecisionReport]:
    """One report per run, in input order."""
    runs = list(runs)
    if jobs > 1 and len(runs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(evaluate_run, runs))
    return [evaluate_run(r) for r in runs]


TABLE_HEADER = ("lambda_syn_mm", "mode", "delta_z_mm", "n_points", "roi")


def table_rows(reports: Sequence[PrecisionReport]) -> list[tuple]:
    return [
        (f"{r.synthetic_wavelength * 1e3:.6g}", r.mode, f"{r.delta_z * 1e3:.6g}", str(r.n_points), str(r.roi))
        for r in reports
    ]


def loglog_slope(lams, deltas) -> float:
    """Slope of log(delta_z) against log(Lambda)."""
    return float(np.polyfit(np.log(lams), np.log(deltas), 1)[0])
