"""Synthetic fields, depth conversion and multi-frequency unwrapping.

The synthetic field of a wavelength pair is ``E(short) * conj(E(long))``;
its phase is ``4 pi z / Lambda`` plus a constant datum, independent of the
speckle. Unwrapping is per pixel: a coarser (longer) synthetic wavelength
predicts the fringe order of a finer one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .demod import CarrierSpec, default_filter_radius, extract_field
from .errors import CascadeInfeasibleError, ConfigError, DataError, DimensionError
from .field import (
    TWO_PI,
    ComplexField,
    PhaseMap,
    WavelengthPair,
    mix_conjugate,
    synthetic_wavelength,
    wrap_phase,
    wrap_signed,
)

PROVENANCES = ("single-shot", "double-shot", "beat-note")
OFFSET_CONVENTIONS = ("zero-min", "zero-mean", "raw")

DEFAULT_SYNTHETIC_SIGMA = 2.0
DEFAULT_GUIDANCE_SIGMA = 3.0
DEFAULT_COHERENCE_THRESHOLD = 0.5
# histogram bins for the wrap-free test of a phase map
_GAP_BINS = 256


def complex_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur of real and imaginary parts separately."""
    if sigma <= 0:
        return np.asarray(data, dtype=np.complex128)
    re = ndimage.gaussian_filter(data.real, sigma, mode="nearest")
    im = ndimage.gaussian_filter(data.imag, sigma, mode="nearest")
    return re + 1j * im


def border_margin(filter_radius: Optional[float], smoothing_sigma: float) -> int:
    """Pixels near the frame edge whose estimate is biased by one-sided kernels.

    The demodulation window has an impulse response about ``1/radius`` wide
    and the Gaussian smoothing reaches ``3 sigma``.
    """
    m = int(np.ceil(3.0 * smoothing_sigma))
    if filter_radius:
        m += int(np.ceil(1.0 / filter_radius))
    return m


def border_mask(shape, margin: int) -> np.ndarray:
    mask = np.zeros(shape, bool)
    h, w = shape
    if 2 * margin < min(h, w):
        mask[margin:h - margin, margin:w - margin] = True
    return mask


def local_coherence(mixed: np.ndarray, sigma: float) -> np.ndarray:
    """``|blur(m)| / blur(|m|)``: 1 where the synthetic phase is locally flat
    and consistent, near 0 where the speckle pair has decorrelated."""
    num = np.abs(complex_blur(mixed, sigma))
    den = ndimage.gaussian_filter(np.abs(mixed), sigma, mode="nearest")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / den, 0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class SyntheticField:
    """``E(Lambda)`` with its wavelength, origin and a validity mask.

    ``parents`` holds the two synthetic wavelengths a beat note was formed
    from. ``coherence`` (optional) is the local coherence map used to build
    ``mask``.
    """

    field: ComplexField
    synthetic_wavelength: float
    provenance: str = "single-shot"
    parents: tuple = ()
    mask: Optional[np.ndarray] = None
    coherence: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.synthetic_wavelength > 0 or not np.isfinite(self.synthetic_wavelength):
            raise ConfigError(f"synthetic wavelength must be positive, got {self.synthetic_wavelength}")
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"provenance must be one of {PROVENANCES}")
        if self.provenance == "beat-note" and len(self.parents) != 2:
            raise ConfigError("a beat-note field must record its two parent wavelengths")
        object.__setattr__(self, "parents", tuple(float(p) for p in self.parents))
        mask = self.mask
        if mask is None:
            mask = np.ones(self.field.shape, bool)
        mask = np.array(mask, dtype=bool)
        if mask.shape != self.field.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match field {self.field.shape}")
        # products of fields span many decades of amplitude (a beat note
        # goes as reflectivity**4), so only exact nulls are rejected here;
        # phase quality is judged by the coherence mask
        mask &= self.field.amplitude > 0
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.field.shape

    @property
    def pitch(self) -> float:
        return self.field.pitch

    def phase(self) -> PhaseMap:
        return PhaseMap(wrap_phase(np.angle(self.field.data)), self.mask.copy())


def synthetic_field(
    e1: ComplexField,
    e2: ComplexField,
    pair: WavelengthPair,
    smoothing_sigma: float = DEFAULT_SYNTHETIC_SIGMA,
    provenance: str = "single-shot",
    coherence_threshold: float = DEFAULT_COHERENCE_THRESHOLD,
    margin: int = 0,
) -> SyntheticField:
    """Mix the two wavelength fields into ``E(Lambda)``.

    ``e1``/``e2`` belong to ``pair.lambda1``/``pair.lambda2``. The product is
    taken as short times conj(long) whatever the order, so the phase grows
    with depth. A complex Gaussian blur of ``smoothing_sigma`` pixels then
    averages over speckle grains.
    """
    if pair.lambda1 < pair.lambda2:
        mixed = mix_conjugate(e1, e2).data
    else:
        mixed = mix_conjugate(e2, e1).data
    coh = local_coherence(mixed, max(smoothing_sigma, 1.0))
    mask = (coh >= coherence_threshold) & border_mask(mixed.shape, margin)
    data = complex_blur(mixed, smoothing_sigma)
    return SyntheticField(ComplexField(data, e1.pitch), pair.synthetic, provenance, mask=mask, coherence=coh)


def _carrier(c, radius):
    if isinstance(c, CarrierSpec):
        return c
    return CarrierSpec(tuple(c), "hann", radius)


def single_shot(
    img,
    carriers: Sequence,
    pair: WavelengthPair,
    pupil_cutoff: Optional[float] = None,
    smoothing_sigma: float = DEFAULT_SYNTHETIC_SIGMA,
    coherence_threshold: float = DEFAULT_COHERENCE_THRESHOLD,
) -> SyntheticField:
    """Synthetic field from one crossed-fringe image.

    ``carriers[k]`` is the reference tilt of ``pair``'s k-th wavelength.
    """
    if len(carriers) != 2:
        raise ConfigError(f"single-shot needs two carriers, got {len(carriers)}")
    specs = [_carrier(c, default_filter_radius(getattr(c, "frequency", c), pupil_cutoff)) for c in carriers]
    e1 = extract_field(img, specs[0], pupil_cutoff)
    e2 = extract_field(img, specs[1], pupil_cutoff)
    margin = border_margin(min(s.filter_radius for s in specs), smoothing_sigma)
    return synthetic_field(e1, e2, pair, smoothing_sigma, "single-shot", coherence_threshold, margin)


def double_shot(
    img1,
    img2,
    carrier,
    pair: WavelengthPair,
    pupil_cutoff: Optional[float] = None,
    smoothing_sigma: float = DEFAULT_SYNTHETIC_SIGMA,
    coherence_threshold: float = DEFAULT_COHERENCE_THRESHOLD,
) -> SyntheticField:
    """Synthetic field from two single-reference images, one per wavelength."""
    spec = _carrier(carrier, default_filter_radius(getattr(carrier, "frequency", carrier), pupil_cutoff))
    e1 = extract_field(img1, spec, pupil_cutoff)
    e2 = extract_field(img2, spec, pupil_cutoff)
    margin = border_margin(spec.filter_radius, smoothing_sigma)
    return synthetic_field(e1, e2, pair, smoothing_sigma, "double-shot", coherence_threshold, margin)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Depth in meters per pixel; only ``mask`` pixels are meaningful."""

    z: np.ndarray
    mask: np.ndarray
    offset_convention: str = "zero-min"
    synthetic_wavelength: Optional[float] = None
    pitch: float = 1.0

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if z.ndim != 2 or z.shape != mask.shape:
            raise DimensionError(f"depth {z.shape} and mask {mask.shape} must be matching 2-D grids")
        if self.offset_convention not in OFFSET_CONVENTIONS:
            raise ConfigError(f"offset_convention must be one of {OFFSET_CONVENTIONS}")
        if not np.all(np.isfinite(z[mask])):
            raise DataError("valid depth pixels must be finite")
        z.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.z.shape

    def masked(self, fill=np.nan) -> np.ndarray:
        return np.where(self.mask, self.z, fill)


def depth_from_phase(phi, lambda_syn: float, mask=None, offset: str = "zero-min",
                     pitch: float = 1.0) -> DepthMap:
    """``z = phi * Lambda / (4 pi)``, then the offset convention.

    ``phi`` may be an array, a :class:`PhaseMap` or an unwrapping result;
    their validity masks are honoured.
    """
    if not lambda_syn > 0:
        raise ConfigError("synthetic wavelength must be positive")
    if offset not in OFFSET_CONVENTIONS:
        raise ConfigError(f"offset must be one of {OFFSET_CONVENTIONS}")
    if hasattr(phi, "phase") and hasattr(phi, "valid"):
        if mask is None:
            mask = phi.valid
        phi = phi.phase
    phi = np.asarray(phi, dtype=np.float64)
    if mask is None:
        mask = np.isfinite(phi)
    mask = np.asarray(mask, bool) & np.isfinite(phi)
    z = phi * (lambda_syn / (2.0 * TWO_PI))
    if mask.any():
        if offset == "zero-min":
            z = z - z[mask].min()
        elif offset == "zero-mean":
            z = z - z[mask].mean()
    return DepthMap(np.where(mask, z, np.nan), mask, offset, lambda_syn, pitch)


def reconstruct_depth(syn: SyntheticField, offset: str = "zero-min") -> DepthMap:
    """Wrapped-phase depth of a synthetic field (range ``Lambda/2``)."""
    return depth_from_phase(syn.phase(), syn.synthetic_wavelength, offset=offset, pitch=syn.pitch)


def beat_note(s1: SyntheticField, s2: SyntheticField, smoothing_sigma: float = 0.0) -> SyntheticField:
    """Synthetic-synthetic field at ``L1*L2/|L1-L2|``.

    Ordered as ``E(smaller L) * conj(E(larger L))`` so its phase grows with
    depth like any other synthetic field.
    """
    if s1.shape != s2.shape:
        raise DimensionError(f"cannot beat fields of shape {s1.shape} and {s2.shape}")
    lb = synthetic_wavelength(s1.synthetic_wavelength, s2.synthetic_wavelength)
    a, b = (s1, s2) if s1.synthetic_wavelength < s2.synthetic_wavelength else (s2, s1)
    data = complex_blur(a.field.data * np.conj(b.field.data), smoothing_sigma)
    return SyntheticField(
        ComplexField(data, s1.pitch),
        lb,
        "beat-note",
        parents=(s1.synthetic_wavelength, s2.synthetic_wavelength),
        mask=s1.mask & s2.mask,
    )


@dataclass(frozen=True, eq=False)
class UnwrapResult:
    """Unwrapped phase stored exactly as ``wrapped + 2 pi * order``.

    Keeping the integer fringe order next to the untouched wrapped input
    makes :meth:`wrap` return the input bit for bit.
    """

    wrapped: np.ndarray
    order: np.ndarray
    valid: np.ndarray
    synthetic_wavelength: Optional[float] = None

    @property
    def phase(self) -> np.ndarray:
        return self.wrapped + TWO_PI * self.order

    def wrap(self) -> np.ndarray:
        return self.wrapped

    def depth(self, offset: str = "zero-min") -> DepthMap:
        if self.synthetic_wavelength is None:
            raise ConfigError("unwrap result carries no synthetic wavelength")
        return depth_from_phase(self, self.synthetic_wavelength, offset=offset)


def _phase_and_mask(x):
    if isinstance(x, SyntheticField):
        pm = x.phase()
        return pm.phase, pm.valid
    if isinstance(x, (PhaseMap, UnwrapResult)):
        return np.asarray(x.phase, float), np.asarray(x.valid, bool)
    a = np.asarray(x, float)
    return a, np.isfinite(a)


def guided_unwrap(wrapped, guidance, ratio: float, align: bool = False,
                  synthetic_wavelength: Optional[float] = None) -> UnwrapResult:
    """Number-theoretic unwrapping of ``wrapped`` with a coarser ``guidance``.

    ``ratio = Lambda_g / Lambda_w`` must exceed 1. A pixel gets the wrong
    fringe order once ``|ratio * guidance error| >= pi``, i.e. the guidance
    error must stay below ``pi / ratio``.

    With ``align=True`` a constant datum difference between the two maps
    (circular mean of the residual over valid pixels) is removed from the
    prediction before rounding; the wrapped input is never modified.
    """
    if not ratio > 1:
        raise ConfigError(f"guidance ratio must exceed 1, got {ratio}")
    w, wmask = _phase_and_mask(wrapped)
    g, gmask = _phase_and_mask(guidance)
    if w.shape != g.shape:
        raise DimensionError(f"wrapped {w.shape} and guidance {g.shape} differ")
    w = wrap_phase(w)
    valid = wmask & gmask & np.isfinite(g)
    pred = np.where(valid, g, 0.0) * ratio
    if align and valid.any():
        bias = np.angle(np.mean(np.exp(1j * (pred[valid] - w[valid]))))
        pred = pred - bias
    order = np.rint((pred - w) / TWO_PI).astype(np.int64)
    order[~valid] = 0
    w.flags.writeable = False
    return UnwrapResult(w, order, valid, synthetic_wavelength)


def cut_at_largest_gap(phase: np.ndarray, mask=None) -> np.ndarray:
    """Add 2 pi to the phases below the widest empty arc of the circle.

    For a map whose values occupy less than one turn this removes the
    artificial 0/2 pi seam wherever the datum put it. Only whole turns are
    added, so the result still wraps back to the input.
    """
    phase = wrap_phase(phase)
    vals = np.sort(phase[mask] if mask is not None else phase.ravel())
    if vals.size < 2:
        return phase
    gaps = np.diff(np.concatenate([vals, [vals[0] + TWO_PI]]))
    k = int(np.argmax(gaps))
    if k == vals.size - 1:
        return phase
    cut = vals[k + 1]
    return np.where(phase < cut, phase + TWO_PI, phase)


def largest_gap(phase: np.ndarray, mask=None, bins: int = _GAP_BINS) -> float:
    """Widest arc (radians) free of valid phase samples, on a histogram."""
    vals = phase[mask] if mask is not None else phase.ravel()
    if vals.size == 0:
        return TWO_PI
    counts, _ = np.histogram(wrap_phase(vals), bins=bins, range=(0.0, TWO_PI))
    empty = counts <= max(1, int(1e-4 * vals.size))
    if not empty.any():
        return 0.0
    if empty.all():
        return TWO_PI
    # longest circular run of empty bins
    run = best = 0
    for e in np.concatenate([empty, empty]):
        run = run + 1 if e else 0
        best = max(best, run)
    return min(best, bins) * TWO_PI / bins


def smooth_phase(phase: np.ndarray, sigma: float, weight=None) -> np.ndarray:
    """Complex-domain blur of an (un)wrapped phase map.

    Blurs ``weight * exp(i phase)`` and adds the wrapped change of argument
    back onto ``phase``, so whole turns carried by an unwrapped map survive.
    """
    if sigma <= 0:
        return phase
    wgt = np.ones(phase.shape) if weight is None else weight
    blurred = np.angle(complex_blur(wgt * np.exp(1j * phase), sigma))
    return phase + wrap_signed(blurred - phase)


def phase_noise(phase: np.ndarray, mask, sigma: float = 2.0) -> float:
    """Robust estimate of the pixel phase noise of a smooth map."""
    if not np.any(mask):
        return np.inf
    resid = wrap_signed(phase - smooth_phase(phase, sigma))
    r = resid[mask]
    mad = np.median(np.abs(r - np.median(r)))
    return float(1.4826 * mad)


def blur_gain(sigma: float) -> float:
    """Std reduction of white noise under the Gaussian blur of ``sigma`` px."""
    if sigma <= 0:
        return 1.0
    n = 2 * int(np.ceil(4 * sigma)) + 1
    delta = np.zeros((n, n))
    delta[n // 2, n // 2] = 1.0
    return float(np.linalg.norm(ndimage.gaussian_filter(delta, sigma, mode="constant")))


@dataclass(frozen=True, eq=False)
class CascadeStage:
    synthetic_wavelength: float
    guidance_wavelength: float
    ratio: float
    guidance_noise: float


@dataclass(frozen=True, eq=False)
class CascadeResult:
    result: UnwrapResult
    synthetic_wavelength: float
    stages: tuple = field(default=())
    guide: Optional[SyntheticField] = None

    @property
    def phase(self) -> np.ndarray:
        return self.result.phase

    @property
    def valid(self) -> np.ndarray:
        return self.result.valid

    def depth(self, offset: str = "zero-min") -> DepthMap:
        return depth_from_phase(self.result, self.synthetic_wavelength, offset=offset)


def is_wrap_free(s: SyntheticField, max_depth: Optional[float] = None) -> bool:
    """Whether the depth range fits inside ``Lambda/2``.

    Decided from ``max_depth`` when given, otherwise from the phase data: a
    wrap-free map of a connected scene leaves part of the circle empty.
    """
    if max_depth is not None:
        return max_depth < s.synthetic_wavelength / 2
    pm = s.phase()
    return largest_gap(pm.phase, pm.valid) > 0.05 * TWO_PI


def unwrap_cascade(
    fields: Sequence[SyntheticField],
    smoothing_sigma: float = DEFAULT_GUIDANCE_SIGMA,
    max_depth: Optional[float] = None,
) -> CascadeResult:
    """Unwrap the finest synthetic field through a ladder of coarser ones.

    Fields are sorted by decreasing wavelength (stable, so ties keep their
    input order). If the coarsest one is not wrap-free a beat note of the
    two closest wavelengths heads the ladder. Each stage's guidance is
    blurred with :func:`smooth_phase` before use. A stage whose estimated
    guidance noise times the ratio reaches pi is rejected.
    """
    fields = list(fields)
    if not fields:
        raise ConfigError("need at least one synthetic field")
    shape = fields[0].shape
    for f in fields:
        if f.shape != shape:
            raise DimensionError("all synthetic fields must share one grid")
    lams = [f.synthetic_wavelength for f in fields]
    if len(set(lams)) != len(lams):
        raise ConfigError(f"synthetic wavelengths must be distinct, got {lams}")
    ladder = sorted(fields, key=lambda f: -f.synthetic_wavelength)

    if is_wrap_free(ladder[0], max_depth):
        top = ladder[0]
        rest = ladder[1:]
    else:
        if len(ladder) < 2:
            raise CascadeInfeasibleError(
                f"stage Lambda={ladder[0].synthetic_wavelength:g}: single wrapped field, nothing to guide it"
            )
        # closest pair in 1/Lambda gives the longest beat wavelength
        pairs = [(i, j) for i in range(len(ladder)) for j in range(i + 1, len(ladder))]
        i, j = min(pairs, key=lambda p: abs(1 / ladder[p[0]].synthetic_wavelength - 1 / ladder[p[1]].synthetic_wavelength))
        top = beat_note(ladder[i], ladder[j])
        if not is_wrap_free(top, max_depth):
            raise CascadeInfeasibleError(
                f"stage beat-note Lambda={top.synthetic_wavelength:g}: still wraps over the depth range"
            )
        rest = ladder

    top_pm = top.phase()
    weight = np.abs(top.field.data)
    raw = cut_at_largest_gap(top_pm.phase, top_pm.valid)
    guide = smooth_phase(raw, smoothing_sigma, weight)
    guide_mask = top_pm.valid
    guide_lam = top.synthetic_wavelength
    if not rest:
        order = np.rint((cut_at_largest_gap(top_pm.phase, top_pm.valid) - top_pm.phase) / TWO_PI)
        res = UnwrapResult(top_pm.phase, order.astype(np.int64), top_pm.valid, guide_lam)
        return CascadeResult(res, guide_lam, (), top)

    stages = []
    res = None
    for f in rest:
        ratio = guide_lam / f.synthetic_wavelength
        # pixel noise of the unsmoothed guide, scaled by what the blur removes
        noise = phase_noise(raw, guide_mask) * blur_gain(smoothing_sigma)
        stage = CascadeStage(f.synthetic_wavelength, guide_lam, ratio, noise)
        if ratio * noise >= np.pi:
            raise CascadeInfeasibleError(
                f"stage Lambda={f.synthetic_wavelength:g} guided by {guide_lam:g}: "
                f"guidance noise {noise:.3g} rad exceeds pi/ratio = {np.pi / ratio:.3g}"
            )
        stages.append(stage)
        pm = f.phase()
        res = guided_unwrap(PhaseMap(pm.phase, pm.valid & guide_mask), PhaseMap(guide, guide_mask),
                            ratio, align=True, synthetic_wavelength=f.synthetic_wavelength)
        raw = res.phase
        guide = smooth_phase(raw, smoothing_sigma, np.abs(f.field.data))
        guide_mask = res.valid
        guide_lam = f.synthetic_wavelength
    return CascadeResult(res, guide_lam, tuple(stages), top)
