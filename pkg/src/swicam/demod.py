"""Single-sideband Fourier demodulation of off-axis holograms.

A reference ``R = a exp(i 2 pi f.x)`` beating with an object field ``E``
puts ``a E exp(-i 2 pi f.x)`` into the image, i.e. a copy of the object
spectrum centred on ``-f`` (and its conjugate twin on ``+f``). We report
and accept carriers as the reference tilt ``f``; :func:`extract_field` moves
the ``-f`` sideband to DC, windows it and transforms back, which yields
``E`` up to a global complex factor.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import CarrierNotFoundError, ConfigError, OverlapError
from .field import ComplexField, Spectrum, dc_index, fft2, frequency_grid, ifft2
from .scene import Interferogram

FILTER_SHAPES = ("hann", "gaussian")
HINTS = {
    "horizontal": (1.0, 0.0),
    "vertical": (0.0, 1.0),
}
# half-angle of the search cone around the hinted axis
_SEARCH_HALF_ANGLE = np.pi / 4


class SidebandClippedWarning(UserWarning):
    """A sideband disk extends past Nyquist and folds onto the other edge."""


@dataclass(frozen=True)
class CarrierSpec:
    """Reference tilt in cycles/pixel plus the sideband filter around it."""

    frequency: tuple[float, float]
    filter_shape: str = "hann"
    filter_radius: float = 0.08

    def __post_init__(self):
        u, v = (float(f) for f in self.frequency)
        if u == 0 and v == 0:
            raise ConfigError("carrier frequency must be non-zero")
        if abs(u) > 0.5 or abs(v) > 0.5:
            raise ConfigError(f"carrier {self.frequency} exceeds Nyquist")
        if self.filter_shape not in FILTER_SHAPES:
            raise ConfigError(f"filter_shape must be one of {FILTER_SHAPES}, got {self.filter_shape!r}")
        if not self.filter_radius > 0:
            raise ConfigError("filter_radius must be positive")
        object.__setattr__(self, "frequency", (u, v))

    @property
    def magnitude(self) -> float:
        return float(np.hypot(*self.frequency))

    def within_nyquist(self) -> bool:
        u, v = self.frequency
        return abs(u) + self.filter_radius <= 0.5 and abs(v) + self.filter_radius <= 0.5


def default_filter_radius(carrier: Sequence[float], pupil_cutoff: Optional[float] = None) -> float:
    """Pupil cutoff when known, otherwise 80% of the carrier-to-DC distance."""
    if pupil_cutoff is not None:
        return float(pupil_cutoff)
    return 0.8 * float(np.hypot(*carrier))


def sideband_window(shape, radius: float, kind: str = "hann") -> np.ndarray:
    """Radially symmetric window centred on DC, zero beyond ``radius``.

    ``hann`` is the raised cosine; ``gaussian`` has sigma = radius/2.
    """
    u, v = frequency_grid(shape)
    rho = np.hypot(u, v)
    inside = rho < radius
    if kind == "hann":
        w = 0.5 * (1.0 + np.cos(np.pi * rho / radius))
    elif kind == "gaussian":
        sigma = radius / 2.0
        w = np.exp(-0.5 * (rho / sigma) ** 2)
    else:
        raise ConfigError(f"unknown filter shape {kind!r}")
    return np.where(inside, w, 0.0)


def _hint_direction(hint) -> np.ndarray:
    if isinstance(hint, str):
        try:
            d = np.array(HINTS[hint], float)
        except KeyError:
            raise ConfigError(f"search hint must be one of {sorted(HINTS)} or a 2-vector") from None
    else:
        d = np.asarray(hint, float)
        if d.shape != (2,) or not np.any(d):
            raise ConfigError(f"bad search hint {hint!r}")
    return d / np.linalg.norm(d)


def locate_carrier(
    spec: Spectrum,
    search_halfplane="horizontal",
    dc_exclusion_radius: float = 0.05,
    filter_radius: float = 0.08,
    filter_shape: str = "hann",
    smoothing: float = 0.0,
) -> CarrierSpec:
    """Find the sideband peak in the hinted direction.

    The search covers the cone within 45 degrees of the hinted axis (so a
    crossed-fringe image yields the requested carrier, not the other one),
    outside a disk of ``dc_exclusion_radius`` around DC. Detection uses the
    raw magnitude. ``smoothing`` (in cycles/pixel) then blurs the power
    spectrum before picking the peak bin, which turns a broad speckle
    sideband into a single hump centred on the carrier. The peak bin is
    refined by the magnitude centroid of its 3x3 neighbourhood.
    """
    d = _hint_direction(search_halfplane)
    u, v = spec.frequencies()
    rho = np.hypot(u, v)
    along = u * d[0] + v * d[1]
    region = (rho > dc_exclusion_radius) & (along >= rho * np.cos(_SEARCH_HALF_ANGLE))

    mag = np.abs(spec.data)
    vals = mag[region]
    if vals.size == 0:
        raise CarrierNotFoundError("search region is empty")
    peak = vals.max()
    threshold = vals.mean() + 6.0 * vals.std()
    # a pure-noise spectrum can poke above mean + 6 sigma over ~1e5 bins
    if not (peak > threshold and peak > 10.0 * np.median(vals)):
        raise CarrierNotFoundError(
            f"no spectral peak above mean + 6 sigma in the {search_halfplane!r} search region"
        )
    if smoothing > 0:
        h, w = spec.shape
        mag = np.sqrt(ndimage.gaussian_filter(mag**2, (smoothing * h, smoothing * w), mode="wrap"))
    iy, ix = np.unravel_index(np.argmax(np.where(region, mag, -np.inf)), mag.shape)

    h, w = mag.shape
    rows = np.arange(iy - 1, iy + 2)
    cols = np.arange(ix - 1, ix + 2)
    patch = mag[np.ix_(rows % h, cols % w)]
    total = patch.sum()
    cy = float((patch.sum(axis=1) * rows).sum() / total)
    cx = float((patch.sum(axis=0) * cols).sum() / total)
    r0, c0 = dc_index(mag.shape)
    freq = ((cx - c0) / w, (cy - r0) / h)
    return CarrierSpec(freq, filter_shape, filter_radius)


def _image_data(img) -> tuple[np.ndarray, float]:
    if isinstance(img, Interferogram):
        return img.data.astype(np.float64), img.pitch
    if isinstance(img, ComplexField):
        return img.data.real.astype(np.float64), img.pitch
    return np.asarray(img, dtype=np.float64), 1.0


def extract_field(
    img: Union[Interferogram, np.ndarray],
    carrier: CarrierSpec,
    pupil_cutoff: Optional[float] = None,
    padding: bool = True,
) -> ComplexField:
    """Recover the object field that beat with the reference at ``carrier``.

    The spectrum is translated by whole bins and the sub-bin remainder is
    removed with a spatial phase ramp beforehand. The result is normalized
    to unit RMS amplitude; absolute scale and piston phase are not
    recoverable from a single hologram.

    With ``pupil_cutoff`` given, the DC autocorrelation term is taken to
    occupy a disk of twice that radius and the filter must stay clear of it.
    """
    if not carrier.within_nyquist():
        raise ConfigError(
            f"carrier {carrier.frequency} with filter radius {carrier.filter_radius} crosses Nyquist"
        )
    dc_radius = 2.0 * pupil_cutoff if pupil_cutoff is not None else 0.0
    if carrier.magnitude - carrier.filter_radius <= dc_radius:
        raise OverlapError(
            f"filter of radius {carrier.filter_radius} around {carrier.frequency} "
            f"reaches the DC region (radius {dc_radius})"
        )

    data, pitch = _image_data(img)
    data = data - data.mean()
    h0, w0 = data.shape
    # zero margin keeps the window's circular convolution from wrapping
    pad = int(np.ceil(2.0 / carrier.filter_radius)) if padding else 0
    data = np.pad(data, pad)
    h, w = data.shape
    u, v = carrier.frequency
    ku, kv = int(round(u * w)), int(round(v * h))
    du, dv = u - ku / w, v - kv / h
    if du or dv:
        y, x = np.mgrid[0:h, 0:w]
        data = data * np.exp(2j * np.pi * (du * x + dv * y))
    spec = np.roll(fft2(data).data, (kv, ku), axis=(0, 1))
    spec = spec * sideband_window((h, w), carrier.filter_radius, carrier.filter_shape)
    out = ifft2(spec).data[pad:pad + h0, pad:pad + w0]
    rms = np.sqrt(np.mean(np.abs(out) ** 2))
    if rms > 0:
        out = out / rms
    return ComplexField(out, pitch)


@dataclass(frozen=True)
class SeparationReport:
    """Clearances between spectral regions, in cycles/pixel.

    ``sideband_gaps`` maps a pair of sideband labels (``"+0"``, ``"-0"``,
    ``"+1"``, ...) to the edge-to-edge gap of their disks on the periodic
    spectrum; ``dc_gap`` is the smallest clearance between any sideband and
    the DC autocorrelation disk. Negative gaps mean overlap.
    """

    sideband_gaps: dict
    dc_gap: float
    overlap_flag: bool
    clipped: tuple = field(default=())

    @property
    def min_gap(self) -> float:
        return min([self.dc_gap, *self.sideband_gaps.values()])


def _torus_distance(p, q) -> float:
    d = np.asarray(p, float) - np.asarray(q, float)
    d = d - np.round(d)
    return float(np.hypot(*d))


def check_separation(carriers: Iterable, pupil_cutoff: float) -> SeparationReport:
    """Check that DC and every +/- sideband disk stay apart.

    Each sideband is a disk of radius ``pupil_cutoff`` around +/- carrier;
    DC is a disk of ``2 * pupil_cutoff`` (the support of the speckle
    autocorrelation). Distances are measured on the periodic spectrum, so
    carriers near Nyquist collide with their own wrapped twins. Works for
    any number of carriers.
    """
    freqs = [c.frequency if isinstance(c, CarrierSpec) else tuple(map(float, c)) for c in carriers]
    if not freqs:
        raise ConfigError("need at least one carrier")
    r = float(pupil_cutoff)
    sidebands = {}
    for i, f in enumerate(freqs):
        sidebands[f"+{i}"] = f
        sidebands[f"-{i}"] = (-f[0], -f[1])

    gaps = {}
    for (la, pa), (lb, pb) in itertools.combinations(sidebands.items(), 2):
        gaps[(la, lb)] = _torus_distance(pa, pb) - 2 * r
    dc_gap = min(_torus_distance(p, (0.0, 0.0)) for p in sidebands.values()) - 3 * r
    clipped = tuple(i for i, f in enumerate(freqs) if abs(f[0]) + r > 0.5 or abs(f[1]) + r > 0.5)
    overlap = dc_gap < 0 or any(g < 0 for g in gaps.values())
    if clipped:
        warnings.warn(f"sideband(s) {list(clipped)} extend past Nyquist at cutoff {r}", SidebandClippedWarning,
                      stacklevel=2)
    return SeparationReport(gaps, dc_gap, overlap, clipped)
