"""Complex fields, centred unitary FFTs and synthetic-wavelength algebra.

Conventions used everywhere in the package:

* arrays are indexed ``[row, column]`` = ``[y, x]``; frequencies are in
  cycles/pixel with ``u`` along x and ``v`` along y;
* spectra are DC-centred (``fftshift``) and unitary (``norm="ortho"``), so
  Parseval holds exactly;
* wrapped phase lives in ``[0, 2*pi)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import scipy.fft

from .errors import ConfigError, DataError, DimensionError

TWO_PI = 2.0 * np.pi
MIN_SIZE = 16
DEFAULT_AMPLITUDE_FLOOR = 1e-3


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _check_grid(data: np.ndarray, what: str) -> None:
    if data.ndim != 2:
        raise DimensionError(f"{what} must be 2-D, got shape {data.shape}")
    h, w = data.shape
    if h < MIN_SIZE or w < MIN_SIZE:
        raise DimensionError(f"{what} must be at least {MIN_SIZE}x{MIN_SIZE}, got {w}x{h}")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Immutable complex amplitude sampled on a square-pixel grid.

    ``pitch`` is the sampling interval in meters per pixel.
    """

    data: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        data = _frozen(self.data, np.complex128)
        _check_grid(data, "field")
        if not (np.isfinite(self.pitch) and self.pitch > 0):
            raise ConfigError(f"pitch must be positive, got {self.pitch}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.data)

    def with_data(self, data) -> "ComplexField":
        return ComplexField(data, self.pitch)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """DC-centred unitary spectrum of a field; same shape as its source."""

    data: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        data = _frozen(self.data, np.complex128)
        _check_grid(data, "spectrum")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the centred frequency grids ``(u, v)`` in cycles/pixel."""
        return frequency_grid(self.shape)


def frequency_axes(shape) -> tuple[np.ndarray, np.ndarray]:
    """Centred 1-D frequency axes ``(u along x, v along y)`` in cycles/pixel."""
    h, w = shape
    u = scipy.fft.fftshift(scipy.fft.fftfreq(w))
    v = scipy.fft.fftshift(scipy.fft.fftfreq(h))
    return u, v


def frequency_grid(shape) -> tuple[np.ndarray, np.ndarray]:
    u, v = frequency_axes(shape)
    return np.meshgrid(u, v, indexing="xy")


def dc_index(shape) -> tuple[int, int]:
    """Row/column index of the DC bin in a centred spectrum."""
    h, w = shape
    return h // 2, w // 2


def _as_array(x) -> tuple[np.ndarray, float]:
    if isinstance(x, (ComplexField, Spectrum)):
        return x.data, x.pitch
    data = np.asarray(x)
    if hasattr(x, "pitch"):
        return data, x.pitch
    return data, 1.0


def fft2(field: Union[ComplexField, np.ndarray]) -> Spectrum:
    """Centred, unitary forward 2-D DFT."""
    data, pitch = _as_array(field)
    data = np.asarray(data, dtype=np.complex128)
    _check_grid(data, "fft2 input")
    return Spectrum(scipy.fft.fftshift(scipy.fft.fft2(data, norm="ortho")), pitch)


def ifft2(spec: Union[Spectrum, np.ndarray]) -> ComplexField:
    """Inverse of :func:`fft2`."""
    data, pitch = _as_array(spec)
    data = np.asarray(data, dtype=np.complex128)
    _check_grid(data, "ifft2 input")
    return ComplexField(scipy.fft.ifft2(scipy.fft.ifftshift(data), norm="ortho"), pitch)


def mix_conjugate(e1: ComplexField, e2: ComplexField) -> ComplexField:
    """Pixelwise ``e1 * conj(e2)``; the phase is the phase difference."""
    if e1.shape != e2.shape:
        raise DimensionError(f"cannot mix fields of shape {e1.shape} and {e2.shape}")
    return ComplexField(e1.data * np.conj(e2.data), e1.pitch)


def synthetic_wavelength(lambda1: float, lambda2: float) -> float:
    """Beat wavelength ``l1*l2/|l1 - l2|`` of two wavelengths (meters)."""
    if not (lambda1 > 0 and lambda2 > 0):
        raise ConfigError(f"wavelengths must be positive, got {lambda1}, {lambda2}")
    if lambda1 == lambda2:
        raise ConfigError("equal wavelengths give an infinite synthetic wavelength")
    return lambda1 * lambda2 / abs(lambda1 - lambda2)


def partner_wavelength(lambda1: float, synthetic: float) -> float:
    """The wavelength above ``lambda1`` that beats with it at ``synthetic``."""
    if not (0 < lambda1 < synthetic):
        raise ConfigError("need 0 < lambda1 < synthetic wavelength")
    return lambda1 * synthetic / (synthetic - lambda1)


@dataclass(frozen=True)
class WavelengthPair:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        synthetic_wavelength(self.lambda1, self.lambda2)  # validates

    @property
    def synthetic(self) -> float:
        return synthetic_wavelength(self.lambda1, self.lambda2)

    @classmethod
    def from_synthetic(cls, lambda1: float, synthetic: float) -> "WavelengthPair":
        return cls(lambda1, partner_wavelength(lambda1, synthetic))


class PhaseMap(NamedTuple):
    phase: np.ndarray
    valid: np.ndarray


def wrap_phase(phi) -> np.ndarray:
    """Wrap to ``[0, 2*pi)``."""
    out = np.mod(phi, TWO_PI)
    # mod of tiny negatives rounds up to exactly 2*pi
    out = np.where(out >= TWO_PI, 0.0, out)
    return out


def wrap_signed(phi) -> np.ndarray:
    """Wrap to ``[-pi, pi)``; used for residuals."""
    return np.mod(np.asarray(phi) + np.pi, TWO_PI) - np.pi


def phase_of(field: ComplexField, floor: float = DEFAULT_AMPLITUDE_FLOOR) -> PhaseMap:
    """Wrapped phase plus a validity mask.

    Pixels whose amplitude is below ``floor`` times the mean amplitude carry
    no usable phase and are flagged invalid.
    """
    amp = np.abs(field.data)
    mean = amp.mean()
    valid = amp > floor * mean if mean > 0 else np.zeros(amp.shape, bool)
    return PhaseMap(wrap_phase(np.angle(field.data)), valid)


def complex_correlation(a, b, mask=None) -> complex:
    """Normalized inner product ``<a, b> / (|a| |b|)`` over ``mask``."""
    a = getattr(a, "data", a)
    b = getattr(b, "data", b)
    if mask is not None:
        a, b = a[mask], b[mask]
    num = np.vdot(b, a)
    den = np.sqrt(np.vdot(a, a).real * np.vdot(b, b).real)
    return num / den if den > 0 else 0j
