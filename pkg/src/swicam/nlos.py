"""Looking through a diffuser: backpropagate the synthetic hologram.

The synthetic field captured at a thin scattering screen is a hologram at
wavelength ``Lambda``; the optical speckle cancels in ``E1 * conj(E2)``.
Angular-spectrum propagation of that hologram by ``-z`` refocuses a hidden
point source at distance ``z`` behind the screen.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.fft
from scipy import ndimage

from .errors import ConfigError
from .field import ComplexField, WavelengthPair, fft2, ifft2
from .recon import SyntheticField, complex_blur
from .scene import (
    ApertureSpec,
    CameraSpec,
    Interferogram,
    ReferenceBeam,
    derive_seed,
    render_interferogram,
)

NO_FOCUS_THRESHOLD = 2.0
_SCREEN_STREAM = 3


class SamplingWarning(UserWarning):
    """Propagation distance beyond the angular-spectrum validity range."""


@dataclass(frozen=True)
class PropagationPlan:
    """Depth sweep for :func:`focus_search`; all lengths in meters."""

    synthetic_wavelength: float
    z_range: tuple[float, float, float]
    plane_pitch: float

    def __post_init__(self):
        zmin, zmax, step = (float(v) for v in self.z_range)
        if not self.synthetic_wavelength > 0:
            raise ConfigError("synthetic wavelength must be positive")
        if not step > 0:
            raise ConfigError(f"z step must be positive, got {step}")
        if zmax < zmin:
            raise ConfigError("z range is reversed")
        if not self.plane_pitch > 0:
            raise ConfigError("plane pitch must be positive")
        object.__setattr__(self, "z_range", (zmin, zmax, step))

    def depths(self) -> np.ndarray:
        zmin, zmax, step = self.z_range
        n = int(np.floor((zmax - zmin) / step + 1e-9)) + 1
        return zmin + step * np.arange(n)


def sampling_limit(shape, pitch: float, lambda_syn: float) -> float:
    """Largest ``|d|`` treated as well sampled: ``span**2 / Lambda``.

    ``span`` is the shorter side of the plane. Heuristic: beyond it the
    quadratic phase of the transfer function is undersampled at the edges
    of the spectrum and wrap-around from the periodic FFT dominates.
    """
    span = min(shape) * pitch
    return span**2 / lambda_syn


def transfer_function(shape, pitch: float, lambda_syn: float, distance: float) -> np.ndarray:
    """Unshifted angular-spectrum kernel; zero on evanescent frequencies."""
    h, w = shape
    fx = scipy.fft.fftfreq(w, pitch)
    fy = scipy.fft.fftfreq(h, pitch)
    arg = 1.0 / lambda_syn**2 - fx[None, :] ** 2 - fy[:, None] ** 2
    prop = arg > 0
    kz = np.sqrt(np.where(prop, arg, 0.0))
    return np.where(prop, np.exp(2j * np.pi * distance * kz), 0.0)


def propagating_band(shape, pitch: float, lambda_syn: float) -> np.ndarray:
    return np.abs(transfer_function(shape, pitch, lambda_syn, 0.0)) > 0


def angular_spectrum_propagate(field: ComplexField, lambda_syn: float, distance: float) -> ComplexField:
    """Propagate ``field`` by ``distance`` (positive = away from the source).

    Emits :class:`SamplingWarning`, but still returns the result, when
    ``|distance|`` reaches :func:`sampling_limit`.
    """
    if not lambda_syn > 0:
        raise ConfigError("synthetic wavelength must be positive")
    if distance == 0:
        return field
    if abs(distance) >= sampling_limit(field.shape, field.pitch, lambda_syn):
        warnings.warn(
            f"|d| = {abs(distance):.3g} m exceeds span^2/Lambda = "
            f"{sampling_limit(field.shape, field.pitch, lambda_syn):.3g} m",
            SamplingWarning,
            stacklevel=2,
        )
    spec = scipy.fft.fft2(field.data)
    out = scipy.fft.ifft2(spec * transfer_function(field.shape, field.pitch, lambda_syn, distance))
    return ComplexField(out, field.pitch)


def nlos_hologram(syn: SyntheticField, smoothing_sigma: float = 0.0, normalize: bool = True) -> ComplexField:
    """Hologram to backpropagate from a synthetic field at the screen.

    The synthetic amplitude is the local speckle intensity, a random
    apodization that blurs and displaces the focus; ``normalize`` keeps the
    phase only.
    """
    data = complex_blur(syn.field.data, smoothing_sigma)
    if normalize:
        amp = np.abs(data)
        data = np.where(amp > 0, data / np.where(amp > 0, amp, 1.0), 0.0)
    return ComplexField(data, syn.pitch)


def peak_to_mean(amplitude: np.ndarray) -> float:
    m = float(amplitude.mean())
    return float(amplitude.max()) / m if m > 0 else 0.0


@dataclass(frozen=True, eq=False)
class FocusResult:
    z_star: float
    image: np.ndarray
    depths: np.ndarray
    scores: np.ndarray
    focused: bool

    @property
    def peak(self) -> tuple[int, int]:
        return tuple(int(i) for i in np.unravel_index(np.argmax(self.image), self.image.shape))


def focus_search(
    field: ComplexField,
    plan: PropagationPlan,
    metric: Callable[[np.ndarray], float] = peak_to_mean,
    jobs: int = 1,
) -> FocusResult:
    """Backpropagate to every depth of ``plan`` and keep the sharpest plane.

    The hologram is propagated by ``-z`` for each ``z``. ``focused`` is
    False when the best score stays below 2 (nothing point-like found).
    """
    if not np.isclose(field.pitch, plan.plane_pitch, rtol=1e-9):
        raise ConfigError(f"field pitch {field.pitch} does not match plan pitch {plan.plane_pitch}")
    depths = plan.depths()
    spec = scipy.fft.fft2(field.data)
    lam = plan.synthetic_wavelength
    if depths.size and max(abs(depths[0]), abs(depths[-1])) >= sampling_limit(field.shape, field.pitch, lam):
        warnings.warn("part of the z sweep exceeds the sampling limit", SamplingWarning, stacklevel=2)

    def amp(z):
        return np.abs(scipy.fft.ifft2(spec * transfer_function(field.shape, field.pitch, lam, -z)))

    def score(z):
        return metric(amp(z))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = np.array(list(pool.map(score, depths)))
    else:
        scores = np.array([score(z) for z in depths])
    k = int(np.argmax(scores))
    z_star = float(depths[k])
    return FocusResult(z_star, amp(z_star), depths, scores, bool(scores[k] >= NO_FOCUS_THRESHOLD))


def local_maxima(scores: np.ndarray) -> list[int]:
    """Indices of strict interior local maxima of a score curve."""
    s = np.asarray(scores)
    return [i for i in range(1, len(s) - 1) if s[i] > s[i - 1] and s[i] > s[i + 1]]


def spot_diameter(image: np.ndarray, pitch: float = 1.0) -> float:
    """Equivalent-circle diameter of the half-maximum intensity lobe."""
    inten = np.asarray(image, float) ** 2
    iy, ix = np.unravel_index(np.argmax(inten), inten.shape)
    labels, _ = ndimage.label(inten >= inten[iy, ix] / 2)
    area = np.sum(labels == labels[iy, ix])
    return float(np.sqrt(4 * area / np.pi)) * pitch


def diffraction_limit(lambda_syn: float, distance: float, aperture_span: float) -> float:
    """Focal spot size ``Lambda * d / D``."""
    return lambda_syn * distance / aperture_span


@dataclass(frozen=True)
class PointSource:
    """Hidden emitter; ``x``/``y`` from the plane centre, ``z`` behind it (m)."""

    x: float
    y: float
    z: float
    amplitude: float = 1.0


def screen_fields(
    shape,
    pitch: float,
    sources: Sequence[PointSource],
    pair: WavelengthPair,
    aperture: ApertureSpec,
    seed: int = 0,
) -> tuple[ComplexField, ComplexField]:
    """Image-plane fields of the diffuser lit by ``sources``, at both wavelengths.

    The screen is a thin random phase, uniform on [0, 2 pi) per pixel and
    identical at both wavelengths. The optical phase is evaluated only at
    the screen samples; it is far undersampled, which is immaterial because
    the screen randomizes it anyway. The camera images the screen through
    ``aperture``.
    """
    if not sources:
        raise ConfigError("need at least one point source")
    h, w = shape
    y, x = np.mgrid[0:h, 0:w]
    x = (x - w // 2) * pitch
    y = (y - h // 2) * pitch
    rng = np.random.default_rng(derive_seed(seed, _SCREEN_STREAM))
    screen = np.exp(2j * np.pi * rng.random(shape))
    pupil = aperture.pupil(shape)
    out = []
    for lam in (pair.lambda1, pair.lambda2):
        u = np.zeros(shape, complex)
        for s in sources:
            r = np.sqrt((x - s.x) ** 2 + (y - s.y) ** 2 + s.z**2)
            u += s.amplitude * np.exp(2j * np.pi * r / lam) / r
        u *= screen
        out.append(ComplexField(ifft2(fft2(ComplexField(u, pitch)).data * pupil).data, pitch))
    return out[0], out[1]


def render_nlos(
    shape,
    pitch: float,
    sources: Sequence[PointSource],
    pair: WavelengthPair,
    aperture: ApertureSpec,
    ref1: ReferenceBeam,
    ref2: ReferenceBeam,
    cam: CameraSpec,
    seed: int = 0,
) -> Interferogram:
    """Crossed-fringe camera image of the diffuser."""
    e1, e2 = screen_fields(shape, pitch, sources, pair, aperture, seed)
    return render_interferogram(e1, e2, ref1, ref2, cam)


def source_pixel(source: PointSource, shape, pitch: float) -> tuple[float, float]:
    """(row, col) where ``source`` projects onto the plane grid."""
    h, w = shape
    return h // 2 + source.y / pitch, w // 2 + source.x / pitch
