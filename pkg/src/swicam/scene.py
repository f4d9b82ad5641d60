"""Forward model: rough scenes, speckled object fields, crossed-fringe images.

The imaging model is deliberately minimal. A rough surface with macroscopic
height ``z`` and microscopic height ``h`` reflects
``r * exp(i 4 pi (z + h) / lambda)``; the lens/aperture acts as a circular
low-pass in the image-plane spectrum, which produces subjective speckle
whose grain size is set by the pupil cutoff. Both wavelengths of one frame
see the same ``h``.

The camera records the incoherent sum of the two single-wavelength
holograms, ``|E1 + R1|^2 + |E2 + R2|^2``: the cross-wavelength beat terms
oscillate far faster than any exposure and are dropped analytically.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import AliasingError, ConfigError, DataError, DimensionError
from .field import ComplexField, WavelengthPair, fft2, frequency_grid, ifft2

VALID_BIT_DEPTHS = (8, 10, 12, 16)

# stream ids for derive_seed; never renumber
_ROUGHNESS_STREAM = 1
_NOISE_STREAM = 2


def derive_seed(seed: int, *keys: int) -> int:
    """Stable child seed for ``(seed, *keys)``.

    Uses :class:`numpy.random.SeedSequence` with ``keys`` as spawn key, so
    frame ``k`` of a sequence gets the same seed regardless of how many
    frames are rendered or in which order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Ground truth for one frame.

    macro_height : (H, W) array of depth in meters.
    roughness_std : std of the microscopic height in meters.
    roughness_corr_len : Gaussian correlation length of that height, pixels.
    reflectivity : amplitude reflectivity in [0, 1], scalar or (H, W).
    fov : side of the square field of view, meters.
    """

    macro_height: np.ndarray
    roughness_std: float = 0.0
    roughness_corr_len: float = 0.0
    reflectivity: np.ndarray | float = 1.0
    fov: float = 66e-3
    seed: int = 0

    def __post_init__(self):
        z = np.array(self.macro_height, dtype=np.float64)
        if z.ndim != 2 or min(z.shape) < 16:
            raise DimensionError(f"macro_height must be 2-D and at least 16x16, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise DataError("macro_height must be finite")
        r = np.broadcast_to(np.asarray(self.reflectivity, dtype=np.float64), z.shape).copy()
        if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
            raise ConfigError("reflectivity must lie in [0, 1]")
        if self.roughness_std < 0 or self.roughness_corr_len < 0:
            raise ConfigError("roughness parameters must be non-negative")
        if not self.fov > 0:
            raise ConfigError(f"fov must be positive, got {self.fov}")
        z.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "macro_height", z)
        object.__setattr__(self, "reflectivity", r)

    @property
    def shape(self) -> tuple[int, int]:
        return self.macro_height.shape

    @property
    def pitch(self) -> float:
        return self.fov / self.shape[1]

    def replace(self, **changes) -> "SceneSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ApertureSpec:
    cutoff: float = 0.08

    def __post_init__(self):
        if not (0 < self.cutoff <= 0.5):
            raise ConfigError(f"aperture cutoff must be in (0, 0.5] cycles/pixel, got {self.cutoff}")

    def pupil(self, shape) -> np.ndarray:
        u, v = frequency_grid(shape)
        return (u**2 + v**2) <= self.cutoff**2


@dataclass(frozen=True)
class ReferenceBeam:
    """Tilted plane wave ``amplitude * exp(i 2 pi (u x + v y))`` on the chip.

    ``amplitude=None`` matches the spatial RMS of the object field it is
    rendered against, which maximizes fringe contrast.
    """

    carrier: tuple[float, float]
    amplitude: Optional[float] = None

    def __post_init__(self):
        u, v = (float(c) for c in self.carrier)
        if abs(u) > 0.5 or abs(v) > 0.5:
            raise ConfigError(f"carrier {self.carrier} exceeds Nyquist")
        if u == 0 and v == 0:
            raise ConfigError("a reference beam needs a non-zero tilt")
        if self.amplitude is not None and not self.amplitude > 0:
            raise ConfigError("reference amplitude must be positive")
        object.__setattr__(self, "carrier", (u, v))

    def wave(self, shape, amplitude: float) -> np.ndarray:
        h, w = shape
        y, x = np.mgrid[0:h, 0:w]
        u, v = self.carrier
        return amplitude * np.exp(2j * np.pi * (u * x + v * y))


@dataclass(frozen=True)
class CameraSpec:
    """Sensor model: additive Gaussian read noise, clipping, quantization.

    ``full_well_scale`` is the intensity mapped to the top code; ``None``
    picks 1.1x the brightest noiseless pixel when rendering. ``noise_std``
    is a fraction of full scale.
    """

    bit_depth: int = 12
    full_well_scale: Optional[float] = None
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.bit_depth not in VALID_BIT_DEPTHS:
            raise ConfigError(f"bit_depth must be one of {VALID_BIT_DEPTHS}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.full_well_scale is not None and not self.full_well_scale > 0:
            raise ConfigError("full_well_scale must be positive")

    @property
    def max_code(self) -> int:
        return 2**self.bit_depth - 1


@dataclass(frozen=True, eq=False)
class Interferogram:
    data: np.ndarray
    camera: CameraSpec = field(default_factory=CameraSpec)
    pitch: float = 1.0

    def __post_init__(self):
        data = np.array(self.data, dtype=np.uint16, copy=True)
        if data.ndim != 2 or min(data.shape) < 16:
            raise DimensionError(f"interferogram must be 2-D and at least 16x16, got {data.shape}")
        if data.max(initial=0) > self.camera.max_code:
            raise DataError("interferogram codes exceed the camera bit depth")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def intensity(self) -> np.ndarray:
        """Codes converted back to field-intensity units."""
        scale = self.camera.full_well_scale or self.camera.max_code
        return self.data.astype(np.float64) * (scale / self.camera.max_code)


def micro_roughness(scene: SceneSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Seeded Gaussian micro-height map with the scene's std and corr. length."""
    if scene.roughness_std == 0:
        return np.zeros(scene.shape)
    if rng is None:
        rng = np.random.default_rng(derive_seed(scene.seed, _ROUGHNESS_STREAM))
    h = rng.standard_normal(scene.shape)
    if scene.roughness_corr_len > 0:
        h = ndimage.gaussian_filter(h, scene.roughness_corr_len, mode="wrap")
    h -= h.mean()
    return h * (scene.roughness_std / h.std())


def object_field(
    scene: SceneSpec,
    wavelength: float,
    aperture: ApertureSpec,
    roughness: Optional[np.ndarray] = None,
) -> ComplexField:
    """Speckled image-plane field of ``scene`` at ``wavelength``.

    Pass the same ``roughness`` (or rely on the scene seed) for both
    wavelengths of one frame.
    """
    if not wavelength > 0:
        raise ConfigError("wavelength must be positive")
    if not isinstance(aperture, ApertureSpec):
        aperture = ApertureSpec(aperture)
    if roughness is None:
        roughness = micro_roughness(scene)
    # mirror-pad so the periodic pupil convolution does not fold the
    # opposite edge of the scene into the border pixels
    pad = pupil_padding(aperture.cutoff)
    path = np.pad(scene.macro_height + roughness, pad, mode="reflect")
    refl = np.pad(scene.reflectivity, pad, mode="reflect")
    surface = refl * np.exp(1j * (4 * np.pi / wavelength) * path)
    spec = fft2(ComplexField(surface, scene.pitch))
    out = ifft2(spec.data * aperture.pupil(surface.shape)).data
    h, w = scene.shape
    return ComplexField(out[pad:pad + h, pad:pad + w], scene.pitch)


def pupil_padding(cutoff: float) -> int:
    """Margin (pixels) covering the bulk of a pupil-limited PSF."""
    return int(np.ceil(2.0 / cutoff))


def expose(intensity: np.ndarray, cam: CameraSpec, pitch: float = 1.0,
           rng: Optional[np.random.Generator] = None) -> Interferogram:
    """Add read noise, clip to full well and quantize."""
    full = cam.full_well_scale
    if full is None:
        full = 1.1 * float(intensity.max())
        if full <= 0:
            full = 1.0
    if rng is None:
        rng = np.random.default_rng(derive_seed(cam.seed, _NOISE_STREAM))
    signal = intensity / full
    if cam.noise_std > 0:
        signal = signal + cam.noise_std * rng.standard_normal(signal.shape)
    codes = np.rint(np.clip(signal, 0.0, 1.0) * cam.max_code)
    return Interferogram(codes.astype(np.uint16), dataclasses.replace(cam, full_well_scale=full), pitch)


def render_interferogram(
    e1: Optional[ComplexField],
    e2: Optional[ComplexField],
    ref1: Optional[ReferenceBeam],
    ref2: Optional[ReferenceBeam],
    cam: CameraSpec,
    rng: Optional[np.random.Generator] = None,
) -> Interferogram:
    """Camera image of two object fields, each beating with its own reference.

    Passing ``None`` for ``e2``/``ref2`` renders a single-reference
    (double-shot style) hologram.
    """
    if ref1 is not None and ref2 is not None and ref1.carrier == ref2.carrier:
        raise AliasingError(f"identical carriers {ref1.carrier}: the two sidebands would coincide")
    if e1 is None and e2 is None:
        raise DataError("need at least one object field")
    ref_field = e1 if e1 is not None else e2
    if e1 is not None and e2 is not None and e1.shape != e2.shape:
        raise DimensionError(f"field shapes differ: {e1.shape} vs {e2.shape}")
    shape, pitch = ref_field.shape, ref_field.pitch

    intensity = np.zeros(shape)
    for f, r in ((e1, ref1), (e2, ref2)):
        e = f.data if f is not None else np.zeros(shape, complex)
        if r is None:
            intensity += np.abs(e) ** 2
            continue
        a = r.amplitude
        if a is None:
            a = float(np.sqrt(np.mean(np.abs(e) ** 2)))
            if a == 0:
                raise ConfigError("cannot match reference amplitude to an all-zero field")
        intensity += np.abs(e + r.wave(shape, a)) ** 2
    return expose(intensity, cam, pitch, rng)


def render_frame(
    scene: SceneSpec,
    pair: WavelengthPair,
    aperture: ApertureSpec,
    ref1: ReferenceBeam,
    ref2: Optional[ReferenceBeam],
    cam: CameraSpec,
    which: Optional[int] = None,
) -> Interferogram:
    """One camera frame of ``scene``.

    ``which=None`` renders the crossed-fringe (both wavelengths) image;
    ``which=0`` or ``1`` renders a single-reference hologram of that
    wavelength against ``ref1``.
    """
    h = micro_roughness(scene)
    lams = (pair.lambda1, pair.lambda2)
    if which is None:
        if ref2 is None:
            raise ConfigError("a crossed-fringe frame needs two reference beams")
        e1 = object_field(scene, lams[0], aperture, h)
        e2 = object_field(scene, lams[1], aperture, h)
        return render_interferogram(e1, e2, ref1, ref2, cam)
    if which not in (0, 1):
        raise ConfigError(f"wavelength index must be 0 or 1, got {which}")
    e = object_field(scene, lams[which], aperture, h)
    return render_interferogram(e, None, ref1, None, cam)


SEQUENCE_MODES = ("single-shot", "double-shot")


def frame_seeds(scene_seed: int, cam_seed: int, k: int, decorrelate: bool) -> tuple[int, int]:
    """Surface and sensor seeds of frame ``k``.

    Frame 0 keeps the base seeds. Later frames get derived seeds; without
    ``decorrelate`` the surface seed stays fixed (frozen speckle).
    """
    if k == 0:
        return scene_seed, cam_seed
    surface = derive_seed(scene_seed, k) if decorrelate else scene_seed
    return surface, derive_seed(cam_seed, k)


def render_frame_sequence(
    scene: SceneSpec,
    motion: Sequence[Optional[Callable[[SceneSpec], SceneSpec]]],
    pair: WavelengthPair,
    aperture: ApertureSpec,
    ref1: ReferenceBeam,
    ref2: Optional[ReferenceBeam],
    cam: CameraSpec,
    decorrelate: bool = True,
    mode: str = "single-shot",
    jobs: int = 1,
) -> list[Interferogram]:
    """Render one frame per entry of ``motion``.

    Each entry maps the base scene to that frame's scene (``None`` is the
    identity). In ``double-shot`` mode even frames hold ``lambda1`` and odd
    frames ``lambda2``, both against ``ref1``. Frames are independent and
    seeded per index, so ``jobs > 1`` gives identical output.
    """
    if not len(motion):
        raise ConfigError("motion script must have at least one frame")
    if mode not in SEQUENCE_MODES:
        raise ConfigError(f"mode must be one of {SEQUENCE_MODES}")

    def one(k):
        move = motion[k]
        s = move(scene) if move is not None else scene
        s_seed, c_seed = frame_seeds(scene.seed, cam.seed, k, decorrelate)
        s = s.replace(seed=s_seed)
        c = dataclasses.replace(cam, seed=c_seed)
        which = None if mode == "single-shot" else k % 2
        return render_frame(s, pair, aperture, ref1, ref2, c, which)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, range(len(motion))))
    return [one(k) for k in range(len(motion))]


# motion scripts: callables SceneSpec -> SceneSpec

def piston(dz: float) -> Callable[[SceneSpec], SceneSpec]:
    def move(s: SceneSpec) -> SceneSpec:
        return s.replace(macro_height=s.macro_height + dz)
    return move


def shift_layer(layer: np.ndarray, dx: int, layer_reflectivity: Optional[np.ndarray] = None):
    """Add ``layer`` (zero outside the moving part) shifted by ``dx`` columns.

    Where the shifted layer is non-zero its reflectivity replaces the
    scene's if given.
    """
    layer = np.asarray(layer, float)

    def move(s: SceneSpec) -> SceneSpec:
        moved = np.roll(layer, dx, axis=1)
        refl = s.reflectivity
        if layer_reflectivity is not None:
            refl = np.where(moved != 0, np.roll(layer_reflectivity, dx, axis=1), refl)
        return s.replace(macro_height=s.macro_height + moved, reflectivity=refl)
    return move


def pendulum_displacements(n_frames: int, amplitude_px: float, period_frames: float) -> list[int]:
    return [int(round(amplitude_px * np.sin(2 * np.pi * k / period_frames))) for k in range(n_frames)]


def pendulum_motion(layer: np.ndarray, n_frames: int, amplitude_px: float = 20.0,
                    period_frames: float = 10.0, layer_reflectivity=None) -> list:
    """Left-right swing of a height layer (the "bob") over the background."""
    return [shift_layer(layer, dx, layer_reflectivity)
            for dx in pendulum_displacements(n_frames, amplitude_px, period_frames)]


# scene builders

def _coords(shape, fov):
    h, w = shape
    pitch = fov / w
    y, x = np.mgrid[0:h, 0:w]
    return x * pitch, y * pitch


def plane_scene(shape=(512, 512), tilt=(0.0, 0.0), offset: float = 0.0, fov: float = 66e-3,
                roughness_std: float = 0.0, roughness_corr_len: float = 1.0, seed: int = 0,
                reflectivity=1.0) -> SceneSpec:
    """Tilted plane ``z = offset + tx * x + ty * y`` (slopes in m/m)."""
    x, y = _coords(shape, fov)
    z = offset + tilt[0] * x + tilt[1] * y
    return SceneSpec(z, roughness_std, roughness_corr_len, reflectivity, fov, seed)


def staircase_scene(shape=(512, 512), n_steps: int = 4, total_depth: float = 8e-3, fov: float = 66e-3,
                    roughness_std: float = 0.0, roughness_corr_len: float = 1.0, seed: int = 0) -> SceneSpec:
    """Equal steps along x; step ``k`` sits at ``k * total_depth / (n_steps - 1)``."""
    if n_steps < 2:
        raise ConfigError("a staircase needs at least two steps")
    h, w = shape
    step = np.minimum((np.arange(w) * n_steps) // w, n_steps - 1)
    z = np.broadcast_to(step * (total_depth / (n_steps - 1)), shape)
    return SceneSpec(z, roughness_std, roughness_corr_len, 1.0, fov, seed)


def demo_scene(shape=(512, 512), depth_span: float = 20e-3, fov: float = 66e-3,
               roughness_std: float = 50 * 850e-9, roughness_corr_len: float = 1.0, seed: int = 1,
               background_reflectivity: float = 0.1) -> SceneSpec:
    """Elliptical bust on a tilted backdrop, scaled to ``depth_span``.

    A Gaussian dome plus a linear tilt; the dome region is fully
    reflective, the backdrop dim.
    """
    h, w = shape
    x, y = _coords(shape, fov)
    u = x / fov - 0.5
    v = y / (h * fov / w) - 0.5
    dome = np.exp(-(u**2 / (2 * 0.18**2) + v**2 / (2 * 0.24**2)))
    z = 6.0 * (x / fov) + 14.0 * dome
    z = (z - z.min()) * (depth_span / (z.max() - z.min()))
    refl = np.where((u / 0.36) ** 2 + (v / 0.44) ** 2 < 1.0, 1.0, background_reflectivity)
    return SceneSpec(z, roughness_std, roughness_corr_len, refl, fov, seed)


def speckle_size(intensity: np.ndarray) -> float:
    """Speckle grain area (pixels) from the autocorrelation of intensity.

    Area of the region where the normalized intensity autocovariance
    exceeds 1/2.
    """
    i = np.asarray(intensity, float)
    i = i - i.mean()
    spec = np.abs(np.fft.fft2(i)) ** 2
    ac = np.fft.fftshift(np.real(np.fft.ifft2(spec)))
    ac /= ac.max()
    labels, _ = ndimage.label(ac > 0.5)
    r0, c0 = ac.shape[0] // 2, ac.shape[1] // 2
    return float(np.sum(labels == labels[r0, c0]))
