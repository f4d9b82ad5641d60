"""8-bit PNG rendering of phase, amplitude and depth maps."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Optional

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .errors import ConfigError, DataError
from .field import TWO_PI, PhaseMap
from .gridio import atomic_write_bytes, atomic_write_text
from .recon import DepthMap, UnwrapResult

NORMALIZATIONS = ("minmax", "fixed")


def _values_and_mask(data, mask=None):
    if isinstance(data, DepthMap):
        return data.z, data.mask if mask is None else mask & data.mask
    if isinstance(data, (PhaseMap, UnwrapResult)):
        return np.asarray(data.phase, float), np.asarray(data.valid, bool)
    v = np.asarray(data, dtype=np.float64)
    if np.iscomplexobj(v):
        raise ConfigError("export a real map (phase, amplitude or depth), not complex data")
    m = np.isfinite(v) if mask is None else (np.asarray(mask, bool) & np.isfinite(v))
    return v, m


def render_rgb(data, colormap: str = "gray", normalization: str = "minmax",
               vmin: Optional[float] = None, vmax: Optional[float] = None, mask=None):
    """Colour-mapped uint8 RGB image plus the ``(vmin, vmax)`` actually used.

    ``fixed`` maps ``[vmin, vmax]`` onto the colormap (values outside are
    clipped); ``minmax`` takes the range from the valid pixels. Masked
    pixels are black.
    """
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")
    values, valid = _values_and_mask(data, mask)
    if values.ndim != 2:
        raise ConfigError("can only export 2-D maps")
    if not valid.any():
        raise DataError("every pixel is masked; nothing to export")
    if normalization == "minmax":
        lo, hi = float(values[valid].min()), float(values[valid].max())
    else:
        if vmin is None or vmax is None:
            raise ConfigError("fixed normalization needs vmin and vmax")
        lo, hi = float(vmin), float(vmax)
        if not hi > lo:
            raise ConfigError("vmax must exceed vmin")
    span = hi - lo
    t = np.zeros(values.shape) if span == 0 else (np.where(valid, values, lo) - lo) / span
    try:
        cmap = colormaps[colormap]
    except KeyError:
        raise ConfigError(f"unknown colormap {colormap!r}") from None
    # 256-entry lookup, so equal inputs give equal bytes on every platform
    lut = (cmap(np.linspace(0.0, 1.0, 256))[:, :3] * 255.0 + 0.5).astype(np.uint8)
    idx = np.clip(np.rint(np.clip(t, 0.0, 1.0) * 255.0), 0, 255).astype(np.intp)
    rgb = lut[idx]
    rgb[~valid] = 0
    return rgb, (lo, hi)


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb)).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def export_png(data, path, colormap: str = "gray", normalization: str = "minmax",
               vmin: Optional[float] = None, vmax: Optional[float] = None, mask=None) -> Path:
    """Write ``path`` (PNG) and ``path + '.txt'`` recording the normalization."""
    rgb, (lo, hi) = render_rgb(data, colormap, normalization, vmin, vmax, mask)
    path = Path(path)
    atomic_write_bytes(path, png_bytes(rgb))
    sidecar = (
        f"normalization={normalization}\n"
        f"vmin={lo!r}\n"
        f"vmax={hi!r}\n"
        f"colormap={colormap}\n"
        "masked=black\n"
    )
    atomic_write_text(path.with_name(path.name + ".txt"), sidecar)
    return path


def export_phase_png(phase, path, colormap: str = "twilight", mask=None) -> Path:
    """Wrapped phase on a cyclic colormap over the fixed range [0, 2 pi)."""
    return export_png(phase, path, colormap, "fixed", 0.0, TWO_PI, mask)
