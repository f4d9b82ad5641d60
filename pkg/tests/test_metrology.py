import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swicam.errors import ConfigError, DegenerateFitError
from swicam.field import TWO_PI, ComplexField, WavelengthPair
from swicam.metrology import (
    MIN_POINTS,
    TABLE_HEADER,
    PrecisionReport,
    PrecisionRun,
    Roi,
    centred_depth,
    default_roi,
    fit_plane,
    loglog_slope,
    plane_residuals,
    precision,
    precision_table,
    table_rows,
)
from swicam.recon import DepthMap, SyntheticField, depth_from_phase
from swicam.scene import ApertureSpec, CameraSpec, ReferenceBeam, plane_scene, render_frame

from conftest import C1, C2, L1

FULL = Roi(0, 0, 64, 64)


def plane(a, b, c, shape=(64, 64)):
    y, x = np.mgrid[0:shape[0], 0:shape[1]]
    return a * x + b * y + c


def test_exact_plane():
    coef = fit_plane(plane(2, 3, 5), FULL)
    assert np.allclose(coef, (2, 3, 5), atol=1e-10, rtol=0)


def test_roi_offsets_use_image_coordinates():
    coef = fit_plane(plane(2, 3, 5), Roi(10, 20, 30, 25))
    assert np.allclose(coef, (2, 3, 5), atol=1e-9, rtol=0)


def test_noisy_plane_within_confidence():
    # Monte Carlo: the slope estimate stays within 4 standard errors
    y, x = np.mgrid[0:64, 0:64]
    sx = 1.0 / np.sqrt(np.sum((x - x.mean()) ** 2))
    for seed in range(20):
        rng = np.random.default_rng(seed)
        z = plane(0.2, -0.1, 3) + rng.standard_normal((64, 64))
        a, b, c = fit_plane(z, FULL)
        assert abs(a - 0.2) < 4 * sx and abs(b + 0.1) < 4 * sx
        r = plane_residuals(z, FULL)
        assert abs(r.mean()) < 1e-12 * np.ptp(z)


def test_degenerate_fits():
    z = np.full((64, 64), np.nan)
    with pytest.raises(DegenerateFitError):
        fit_plane(z, FULL)
    z = np.full((64, 64), np.nan)
    z[5, :] = 1.0  # one row: collinear
    with pytest.raises(DegenerateFitError):
        fit_plane(z, FULL)
    z = plane(1, 1, 1)
    mask = np.zeros(z.shape, bool)
    mask[:9, :9] = True  # 81 points < MIN_POINTS
    with pytest.raises(DegenerateFitError):
        precision(DepthMap(z, mask), FULL)
    assert MIN_POINTS == 100


def test_simulator_truth_plane_is_flat():
    sc = plane_scene((128, 128), tilt=(0.03, -0.02))
    d = DepthMap(sc.macro_height, np.ones(sc.shape, bool))
    r = precision(d, default_roi(sc.shape, sc.pitch))
    assert r.delta_z < 1e-9  # 1e-6 mm


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-10, 10), st.integers(0, 1000))
def test_precision_ignores_added_plane(a, b, c, seed):
    z = np.random.default_rng(seed).standard_normal((64, 64)) * 1e-3
    d1 = precision(z, FULL).delta_z
    d2 = precision(z + plane(a, b, c) * 1e-3, FULL).delta_z
    assert d2 == pytest.approx(d1, rel=1e-6, abs=1e-12)


def test_precision_linear_in_phase_noise():
    rng = np.random.default_rng(7)
    base = plane(0.01, 0.02, 1.0, (128, 128))
    noise = rng.standard_normal(base.shape)
    sig = np.geomspace(0.01, 0.1, 8)
    dz = [precision(depth_from_phase(base + s * noise, 10e-3, offset="raw"), Roi(0, 0, 128, 128)).delta_z
          for s in sig]
    r = np.corrcoef(sig, dz)[0, 1]
    assert r**2 > 0.99


def test_population_std():
    z = plane(0, 0, 0, (10, 10)).astype(float)
    z[::2] += 1.0
    rep = precision(z, Roi(0, 0, 10, 10))
    r = plane_residuals(z, Roi(0, 0, 10, 10))
    assert rep.delta_z == pytest.approx(np.sqrt(np.mean(r**2)))
    assert rep.n_points == 100


def test_roi_helpers():
    r = Roi.parse("1:2:30:40")
    assert (r.row, r.col, r.height, r.width) == (1, 2, 30, 40)
    assert Roi.parse(str(r)) == r
    with pytest.raises(ConfigError):
        Roi.parse("1:2:3")
    with pytest.raises(ConfigError):
        Roi(0, 0, 0, 5)
    with pytest.raises(ConfigError):
        Roi(0, 0, 100, 5).check((64, 64))
    d = default_roi((512, 512), 66e-3 / 512)
    assert d.height == d.width == round(23e-3 / (66e-3 / 512))
    assert d.row == (512 - d.height) // 2


def test_report_validation():
    with pytest.raises(ConfigError):
        PrecisionReport(1e-3, "triple", FULL, 0.1, 100)
    with pytest.raises(ConfigError):
        PrecisionReport(1e-3, "single-shot", FULL, -0.1, 100)


def test_centred_depth_survives_seam():
    rng = np.random.default_rng(0)
    phi = np.mod(0.05 * rng.standard_normal((64, 64)), TWO_PI)  # straddles 0/2 pi
    syn = SyntheticField(ComplexField(np.exp(1j * phi)), 10e-3)
    d = centred_depth(syn, FULL)
    assert precision(d, FULL).delta_z == pytest.approx(0.05 * 10e-3 / (4 * np.pi), rel=0.1)


def test_table_layout_and_slope():
    assert TABLE_HEADER == ("lambda_syn_mm", "mode", "delta_z_mm", "n_points", "roi")
    rows = table_rows([PrecisionReport(40e-3, "single-shot", FULL, 2e-3, 4096)])
    assert rows == [("40", "single-shot", "2", "4096", "0:0:64:64")]
    assert loglog_slope([1, 10, 100], [2, 20, 200]) == pytest.approx(1.0)
    assert precision_table([]) == []


def _runs(n=256, noise=0.05, lams=(10e-3, 1e-3)):
    sc = plane_scene((n, n), roughness_std=2 * L1, seed=5)
    ap = ApertureSpec(0.08)
    runs = []
    for lam in lams:
        pair = WavelengthPair.from_synthetic(L1, lam)
        img = render_frame(sc, pair, ap, ReferenceBeam(C1), ReferenceBeam(C2), CameraSpec(12, noise_std=noise, seed=9))
        runs.append(PrecisionRun(pair, "single-shot", (img,), (C1, C2), 0.08))
    return runs


def test_ratio_between_wavelengths():
    reps = precision_table(_runs())
    ratio = reps[0].delta_z / reps[1].delta_z
    assert 5 <= ratio <= 20


def test_parallel_table_matches_serial():
    runs = _runs(n=128)
    a = precision_table(runs)
    b = precision_table(runs, jobs=2)
    assert [r.delta_z for r in a] == [r.delta_z for r in b]
