import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swicam.errors import CascadeInfeasibleError, ConfigError, DimensionError
from swicam.field import TWO_PI, ComplexField, PhaseMap, WavelengthPair, synthetic_wavelength, wrap_phase
from swicam.recon import (
    SyntheticField,
    beat_note,
    border_margin,
    border_mask,
    cut_at_largest_gap,
    depth_from_phase,
    guided_unwrap,
    is_wrap_free,
    local_coherence,
    phase_noise,
    reconstruct_depth,
    single_shot,
    smooth_phase,
    unwrap_cascade,
)
from swicam.scene import ApertureSpec, CameraSpec, ReferenceBeam, demo_scene, render_frame, staircase_scene

from conftest import C1, C2, L1


def synth(phase, lam, **kw):
    return SyntheticField(ComplexField(np.exp(1j * np.asarray(phase))), lam, **kw)


def ramp(shape=(32, 32), top=1.0):
    return np.broadcast_to(np.linspace(0, top, shape[1]), shape).copy()


def test_depth_examples():
    d = depth_from_phase(np.full((16, 16), np.nextafter(TWO_PI, 0)), 10e-3, offset="raw")
    assert np.allclose(d.z, 5e-3)
    d = depth_from_phase(np.zeros((16, 16)), 10e-3)
    assert np.all(d.z == 0)


# subnormal phases lose relative precision in any float scaling
@given(arrays(float, (16, 16), elements=st.floats(0, 100, allow_subnormal=False)), st.floats(1e-4, 1.0))
def test_depth_is_linear(phi, lam):
    a = depth_from_phase(phi, lam, offset="raw").z
    b = depth_from_phase(2 * phi, lam, offset="raw").z
    assert np.allclose(b, 2 * a, rtol=1e-12, atol=0)


@given(arrays(float, (16, 16), elements=st.floats(0, TWO_PI, exclude_max=True)), st.floats(1e-4, 1.0))
def test_wrapped_depth_range(phi, lam):
    d = depth_from_phase(phi, lam)
    assert d.z.min() == 0 and d.z.max() <= lam / 2


def test_offset_conventions():
    phi = np.arange(256, dtype=float).reshape(16, 16) / 100 + 1
    mask = np.ones((16, 16), bool)
    mask[0, 0] = False
    zmin = depth_from_phase(phi, 1e-2, mask)
    assert zmin.z[mask].min() == 0 and np.isnan(zmin.z[0, 0])
    zmean = depth_from_phase(phi, 1e-2, mask, offset="zero-mean")
    assert abs(zmean.z[mask].mean()) < 1e-15
    with pytest.raises(ConfigError):
        depth_from_phase(phi, 1e-2, offset="median")
    with pytest.raises(ConfigError):
        depth_from_phase(phi, 0.0)


def test_staircase_step_heights():
    sc = staircase_scene((256, 256), n_steps=4, total_depth=8e-3, roughness_std=50 * L1, seed=2)
    pair = WavelengthPair.from_synthetic(L1, 50e-3)
    img = render_frame(sc, pair, ApertureSpec(0.08), ReferenceBeam(C1), ReferenceBeam(C2),
                       CameraSpec(12, noise_std=0.002, seed=1))
    d = reconstruct_depth(single_shot(img, [C1, C2], pair, 0.08))
    truth = sc.macro_height
    levels = np.unique(truth)
    # the datum is arbitrary, so compare steps on the phase circle, away
    # from the edges where the pupil blurs each jump
    cols = np.arange(256)
    means = []
    for k, z in enumerate(levels):
        sel = (truth == z) & d.mask & (np.abs(cols - 64 * k - 32)[None, :] < 20)
        means.append(np.mean(np.exp(1j * 4 * np.pi * d.z[sel] / pair.synthetic)))
    heights = [np.angle(b * np.conj(a)) * pair.synthetic / (4 * np.pi) for a, b in zip(means, means[1:])]
    assert np.all(np.abs(np.array(heights) - np.diff(levels)) < 0.2e-3)


def test_synthetic_field_validation():
    f = ComplexField(np.ones((16, 16)))
    with pytest.raises(ConfigError):
        SyntheticField(f, 0.0)
    with pytest.raises(ConfigError):
        SyntheticField(f, 1e-2, "triple-shot")
    with pytest.raises(ConfigError):
        SyntheticField(f, 1e-2, "beat-note")
    with pytest.raises(DimensionError):
        SyntheticField(f, 1e-2, mask=np.ones((4, 4), bool))
    a = np.ones((16, 16), complex)
    a[1, 1] = 0
    assert not SyntheticField(ComplexField(a), 1e-2).mask[1, 1]


def test_beat_note_wavelength():
    s1, s2 = synth(np.zeros((16, 16)), 45e-3), synth(np.zeros((16, 16)), 50e-3)
    b = beat_note(s1, s2)
    assert b.synthetic_wavelength == pytest.approx(450e-3)
    assert b.provenance == "beat-note" and b.parents == (45e-3, 50e-3)
    assert b.synthetic_wavelength == synthetic_wavelength(45e-3, 50e-3)
    with pytest.raises(ConfigError):
        beat_note(s1, s1)


@given(st.floats(-0.02, 0.02), st.floats(2e-3, 20e-3), st.floats(1.05, 3.0))
def test_beat_note_phase_follows_depth(z, l1, k):
    l2 = l1 * k
    s1 = synth(np.full((16, 16), 4 * np.pi * z / l1), l1)
    s2 = synth(np.full((16, 16), 4 * np.pi * z / l2), l2)
    b = beat_note(s2, s1)
    got = np.angle(b.field.data[0, 0])
    expect = 4 * np.pi * z / b.synthetic_wavelength
    assert abs(np.angle(np.exp(1j * (got - expect)))) < 1e-6


def test_beat_note_of_wrapped_fields_is_wrap_free():
    n = 512
    sc = demo_scene((n, n), depth_span=40e-3)
    fields = []
    for lam in (9e-3, 10e-3):
        pair = WavelengthPair.from_synthetic(L1, lam)
        img = render_frame(sc, pair, ApertureSpec(0.08), ReferenceBeam(C1), ReferenceBeam(C2), CameraSpec(16, seed=3))
        fields.append(single_shot(img, [C1, C2], pair, 0.08))
    assert not is_wrap_free(fields[0]) and not is_wrap_free(fields[1])
    b = beat_note(fields[0], fields[1])
    assert b.synthetic_wavelength == pytest.approx(90e-3)
    assert is_wrap_free(b)
    truth = 4 * np.pi * sc.macro_height / b.synthetic_wavelength
    assert np.ptp(truth) < TWO_PI
    res = np.angle(b.field.data * np.exp(-1j * truth))[b.mask]
    res = np.angle(np.exp(1j * (res - np.angle(np.mean(np.exp(1j * res))))))
    # 2 pi jumps would show up as residuals near +-pi
    assert np.max(np.abs(res)) < np.pi / 2


def test_guided_unwrap_worked_example():
    lam_w = 10e-3
    true = 4 * np.pi * 6e-3 / lam_w
    wrapped = np.full((16, 16), wrap_phase(true))
    assert wrapped[0, 0] == pytest.approx(1.2566, abs=1e-4)
    out = guided_unwrap(wrapped, np.full((16, 16), 7.54 / 2), 2.0)
    assert np.allclose(out.phase, true)
    assert np.all(out.order == 1)


@given(arrays(float, (8, 8), elements=st.floats(0, 60)), st.floats(1.1, 20))
def test_consistent_pair_unwraps_to_guidance(true, ratio):
    out = guided_unwrap(wrap_phase(true), true / ratio, ratio)
    assert np.allclose(out.phase, true, atol=1e-9)


@given(arrays(float, (8, 8), elements=st.floats(-60, 60)),
       arrays(float, (8, 8), elements=st.floats(-60, 60)), st.floats(1.01, 50))
def test_unwrap_preserves_wrapped_input(wrapped, guidance, ratio):
    out = guided_unwrap(wrapped, guidance, ratio)
    w = wrap_phase(wrapped)
    assert np.array_equal(out.wrap(), w)
    assert out.order.dtype.kind == "i"
    assert np.array_equal(out.phase, w + TWO_PI * out.order)
    drift = np.mod(out.phase - w + np.pi, TWO_PI) - np.pi
    assert np.max(np.abs(drift)) < 1e-12 * max(1.0, np.max(np.abs(out.phase)))


def test_guidance_error_threshold():
    ratio = 5.0
    true = np.linspace(0, 40, 64)
    # the documented bound: a guidance error below pi/ratio is harmless
    for frac, fails in ((0.4, False), (0.6, True)):
        g = true / ratio
        g[10] += frac * (TWO_PI / ratio)
        out = guided_unwrap(wrap_phase(true)[None, :].repeat(16, 0), g[None, :].repeat(16, 0), ratio)
        bad = ~np.isclose(out.phase[0], true)
        assert bad[10] == fails and bad.sum() == int(fails)


def test_guidance_error_threshold_brute_force():
    ratio = 7.0
    true = np.linspace(0, 50, 40)
    for delta in np.linspace(-1, 1, 201) * (TWO_PI / ratio):
        if abs(abs(delta) * ratio - np.pi) < 1e-9:
            continue
        out = guided_unwrap(wrap_phase(true)[None, :].repeat(16, 0), (true / ratio + delta)[None, :].repeat(16, 0),
                            ratio)
        wrong = ~np.isclose(out.phase[0], true)
        assert np.all(wrong == (abs(delta) * ratio > np.pi))


def test_guided_unwrap_errors_and_masks():
    with pytest.raises(ConfigError):
        guided_unwrap(np.zeros((16, 16)), np.zeros((16, 16)), 1.0)
    with pytest.raises(DimensionError):
        guided_unwrap(np.zeros((16, 16)), np.zeros((16, 17)), 2.0)
    v = np.ones((16, 16), bool)
    v[3, 3] = False
    out = guided_unwrap(PhaseMap(np.ones((16, 16)), v), np.full((16, 16), 0.5), 2.0)
    assert not out.valid[3, 3] and out.valid.sum() == 255


def test_guided_unwrap_align_removes_datum():
    rng = np.random.default_rng(3)
    true = np.linspace(0, 30, 64)[None, :].repeat(16, 0)
    # datum difference of pi after scaling, plus a little guidance noise
    g = (true + np.pi + 0.3 * rng.standard_normal(true.shape)) / 3
    plain = guided_unwrap(wrap_phase(true), g, 3.0)
    aligned = guided_unwrap(wrap_phase(true), g, 3.0, align=True)
    k_plain = np.rint((plain.phase - true) / TWO_PI)
    k_aligned = np.rint((aligned.phase - true) / TWO_PI)
    assert len(np.unique(k_plain)) == 2
    assert len(np.unique(k_aligned)) == 1


def test_cut_at_largest_gap():
    phi = np.array([[6.0, 6.2, 0.1, 0.3] * 4] * 16)
    out = cut_at_largest_gap(phi)
    assert np.ptp(out) == pytest.approx(0.3 + TWO_PI - 6.0)
    k = (out - phi) / TWO_PI
    assert np.array_equal(k, np.rint(k)) and set(np.unique(k)) == {0.0, 1.0}


def test_smooth_phase_keeps_turns():
    phi = ramp((32, 64), 40.0)
    out = smooth_phase(phi, 2.0)
    assert np.allclose(out[:, 8:-8], phi[:, 8:-8], atol=1e-6)
    assert smooth_phase(phi, 0) is phi


def test_phase_noise_estimate():
    rng = np.random.default_rng(1)
    phi = ramp((128, 128), 5.0) + 0.05 * rng.standard_normal((128, 128))
    assert phase_noise(phi, np.ones(phi.shape, bool)) == pytest.approx(0.05, rel=0.2)
    assert phase_noise(phi, np.zeros(phi.shape, bool)) == np.inf


def test_cascade_single_wrap_free_field():
    phi = wrap_phase(ramp(top=4.0) + 3.0)
    s = synth(phi, 50e-3)
    res = unwrap_cascade([s])
    assert np.array_equal(res.result.wrap(), s.phase().phase)
    assert res.stages == ()
    assert np.ptp(res.phase) < 4.0 + 1e-9


def test_cascade_infeasible():
    phi = wrap_phase(ramp((64, 256), 30.0))
    with pytest.raises(CascadeInfeasibleError, match="Lambda=0.01"):
        unwrap_cascade([synth(phi, 10e-3)])
    rng = np.random.default_rng(0)
    noisy = synth(ramp((64, 64), 2.0) + 2.0 * rng.standard_normal((64, 64)), 200e-3)
    fine = synth(wrap_phase(ramp((64, 64), 40.0)), 5e-3)
    with pytest.raises(CascadeInfeasibleError, match="guided by 0.2"):
        unwrap_cascade([noisy, fine], max_depth=0.05)
    with pytest.raises(ConfigError):
        unwrap_cascade([fine, fine])
    with pytest.raises(ConfigError):
        unwrap_cascade([])


def test_cascade_synthetic_ladder():
    z = ramp((64, 64), 18e-3)
    fields = [synth(4 * np.pi * z / lam, lam) for lam in (10e-3, 45e-3)]
    res = unwrap_cascade(fields)
    assert res.synthetic_wavelength == 10e-3
    assert [s.guidance_wavelength for s in res.stages] == [45e-3]
    k = np.rint((res.phase - 4 * np.pi * z / 10e-3) / TWO_PI)
    assert np.all(k == k[0, 0])


def test_border_helpers():
    assert border_margin(0.08, 2.0) == 6 + 13
    m = border_mask((20, 30), 3)
    assert m.sum() == 14 * 24
    assert not border_mask((10, 10), 6).any()
    c = local_coherence(np.exp(1j * ramp((32, 32), 1.0)), 2.0)
    assert np.all(c > 0.99)
