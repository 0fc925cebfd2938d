import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixcue.forward_model import (
    Ellipse,
    NoiseSpec,
    PhantomSpec,
    SamplingMask,
    add_complex_noise,
    center_lines,
    dft2_unitary,
    generate_phantom,
    idft2_unitary,
    insert_anomaly,
    make_mask_equidistant,
    make_mask_random,
    random_phantom_spec,
    undersample,
    zero_filled,
)


def direct_dft2(x):
    """Double-sum orthonormal DFT, DC moved to the centre."""
    n = x.shape[0]
    k = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(k, k) / n)
    out = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            out[a, b] = np.sum(x * np.outer(w[a], w[b]))
    return np.fft.fftshift(out / n)


def test_dft_zero_image():
    assert np.all(dft2_unitary(np.zeros((8, 8))) == 0)


def test_dft_impulse_is_flat():
    x = np.zeros((8, 8))
    x[0, 0] = 1.0
    np.testing.assert_allclose(dft2_unitary(x), np.full((8, 8), 1 / 8), atol=1e-15)


def test_dft_matches_direct_sum_and_preserves_energy():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    y = dft2_unitary(x)
    np.testing.assert_allclose(y, direct_dft2(x), atol=1e-10)
    ratio = np.sum(np.abs(direct_dft2(x)) ** 2) / np.sum(np.abs(x) ** 2)
    assert abs(ratio - 1) <= 1e-10
    assert abs(np.sum(np.abs(y) ** 2) / np.sum(np.abs(x) ** 2) - 1) <= 1e-10


def test_idft_examples():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(32, 32))
    assert np.max(np.abs(idft2_unitary(dft2_unitary(x)) - x)) <= 1e-9
    assert np.all(idft2_unitary(np.zeros((8, 8), complex)) == 0)
    impulse = np.zeros((8, 8))
    impulse[0, 0] = 1
    np.testing.assert_allclose(idft2_unitary(np.full((8, 8), 1 / 8)), impulse, atol=1e-15)


def test_adjointness():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    b = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    lhs = np.vdot(dft2_unitary(a), b)
    rhs = np.vdot(a, idft2_unitary(b))
    assert abs(lhs - rhs) <= 1e-9 * abs(lhs)


@pytest.mark.parametrize("bad", [np.zeros((4, 6)), np.full((4, 4), np.nan), np.zeros(4)])
def test_dft_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        dft2_unitary(bad)


# --- masks -------------------------------------------------------------------


def test_equidistant_examples():
    assert make_mask_equidistant(16, 1, 0).sampled == tuple(range(16))
    assert make_mask_equidistant(16, 4, 0.25).sampled == (6, 7, 8, 9)


def test_equidistant_256():
    m = make_mask_equidistant(256, 4, 0.08)
    center = set(range(118, 138))
    assert center <= set(m.sampled)
    assert len(center) == 20
    extra = sorted(set(m.sampled) - center)
    assert len(extra) == 44
    assert len(m) == 64
    # strides over the non-centre lines differ by at most one line
    others = [i for i in range(256) if i not in center]
    pos = [others.index(i) for i in extra]
    gaps = np.diff(pos)
    assert gaps.max() - gaps.min() <= 1


def test_equidistant_is_deterministic():
    assert make_mask_equidistant(64, 4, 0.08) == make_mask_equidistant(64, 4, 0.08)


def test_random_mask_examples():
    assert make_mask_random(64, 4, 0.08, 7) == make_mask_random(64, 4, 0.08, 7)
    assert make_mask_random(32, 1, 0.1, 123).sampled == tuple(range(32))
    m = make_mask_random(256, 4, 0.08, 5)
    assert len(m) == 64
    assert set(range(118, 138)) <= set(m.sampled)


def test_random_mask_depends_on_seed():
    assert make_mask_random(64, 4, 0.08, 1) != make_mask_random(64, 4, 0.08, 2)


def test_center_only_when_budget_is_exceeded():
    m = make_mask_random(16, 8, 0.5, 0)
    assert m.sampled == tuple(range(4, 12))


@pytest.mark.parametrize("accel,frac", [(0.5, 0.1), (4, -0.1), (4, 1.5)])
def test_mask_rejects_bad_arguments(accel, frac):
    with pytest.raises(ValueError):
        make_mask_equidistant(16, accel, frac)
    with pytest.raises(ValueError):
        make_mask_random(16, accel, frac, 0)


def test_center_lines_tie_rule():
    assert center_lines(16, 0.25).tolist() == [6, 7, 8, 9]
    assert center_lines(16, 5 / 16).tolist() == [6, 7, 8, 9, 10]


@settings(max_examples=60, deadline=None)
@given(
    n=st.sampled_from([16, 32, 64, 100]),
    accel=st.floats(1.0, 10.0),
    frac=st.floats(0.0, 0.5),
    seed=st.integers(0, 2**32),
)
def test_mask_generator_counts(n, accel, frac, seed):
    center = set(center_lines(n, frac).tolist())
    expected = max(len(center), math.floor(n / accel))
    for m in (make_mask_equidistant(n, accel, frac), make_mask_random(n, accel, frac, seed)):
        assert len(m) == expected
        assert center <= set(m.sampled)


def test_sampling_mask_validation():
    with pytest.raises(ValueError):
        SamplingMask(4, (0, 0))
    with pytest.raises(ValueError):
        SamplingMask(4, (4,))


def test_undersample_examples():
    rng = np.random.default_rng(2)
    k = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    np.testing.assert_array_equal(undersample(k, SamplingMask(4, range(4))), k)
    assert np.all(undersample(k, SamplingMask(4, ())) == 0)
    out = undersample(k, SamplingMask(4, (0,)))
    np.testing.assert_array_equal(out[0], k[0])
    assert np.all(out[1:] == 0)


def test_undersample_idempotent_and_checks_size():
    rng = np.random.default_rng(4)
    k = rng.normal(size=(16, 16)) + 0j
    m = make_mask_random(16, 3, 0.1, 9)
    once = undersample(k, m)
    np.testing.assert_array_equal(undersample(once, m), once)
    with pytest.raises(ValueError):
        undersample(k, make_mask_random(32, 3, 0.1, 9))


# --- noise -----------------------------------------------------------------


def test_noise_zero_sigma_is_identity():
    k = np.ones((8, 8), complex)
    np.testing.assert_array_equal(add_complex_noise(k, NoiseSpec(0.0, 3)), k)


def test_noise_is_reproducible():
    k = np.zeros((16, 16), complex)
    a = add_complex_noise(k, NoiseSpec(0.1, 11))
    b = add_complex_noise(k, NoiseSpec(0.1, 11))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, add_complex_noise(k, NoiseSpec(0.1, 12)))


def test_noise_statistics():
    k = np.zeros((256, 256), complex)
    d = add_complex_noise(k, NoiseSpec(0.01, 0)) - k
    assert abs(np.std(d.real) - 0.01) <= 0.05 * 0.01
    assert abs(np.std(d.imag) - 0.01) <= 0.05 * 0.01
    assert abs(np.mean(d.real)) < 4 * 0.01 / 256


def test_noise_rejects_negative_sigma():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


# --- zero filling ------------------------------------------------------------


def test_zero_filled_examples():
    x = generate_phantom(random_phantom_spec(32, 1))
    full = SamplingMask(32, range(32))
    assert np.max(np.abs(zero_filled(undersample(dft2_unitary(x), full)) - x)) <= 1e-9
    assert np.all(zero_filled(np.zeros((8, 8), complex)) == 0)


def test_zero_filled_half_mask_aliases():
    x = np.real(generate_phantom(random_phantom_spec(32, 2)))
    half = SamplingMask(32, range(0, 32, 2))
    y = undersample(direct_dft2(x), half)
    # dense inverse DFT as the oracle
    n = 32
    kk = np.arange(n)
    w = np.exp(2j * np.pi * np.outer(kk, kk) / n) / math.sqrt(n)
    oracle = w @ np.fft.ifftshift(y) @ w
    z = zero_filled(y)
    np.testing.assert_allclose(z, oracle, atol=1e-10)
    assert np.sum(np.abs(z) ** 2) <= np.sum(np.abs(x) ** 2)
    assert np.max(np.abs(z - x)) > 0.05


# --- phantoms ----------------------------------------------------------------


def test_empty_phantom_is_zero():
    assert np.all(generate_phantom(PhantomSpec(16)) == 0)


def test_single_ellipse_phantom():
    e = Ellipse((0.5, 0.5), (0.25, 0.25), 0.0, 0.8)
    img = generate_phantom(PhantomSpec(32, (e,)))
    inside = e.inside(32)
    assert inside[16, 16]
    np.testing.assert_allclose(img[inside], 0.8)
    assert np.all(img[~inside] == 0)
    assert np.all(np.imag(img) == 0)


def test_additive_overlap_is_clamped():
    a = Ellipse((0.45, 0.5), (0.2, 0.2), 0.0, 0.7, "add")
    b = Ellipse((0.55, 0.5), (0.2, 0.2), 0.0, 0.6, "add")
    img = np.real(generate_phantom(PhantomSpec(32, (a, b))))
    both = a.inside(32) & b.inside(32)
    assert both.any()
    assert np.all(img[both] == 1.0)
    np.testing.assert_allclose(img[a.inside(32) & ~b.inside(32)], 0.7)


def test_phantom_spec_json_roundtrip():
    spec = random_phantom_spec(32, 5, "flair")
    spec = PhantomSpec(spec.size, spec.ellipses, spec.contrast_profile, Ellipse((0.5, 0.5), (0.05, 0.04)), 0.1)
    assert PhantomSpec.from_dict(spec.to_dict()) == spec


def test_phantom_range_and_contrast_monotone():
    spec = random_phantom_spec(64, 3, "t1")
    base = np.real(generate_phantom(spec, 3))
    assert base.min() >= 0 and base.max() <= 1
    for profile in ("t2", "flair", "pd"):
        alt = np.real(generate_phantom(PhantomSpec(64, spec.ellipses, profile, texture=spec.texture), 3))
        order = np.argsort(base, axis=None, kind="stable")
        assert np.all(np.diff(alt.ravel()[order]) >= -1e-12)


def test_phantom_validation():
    with pytest.raises(ValueError):
        PhantomSpec(15)
    with pytest.raises(ValueError):
        PhantomSpec(16, contrast_profile="nope")
    with pytest.raises(ValueError):
        Ellipse((0.5, 0.5), (0.1, 0.1), blend="multiply")


# --- anomalies -----------------------------------------------------------------


def test_anomaly_outside_image_is_noop():
    img = np.full((16, 16), 0.3)
    out = insert_anomaly(img, Ellipse((3.0, 3.0), (0.1, 0.1), 0.0, 1.0))
    np.testing.assert_array_equal(out, img)


def test_anomaly_same_intensity_is_noop():
    img = np.full((16, 16), 0.3)
    out = insert_anomaly(img, Ellipse((0.5, 0.5), (0.2, 0.2), 0.0, 0.3))
    np.testing.assert_array_equal(out, img)


def test_anomaly_changes_exactly_the_rasterized_interior():
    n = 64
    a = math.sqrt(0.02 / math.pi)
    e = Ellipse((0.4, 0.55), (a * 1.2, a / 1.2), 0.3, 1.0)
    out = insert_anomaly(np.full((n, n), 0.3), e)
    # brute-force rasterization, one pixel centre at a time
    count = 0
    c, s = math.cos(0.3), math.sin(0.3)
    for r in range(n):
        for col in range(n):
            dx, dy = (col + 0.5) / n - 0.4, (r + 0.5) / n - 0.55
            u = (dx * c + dy * s) / (a * 1.2)
            v = (-dx * s + dy * c) / (a / 1.2)
            count += u * u + v * v <= 1
    assert np.count_nonzero(out != 0.3) == count
    assert abs(count / n**2 - 0.02) < 0.005
