import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from ecdiscovery.cubical_ec import (
    ECCurve, auto_sigmas, betti_2d, cell_filtration_values, ec_brute_force, ec_curve_streaming, ec_features,
    estimate_noise_sd, parse_smoothing, smooth_values, standard_thresholds, vectorize,
)
from ecdiscovery.errors import DegenerateFieldError, UnsupportedDimensionError, ValidationError
from ecdiscovery.field_core import Field, make_grid

small_fields = st.one_of(
    arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)), elements=st.integers(-3, 3).map(float)),
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)), elements=st.integers(-2, 2).map(float)),
)


def test_standard_thresholds():
    th = standard_thresholds()
    assert len(th) == 64 and th[0] == 3.0 and th[-1] == -3.0
    assert np.all(np.diff(th) < 0)
    with pytest.raises(ValidationError):
        ec_curve_streaming(np.zeros((3, 3)), [0.0, 1.0])


@settings(max_examples=150, deadline=None)
@given(v=small_fields)
def test_streaming_matches_brute_force_including_ties(v):
    # integer-valued fields force ties between cell values and thresholds
    th = np.arange(3.5, -4.0, -0.5)
    curve = ec_curve_streaming(v, th)
    assert [ec_brute_force(v, t) for t in th] == list(curve.chis)


@settings(max_examples=60, deadline=None)
@given(v=small_fields)
def test_extreme_thresholds(v):
    curve = ec_curve_streaming(v, [v.max() + 1, v.min()])
    assert curve.chis[0] == 0
    assert curve.chis[1] == 1  # the full grid is contractible


@settings(max_examples=60, deadline=None)
@given(mask=arrays(bool, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_betti_oracle(mask):
    b0, b1 = betti_2d(mask)
    # b0 from an independent labeller with the 4-neighbourhood
    assert b0 == ndimage.label(mask)[1]
    assert b0 - b1 == ec_brute_force(mask.astype(float), 0.5)


@settings(max_examples=60, deadline=None)
@given(v=small_fields)
def test_cell_histogram_counts_and_chi(v):
    hist = cell_filtration_values(v)
    n = v.ndim
    # f-vector of the full cubical grid
    from itertools import combinations
    expected = [
        sum(int(np.prod([s - 1 if ax in sub else s for ax, s in enumerate(v.shape)])) for sub in combinations(range(n), d))
        for d in range(n + 1)
    ]
    assert list(hist.counts()) == expected
    for t in (-1.5, 0.0, 0.5):
        assert hist.euler_characteristic(t) == ec_brute_force(v, t)


def test_simple_shapes():
    assert ec_brute_force(np.ones((5, 5)), 0.5) == 1
    ring = np.ones((5, 5))
    ring[2, 2] = 0
    assert ec_brute_force(ring, 0.5) == 0
    assert betti_2d(ring > 0) == (1, 1)
    shell = np.ones((4, 4, 4))
    shell[1:3, 1:3, 1:3] = 0
    assert ec_brute_force(shell, 0.5) == 2  # a hollow cube bounds a void
    two = np.zeros((3, 5))
    two[1, 0] = two[1, 4] = 1
    assert ec_brute_force(two, 0.5) == 2


def test_betti_rejects_3d():
    with pytest.raises(UnsupportedDimensionError):
        betti_2d(np.ones((2, 2, 2), bool))


def test_curve_csv_and_monotone_extremes():
    v = np.random.default_rng(1).normal(size=(10, 10))
    c = ec_curve_streaming(v, standard_thresholds(8, 5, -5))
    assert c.chis[0] == 0 and c.chis[-1] == 1
    lines = c.to_csv().splitlines()
    assert lines[0] == "threshold,chi" and len(lines) == 9


def test_vectorize_step_function():
    curve = ECCurve(np.array([2.0, 1.0, 0.0]), np.array([5, 7, 9]))
    out = vectorize(curve, [3.0, 2.0, 1.5, 1.0, 0.5, -1.0])
    assert list(out) == [5, 5, 5, 7, 7, 9]
    same = vectorize(curve, curve.thresholds)
    assert list(same) == [5, 7, 9]


def test_noise_estimate_and_auto_sigma():
    rng = np.random.default_rng(2)
    t = np.linspace(0, 1, 100)[:, None]
    x = np.linspace(-1, 1, 256)[None, :]
    smooth = np.sin(np.pi * x) * np.exp(-t)
    noisy = smooth + 0.05 * rng.standard_normal(smooth.shape)
    assert estimate_noise_sd(noisy) == pytest.approx(0.05, rel=0.1)
    assert estimate_noise_sd(smooth) < 1e-3
    s_clean = auto_sigmas(smooth)
    s_noisy = auto_sigmas(smooth + 0.3 * rng.standard_normal(smooth.shape))
    assert s_clean[0] == pytest.approx(5.0) and s_clean[1] == pytest.approx(0.8)
    assert s_noisy[1] > s_clean[1]
    assert s_noisy[0] / s_noisy[1] == pytest.approx(6.25)


def test_smoothing_parse_and_apply():
    assert parse_smoothing("auto") == "auto"
    assert parse_smoothing("1.5") == 1.5
    with pytest.raises(ValidationError):
        parse_smoothing(-1)
    v = np.random.default_rng(0).normal(size=(20, 30))
    assert smooth_values(v, 0) is v
    assert smooth_values(v, 2.0).std() < v.std()


def test_ec_features_on_field():
    g = make_grid([16], [(0, 1)], 12)
    rng = np.random.default_rng(3)
    f = Field(g, rng.normal(size=g.shape))
    a = ec_features(f)
    b = ec_features(f.with_values(5 + 3 * f.values))  # invariant to affine rescaling
    assert a.shape == (64,)
    assert np.array_equal(a, b)
    with pytest.raises(DegenerateFieldError):
        ec_features(Field(g, np.zeros(g.shape)))


@settings(max_examples=40, deadline=None)
@given(v=small_fields)
def test_monotone_transform_relabels_thresholds(v):
    th = np.arange(3.5, -4.0, -0.5)
    g = np.tanh  # strictly increasing
    a = ec_curve_streaming(v, th).chis
    b = ec_curve_streaming(g(v), g(th)).chis
    assert np.array_equal(a, b)


def test_resampling_keeps_values_at_shared_thresholds():
    x = np.linspace(-1, 1, 40)
    bump = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / 0.1) + 0.3 * np.exp(-((x[:, None] - 0.6) ** 2 + x[None, :] ** 2) / 0.02)
    coarse = ec_curve_streaming(bump, standard_thresholds(32, 1.5, -0.5))
    fine_grid = standard_thresholds(63, 1.5, -0.5)  # every other knot is a coarse knot
    fine = vectorize(coarse, fine_grid)
    assert np.array_equal(fine[::2], coarse.chis)
    direct = ec_curve_streaming(bump, fine_grid).chis
    assert np.array_equal(direct[::2], coarse.chis)
