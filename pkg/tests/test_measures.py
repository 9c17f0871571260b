import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from psys.errors import EnvelopeError, MeasureError, SignedMeasureError
from psys.measures import (
    Box,
    ExponentialMeasure,
    FiniteMixture,
    GaussianMeasure,
    PolyExponential,
    SignedMass,
    SubspaceExponential,
    density,
    differentiate_poly,
    mass_on_box,
    measure_from_json,
    membership_E,
    sample_on_box,
)

coord = st.floats(-3, 3, allow_nan=False)


def test_density_examples():
    assert density(ExponentialMeasure([0.0, 0.0]), [3.0, -2.0]) == 1.0
    assert_allclose(density(ExponentialMeasure([1.0, 0.0]), [math.log(2), 7.0]), 0.5)
    assert_allclose(density(PolyExponential([0.0], {(3,): 1.0}, signed=True), [2.0]), 8.0)


def test_subspace_density_off_subspace_is_zero():
    m = SubspaceExponential([[1.0, 0.0]], [1.0, 0.0])
    assert m.density([0.0, 1.0]) == 0.0
    assert_allclose(m.density([1.0, 0.0]), math.exp(-1))
    assert_allclose(m.surface_density([1.0]), math.exp(-1))


def test_mass_examples():
    assert_allclose(mass_on_box(ExponentialMeasure([0.0, 0.0]), Box([0, 0], [2, 2])), 4.0)
    for B in (1.0, 5.0, 20.0):
        assert_allclose(mass_on_box(ExponentialMeasure([1.0]), Box([0], [B])), 1 - math.exp(-B))
    assert_allclose(mass_on_box(PolyExponential([0.0], {(2,): 1.0}), Box([-1], [1])), 2 / 3)


@pytest.mark.parametrize(
    "measure",
    [
        PolyExponential([0.5], {(2,): 1.0, (0,): 0.3}),
        PolyExponential([0.5, -0.2], {(2, 1): 1.0, (0, 0): 2.0}, signed=True),
        ExponentialMeasure([0.3, -1.0], 2.0),
    ],
    ids=["poly1d", "poly2d", "exp2d"],
)
def test_mass_matches_quadrature(measure):
    box = Box([-1.0] * measure.dim, [1.5] * measure.dim)
    f = lambda *x: measure.density(np.array(x[::-1]))  # noqa: E731
    ranges = [(lo, hi) for lo, hi in zip(box.lower, box.upper)]
    if measure.dim == 1:
        ref = integrate.quad(f, *ranges[0])[0]
    else:
        ref = integrate.dblquad(f, *ranges[0], *ranges[1])[0]
    m = mass_on_box(measure, box)
    assert_allclose(m.signed if isinstance(m, SignedMass) else m, ref, rtol=1e-9)


def test_signed_mass_returns_total_variation():
    m = mass_on_box(PolyExponential([0.0], {(3,): 1.0}, signed=True), Box([-1], [2]))
    assert isinstance(m, SignedMass)
    assert_allclose(m.signed, (16 - 1) / 4)
    assert_allclose(m.total_variation, (16 + 1) / 4)


def test_negative_polynomial_needs_signed_flag():
    with pytest.raises(MeasureError, match="signed"):
        PolyExponential([0.0], {(3,): 1.0})


@given(a=coord, w=st.floats(0.1, 2), lam=coord)
def test_mass_additive_under_split(a, w, lam):
    for measure in (ExponentialMeasure([lam]), PolyExponential([lam], {(2,): 1.0, (0,): 1.0})):
        box = Box([a], [a + w])
        left, right = box.split(0, a + w / 3)
        assert_allclose(measure.mass(left) + measure.mass(right), measure.mass(box), rtol=1e-9)


@given(x=st.lists(coord, min_size=2, max_size=2), shift=st.lists(coord, min_size=2, max_size=2))
def test_exponential_translation_rescales(x, shift):
    lam = np.array([0.7, -0.4])
    m = ExponentialMeasure(lam)
    assert_allclose(m.density(np.add(x, shift)), m.density(x) * math.exp(-lam @ shift), rtol=1e-12)


def test_sample_lebesgue_count_mean():
    counts = [len(sample_on_box(ExponentialMeasure([0.0]), Box([0], [1]), s)) for s in range(10_000)]
    assert abs(np.mean(counts) - 1.0) < 3 * math.sqrt(1 / 1e4) * 3


def test_sample_poisson_dispersion():
    measure = ExponentialMeasure([1.0])
    box = Box([-1], [1])
    mu = measure.mass(box)
    counts = np.array([len(sample_on_box(measure, box, s)) for s in range(10_000)])
    # dispersion statistic sum (N - mu)^2 / mu is chi2(n) under Poisson(mu)
    stat = float(np.sum((counts - mu) ** 2) / mu)
    p = 2 * min(stats.chi2.sf(stat, counts.size), stats.chi2.cdf(stat, counts.size))
    assert p > 0.001


def test_sample_truncated_exponential_locations():
    measure = ExponentialMeasure([1.0], 2000.0)
    pts = np.concatenate([sample_on_box(measure, Box([0], [5]), s) for s in range(5)]).ravel()
    assert pts.size > 9_000
    cdf = lambda x: (1 - np.exp(-x)) / (1 - math.exp(-5))  # noqa: E731
    assert stats.kstest(pts, cdf).statistic < 0.02


def test_sample_polyexp_locations():
    measure = PolyExponential([0.0], {(2,): 3000.0})
    pts = np.concatenate([sample_on_box(measure, Box([-1], [1]), s) for s in range(5)]).ravel()
    cdf = lambda x: (x**3 + 1) / 2  # noqa: E731
    assert stats.kstest(pts, cdf).statistic < 0.02


def test_sample_subspace_lies_on_subspace():
    basis = np.array([[1.0, 1.0]]) / math.sqrt(2)
    m = SubspaceExponential(basis, [0.5, 0.5], 50.0)
    pts = sample_on_box(m, Box([-2, -2], [2, 2]), 1)
    assert len(pts) > 0
    assert_allclose(pts[:, 0], pts[:, 1], atol=1e-12)


def test_sample_mixture_is_superposition():
    mix = FiniteMixture(((np.array([0.0]), 200.0), (np.array([1.0]), 100.0)))
    box = Box([0], [1])
    counts = [len(sample_on_box(mix, box, s)) for s in range(400)]
    assert abs(np.mean(counts) - mix.mass(box)) < 4 * math.sqrt(mix.mass(box) / 400)


def test_sample_is_reproducible():
    m = ExponentialMeasure([0.3], 20.0)
    assert np.array_equal(sample_on_box(m, Box([0], [2]), 7), sample_on_box(m, Box([0], [2]), 7))


def test_sample_zero_scale_is_empty():
    assert sample_on_box(ExponentialMeasure([0.0], 0.0), Box([0], [10]), 0).shape == (0, 1)


def test_sample_refuses_signed():
    with pytest.raises(SignedMeasureError):
        sample_on_box(PolyExponential([0.0], {(3,): 1.0}, signed=True), Box([0], [1]), 0)


def test_sample_envelope_error():
    # mass sits near 0 while the envelope uses sup x^6 = 10^6
    m = PolyExponential([5.0], {(6,): 1.0})
    assert m.acceptance_rate(Box([0], [10])) < 1e-3
    with pytest.raises(EnvelopeError, match="split the box"):
        sample_on_box(m, Box([0], [10]), 0)


@pytest.mark.parametrize("lower,upper", [([0.0], [0.0]), ([1.0], [0.0]), ([0.0, 0.0], [1.0, 0.0])])
def test_degenerate_box(lower, upper):
    with pytest.raises(MeasureError):
        Box(lower, upper)


@pytest.mark.parametrize(
    "coeffs,beta,expected",
    [({(3,): 1.0}, (1,), {(2,): 3.0}), ({(3,): 1.0}, (3,), {(0,): 6.0}), ({(3,): 1.0}, (4,), {}), ({(2, 1): 1.0}, (1, 1), {(1, 0): 2.0})],
)
def test_differentiate_poly(coeffs, beta, expected):
    assert differentiate_poly(coeffs, beta) == expected


def test_membership_examples():
    s1 = GaussianMeasure([0.0, 0.0], np.diag([2.0, 1.0]))
    s2 = GaussianMeasure([0.0, 0.0], np.diag([1.0, 2.0]))
    assert membership_E([0.0, 0.0], s1, s2) == (True, 0.0)
    ok, r = membership_E([1.0, 1.0], s1, s2)
    assert ok and r == 0.0
    ok, r = membership_E([1.0, 0.0], s1, s2)
    assert not ok
    assert_allclose(r, 0.5)


@given(lam=st.lists(coord, min_size=2, max_size=2))
def test_membership_symmetric(lam):
    s1 = GaussianMeasure([0.1, -0.2], [[1.0, 0.3], [0.3, 2.0]])
    s2 = GaussianMeasure([0.0, 0.5], np.eye(2))
    a, b = membership_E(lam, s1, s2), membership_E(lam, s2, s1)
    assert a[0] == b[0]
    assert_allclose(a[1], -b[1])


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "exp", "lambda": [1.0, 2.0], "scale": 0.5},
        {"kind": "subspace-exp", "basis": [[0.0, 1.0]], "lambda": [0.0, 1.0]},
        {"kind": "polyexp", "lambda": [0.0], "coeffs": [{"alpha": [3], "c": 1.0}], "signed": True},
        {"kind": "mixture", "atoms": [{"lambda": [0.0], "w": 1.0}, {"lambda": [1.0], "w": 2.0}]},
    ],
)
def test_measure_json_round_trip(spec):
    m = measure_from_json(spec)
    again = measure_from_json(m.to_json())
    x = np.full(m.dim, 0.0)
    assert_allclose(again.density(x), m.density(x))


@pytest.mark.parametrize(
    "spec",
    [{"kind": "exp"}, {"kind": "weird"}, {"kind": "exp", "lambda": [1.0], "scale": -1}, {"kind": "subspace-exp", "basis": [[1.0, 1.0]], "lambda": [1, 0]}],
)
def test_measure_json_errors(spec):
    with pytest.raises(MeasureError):
        measure_from_json(spec)
