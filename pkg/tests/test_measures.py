import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freeconv import measures as M
from freeconv.measures import (ExponentOutOfRange, MassMismatch, NonpositiveSmoothFactor,
                               OverlappingComponents)


def comp(lo, hi, a=0.0, b=0.0, w=1.0, g=(1.0,)):
    return {"support": [lo, hi], "left_exponent": a, "right_exponent": b, "weight": w, "smooth_factor": list(g)}


class TestValidate:
    def test_uniform_is_already_centered(self):
        spec = M.validate({"components": [comp(-1, 1)]})
        assert spec.centering_shift == 0.0
        assert spec.components[0].support_lo == -1.0

    def test_bernoulli_permissive(self):
        spec = M.validate({"atoms": [{"location": -1, "mass": 0.5}, {"location": 1, "mass": 0.5}], "strict": False})
        assert spec.centering_shift == 0.0 and len(spec.atoms) == 2

    def test_bernoulli_rejected_in_strict_mode(self):
        with pytest.raises(M.MeasureError):
            M.validate({"atoms": [{"location": -1, "mass": 0.5}, {"location": 1, "mass": 0.5}]})

    def test_recentering(self):
        spec = M.validate({"components": [comp(0, 2)]})
        assert spec.centering_shift == pytest.approx(1.0, abs=1e-14)
        c = spec.components[0]
        assert (c.support_lo, c.support_hi) == pytest.approx((-1.0, 1.0), abs=1e-14)

    @pytest.mark.parametrize("raw, err", [
        ({"components": [comp(-1, 1, a=1.5)]}, ExponentOutOfRange),
        ({"components": [comp(-1, 1, b=-1.0)]}, ExponentOutOfRange),
        ({"components": [comp(-1, 1, w=0.9)]}, MassMismatch),
        ({"components": [comp(-1, 0.5, w=0.5), comp(0, 1, w=0.5)]}, OverlappingComponents),
        ({"components": [comp(-1, 0, w=0.5), comp(0, 1, w=0.5)]}, OverlappingComponents),
        ({"components": [comp(-1, 1, g=(0.1, 1.0))]}, NonpositiveSmoothFactor),
    ])
    def test_errors(self, raw, err):
        with pytest.raises(err):
            M.validate(raw)

    def test_touching_components_allowed_when_permissive(self):
        spec = M.validate({"components": [comp(-1, 0, w=0.5), comp(0, 1, w=0.5)], "strict": False})
        assert len(spec.components) == 2


def test_density_examples():
    assert M.density_at(M.uniform(), 0.0) == pytest.approx(0.5, rel=1e-14)
    assert M.density_at(M.arcsine(), 0.0) == pytest.approx(1 / (2 * math.pi), rel=1e-13)
    assert M.density_at(M.semicircle(), 0.0) == pytest.approx(1 / math.pi, rel=1e-13)
    assert M.density_at(M.semicircle(), 3.0) == 0.0


def test_semicircle_density_closed_form():
    E = np.linspace(-1.99, 1.99, 41)
    np.testing.assert_allclose(M.density_at(M.semicircle(), E), np.sqrt(4 - E**2) / (2 * np.pi), rtol=1e-12)


def test_moments():
    sc = M.semicircle()
    assert M.moment(sc, 0) == pytest.approx(1.0, abs=1e-14)
    assert abs(M.moment(sc, 1)) < 1e-14
    assert M.moment(sc, 4) == pytest.approx(2.0, rel=1e-13)
    assert M.moment(sc, 6) == pytest.approx(5.0, rel=1e-13)
    assert M.moment(M.bernoulli(), 2) == pytest.approx(1.0)


def test_gauss_legendre_case():
    c = M.validate({"components": [comp(-1, 1)]}).components[0]
    x, w = M.gauss_jacobi_rule(c, 2)
    np.testing.assert_allclose(np.sort(x), [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(w, [1.0, 1.0], atol=1e-14)


def test_gauss_chebyshev_case():
    c = M.validate({"components": [comp(-1, 1, -0.5, -0.5)]}).components[0]
    x, w = M.gauss_jacobi_rule(c, 3)
    expected = np.cos((2 * np.arange(1, 4) - 1) * np.pi / 6)
    np.testing.assert_allclose(np.sort(x), np.sort(expected), atol=1e-14)
    np.testing.assert_allclose(w, np.full(3, np.pi / 3), rtol=1e-13)


def test_gauss_jacobi_rule_needs_two_nodes():
    with pytest.raises(ValueError):
        M.gauss_jacobi_rule(M.uniform().components[0], 1)


def test_sampling():
    assert list(M.sample(M.point_mass(), 5, 3)) == [0.0] * 5
    u = M.sample(M.uniform(), 100_000, 1)
    assert abs(u.mean()) < 0.02
    b = M.sample(M.bernoulli(), 100_000, 2)
    assert abs(np.mean(b == 1.0) - 0.5) < 0.01
    np.testing.assert_array_equal(M.sample(M.semicircle(), 50, 7), M.sample(M.semicircle(), 50, 7))


def test_free_poisson_spec():
    mp = M.free_poisson(0.5)
    assert mp.centering_shift == pytest.approx(0.5, abs=1e-12)
    assert mp.variance == pytest.approx(0.5, rel=1e-12)
    x = np.linspace(0.1, 2.9, 15)
    np.testing.assert_allclose(M.density_at(mp, x - 0.5), M.free_poisson_density(x, 0.5), rtol=1e-11)


exps = st.floats(-0.9, 0.9)


@st.composite
def jacobi_specs(draw):
    lo = draw(st.floats(-3, 1))
    width = draw(st.floats(0.2, 3))
    w1 = draw(st.floats(0.2, 1.0))
    c = [comp(lo, lo + width, draw(exps), draw(exps), w1, (1.0, draw(st.floats(-0.5, 0.5))))]
    if w1 < 1.0:
        if draw(st.booleans()):
            c.append(comp(lo + width + 0.5, lo + width + 1.5, draw(exps), draw(exps), 1 - w1))
            return M.validate({"components": c})
        return M.validate({"components": c, "atoms": [{"location": lo - 1.0, "mass": 1 - w1}]})
    return M.validate({"components": c})


@given(jacobi_specs())
def test_property_mass_and_centering(spec):
    assert M.moment(spec, 0) == pytest.approx(1.0, abs=1e-10)
    assert abs(M.moment(spec, 1)) < 1e-10
    assert M.moment(spec, 2) > 0
    for c in spec.components:
        x, w = c.rule(200)
        assert float(np.sum(w)) == pytest.approx(c.weight, rel=1e-12)


@given(jacobi_specs(), st.floats(-6, 6))
def test_property_density_nonnegative(spec, E):
    val = M.density_at(spec, E)
    assert not val < 0


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.integers(2, 12))
def test_property_rule_doubling(a, b, n):
    c = M.validate({"components": [comp(-1, 1, a, b)]}).components[0]
    x1, w1 = M.gauss_jacobi_rule(c, n)
    x2, w2 = M.gauss_jacobi_rule(c, 2 * n)
    assert np.all((x1 > c.support_lo) & (x1 < c.support_hi))
    for k in range(2 * n):
        m1, m2 = np.sum(w1 * x1**k), np.sum(w2 * x2**k)
        assert m1 == pytest.approx(m2, rel=1e-12, abs=1e-13)
