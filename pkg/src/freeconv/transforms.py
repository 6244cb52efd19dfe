"""Cauchy-Stieltjes transforms, reciprocal transforms and the Nevanlinna measure.

Conventions: m(z) = integral of dmu(x) / (x - z), F = -1/m.  A real argument
means the boundary value from the upper half-plane.

Per component the transform is evaluated in one of two ways.  Away from the
interval a Gauss-Jacobi rule whose size follows from the Bernstein ellipse
through z is used.  Close to the interval (or on it) the integrand is split as

    g(s) / (s - z) = g(z) / (s - z) + q(s),   q = (g - g(z)) / (s - z),

where q is a polynomial (synthetic division in the Chebyshev basis) integrated
exactly, and the Jacobi-weight part is a Gauss hypergeometric function.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import mpmath
import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import optimize, special

from .measures import Atom, JacobiComponent, MeasureSpec, jacobi_rule_unit

FAR_FIELD_MAX_NODES = 512
MIN_NODES = 32


class TransformError(ArithmeticError):
    code = "TransformError"


class QuadratureNotConverged(TransformError):
    code = "QuadratureNotConverged"


class NearZeroOfM(TransformError):
    code = "NearZeroOfM"


class OnSupport(TransformError):
    code = "OnSupport"


class DivergentEndpoint(TransformError):
    code = "DivergentEndpoint"


class MassDeficit(TransformError):
    code = "MassDeficit"


# --- Taylor jets --------------------------------------------------------------


def jet_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    n = len(p)
    return np.convolve(p, q)[:n]


def jet_recip(p: np.ndarray) -> np.ndarray:
    n = len(p)
    r = np.zeros(n, dtype=complex)
    r[0] = 1 / p[0]
    for k in range(1, n):
        r[k] = -np.dot(p[1 : k + 1], r[k - 1 :: -1][:k]) / p[0]
    return r


def jet_to_derivatives(p: np.ndarray) -> np.ndarray:
    return p * np.array([math.factorial(k) for k in range(len(p))])


# --- Chebyshev helpers --------------------------------------------------------


def cheb_divide_linear(c: np.ndarray, zeta: complex) -> tuple[np.ndarray, complex]:
    """Write g(s) = (s - zeta) q(s) + r for a Chebyshev series g.

    Backward recurrence from s*T_j = (T_{j+1} + T_{j-1}) / 2; stable for
    zeta near [-1, 1], which is the only place it is used.
    """
    c = np.asarray(c, dtype=complex)
    d = len(c) - 1
    if d == 0:
        return np.zeros(1, dtype=complex), c[0]
    b = np.zeros(d + 2, dtype=complex)
    b[d - 1] = 2 * c[d]
    for k in range(d - 1, 1, -1):
        b[k - 1] = 2 * (c[k] + zeta * b[k]) - b[k + 1]
    if d >= 2:
        b[0] = c[1] + zeta * b[1] - 0.5 * b[2]
    else:
        b[0] = c[1]
    r = c[0] - (0.5 * b[1] - zeta * b[0])
    return b[:d], r


def bernstein_rho(zeta: complex) -> float:
    r = zeta + np.sqrt(zeta - 1) * np.sqrt(zeta + 1)
    a = abs(r)
    return max(a, 1 / a) if a > 0 else np.inf


# --- Jacobi weight transforms -------------------------------------------------


def _hyp_moment(a: float, b: float, zeta: complex, m: int, side: int) -> complex:
    # integral over [-1,1] of (1+s)^a (1-s)^b (s - zeta)^-m, Re zeta <= 0 assumed
    v = (1 - mpmath.mpc(zeta)) / 2
    x = 1 / v
    if mpmath.im(x) == 0 and mpmath.re(x) >= 1:
        x = mpmath.mpc(mpmath.re(x), side * mpmath.mpf(10) ** -40)
    pref = mpmath.power(2, a + b + 1 - m) * mpmath.beta(b + 1, a + 1) * mpmath.power(v, -m)
    return complex(pref * mpmath.hyp2f1(m, b + 1, a + b + 2, x))


def jacobi_weight_cauchy(a: float, b: float, zeta: complex, mmax: int) -> np.ndarray:
    """[H_1, ..., H_mmax], H_m = integral of (1+s)^a (1-s)^b / (s - zeta)^m ds.

    Real zeta is read as zeta + i0.  Uses the hypergeometric closed form
    around the nearer-to-far endpoint so that |1/v| <= 2.
    """
    zeta = complex(zeta)
    out = np.empty(mmax, dtype=complex)
    with mpmath.workdps(25):
        if zeta.real > 0:
            # reflect s -> -s; the upper side maps to the lower side
            for m in range(1, mmax + 1):
                out[m - 1] = (-1) ** m * _hyp_moment(b, a, -zeta, m, side=-1)
        else:
            for m in range(1, mmax + 1):
                out[m - 1] = _hyp_moment(a, b, zeta, m, side=+1)
    return out


def jacobi_weight_boundary(a: float, b: float, x: np.ndarray) -> np.ndarray:
    """H_1(x + i0) for x in (-1, 1), vectorized through real hypergeometric series."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape, dtype=complex)
    if a == 0 and b == 0:
        return np.log((1 - x) / (1 + x)) + 1j * np.pi
    right = x >= 0
    for mask, aa, bb, sgn in ((right, a, b, 1), (~right, b, a, -1)):
        if not mask.any():
            continue
        xs = sgn * x[mask]
        if bb == 0:
            # the series form is singular here; fall back to the general path
            out[mask] = [jacobi_weight_cauchy(a, b, xi, 1)[0] for xi in x[mask]]
            continue
        v = (1 - xs) / 2
        sing = np.pi * v**bb * (1 - v) ** aa
        reg = special.gamma(aa + 1) * special.gamma(bb) / special.gamma(aa + bb + 1)
        reg = reg * special.hyp2f1(1.0, -aa - bb, 1.0 - bb, v)
        K = sing * np.exp(1j * np.pi * bb) / np.sin(np.pi * bb) - reg
        H = 2.0 ** (aa + bb) * K
        out[mask] = H if sgn == 1 else -np.conj(H)
    return out


# --- per-component and per-measure series -------------------------------------


def _far_nodes(comp: JacobiComponent, zeta: complex, order: int) -> int | None:
    rho = bernstein_rho(zeta)
    if not np.isfinite(rho):
        return MIN_NODES
    lr = math.log(rho) if rho > 1 else 0.0
    if lr <= 0:
        return None
    n = (37.0 + 3.0 * order) / (2 * lr) + comp.degree / 2 + 8
    if n > FAR_FIELD_MAX_NODES:
        return None
    return max(MIN_NODES, 1 << int(math.ceil(math.log2(n))))


def component_series(comp: JacobiComponent, z: complex, order: int = 0, method: str = "auto") -> np.ndarray:
    """D[k] = integral of dmu_comp / (x - z)^(k+1), k = 0..order."""
    h = comp.half_width
    zeta = (complex(z) - comp.center) / h
    K = comp.scale
    powers = h ** -(np.arange(order + 1) + 1.0)
    if method == "quadrature":
        return _quadrature_doubling(comp, zeta, order) * K * powers
    n = _far_nodes(comp, zeta, order)
    if n is not None:
        s, w = jacobi_rule_unit(n, comp.left_exponent, comp.right_exponent)
        wg = w * comp.g(s)
        r = 1.0 / (s - zeta)
        out = np.empty(order + 1, dtype=complex)
        rk = r.copy()
        for k in range(order + 1):
            out[k] = np.dot(wg, rk)
            rk = rk * r
        return out * K * powers
    return _near_series(comp, zeta, order) * K * powers


def _quadrature_doubling(comp, zeta, order):
    n, prev = 256, None
    while n <= 1 << 15:
        s, w = jacobi_rule_unit(n, comp.left_exponent, comp.right_exponent)
        wg = w * comp.g(s)
        r = 1.0 / (s - zeta)
        val = np.array([np.dot(wg, r ** (k + 1)) for k in range(order + 1)])
        if prev is not None and np.all(np.abs(val - prev) <= 1e-12 * np.abs(val)):
            return val
        prev, n = val, 2 * n
    raise QuadratureNotConverged(f"rule doubling exceeded 2^15 nodes at zeta={zeta}")


def _near_series(comp: JacobiComponent, zeta: complex, order: int) -> np.ndarray:
    a, b = comp.left_exponent, comp.right_exponent
    if zeta.imag == 0 and abs(zeta.real) == 1:
        e = a if zeta.real == -1 else b
        if e <= 0 or order > 0:
            raise DivergentEndpoint(f"endpoint with exponent {e}")
    if order == 0 and zeta.imag == 0 and -1 < zeta.real < 1:
        H = jacobi_weight_boundary(a, b, np.array([zeta.real]))
    else:
        H = jacobi_weight_cauchy(a, b, zeta, order + 1)
    M = comp.chebyshev_moments
    q = np.asarray(comp.smooth_factor, dtype=complex)
    taylor = []
    out = np.empty(order + 1, dtype=complex)
    for k in range(order + 1):
        q, r = cheb_divide_linear(q, zeta)
        taylor.append(r)
        poly = np.dot(q, M[: len(q)]) if len(q) else 0.0
        out[k] = sum(taylor[j] * H[k - j] for j in range(k + 1)) + poly
    return out


def atom_series(locs: np.ndarray, masses: np.ndarray, z: complex, order: int) -> np.ndarray:
    out = np.zeros(order + 1, dtype=complex)
    if len(locs) == 0:
        return out
    r = 1.0 / (locs - z)
    rk = r.copy()
    for k in range(order + 1):
        out[k] = np.dot(masses, rk)
        rk = rk * r
    return out


def cauchy_series(spec: MeasureSpec, z: complex, order: int = 0, exclude_atom: float | None = None,
                  method: str = "auto") -> np.ndarray:
    """[integral dmu / (x - z)^(k+1) for k = 0..order]."""
    z = complex(z)
    locs, masses = spec.atom_locations, spec.atom_masses
    if exclude_atom is not None:
        keep = locs != exclude_atom
        locs, masses = locs[keep], masses[keep]
    if z.imag == 0 and np.any(locs == z.real):
        raise OnSupport(f"{z.real} is an atom")
    out = atom_series(locs, masses, z, order)
    for comp in spec.components:
        out = out + component_series(comp, z, order, method)
    return out


def _nearest_atom(spec: MeasureSpec, z: complex) -> int | None:
    if not spec.atoms:
        return None
    return int(np.argmin(np.abs(spec.atom_locations - z)))


def f_jet(spec: MeasureSpec, z: complex, order: int = 0) -> np.ndarray:
    """Taylor coefficients of F = -1/m at z (F^(k) = k! * jet[k]).

    The nearest atom is split off, F = -u / (mu0 + u B) with u = x0 - z, which
    keeps F smooth through atoms of mu.
    """
    z = complex(z)
    i = _nearest_atom(spec, z)
    if i is None:
        mj = cauchy_series(spec, z, order)
        if abs(mj[0]) < 1e-13:
            raise NearZeroOfM(f"|m({z})| = {abs(mj[0]):.3e}")
        return -jet_recip(mj)
    x0, mu0 = spec.atom_locations[i], spec.atom_masses[i]
    Bj = cauchy_series(spec, z, order, exclude_atom=x0)
    u = np.zeros(order + 1, dtype=complex)
    u[0] = x0 - z
    if order >= 1:
        u[1] = -1.0
    N = jet_mul(u, Bj)
    N[0] += mu0
    if u[0] != 0 and abs(N[0] / u[0]) < 1e-13:
        raise NearZeroOfM(f"|m({z})| = {abs(N[0] / u[0]):.3e}")
    return -jet_mul(u, jet_recip(N))


def f_derivatives(spec: MeasureSpec, z: complex, order: int = 0) -> np.ndarray:
    """[F, F', F'', ...] up to the given order."""
    return jet_to_derivatives(f_jet(spec, z, order))


# --- public operations ----------------------------------------------------------


@dataclass(frozen=True)
class BoundaryValue:
    principal_value: float
    imaginary_part: float


def _as_source(obj):
    return obj.source if isinstance(obj, HatMeasure) else obj


def cauchy(obj, z: complex, method: str = "auto") -> complex:
    """m(z) for a MeasureSpec, or m of the hat measure for a HatMeasure."""
    if isinstance(obj, HatMeasure):
        return obj.cauchy(z)
    return complex(cauchy_series(obj, z, 0, method=method)[0])


def cauchy_boundary(spec: MeasureSpec, E: float) -> BoundaryValue:
    E = float(E)
    if spec.atom_at(E) is not None:
        raise OnSupport(f"{E} is an atom")
    val = cauchy_series(spec, E, 0)[0]
    return BoundaryValue(float(val.real), max(float(val.imag), 0.0))


def cauchy_derivatives(spec: MeasureSpec, z: complex, order: int) -> np.ndarray:
    """[integral dmu / (x - z)^(1+j) for j = 0..order]; m^(j) = j! times entry j."""
    if not 0 <= order <= 4:
        raise ValueError("order must be in 0..4")
    return cauchy_series(spec, z, order)


def f_transform(spec: MeasureSpec, z: complex) -> complex:
    return complex(f_jet(spec, z, 0)[0])


def B_function(spec: MeasureSpec, E0: float, omega: complex) -> complex:
    """Cauchy transform of mu with the atom at E0 removed (not renormalized)."""
    if spec.atom_at(E0) is None:
        raise ValueError(f"{E0} is not an atom of the measure")
    return complex(cauchy_series(spec, omega, 0, exclude_atom=E0)[0])


def _component_I(comp: JacobiComponent, w: complex) -> float:
    h = comp.half_width
    zeta = (complex(w) - comp.center) / h
    n = _far_nodes(comp, zeta, 1)
    if n is not None:
        s, wt = jacobi_rule_unit(n, comp.left_exponent, comp.right_exponent)
        return float(np.dot(wt * comp.g(s), 1.0 / np.abs(s - zeta) ** 2)) * comp.scale / h**2
    if zeta.imag > 1e-10:
        return float(_near_series(comp, zeta, 0)[0].imag / zeta.imag) * comp.scale / h**2
    if -1 <= zeta.real <= 1:
        raise OnSupport(f"{w} lies on the support")
    return float(_near_series(comp, complex(zeta.real), 1)[1].real) * comp.scale / h**2


def I_measure(spec: MeasureSpec, w: complex) -> float:
    """integral dmu / |x - w|^2."""
    w = complex(w)
    d2 = np.abs(spec.atom_locations - w) ** 2
    if np.any(d2 == 0):
        raise OnSupport(f"{w} is an atom")
    total = float(np.dot(spec.atom_masses, 1.0 / d2)) if len(d2) else 0.0
    for comp in spec.components:
        total += _component_I(comp, w)
    return total


def I_function(obj, w: complex) -> float:
    """I(w) = integral d nu / |x - w|^2 for nu = mu (MeasureSpec) or mu-hat (HatMeasure)."""
    w = complex(w)
    if not isinstance(obj, HatMeasure):
        if w.imag <= 0:
            if obj.owning_component(w.real) is not None:
                raise OnSupport(f"{w.real} lies in the support")
        return I_measure(obj, w)
    spec = obj.source
    if w.imag > 1e-13 * (1 + abs(w)):
        m = cauchy_series(spec, w, 0)[0]
        i = _nearest_atom(spec, w)
        if i is not None and abs(w - spec.atom_locations[i]) < 1e-3 * (1 + spec.support_radius):
            # Im F / Im w via the split form, avoiding 1/|m|^2 overflow at the atom
            F = f_jet(spec, w, 0)[0]
            return float(F.imag / w.imag - 1)
        return I_measure(spec, w) / abs(m) ** 2 - 1
    x = w.real
    if obj.on_support(x):
        raise OnSupport(f"{x} lies in supp(mu-hat)")
    return float(f_derivatives(spec, x, 1)[1].real - 1)


def zeros_of_m(spec: MeasureSpec) -> list[float]:
    """Real zeros of m in the bounded gaps of supp(mu); one at most per gap."""
    pieces = spec.support_pieces
    zeros = []
    for (_, p), (q, _) in zip(pieces, pieces[1:]):
        if q <= p:
            continue
        left = _gap_end_value(spec, p, side=+1)
        right = _gap_end_value(spec, q, side=-1)
        if not (left < 0 < right):
            continue

        def m_real(E):
            return cauchy_series(spec, E, 0)[0].real

        lo, hi = p, q
        d = 1e-3 * (q - p)
        while m_real(p + d) >= 0 and d > 1e-15 * (q - p):
            d *= 1e-2
        lo = p + d
        d = 1e-3 * (q - p)
        while m_real(q - d) <= 0 and d > 1e-15 * (q - p):
            d *= 1e-2
        hi = q - d
        if m_real(lo) < 0 < m_real(hi):
            zeros.append(optimize.brentq(m_real, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))
    return zeros


def _gap_end_value(spec: MeasureSpec, x: float, side: int) -> float:
    """Limit of m at a support endpoint x, approached from the gap side."""
    if spec.atom_at(x) is not None:
        return -side * np.inf
    for comp in spec.components:
        if side > 0 and x == comp.support_hi:
            e = comp.right_exponent
        elif side < 0 and x == comp.support_lo:
            e = comp.left_exponent
        else:
            continue
        if e <= 0:
            return -side * np.inf
        return float(cauchy_series(spec, x, 0)[0].real)
    return float(cauchy_series(spec, x, 0)[0].real)


# --- hat measure ----------------------------------------------------------------


@dataclass(frozen=True)
class HatComponent:
    lo: float
    hi: float
    left_exponent: float
    right_exponent: float
    coefficients: tuple[float, ...]
    mass: float
    tail: float

    def density(self, x):
        x = np.asarray(x, dtype=float)
        c, h = 0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo)
        s = (x - c) / h
        out = np.zeros_like(s)
        inside = (s > -1) & (s < 1)
        si = s[inside]
        out[inside] = (1 + si) ** self.left_exponent * (1 - si) ** self.right_exponent * C.chebval(si, self.coefficients)
        return out

    def as_jacobi(self) -> JacobiComponent:
        return JacobiComponent(self.lo, self.hi, self.left_exponent, self.right_exponent, self.mass,
                               self.coefficients)


def hat_density(spec: MeasureSpec, x) -> np.ndarray:
    """(1/pi) Im F(x + i0) = rho(x) / |m(x + i0)|^2 on supp(mu_ac)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = np.zeros(x.shape, dtype=complex)
    if len(spec.atoms):
        with np.errstate(divide="ignore", invalid="ignore"):
            m += (spec.atom_masses[None, :] / (spec.atom_locations[None, :] - x[:, None])).sum(axis=1)
    for comp in spec.components:
        s = comp.to_unit(x)
        inside = (s > -1) & (s < 1)
        if inside.any():
            si = s[inside]
            H = jacobi_weight_boundary(comp.left_exponent, comp.right_exponent, si)
            vals = np.empty(si.shape, dtype=complex)
            for idx, sv in enumerate(si):
                q, r = cheb_divide_linear(np.asarray(comp.smooth_factor, dtype=complex), sv)
                vals[idx] = r * H[idx] + (np.dot(q, comp.chebyshev_moments[: len(q)]) if len(q) else 0.0)
            m[inside] += vals * comp.scale / comp.half_width
        if (~inside).any():
            m[~inside] += [component_series(comp, xv, 0)[0] for xv in x[~inside]]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = density_over(spec, x) / np.abs(m) ** 2
    return np.where(np.isfinite(m), out, 0.0)


def density_over(spec, x):
    out = np.zeros(x.shape)
    for comp in spec.components:
        out += comp.density(x)
    return out


def _endpoint_slope(f, end: float, direction: float, width: float) -> float:
    d = np.logspace(-6, -3, 20) * width
    vals = f(end + direction * d)
    return float(np.polyfit(np.log(d), np.log(vals), 1)[0])


def _snap(est: float, candidates: list[float], tol: float = 0.05) -> float:
    best = min(candidates, key=lambda c: abs(c - est))
    return best if abs(best - est) <= tol else est


def _fit_hat_component(spec: MeasureSpec, comp: JacobiComponent) -> HatComponent:
    lo, hi = comp.support_lo, comp.support_hi
    width = hi - lo
    f = lambda x: hat_density(spec, x)
    exps = []
    for end, direction, e in ((lo, 1.0, comp.left_exponent), (hi, -1.0, comp.right_exponent)):
        est = _endpoint_slope(f, end, direction, width)
        cands = [abs(e)]
        if spec.atom_at(end) is not None:
            cands.append(e + 2)
        if e == 0:
            est = 0.0  # logarithmic decay; keep a flat weight
        exps.append(_snap(est, cands))
    a, b = exps
    c, h = 0.5 * (lo + hi), 0.5 * width

    def g(s):
        x = c + h * s
        return f(x) / ((1 + s) ** a * (1 - s) ** b)

    coef, tail = None, np.inf
    for deg in (32, 64, 128, 256, 512):
        coef = C.chebinterpolate(g, deg)
        scale = np.max(np.abs(coef))
        tail = float(np.max(np.abs(coef[-4:])) / scale)
        if tail < 1e-13:
            break
    s, w = jacobi_rule_unit(len(coef) // 2 + 2, a, b)
    mass = float(h * np.dot(w, C.chebval(s, coef)))
    return HatComponent(lo, hi, a, b, tuple(float(v) for v in coef), mass, tail)


@dataclass(frozen=True)
class HatMeasure:
    """Nevanlinna measure of a centered mu: F(w) - w = integral d mu-hat / (x - w)."""

    source: MeasureSpec
    atoms: tuple[Atom, ...]

    @cached_property
    def ac_components(self) -> tuple[HatComponent, ...]:
        return tuple(_fit_hat_component(self.source, comp) for comp in self.source.components)

    @cached_property
    def total_mass(self) -> float:
        return sum(a.mass for a in self.atoms) + sum(c.mass for c in self.ac_components)

    @cached_property
    def atom_locations(self) -> np.ndarray:
        return np.array([a.location for a in self.atoms], dtype=float)

    @cached_property
    def support_pieces(self) -> list[tuple[float, float]]:
        pieces = [(c.support_lo, c.support_hi) for c in self.source.components]
        pieces += [(a.location, a.location) for a in self.atoms]
        return sorted(pieces)

    def on_support(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.support_pieces)

    def cauchy(self, w: complex) -> complex:
        w = complex(w)
        return complex(f_jet(self.source, w, 0)[0] - w)

    def cauchy_jet(self, w: complex, order: int) -> np.ndarray:
        """Taylor coefficients of m_hat at w."""
        j = f_jet(self.source, w, order).astype(complex)
        j[0] -= w
        if order >= 1:
            j[1] -= 1
        return j

    def cauchy_fitted(self, w: complex) -> complex:
        """m_hat from the stored interpolants (independent of the F route)."""
        w = complex(w)
        val = sum(a.mass / (a.location - w) for a in self.atoms)
        for hc in self.ac_components:
            val += cauchy_series(MeasureSpec((hc.as_jacobi(),), (), strict=False), w, 0)[0]
        return complex(val)

    def to_dict(self) -> dict:
        return {
            "ac_components": [
                {
                    "interval": [c.lo, c.hi],
                    "left_exponent": c.left_exponent,
                    "right_exponent": c.right_exponent,
                    "chebyshev": list(c.coefficients),
                    "mass": c.mass,
                }
                for c in self.ac_components
            ],
            "atoms": [{"location": a.location, "mass": a.mass} for a in self.atoms],
            "total_mass": self.total_mass,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def hat_atoms(spec: MeasureSpec) -> tuple[Atom, ...]:
    atoms = []
    for y in zeros_of_m(spec):
        if spec.owning_component(y) is not None:
            continue
        dm = cauchy_series(spec, y, 1)[1].real
        atoms.append(Atom(y, 1.0 / dm))
    return tuple(atoms)


def hat_measure(spec: MeasureSpec, check: bool = True, tol: float = 1e-6) -> HatMeasure:
    """Build mu-hat; with check, fit the AC part and verify total mass = variance."""
    hat = HatMeasure(spec, hat_atoms(spec))
    if check:
        var = spec.variance
        if abs(hat.total_mass - var) > tol:
            raise MassDeficit(f"hat mass {hat.total_mass:.12g} vs variance {var:.12g}")
    return hat
