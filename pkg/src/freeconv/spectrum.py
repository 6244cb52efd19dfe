"""Supports, densities, atoms, critical times and local laws of free convolutions.

All public locations are in the original coordinates: a validated spec is centered
with its shift recorded, so mu^{boxplus t} is shifted back by t * shift and
mu_a boxplus mu_b by the sum of both shifts.
"""

from __future__ import annotations

import enum
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .measures import MeasureSpec, density_at, moment
from .subordination import (
    ContinuationSchedule,
    PairProblem,
    SemigroupProblem,
    Status,
    SubordinationSolution,
    boundary_chain,
    continue_to_boundary,
)
from .transforms import (
    HatMeasure,
    OnSupport,
    TransformError,
    cauchy_series,
    f_derivatives,
    f_jet,
)

FIT_OFFSETS = np.logspace(-6, -3, 20)
EXPONENT_TOL = 0.02
CUSP_T_TOL = 1e-4
ATOM_EXPONENT_TOL = 0.03
PLATEAU_RTOL = 1e-2
CHUNK = 64


class SpectrumError(ArithmeticError):
    code = "SpectrumError"


class FitAmbiguous(SpectrumError):
    code = "FitAmbiguous"


class ClassificationConflict(SpectrumError):
    code = "ClassificationConflict"


class CaseMismatch(SpectrumError):
    code = "CaseMismatch"

    def __init__(self, message: str, profile: "AtomProfile | None" = None):
        super().__init__(message)
        self.profile = profile


class EdgeKind(str, enum.Enum):
    SQUARE_ROOT_RIGHT = "SquareRootRight"
    SQUARE_ROOT_LEFT = "SquareRootLeft"
    CUSP = "Cusp"
    QUADRATIC_MINIMUM = "QuadraticMinimum"
    ATOM_CRITICAL = "AtomCritical"
    DIVERGENCE = "DivergenceExponent"
    PLATEAU = "Plateau"
    VANISHING = "Vanishing"
    POWER_LAW = "PowerLaw"


def _num(x):
    if x is None:
        return None
    if isinstance(x, complex) or np.iscomplexobj(x):
        return [float(np.real(x)), float(np.imag(x))]
    return float(x)


@dataclass(frozen=True)
class SupportReport:
    components_z: list[tuple[float, float]]
    components_omega: list[tuple[float, float]]
    atoms: list[tuple[float, float]]
    atom_critical: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "components_z": [list(map(float, c)) for c in self.components_z],
            "components_omega": [list(map(float, c)) for c in self.components_omega],
            "atoms": [{"location": float(x), "mass": float(m)} for x, m in self.atoms],
            "atom_critical": [float(x) for x in self.atom_critical],
        }

    @property
    def edges(self) -> list[float]:
        return [e for c in self.components_z for e in c]


@dataclass(frozen=True)
class CriticalPoint:
    gap: tuple[float, float]
    t_star: float
    omega0: float
    z0: float

    def to_dict(self) -> dict:
        return {"gap": list(map(float, self.gap)), "t_star": self.t_star, "omega0": self.omega0, "z0": self.z0}


@dataclass(frozen=True)
class EdgeReport:
    location_z: float
    omega_image: complex
    kind: EdgeKind
    fitted_exponent: float
    fitted_constant: float
    theory_constant: float | None = None
    fit_residual: float = math.nan
    divergence: float | None = None
    side: str = "left"
    details: dict = field(default_factory=dict)

    @property
    def kind_label(self) -> str:
        if self.kind is EdgeKind.DIVERGENCE:
            return f"DivergenceExponent({self.divergence:g})"
        return self.kind.value

    def to_dict(self) -> dict:
        return {
            "location_z": self.location_z,
            "omega_image": _num(complex(self.omega_image)),
            "kind": self.kind_label,
            "fitted_exponent": self.fitted_exponent,
            "fitted_constant": self.fitted_constant,
            "theory_constant": self.theory_constant,
            "fit_residual": self.fit_residual,
            "side": self.side,
            "details": {k: _num(v) if isinstance(v, (int, float, complex, np.number)) else v
                        for k, v in self.details.items()},
        }


@dataclass(frozen=True)
class DensityGrid:
    abscissae: np.ndarray
    values: np.ndarray
    atoms: list[tuple[float, float]]
    tag: str

    def total_mass(self) -> float:
        ok = np.isfinite(self.values)
        return float(np.trapezoid(self.values[ok], self.abscissae[ok]) + sum(m for _, m in self.atoms))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("E,rho\n")
        for e, r in zip(self.abscissae, self.values):
            buf.write(f"{e:.17g},{r:.17g}\n")
        return buf.getvalue()

    def atoms_json(self) -> str:
        return json.dumps({"tag": self.tag, "atoms": [{"location": float(x), "mass": float(m)}
                                                      for x, m in self.atoms]}, indent=2)


# --- real-axis helpers --------------------------------------------------------------


def _I_hat(spec: MeasureSpec, x: float) -> float:
    """I_hat(x) = F'(x) - 1 on the real axis off supp(mu-hat)."""
    return float(f_derivatives(spec, x, 1)[1].real - 1)


def _F2(spec, x):
    return float(f_derivatives(spec, x, 2)[2].real)


def _z_of_omega(spec, t, w):
    return float((t * w - (t - 1) * f_jet(spec, w, 0)[0]).real)


def _safe(f, x):
    try:
        v = f(x)
    except TransformError:
        return math.nan
    return v


def _probe(f, end, direction, L, want):
    """Walk toward `end` from inside the gap until want(f(x)) holds; return x or None."""
    d = 1e-2 * L
    while d > 1e-15 * max(L, 1.0):
        x = end + direction * d
        v = _safe(f, x)
        if np.isfinite(v) and want(v):
            return x
        d *= 1e-2
    return None


def _hat_gaps(hat: HatMeasure) -> list[tuple[float, float]]:
    pieces = []
    for lo, hi in hat.support_pieces:
        if pieces and lo <= pieces[-1][1]:
            pieces[-1] = (pieces[-1][0], max(hi, pieces[-1][1]))
        else:
            pieces.append((lo, hi))
    return pieces


def _gap_minimum(spec, p, q):
    """Minimizer of the convex I_hat on the open gap (p, q); None if it sits at an end."""
    L = q - p
    lo = _probe(lambda x: _F2(spec, x), p, +1, L, lambda v: v < 0)
    hi = _probe(lambda x: _F2(spec, x), q, -1, L, lambda v: v > 0)
    if lo is None or hi is None:
        return None
    return optimize.brentq(lambda x: _F2(spec, x), lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def _crossing(spec, c, a, b):
    """Root of I_hat = c between a and b (I_hat - c changes sign)."""
    return optimize.brentq(lambda x: _I_hat(spec, x) - c, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps)


def _omega_components(hat: HatMeasure, t: float) -> list[tuple[float, float]]:
    """Connected components of supp(mu-hat) U {I_hat > 1/(t-1)} on the real line."""
    spec = hat.source
    c = 1.0 / (t - 1)
    pieces = _hat_gaps(hat)
    if not pieces or hat.total_mass <= 0:
        return []
    big = lambda v: v > c  # noqa: E731
    comps = []
    # left unbounded piece
    p0 = pieces[0][0]
    reach = 2 * math.sqrt(hat.total_mass / c) + 1e-3
    x_in = _probe(lambda x: _I_hat(spec, x), p0, -1, reach, big)
    left = p0 if x_in is None else _crossing(spec, c, p0 - reach, x_in)
    start = left
    for (p_lo, p), (q, q_hi) in zip(pieces, pieces[1:]):
        L = q - p
        xm = _gap_minimum(spec, p, q)
        if xm is not None:
            if _I_hat(spec, xm) >= c:
                continue
            a_in = _probe(lambda x: _I_hat(spec, x), p, +1, L, big)
            b_in = _probe(lambda x: _I_hat(spec, x), q, -1, L, big)
            l_edge = p if a_in is None else _crossing(spec, c, a_in, xm)
            r_edge = q if b_in is None else _crossing(spec, c, xm, b_in)
        else:
            # monotone across the gap: the minimum sits at one of the ends
            a_in = _probe(lambda x: _I_hat(spec, x), p, +1, L, big)
            b_in = _probe(lambda x: _I_hat(spec, x), q, -1, L, big)
            if a_in is not None and b_in is not None:
                continue
            if a_in is not None:
                l_edge, r_edge = _crossing(spec, c, a_in, q - 1e-12 * L), q
            elif b_in is not None:
                l_edge, r_edge = p, _crossing(spec, c, p + 1e-12 * L, b_in)
            else:
                l_edge, r_edge = p, q
        comps.append((start, l_edge))
        start = r_edge
    pN = pieces[-1][1]
    x_in = _probe(lambda x: _I_hat(spec, x), pN, +1, reach, big)
    right = pN if x_in is None else _crossing(spec, c, x_in, pN + reach)
    comps.append((start, right))
    return comps


# --- semigroup ------------------------------------------------------------------------


def semigroup_atoms(spec: MeasureSpec, t: float, tol: float = 1e-12) -> list[tuple[float, float]]:
    """Atoms (t E0, t mu0 - (t-1)) for atoms of mu with mass above 1 - 1/t."""
    shift = t * spec.centering_shift
    out = []
    for a in spec.atoms:
        A = t * a.mass - (t - 1)
        if A > tol:
            out.append((t * a.location + shift, A))
    return out


def atom_critical_points(spec: MeasureSpec, t: float, tol: float = 1e-12) -> list[float]:
    """Locations t E0 where mu({E0}) = 1 - 1/t exactly (no atom, divergent density)."""
    shift = t * spec.centering_shift
    return [t * a.location + shift for a in spec.atoms if abs(t * a.mass - (t - 1)) <= tol]


def support_semigroup(hat: HatMeasure, spec: MeasureSpec | None, t: float) -> SupportReport:
    spec = spec or hat.source
    if not t > 1:
        raise ValueError("t must exceed 1")
    shift = t * spec.centering_shift
    comps_w = _omega_components(hat, t)
    comps_z = [(_z_of_omega(spec, t, a) + shift, _z_of_omega(spec, t, b) + shift) for a, b in comps_w]
    return SupportReport(comps_z, comps_w, semigroup_atoms(spec, t), atom_critical_points(spec, t))


def critical_times(hat: HatMeasure, spec: MeasureSpec | None = None) -> list[CriticalPoint]:
    spec = spec or hat.source
    out = []
    pieces = _hat_gaps(hat)
    for (_, p), (q, _) in zip(pieces, pieces[1:]):
        xm = _gap_minimum(spec, p, q)
        if xm is None:
            continue
        I0 = _I_hat(spec, xm)
        ts = 1.0 + 1.0 / I0
        z0 = _z_of_omega(spec, ts, xm) + ts * spec.centering_shift
        out.append(CriticalPoint((p, q), ts, float(xm), float(z0)))
    return out


def _rho_from_omega(spec: MeasureSpec, w: complex) -> float:
    w = complex(w.real, max(w.imag, 0.0))
    try:
        m = cauchy_series(spec, w, 0)[0]
    except OnSupport:
        return math.inf
    return max(float(m.imag), 0.0) / math.pi


def semigroup_solution(hat: HatMeasure, t: float, E: float,
                       schedule: ContinuationSchedule | None = None) -> SubordinationSolution:
    spec = hat.source
    return continue_to_boundary(SemigroupProblem(hat, t), E - t * spec.centering_shift, schedule)


def semigroup_density(hat: HatMeasure, spec: MeasureSpec | None, t: float, E: float,
                      schedule: ContinuationSchedule | None = None) -> float:
    spec = spec or hat.source
    sol = semigroup_solution(hat, t, E, schedule)
    return _rho_from_omega(spec, sol.omega)


def _chunks(n):
    return [range(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]


def _run_chunks(problem, Ec, threads):
    """Boundary solutions over a sorted grid; fixed chunking keeps results thread-count independent."""
    parts = _chunks(len(Ec))

    def work(r):
        return boundary_chain(problem, [Ec[i] for i in r])

    if threads and threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, parts))
    else:
        results = [work(r) for r in parts]
    return [s for part in results for s in part]


def semigroup_solutions(hat: HatMeasure, t: float, Es, threads: int = 1) -> list[SubordinationSolution]:
    Es = np.asarray(Es, dtype=float)
    order = np.argsort(Es, kind="stable")
    Ec = Es[order] - t * hat.source.centering_shift
    sols = _run_chunks(SemigroupProblem(hat, t), Ec, threads)
    out = [None] * len(Es)
    for k, i in enumerate(order):
        out[i] = sols[k]
    return out


def clustered_grid(components, points: int = 400, pad: float = 0.0, outside: int = 0) -> np.ndarray:
    """Abscissae bunched at the edges of each component (cosine map).

    The trapezoid rule on these points integrates square-root edges with
    error O(points^-2) instead of O(h^1.5) on a uniform grid.
    """
    parts = []
    for lo, hi in components:
        th = np.linspace(np.pi, 0.0, points)
        parts.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(th))
        if outside and pad > 0:
            parts.append(np.linspace(lo - pad, lo, outside, endpoint=False))
            parts.append(np.linspace(hi, hi + pad, outside + 1)[1:])
    return np.unique(np.concatenate(parts)) if parts else np.array([])


def component_mass(make_grid, components, points: int = 400) -> float:
    """AC mass over the support components, midpoint rule in theta for x = c + h cos(theta).

    make_grid maps abscissae to a DensityGrid. Under the substitution both
    square-root edges and inverse square-root edges give analytic integrands,
    so the rule converges spectrally where the trapezoid rule would stall.
    """
    th = (np.arange(points) + 0.5) * np.pi / points
    total = 0.0
    for lo, hi in components:
        c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
        vals = np.asarray(make_grid(c + h * np.cos(th)).values, dtype=float)
        total += float(np.sum(vals * h * np.sin(th))) * np.pi / points
    return total


def semigroup_density_grid(hat: HatMeasure, spec: MeasureSpec | None, t: float, Es,
                           threads: int = 1) -> DensityGrid:
    spec = spec or hat.source
    Es = np.asarray(Es, dtype=float)
    sols = semigroup_solutions(hat, t, Es, threads)
    vals = np.array([_rho_from_omega(spec, s.omega) for s in sols])
    return DensityGrid(Es, vals, semigroup_atoms(spec, t), f"semigroup t={t!r}")


def sqrt_edge_constant(spec: MeasureSpec, t: float, omega_edge: float) -> float:
    """Leading constant C in rho_t ~ C sqrt|E - E_t| at a regular edge with real omega-edge."""
    m = cauchy_series(spec, omega_edge, 0)[0].real
    J3 = 0.5 * _F2(spec, omega_edge)
    return t * m * m / ((t - 1) ** 1.5 * math.sqrt(abs(J3))) / math.pi


def sqrt_edge_constant_literal(spec: MeasureSpec, t: float, omega_edge: float) -> float:
    """The same constant with the numerator read as (integral dmu/|x-w|^2)^2, for comparison."""
    I = cauchy_series(spec, omega_edge, 1)[1].real
    J3 = 0.5 * _F2(spec, omega_edge)
    return t * I * I / ((t - 1) ** 1.5 * math.sqrt(abs(J3))) / math.pi


def fit_power_law(offsets, values) -> tuple[float, float, float]:
    """Least-squares slope/intercept in log-log; returns (exponent, constant, max log deviation)."""
    x, y = np.log(np.asarray(offsets, float)), np.log(np.asarray(values, float))
    k, b = np.polyfit(x, y, 1)
    return float(k), float(math.exp(b)), float(np.max(np.abs(y - (k * x + b))))


def leading_constant(offsets, values, k) -> float:
    """C in rho ~ C delta^k, extrapolating rho / delta^k to delta = 0 by a quadratic in delta."""
    d = np.asarray(offsets, float)
    return float(np.polyfit(d, np.asarray(values, float) / d**k, 2)[-1])


def _fixed_slope_residual(offsets, values, k):
    x, y = np.log(np.asarray(offsets, float)), np.log(np.asarray(values, float))
    b = np.mean(y - k * x)
    return float(np.max(np.abs(y - k * x - b)))


def _snap_negative(k):
    for cand in (-0.5, -1 / 3):
        if abs(k - cand) <= ATOM_EXPONENT_TOL:
            return cand
    return round(k, 3)


def _densities_toward(problem_density, edge, side, deltas):
    """Densities at edge + side * delta, solved from the far end inward."""
    order = np.argsort(-deltas)
    Es = edge + side * deltas[order]
    vals = problem_density(Es)
    out = np.empty_like(vals)
    out[order] = vals
    return out


def _semigroup_values(hat, t):
    spec = hat.source

    def f(Es):
        sols = boundary_chain(SemigroupProblem(hat, t), list(np.asarray(Es) - t * spec.centering_shift))
        return np.array([_rho_from_omega(spec, s.omega) for s in sols])

    return f


def _kind_from_fit(k, resid, offsets, vals):
    if abs(k - 0.5) <= EXPONENT_TOL:
        return EdgeKind.SQUARE_ROOT_LEFT, None
    if abs(k - 1 / 3) <= EXPONENT_TOL:
        return EdgeKind.CUSP, None
    if k < 0:
        return EdgeKind.DIVERGENCE, _snap_negative(k)
    r_half = _fixed_slope_residual(offsets, vals, 0.5)
    r_third = _fixed_slope_residual(offsets, vals, 1 / 3)
    if r_half > 0.05 and r_third > 0.05:
        raise FitAmbiguous(f"fitted exponent {k:.4f} matches neither 1/2 nor 1/3")
    return (EdgeKind.SQUARE_ROOT_LEFT if r_half <= r_third else EdgeKind.CUSP), None


def classify_semigroup_edge(hat: HatMeasure, spec: MeasureSpec | None, t: float, edge: float,
                            report: SupportReport | None = None) -> EdgeReport:
    spec = spec or hat.source
    report = report or support_semigroup(hat, spec, t)
    shift = t * spec.centering_shift
    scale = 1.0 + spec.support_radius
    values = _semigroup_values(hat, t)
    # cusp / closing gap near a critical point
    for cp in critical_times(hat, spec):
        if abs(edge - cp.z0) <= 1e-6 * scale or (t > cp.t_star and abs(edge - cp.z0) <= 0.5 * scale
                                                   and not _is_support_edge(report, edge, scale)):
            if abs(t - cp.t_star) < CUSP_T_TOL:
                return _two_sided_report(values, edge, cp.omega0, _owning_width(report, edge, scale),
                                         {"t_star": cp.t_star})
            if t > cp.t_star:
                return quadratic_minimum(hat, spec, t, cp)
    comp, side_index = _find_edge(report, edge, scale)
    lo, hi = report.components_z[comp]
    w_edge = report.components_omega[comp][side_index]
    width = hi - lo
    inward = +1 if side_index == 0 else -1
    deltas = FIT_OFFSETS * width
    vals = _densities_toward(values, edge, inward, deltas)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise FitAmbiguous("density vanishes or is infinite inside the fit window")
    k, C, resid = fit_power_law(deltas, vals)
    details = {"omega_edge": w_edge,
               "F_prime_at_edge": float(f_derivatives(spec, w_edge, 1)[1].real)}
    atom_crit = [x for x in report.atom_critical if abs(x - edge) <= 1e-9 * scale]
    if atom_crit:
        return EdgeReport(edge, complex(w_edge), EdgeKind.ATOM_CRITICAL, k, C, None, resid,
                          divergence=_snap_negative(k) if k < 0 else None,
                          side="right" if inward > 0 else "left", details=details)
    kind, div = _kind_from_fit(k, resid, deltas, vals)
    theory = None
    details["loglog_constant"] = C
    if kind is EdgeKind.CUSP:
        C = leading_constant(deltas, vals, 1 / 3)
    if kind is EdgeKind.SQUARE_ROOT_LEFT:
        C = leading_constant(deltas, vals, 0.5)
        kind = EdgeKind.SQUARE_ROOT_RIGHT if inward > 0 else EdgeKind.SQUARE_ROOT_LEFT
        theory = sqrt_edge_constant(spec, t, w_edge)
        details["theory_constant_literal"] = sqrt_edge_constant_literal(spec, t, w_edge)
    return EdgeReport(edge, complex(w_edge), kind, k, C, theory, resid, divergence=div,
                      side="right" if inward > 0 else "left", details=details)


def _is_support_edge(report, edge, scale):
    return any(abs(e - edge) <= 1e-9 * scale for e in report.edges)


def _find_edge(report, edge, scale):
    best = None
    for i, (lo, hi) in enumerate(report.components_z):
        for j, e in enumerate((lo, hi)):
            d = abs(e - edge)
            if best is None or d < best[0]:
                best = (d, i, j)
    if best is None or best[0] > 1e-6 * scale:
        raise ValueError(f"{edge} is not an edge of the support")
    return best[1], best[2]


def _owning_width(report, E, scale):
    for lo, hi in report.components_z:
        if lo - 1e-9 * scale <= E <= hi + 1e-9 * scale:
            return hi - lo
    return scale


def _two_sided_report(values, edge, omega, width, details):
    deltas = FIT_OFFSETS * width
    fits = []
    for side in (-1, +1):
        vals = _densities_toward(values, edge, side, deltas)
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
            raise FitAmbiguous("density vanishes or is infinite inside the two-sided window")
        fits.append((fit_power_law(deltas, vals), vals))
    (kl, Cl, rl), vl = fits[0]
    (kr, Cr, rr), vr = fits[1]
    details = dict(details, exponent_left=kl, exponent_right=kr, constant_left=Cl, constant_right=Cr)
    k, C, resid = 0.5 * (kl + kr), 0.5 * (Cl + Cr), max(rl, rr)
    # the next term, of relative order |E - E0|^(1/3), is odd, so the sides
    # bend opposite ways; the mean slope carries the leading exponent
    if abs(k - 1 / 3) <= EXPONENT_TOL and max(abs(kl - 1 / 3), abs(kr - 1 / 3)) <= 2.5 * EXPONENT_TOL:
        kind, div = EdgeKind.CUSP, None
    elif kl < 0 and kr < 0:
        kind, div = EdgeKind.DIVERGENCE, _snap_negative(k)
    else:
        kind, div = _kind_from_fit(k, resid, deltas, vr)
        if kind is EdgeKind.SQUARE_ROOT_LEFT:
            raise FitAmbiguous(f"two-sided exponents {kl:.4f}, {kr:.4f} at a cusp candidate")
    return EdgeReport(edge, complex(omega), kind, k, C, None, resid, divergence=div, side="both", details=details)


def quadratic_minimum(hat: HatMeasure, spec: MeasureSpec, t: float, cp: CriticalPoint) -> EdgeReport:
    """Fit rho(E) - rho(E*) ~ C (E - E*)^2 near a just-closed gap (t slightly above t*)."""
    if not t > cp.t_star:
        raise ValueError("quadratic minimum needs t > t*")
    values = _semigroup_values(hat, t)
    eps = t - cp.t_star
    W = 0.1 * eps**1.5
    zc = _z_of_omega(spec, t, cp.omega0) + t * spec.centering_shift
    xs = zc + W * np.linspace(-1, 1, 41)
    ys = values(xs)
    a2, a1, _ = np.polyfit(xs - zc, ys, 2)
    if not a2 > 0:
        raise FitAmbiguous(f"density has no interior minimum near {zc:.6g} (curvature {a2:.3e} < 0)")
    Es = zc - a1 / (2 * a2)
    rho_star = float(values(np.array([Es]))[0])
    deltas = W * np.logspace(-1, 0, 12)
    diffs = []
    for side in (-1, +1):
        diffs.append(values(Es + side * deltas) - rho_star)
    diff = 0.5 * (diffs[0] + diffs[1])
    if np.any(diff <= 0):
        raise FitAmbiguous("rho(E) - rho(E*) is not positive around the minimizer")
    k, C, resid = fit_power_law(deltas, diff)
    kind = EdgeKind.QUADRATIC_MINIMUM if abs(k - 2) <= 0.1 else EdgeKind.POWER_LAW
    return EdgeReport(float(Es), complex(cp.omega0), kind, k, C, None, resid, side="both",
                      details={"rho_min": rho_star, "t_star": cp.t_star, "window": W})


# --- atom neighbourhoods ----------------------------------------------------------------


@dataclass(frozen=True)
class AtomProfile:
    location: float
    case: str
    A: float
    B: float
    offsets: np.ndarray
    rho_left: np.ndarray
    rho_right: np.ndarray
    expected_left: float | str
    expected_right: float | str
    fitted_left: float | None
    fitted_right: float | None
    plateau: float | None
    theory_constant: float | None
    theory_constant_unreduced: float | None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("offset,rho_left,rho_right\n")
        for d, l, r in zip(self.offsets, self.rho_left, self.rho_right):
            buf.write(f"{d:.17g},{l:.17g},{r:.17g}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def _atom_position(spec: MeasureSpec, E0: float):
    for c in spec.components:
        if E0 == c.support_lo:
            return "endpoint", c.left_exponent, +1
        if E0 == c.support_hi:
            return "endpoint", c.right_exponent, -1
        if c.support_lo < E0 < c.support_hi:
            return "interior", None, 0
    return "outside", None, 0


def _B_real(spec, E0):
    return float(cauchy_series(spec, E0, 0, exclude_atom=E0)[0].real)


def atom_profile(hat: HatMeasure, spec: MeasureSpec | None, t: float, atom_location: float,
                 offsets=None, zero_tol: float = 1e-9) -> tuple[AtomProfile, EdgeReport]:
    """Density near t E0 for an atom E0 of mu (original coordinates) with mass >= 1 - 1/t."""
    spec = spec or hat.source
    s = spec.centering_shift
    E0 = float(atom_location) - s
    atom = spec.atom_at(E0, tol=1e-12 * (1 + abs(E0)))
    if atom is None:
        raise ValueError(f"{atom_location} is not an atom of the measure")
    E0, mu0 = atom.location, atom.mass
    A = t * mu0 - (t - 1)
    if A < -1e-12:
        raise ValueError("atom mass below 1 - 1/t: the density is analytic there")
    critical = abs(A) <= 1e-12
    where, beta, orient = _atom_position(spec, E0)
    B = _B_real(spec, E0) if where != "interior" else float(cauchy_series(spec, complex(E0), 0,
                                                                           exclude_atom=E0)[0].real)
    scale = 1.0 + spec.support_radius
    offsets = np.asarray(FIT_OFFSETS * scale if offsets is None else offsets, dtype=float)
    centre = t * E0 + t * s
    values = _semigroup_values(hat, t)
    rl = _densities_toward(values, centre, -1, offsets)
    rr = _densities_toward(values, centre, +1, offsets)
    rho0 = float(density_at(spec, E0)) if where == "interior" else None
    theory = theory_unreduced = plateau = None
    Bz = abs(B) <= 1e-10
    # expected behaviour per side: a number is an exponent, "zero" / "plateau" / "log" are shapes
    if not critical:
        if where == "outside":
            case, exp_l, exp_r = "A>0 outside", "zero", "zero"
        elif where == "interior":
            case, exp_l, exp_r = "A>0 interior", "plateau", "plateau"
            theory = rho0 * t * mu0 / A
            theory_unreduced = rho0 * (t * mu0 + t - 1) / A
        else:
            inner = beta if beta != 0 else "log"
            case = f"A>0 endpoint beta={beta:g}"
            exp_l, exp_r = (inner, "zero") if orient < 0 else ("zero", inner)
    else:
        if where == "outside":
            if Bz:
                case, exp_l, exp_r = "A=0 outside B=0", -1 / 3, -1 / 3
            elif B > 0:
                case, exp_l, exp_r = "A=0 outside B>0", "zero", -0.5
                theory = math.sqrt(t * mu0 * B) / math.pi
            else:
                case, exp_l, exp_r = "A=0 outside B<0", -0.5, "zero"
                theory = math.sqrt(t * mu0 * -B) / math.pi
        elif where == "interior":
            case, exp_l, exp_r = "A=0 interior", -0.5, -0.5
        else:
            Beff = orient * B
            if beta > 0 and Beff > 1e-10:
                inner, outer = -0.5, "zero"
                case = "A=0 endpoint beta>0 B>0"
            elif beta > 0 and Beff < -1e-10:
                inner, outer = -(1 - beta) / 2, -0.5
                case = "A=0 endpoint beta>0 B<0"
            elif beta == 0:
                inner, outer = -0.5, -0.5
                case = "A=0 endpoint beta=0"
            else:
                inner = outer = -1 / (2 + beta)
                case = f"A=0 endpoint beta={beta:g}"
            exp_l, exp_r = (inner, outer) if orient < 0 else (outer, inner)

    fits = {}
    problems = []
    for name, vals, expected in (("left", rl, exp_l), ("right", rr, exp_r)):
        if expected == "zero":
            if np.max(np.abs(vals)) > zero_tol:
                problems.append(f"{name}: density {np.max(vals):.3e} where zero is expected")
            fits[name] = None
            continue
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
            problems.append(f"{name}: density vanishes where {expected} is expected")
            fits[name] = None
            continue
        k, C, resid = fit_power_law(offsets, vals)
        fits[name] = (k, C, resid)
        if expected == "plateau":
            plateau = float(np.mean(vals)) if plateau is None else 0.5 * (plateau + float(np.mean(vals)))
            if theory is not None and abs(np.mean(vals) - theory) > PLATEAU_RTOL * abs(theory):
                problems.append(f"{name}: plateau {np.mean(vals):.6g} vs {theory:.6g}")
        elif expected == "log":
            pass
        elif abs(k - expected) > ATOM_EXPONENT_TOL:
            problems.append(f"{name}: exponent {k:.4f} vs {expected:.4f}")

    def fitted(name):
        return None if fits[name] is None else fits[name][0]

    profile = AtomProfile(centre, case, A, B, offsets, rl, rr, exp_l, exp_r, fitted("left"), fitted("right"),
                          plateau, theory, theory_unreduced)
    live = [(n, fits[n]) for n in ("left", "right") if fits[n] is not None]
    if not live:
        kind, k, C, resid, side = EdgeKind.VANISHING, math.nan, 0.0, 0.0, "both"
    else:
        side = live[0][0] if len(live) == 1 else "both"
        k = float(np.mean([f[0] for _, f in live]))
        C = float(np.mean([f[1] for _, f in live]))
        resid = float(max(f[2] for _, f in live))
        if critical:
            kind = EdgeKind.DIVERGENCE
        elif "plateau" in (exp_l, exp_r):
            kind, C = EdgeKind.PLATEAU, plateau
        else:
            kind = EdgeKind.POWER_LAW
    report = EdgeReport(centre, complex(E0), kind, k, C, theory, resid,
                        divergence=_snap_negative(k) if kind is EdgeKind.DIVERGENCE else None, side=side,
                        details={"case": case, "A": A, "B": B, "theory_constant_unreduced": theory_unreduced})
    if problems:
        raise CaseMismatch("; ".join(problems), profile)
    return profile, report


# --- pair convolution ---------------------------------------------------------------------


def pair_atoms(alpha: MeasureSpec, beta: MeasureSpec) -> list[tuple[float, float]]:
    """Atoms a + b with mu_a({a}) + mu_b({b}) > 1."""
    shift = alpha.centering_shift + beta.centering_shift
    out = []
    for a in alpha.atoms:
        for b in beta.atoms:
            m = a.mass + b.mass - 1
            if m > 1e-12:
                out.append((a.location + b.location + shift, m))
    return sorted(out)


def _pair_rho(problem: PairProblem, sol: SubordinationSolution) -> float:
    if sol.status is Status.NEAR_HAT_ATOM:
        return _rho_from_omega(problem.beta, sol.omega_alpha)
    return _rho_from_omega(problem.alpha, sol.omega_beta)


def _pair_shift(alpha, beta):
    return alpha.centering_shift + beta.centering_shift


def pair_solution(alpha, beta, E, schedule=None) -> SubordinationSolution:
    return continue_to_boundary(PairProblem(alpha, beta), E - _pair_shift(alpha, beta), schedule)


def pair_density(spec_alpha: MeasureSpec, spec_beta: MeasureSpec, E: float,
                 schedule: ContinuationSchedule | None = None) -> float:
    problem = PairProblem(spec_alpha, spec_beta)
    sol = continue_to_boundary(problem, E - _pair_shift(spec_alpha, spec_beta), schedule)
    return _pair_rho(problem, sol)


def pair_solutions(alpha, beta, Es, threads: int = 1) -> list[SubordinationSolution]:
    Es = np.asarray(Es, dtype=float)
    order = np.argsort(Es, kind="stable")
    sols = _run_chunks(PairProblem(alpha, beta), Es[order] - _pair_shift(alpha, beta), threads)
    out = [None] * len(Es)
    for k, i in enumerate(order):
        out[i] = sols[k]
    return out


def pair_density_grid(alpha, beta, Es, threads: int = 1) -> DensityGrid:
    Es = np.asarray(Es, dtype=float)
    problem = PairProblem(alpha, beta)
    sols = pair_solutions(alpha, beta, Es, threads)
    vals = np.array([_pair_rho(problem, s) for s in sols])
    return DensityGrid(Es, vals, pair_atoms(alpha, beta), "pair")


def _pair_values(alpha, beta):
    problem = PairProblem(alpha, beta)
    shift = _pair_shift(alpha, beta)

    def f(Es):
        sols = boundary_chain(problem, list(np.asarray(Es) - shift))
        return np.array([_pair_rho(problem, s) for s in sols])

    return f


def support_pair(spec_alpha: MeasureSpec, spec_beta: MeasureSpec, threads: int = 1) -> SupportReport:
    problem = PairProblem(spec_alpha, spec_beta)
    shift = _pair_shift(spec_alpha, spec_beta)
    R = spec_alpha.support_radius + spec_beta.support_radius
    pad = 0.05 * R + 1e-3
    step = 1e-2 * R
    Es = np.arange(-R - pad, R + pad + step, step)
    sols = _run_chunks(problem, Es, threads)
    inside = np.array([s.omega_beta.imag > 1e-7 or _pair_rho(problem, s) > 1e-7 for s in sols])

    def member(E):
        sol = continue_to_boundary(problem, E)
        return sol.omega_beta.imag > 1e-7 or _pair_rho(problem, sol) > 1e-7

    edges = []
    for i in range(len(Es) - 1):
        if inside[i] != inside[i + 1]:
            a, b = Es[i], Es[i + 1]
            ina = inside[i]
            while b - a > 1e-10:
                mid = 0.5 * (a + b)
                if member(mid) == ina:
                    a = mid
                else:
                    b = mid
            edges.append(0.5 * (a + b))
    comps = []
    start = None
    for e in edges:
        if start is None:
            start = e
        else:
            comps.append((start + shift, e + shift))
            start = None
    return SupportReport(comps, [], pair_atoms(spec_alpha, spec_beta))


def pair_z_derivatives(alpha: MeasureSpec, beta: MeasureSpec, wa: float, wb: float) -> tuple[float, float, float]:
    """z', z'', z''' of z(w) = F_b^{-1}(F_a(w)) + w - F_a(w) at w = w_b, by Taylor jets."""
    a = f_jet(alpha, wb, 3).real
    b = f_jet(beta, wa, 3).real
    h1 = 1 / b[1]
    h2 = -b[2] / b[1] ** 3
    h3 = (2 * b[2] ** 2 - b[1] * b[3]) / b[1] ** 5
    c1 = h1 * a[1]
    c2 = h1 * a[2] + h2 * a[1] ** 2
    c3 = h1 * a[3] + 2 * h2 * a[1] * a[2] + h3 * a[1] ** 3
    return float(c1 + 1 - a[1]), float(2 * (c2 - a[2])), float(6 * (c3 - a[3]))


def pair_z_derivatives_closed_form(alpha, beta, wa, wb) -> tuple[float, float, float]:
    """The same derivatives from explicit formulas in F', F'', F''' of both measures."""
    A1, A2, A3 = f_derivatives(alpha, wb, 3)[1:].real
    B1, B2, B3 = f_derivatives(beta, wa, 3)[1:].real
    z1 = (B1 + A1 - B1 * A1) / B1
    z2 = (-A1**2 * B2 + B1**2 * A2 - B1**3 * A2) / B1**3
    z3 = (3 * A1**3 * B2**2 - 3 * B1**2 * A1 * B2 * A2) / B1**5 \
        - (B1 * A1**3 * B3 - B1**4 * A3 + B1**5 * A3) / B1**5
    return float(z1), float(z2), float(z3)


def classify_pair_edge(spec_alpha: MeasureSpec, spec_beta: MeasureSpec, edge: float,
                       report: SupportReport | None = None) -> EdgeReport:
    alpha, beta = spec_alpha, spec_beta
    problem = PairProblem(alpha, beta)
    shift = _pair_shift(alpha, beta)
    report = report or support_pair(alpha, beta)
    scale = 1.0 + alpha.support_radius + beta.support_radius
    comp, side_index = _find_edge(report, edge, scale)
    lo, hi = report.components_z[comp]
    width = hi - lo
    sol = continue_to_boundary(problem, edge - shift)
    wa, wb = sol.omega_alpha, sol.omega_beta
    values = _pair_values(alpha, beta)
    details = {}
    radius = alpha.support_radius + beta.support_radius
    on_atom = (alpha.atom_at(wb.real, tol=1e-4 * scale) is not None
               or beta.atom_at(wa.real, tol=1e-4 * scale) is not None)
    if sol.status is Status.NEAR_HAT_ATOM:
        m3 = moment(beta, 3)
        analytic = "sqrt" if abs(m3) > 1e-10 else "cusp"
        details["path"] = "hat-atom"
        details["third_moment_beta"] = m3
    elif on_atom:
        analytic = "divergent"
        details["path"] = "atom"
    else:
        z1, z2, z3 = pair_z_derivatives(alpha, beta, wa.real, wb.real)
        tol_cusp = 1e-6 * abs(z3) * radius
        details.update(path="regular", z1=z1, z2=z2, z3=z3, tol_cusp=tol_cusp)
        if abs(z2) > tol_cusp:
            analytic = "sqrt"
        else:
            analytic = "cusp"
            if not z3 < 0:
                raise ClassificationConflict(f"z''' = {z3:.3e} is not negative at a cusp edge")
    inward = +1 if side_index == 0 else -1
    deltas = FIT_OFFSETS * width
    if analytic == "cusp":
        rep = _two_sided_report(values, edge, wb, width, details)
        if rep.kind is not EdgeKind.CUSP:
            raise ClassificationConflict(f"analytic cusp but fitted {rep.kind_label}")
        return rep
    vals = _densities_toward(values, edge, inward, deltas)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise FitAmbiguous("density vanishes or is infinite inside the fit window")
    k, C, resid = fit_power_law(deltas, vals)
    side = "right" if inward > 0 else "left"
    if analytic == "divergent" or k < 0:
        if k >= 0:
            raise ClassificationConflict(f"edge maps onto an atom but fitted exponent is {k:.4f}")
        return EdgeReport(edge, complex(wb), EdgeKind.DIVERGENCE, k, C, None, resid, divergence=_snap_negative(k),
                          side=side, details=details)
    if abs(k - 0.5) > EXPONENT_TOL:
        if _fixed_slope_residual(deltas, vals, 0.5) > 0.05 and _fixed_slope_residual(deltas, vals, 1 / 3) > 0.05:
            raise FitAmbiguous(f"fitted exponent {k:.4f}")
        raise ClassificationConflict(f"analytic square root but fitted exponent {k:.4f}")
    kind = EdgeKind.SQUARE_ROOT_RIGHT if inward > 0 else EdgeKind.SQUARE_ROOT_LEFT
    details["loglog_constant"] = C
    return EdgeReport(edge, complex(wb), kind, k, leading_constant(deltas, vals, 0.5), None, resid, side=side,
                      details=details)
