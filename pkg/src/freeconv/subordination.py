"""Subordination functions for the semigroup mu^{boxplus t} and for mu_a boxplus mu_b.

Solvers work in the coordinates of the MeasureSpec they are given (validated
specs are centered); shifting back is left to the spectrum layer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .measures import MeasureSpec
from .transforms import HatMeasure, TransformError, f_jet, hat_atoms

MAX_ITERATIONS = 100_000
RESIDUAL_TOL = 1e-10
NEWTON_TOL = 1e-12
SUPPORT_THRESHOLD = 1e-7
HAT_ATOM_RADIUS = 1e-4
HOMOTOPY_ETA = 0.5


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    NEAR_HAT_ATOM = "NearHatAtom"


class SolverError(ArithmeticError):
    code = "SolverError"


class MaxIterations(SolverError):
    code = "MaxIterations"

    def __init__(self, message: str, solution: "SubordinationSolution | None" = None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class SubordinationSolution:
    z: complex
    omega: complex | None = None
    omega_alpha: complex | None = None
    omega_beta: complex | None = None
    residual: float = math.nan
    iterations: int = 0
    status: Status = Status.CONVERGED
    in_ac_support: bool | None = None
    annotations: tuple[str, ...] = ()

    @property
    def converged(self) -> bool:
        return self.status is not Status.MAX_ITERATIONS

    def to_dict(self) -> dict:
        def c(w):
            return None if w is None else [w.real, w.imag]

        return {
            "z": c(self.z),
            "omega": c(self.omega),
            "omega_alpha": c(self.omega_alpha),
            "omega_beta": c(self.omega_beta),
            "residual": self.residual,
            "iterations": self.iterations,
            "status": self.status.value,
            "in_ac_support": self.in_ac_support,
            "annotations": list(self.annotations),
        }


@dataclass(frozen=True)
class ContinuationSchedule:
    eta_start: float = 1e-2
    eta_end: float = 1e-9
    ratio: float = 0.5
    extrapolate: bool = True

    def __post_init__(self):
        if not 0 < self.eta_end < self.eta_start:
            raise ValueError("need 0 < eta_end < eta_start")
        if not 0 < self.ratio < 1:
            raise ValueError("need 0 < ratio < 1")

    def etas(self) -> list[float]:
        out, eta = [], self.eta_start
        while eta > self.eta_end * (1 + 1e-12):
            out.append(eta)
            eta *= self.ratio
        out.append(self.eta_end)
        return out


@dataclass(frozen=True)
class SemigroupProblem:
    hat: HatMeasure
    t: float

    @property
    def spec(self) -> MeasureSpec:
        return self.hat.source

    @property
    def scale(self) -> float:
        return 1.0 + self.spec.support_radius


@dataclass(frozen=True)
class PairProblem:
    alpha: MeasureSpec
    beta: MeasureSpec

    @cached_property
    def hat_atoms_alpha(self) -> np.ndarray:
        return np.array([a.location for a in hat_atoms(self.alpha)])

    @cached_property
    def hat_atoms_beta(self) -> np.ndarray:
        return np.array([a.location for a in hat_atoms(self.beta)])

    @property
    def scale(self) -> float:
        return 1.0 + self.alpha.support_radius + self.beta.support_radius


# --- semigroup --------------------------------------------------------------------


def _F(spec, w, order=0):
    return f_jet(spec, w, order)


def semigroup_residual(spec: MeasureSpec, t: float, z: complex, w: complex) -> float:
    return abs(t * w - z - (t - 1) * _F(spec, w)[0])


def _refine_real(step_fn, w, k, max_extra=60):
    """Keep taking Newton steps while they shrink.

    At a real boundary point next to an edge the root is nearly double, so the
    residual test stops about sqrt(tol) away from it; Newton still converges
    there, linearly, until the steps reach rounding level. A step is accepted
    only once the step after it is confirmed smaller.
    """
    def size(v):
        return abs(v) if np.ndim(v) == 0 else max(abs(x) for x in v)

    try:
        cur = step_fn(w)
    except TransformError:
        return w, k
    if cur is None:
        return w, k
    wn, prev = cur[0], size(cur[1])
    for _ in range(max_extra):
        try:
            nxt = step_fn(wn)
        except TransformError:
            break
        if nxt is None or not size(nxt[1]) < prev:
            break
        w, k = wn, k + 1
        wn, prev = nxt[0], size(nxt[1])
        if prev <= 1e-16 * (1.0 + size(w)):
            break
    return w, k


def _semigroup_step(spec, t, z, w):
    F, dF = _F(spec, w, 1)[:2]
    dg = t - (t - 1) * dF
    if dg == 0:
        return None
    step = (t * w - z - (t - 1) * F) / dg
    wn = w - step
    return complex(wn.real, max(wn.imag, 0.0)), step


def _newton_semigroup(spec, t, z, w, max_it=100):
    """Newton on t w - z - (t-1) F(w). Returns (w, residual, iterations) or None."""
    upper = z.imag > 0
    tol = NEWTON_TOL * max(1.0, abs(z))
    for k in range(max_it):
        try:
            F, dF = _F(spec, w, 1)[:2]
        except TransformError:
            return None
        g = t * w - z - (t - 1) * F
        if not np.isfinite(g):
            return None
        dg = t - (t - 1) * dF
        if abs(g) <= tol * max(1.0, abs(w)):
            if not upper and dg != 0:
                w, k = _refine_real(lambda v: _semigroup_step(spec, t, z, v), w, k)
                g = t * w - z - (t - 1) * _F(spec, w)[0]
            return w, abs(g), k
        if dg == 0:
            return None
        step = g / dg
        lam = 1.0
        while True:
            wn = w - lam * step
            if not upper:
                wn = complex(wn.real, max(wn.imag, 0.0))
                break
            if wn.imag > 0:
                break
            lam *= 0.5
            if lam < 1e-8:
                return None
        w = wn
    return None


def solve_semigroup(hat: HatMeasure, t: float, z: complex, warm_start: complex | None = None,
                    max_iter: int = MAX_ITERATIONS) -> SubordinationSolution:
    """Denjoy-Wolff point of w -> z + (t-1)(F(w) - w), for Im z > 0."""
    z = complex(z)
    if not t > 1:
        raise ValueError("t must exceed 1")
    if not z.imag > 0:
        raise ValueError("solve_semigroup needs Im z > 0; use continue_to_boundary")
    spec = hat.source
    w = complex(warm_start) if warm_start is not None and complex(warm_start).imag > 0 else z
    # f maps C+ into {Im > Im z} and is not an automorphism, so a Newton root in C+
    # is the unique fixed point there: trying Newton first is safe
    if warm_start is not None:
        got = _newton_semigroup(spec, t, z, w)
        if got is not None and got[0].imag >= z.imag - 1e-12:
            return _semigroup_solution(spec, t, z, got[0], got[2])
    top = HOMOTOPY_ETA * (1 + spec.support_radius)
    if warm_start is None and z.imag < top:
        top_sol = solve_semigroup(hat, t, complex(z.real, top), max_iter=max_iter)
        got = _descend(lambda zz, ww: _newton_semigroup(spec, t, zz, ww), z, top, top_sol.omega)
        if got is not None and got[0].imag >= z.imag - 1e-12:
            return _semigroup_solution(spec, t, z, got[0], top_sol.iterations + got[-1])
    lam, prev, it = 1.0, math.inf, 0
    while True:
        F = _F(spec, w)[0]
        fw = z + (t - 1) * (F - w)
        d = abs(fw - w)
        if d <= 1e-8 * (1 + abs(w)):
            break
        if d > prev:
            lam = max(0.5 * lam, 1e-3)
        prev = d
        w = w + lam * (fw - w)
        it += 1
        if it % 16 == 0:
            got = _newton_semigroup(spec, t, z, w, max_it=30)
            if got is not None and got[0].imag >= z.imag - 1e-12:
                return _semigroup_solution(spec, t, z, got[0], it + got[2])
        if it >= max_iter:
            sol = _semigroup_solution(spec, t, z, w, it, Status.MAX_ITERATIONS)
            raise MaxIterations(f"no convergence at z={z} after {it} iterations", sol)
    got = _newton_semigroup(spec, t, z, w)
    if got is not None and got[0].imag >= z.imag - 1e-12:
        w, it = got[0], it + got[2]
    return _semigroup_solution(spec, t, z, w, it)


def _descend(newton, z, top, w, ratio=0.5, depth=0):
    """Follow a Newton root from Im z = top down to the target Im z.

    Returns (w, iterations) or None; a failed rung is split geometrically.
    """
    eta, its = top, 0
    while eta > z.imag:
        nxt = max(eta * ratio, z.imag)
        got = newton(complex(z.real, nxt), w)
        if got is None:
            if depth >= 6:
                return None
            sub = _descend(newton, complex(z.real, nxt), eta, w, math.sqrt(nxt / eta) if nxt > 0 else 0.5,
                           depth + 1) if nxt > 0 else None
            if sub is None:
                return None
            got = (sub[0], sub[1])
        w, its = got[0], its + got[-1]
        eta = nxt
    return w, its


def _semigroup_solution(spec, t, z, w, it, status=Status.CONVERGED, **kw):
    res = semigroup_residual(spec, t, z, w)
    if status is Status.CONVERGED and res > RESIDUAL_TOL * max(1.0, abs(w)):
        status = Status.MAX_ITERATIONS
    return SubordinationSolution(z=z, omega=w, residual=res, iterations=it, status=status, **kw)


def semigroup_admissible(spec: MeasureSpec, t: float, w: complex, tol: float = 1e-8) -> bool:
    """Is a boundary fixed point the Denjoy-Wolff point? (Im w > 0, or I_hat(w) <= 1/(t-1))."""
    if w.imag > 0:
        return True
    try:
        dF = _F(spec, complex(w.real), 1)[1].real
    except TransformError:
        return False
    return (t - 1) * (dF - 1) <= 1 + tol


# --- pair -------------------------------------------------------------------------


def pair_residuals(alpha, beta, z, wa, wb) -> tuple[float, float]:
    Fa = _F(alpha, wb)[0]
    Fb = _F(beta, wa)[0]
    s = wa + wb - z
    return abs(s - Fa), abs(s - Fb)


def _pair_step(alpha, beta, z, wa, wb):
    Fa, dFa = _F(alpha, wb, 1)[:2]
    Fb, dFb = _F(beta, wa, 1)[:2]
    s = wa + wb - z
    g1, g2 = s - Fa, s - Fb
    a, b = 1 - dFa, 1 - dFb
    det = 1 - a * b
    if det == 0:
        return None
    da, db = (g1 - a * g2) / det, (g2 - b * g1) / det
    na, nb = wa - da, wb - db
    return (complex(na.real, max(na.imag, 0.0)), complex(nb.real, max(nb.imag, 0.0))), (da, db)


def _newton_pair(alpha, beta, z, wa, wb, max_it=100):
    upper = z.imag > 0
    tol = NEWTON_TOL * max(1.0, abs(z))
    for k in range(max_it):
        try:
            Fa, dFa = _F(alpha, wb, 1)[:2]
            Fb, dFb = _F(beta, wa, 1)[:2]
        except TransformError:
            return None
        s = wa + wb - z
        g1, g2 = s - Fa, s - Fb
        if not (np.isfinite(g1) and np.isfinite(g2)):
            return None
        if max(abs(g1), abs(g2)) <= tol * max(1.0, abs(wa), abs(wb)):
            if not upper:
                (wa, wb), k = _refine_real(lambda v: _pair_step(alpha, beta, z, *v), (wa, wb), k)
                g1, g2 = pair_residuals(alpha, beta, z, wa, wb)
            return wa, wb, max(abs(g1), abs(g2)), k
        a, b = 1 - dFa, 1 - dFb
        det = 1 - a * b
        if det == 0:
            return None
        da = (g1 - a * g2) / det
        db = (g2 - b * g1) / det
        lam = 1.0
        while True:
            na, nb = wa - lam * da, wb - lam * db
            if not upper:
                na, nb = complex(na.real, max(na.imag, 0.0)), complex(nb.real, max(nb.imag, 0.0))
                break
            if na.imag > 0 and nb.imag > 0:
                break
            lam *= 0.5
            if lam < 1e-8:
                return None
        wa, wb = na, nb
    return None


def _pair_status(problem: PairProblem | None, wb, wa):
    if problem is None:
        return Status.CONVERGED
    for locs, w in ((problem.hat_atoms_alpha, wb), (problem.hat_atoms_beta, wa)):
        if len(locs) and np.min(np.abs(locs - w)) < HAT_ATOM_RADIUS:
            return Status.NEAR_HAT_ATOM
    return Status.CONVERGED


def _pair_solution(alpha, beta, z, wa, wb, it, problem=None, status=None, **kw):
    try:
        r1, r2 = pair_residuals(alpha, beta, z, wa, wb)
        res = max(r1, r2)
    except TransformError:
        res = math.inf
    if status is None:
        status = _pair_status(problem, wb, wa)
        if status is Status.CONVERGED and not res <= RESIDUAL_TOL * max(1.0, abs(wa), abs(wb)):
            status = Status.MAX_ITERATIONS
    return SubordinationSolution(z=z, omega_alpha=wa, omega_beta=wb, residual=res, iterations=it,
                                 status=status, **kw)


def solve_pair(spec_alpha: MeasureSpec, spec_beta: MeasureSpec, z: complex,
               warm_start: tuple[complex, complex] | None = None, max_iter: int = MAX_ITERATIONS,
               problem: PairProblem | None = None) -> SubordinationSolution:
    """(w_a, w_b) with w_a + w_b - z = F_a(w_b) = F_b(w_a), for Im z > 0."""
    z = complex(z)
    if not z.imag > 0:
        raise ValueError("solve_pair needs Im z > 0; use continue_to_boundary")
    A, B = spec_alpha, spec_beta
    if warm_start is not None:
        wa, wb = (complex(v) for v in warm_start)
        if wa.imag > 0 and wb.imag > 0:
            got = _newton_pair(A, B, z, wa, wb)
            if got is not None and min(got[0].imag, got[1].imag) >= z.imag - 1e-12:
                return _pair_solution(A, B, z, got[0], got[1], got[3], problem)
    top = HOMOTOPY_ETA * (1 + A.support_radius + B.support_radius)
    if warm_start is None and z.imag < top:
        top_sol = solve_pair(A, B, complex(z.real, top), max_iter=max_iter)

        def newton(zz, ww):
            got = _newton_pair(A, B, zz, ww[0], ww[1])
            return None if got is None else ((got[0], got[1]), got[3])

        got = _descend(newton, z, top, (top_sol.omega_alpha, top_sol.omega_beta))
        if got is not None and min(got[0][0].imag, got[0][1].imag) >= z.imag - 1e-12:
            (wa, wb), its = got
            return _pair_solution(A, B, z, wa, wb, top_sol.iterations + its, problem)
    w = z if warm_start is None else complex(warm_start[0])
    if not w.imag > 0:
        w = z

    def f_alpha(w):
        Fb = _F(B, w)[0]
        return _F(A, Fb - w + z)[0] - Fb + w

    lam, prev, it = 1.0, math.inf, 0
    while True:
        fw = f_alpha(w)
        d = abs(fw - w)
        if d <= 1e-8 * (1 + abs(w)):
            break
        if d > prev:
            lam = max(0.5 * lam, 1e-3)
        prev = d
        w = w + lam * (fw - w)
        it += 1
        if it % 16 == 0:
            wb = _F(B, w)[0] - w + z
            got = _newton_pair(A, B, z, w, wb, max_it=30)
            if got is not None and min(got[0].imag, got[1].imag) >= z.imag - 1e-12:
                return _pair_solution(A, B, z, got[0], got[1], it + got[3], problem)
        if it >= max_iter:
            wb = _F(B, w)[0] - w + z
            sol = _pair_solution(A, B, z, w, wb, it, problem, Status.MAX_ITERATIONS)
            raise MaxIterations(f"no convergence at z={z} after {it} iterations", sol)
    wb = _F(B, w)[0] - w + z
    got = _newton_pair(A, B, z, w, wb)
    if got is not None and min(got[0].imag, got[1].imag) >= z.imag - 1e-12:
        w, wb, it = got[0], got[1], it + got[3]
    return _pair_solution(A, B, z, w, wb, it, problem)


def pair_admissible(alpha, beta, wa: complex, wb: complex, tol: float = 1e-8) -> bool:
    if wa.imag > 0 and wb.imag > 0:
        return True
    if wa.imag > 0 or wb.imag > 0:
        return False
    try:
        ia = _F(alpha, complex(wb.real), 1)[1].real - 1
        ib = _F(beta, complex(wa.real), 1)[1].real - 1
    except TransformError:
        return False
    return ia * ib <= 1 + tol


# --- boundary continuation ---------------------------------------------------------


def _solve(problem, z, warm):
    if isinstance(problem, SemigroupProblem):
        return solve_semigroup(problem.hat, problem.t, z, warm)
    return solve_pair(problem.alpha, problem.beta, z, warm, problem=problem)


def _omegas(problem, sol):
    if isinstance(problem, SemigroupProblem):
        return sol.omega
    return (sol.omega_alpha, sol.omega_beta)


def _main_omega(problem, sol) -> complex:
    return sol.omega if isinstance(problem, SemigroupProblem) else sol.omega_beta


def polish_at_boundary(problem, E: float, warm) -> SubordinationSolution | None:
    """Newton at eta = 0 from a warm start; None unless the root is admissible.

    An admissible real root is the Denjoy-Wolff point, so when the complex
    Newton ends close to the axis a real-arithmetic solve is tried first.
    """
    z = complex(float(E), 0.0)
    near = 1e-6 * problem.scale
    if isinstance(problem, SemigroupProblem):
        spec, t = problem.spec, problem.t
        got = _newton_semigroup(spec, t, z, complex(warm))
        if got is None:
            return None
        w, its = got[0], got[2]
        if 0 < w.imag < near:
            real = _newton_semigroup(spec, t, z, complex(w.real, 0.0))
            if real is not None and real[0].imag == 0 and semigroup_admissible(spec, t, real[0]):
                w, its = real[0], its + real[2]
        if w.imag <= 1e-13 * problem.scale and spec.owning_component(w.real) is None:
            w = complex(w.real, 0.0)
        if not semigroup_admissible(spec, t, w):
            return None
        sol = _semigroup_solution(spec, t, z, w, its)
        return replace(sol, in_ac_support=bool(w.imag > SUPPORT_THRESHOLD))
    A, B = problem.alpha, problem.beta
    got = _newton_pair(A, B, z, complex(warm[0]), complex(warm[1]))
    if got is None:
        return None
    wa, wb, its = got[0], got[1], got[3]
    if 0 < max(wa.imag, wb.imag) < near:
        real = _newton_pair(A, B, z, complex(wa.real, 0.0), complex(wb.real, 0.0))
        if (real is not None and real[0].imag == 0 and real[1].imag == 0
                and pair_admissible(A, B, real[0], real[1])):
            wa, wb, its = real[0], real[1], its + real[3]
    if (wa.imag <= 1e-13 * problem.scale and wb.imag <= 1e-13 * problem.scale
            and B.owning_component(wa.real) is None and A.owning_component(wb.real) is None):
        wa, wb = complex(wa.real, 0.0), complex(wb.real, 0.0)
    if not pair_admissible(A, B, wa, wb):
        return None
    sol = _pair_solution(A, B, z, wa, wb, its, problem)
    return replace(sol, in_ac_support=bool(wb.imag > SUPPORT_THRESHOLD))


def continue_to_boundary(problem: SemigroupProblem | PairProblem, E: float,
                         schedule: ContinuationSchedule | None = None,
                         warm_start=None) -> SubordinationSolution:
    """Boundary value of the subordination function(s) at the real point E."""
    schedule = schedule or ContinuationSchedule()
    E = float(E)
    warm = warm_start
    history = []
    total = 0
    for eta in schedule.etas():
        sol = _solve(problem, complex(E, eta), warm)
        total += sol.iterations
        warm = _omegas(problem, sol)
        history.append((eta, warm))
    (e1, w1), (e2, w2) = history[-2], history[-1]
    for start in _polish_starts(warm, w1, e1, e2):
        polished = polish_at_boundary(problem, E, start)
        if polished is not None:
            return replace(polished, iterations=total + polished.iterations)
    notes = ()
    # eta-derivative estimates over the last three rungs: a differentiable boundary
    # value gives ratio 1/schedule.ratio, a cube-root cusp gives much less
    if len(history) >= 3:
        w0 = history[-3][1]
        d_old = np.abs(np.subtract(w1, w0))
        d_new = np.abs(np.subtract(w2, w1))
        r = float(np.max(d_old) / max(np.max(d_new), 1e-300))
        if r < 0.75 / schedule.ratio:
            notes = ("CuspSuspect",)
    if schedule.extrapolate and not notes:
        w = np.asarray(w2) - e2 * (np.asarray(w1) - np.asarray(w2)) / (e1 - e2)
        w = np.asarray([complex(v.real, max(v.imag, 0.0)) for v in np.atleast_1d(w)])
    else:
        w = np.atleast_1d(np.asarray(w2))
    z = complex(E, 0.0)
    if isinstance(problem, SemigroupProblem):
        sol = _semigroup_solution(problem.spec, problem.t, z, complex(w[0]), total, Status.CONVERGED)
        main = sol.omega
    else:
        sol = _pair_solution(problem.alpha, problem.beta, z, complex(w[0]), complex(w[1]), total, problem,
                             Status.CONVERGED)
        main = sol.omega_beta
        if _pair_status(problem, sol.omega_beta, sol.omega_alpha) is Status.NEAR_HAT_ATOM:
            sol = replace(sol, status=Status.NEAR_HAT_ATOM)
    if not notes and schedule.extrapolate:
        notes = ("Extrapolated",)
    return replace(sol, in_ac_support=bool(main.imag > SUPPORT_THRESHOLD), annotations=notes)


def _polish_starts(w2, w1, e1, e2):
    """Newton starts at eta = 0: the last rung, the extrapolation, then nudges either side.

    Near an edge two real roots sit about sqrt(distance) apart and only one is
    admissible, so a single start can land on the wrong one.
    """
    a2, a1 = np.atleast_1d(np.asarray(w2, dtype=complex)), np.atleast_1d(np.asarray(w1, dtype=complex))
    ext = a2 - e2 * (a1 - a2) / (e1 - e2)
    step = np.maximum(np.abs(a2 - a1), np.abs(a2.imag)) + 1e-12
    starts = [a2, ext, a2.real + step, a2.real - step, a2.real + 10 * step, a2.real - 10 * step]
    out = []
    for st in starts:
        st = np.asarray(st, dtype=complex)
        out.append(complex(st[0]) if st.size == 1 and not isinstance(w2, tuple) else tuple(complex(v) for v in st))
    return out


def boundary_chain(problem, Es, schedule: ContinuationSchedule | None = None) -> list[SubordinationSolution]:
    """Boundary values along a sorted grid, warm-starting each Newton solve from its neighbour."""
    out = []
    warm = None
    for E in Es:
        sol = None
        if warm is not None:
            sol = polish_at_boundary(problem, E, _kick(problem, warm))
        if sol is None:
            sol = continue_to_boundary(problem, E, schedule)
        out.append(sol)
        warm = _omegas(problem, sol)
    return out


def _kick(problem, warm):
    # a real warm start keeps Newton on the real axis (conjugate symmetry), so push it up
    eps = 1e-3 * problem.scale
    if isinstance(problem, SemigroupProblem):
        return complex(warm.real, max(warm.imag, eps))
    return tuple(complex(w.real, max(w.imag, eps)) for w in warm)
