"""End-to-end acceptance checks, one per criterion.

Each test prints a single `criterion N: PASS|FAIL ...` line (also collected
into the acceptance summary at the end of the pytest run).
"""
import math
import time

import numpy as np
import pytest

from freeconv import measures as M
from freeconv import rmt_oracle as R
from freeconv import spectrum as S
from freeconv import transforms as T
from freeconv.subordination import pair_residuals, semigroup_residual
from conftest import cusp_atoms, plateau_measure, two_cut


VERDICTS = []


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, detail


def sc_density(E, var):
    return np.sqrt(np.clip(4 * var - np.asarray(E) ** 2, 0, None)) / (2 * np.pi * var)


def test_criterion_1_semicircle_semigroup():
    sc = M.semicircle()
    hat = T.hat_measure(sc)
    t0 = time.perf_counter()
    worst_rho, worst_edge = 0.0, 0.0
    for t in (1.5, 2.0, 3.0):
        r = 2 * math.sqrt(t)
        Es = np.linspace(-r + 0.05, r - 0.05, 2001)
        grid = S.semigroup_density_grid(hat, sc, t, Es)
        worst_rho = max(worst_rho, float(np.max(np.abs(grid.values - sc_density(Es, t)))))
        lo, hi = S.support_semigroup(hat, sc, t).components_z[0]
        worst_edge = max(worst_edge, abs(lo + r), abs(hi - r))
    elapsed = time.perf_counter() - t0
    ok = worst_rho <= 1e-6 and worst_edge <= 1e-8 and elapsed <= 10
    verdict(1, ok, f"density err {worst_rho:.2e}, edge err {worst_edge:.2e}, {elapsed:.1f}s")


def test_criterion_2_free_poisson():
    mp = M.free_poisson(0.5)
    hat = T.hat_measure(mp)
    t = 1.6
    a, b = (1 - math.sqrt(0.8)) ** 2, (1 + math.sqrt(0.8)) ** 2
    Es = np.linspace(a + 0.05, b - 0.05, 2001)
    grid = S.semigroup_density_grid(hat, mp, t, Es)
    err = float(np.max(np.abs(grid.values - M.free_poisson_density(Es, 0.8))))
    atoms = S.semigroup_atoms(mp, t)
    atom_ok = len(atoms) == 1 and abs(atoms[0][0]) <= 1e-12 and abs(atoms[0][1] - 0.2) <= 4 * np.finfo(float).eps
    verdict(2, err <= 1e-5 and atom_ok, f"density err {err:.2e}, atoms {atoms}")


def test_criterion_3_bernoulli_semigroup():
    b = M.bernoulli()
    hat = T.hat_measure(b)
    errs, notes = [], []
    for t in (1.5, 2.0):
        r = 2 * math.sqrt(t - 1)
        (lo, hi), = S.support_semigroup(hat, b, t).components_z
        errs.append(max(abs(lo + r), abs(hi - r)))
        notes.append(S.semigroup_atoms(b, t))
    atoms_ok = (len(notes[0]) == 2
                and all(abs(abs(x) - 1.5) <= 1e-12 and abs(m - 0.25) <= 1e-12 for x, m in notes[0])
                and notes[1] == [])
    rho0 = S.semigroup_density(hat, b, 2.0, 0.0)
    rho_err = abs(rho0 - 1 / (2 * math.pi))
    ok = max(errs) <= 1e-8 and atoms_ok and rho_err <= 1e-8
    verdict(3, ok, f"support err {max(errs):.2e}, atoms {notes}, rho_2(0) err {rho_err:.2e}")


def test_criterion_4_cusp():
    spec = cusp_atoms()
    hat = T.hat_measure(spec)
    parts = {}
    cps = S.critical_times(hat, spec)
    parts["critical"] = (len(cps) == 1 and abs(cps[0].t_star - 2) <= 1e-9 and abs(cps[0].z0) <= 1e-9,
                         [(c.t_star, c.z0) for c in cps])
    # t = 2: profile at 0, both sides
    prof, _ = S.atom_profile(hat, spec, 2.0, 0.0)
    ks = [k for k in (prof.fitted_left, prof.fitted_right) if k is not None]
    parts["t=2 exponent 1/3"] = (bool(ks) and all(abs(k - 1 / 3) <= 0.02 for k in ks), ks)
    rep = S.support_semigroup(hat, spec, 1.8)
    inner = [rep.components_z[0][1], rep.components_z[1][0]]
    ks18 = [S.classify_semigroup_edge(hat, spec, 1.8, e, rep).fitted_exponent for e in inner]
    parts["t=1.8 inner 1/2"] = (all(abs(k - 0.5) <= 0.02 for k in ks18), ks18)
    try:
        qm = S.quadratic_minimum(hat, spec, 2.001, cps[0])
        parts["t=2.001 quadratic"] = (qm.kind is S.EdgeKind.QUADRATIC_MINIMUM
                                      and abs(qm.fitted_exponent - 2) <= 0.1, qm.fitted_exponent)
    except (S.SpectrumError, ValueError) as exc:
        parts["t=2.001 quadratic"] = (False, f"{type(exc).__name__}: {exc}")
    ok = all(p[0] for p in parts.values())
    verdict(4, ok, "; ".join(f"{k} {'ok' if v[0] else 'no'} {v[1]}" for k, v in parts.items()))


def test_criterion_5_sqrt_constant():
    spec = two_cut(a=1.0, b=2.0, exps=(0.5, -0.5))
    hat = T.hat_measure(spec)
    t = 1.3
    rep = S.support_semigroup(hat, spec, t)
    ratios = []
    for e in rep.edges:
        r = S.classify_semigroup_edge(hat, spec, t, e, rep)
        ratios.append(r.fitted_constant / r.theory_constant)
    worst = max(abs(q - 1) for q in ratios)
    ok = len(ratios) >= 4 and worst <= 0.05
    verdict(5, ok, f"{len(ratios)} edges, worst relative constant error {worst:.2e}")


def test_criterion_6_plateau():
    spec = plateau_measure()
    hat = T.hat_measure(spec)
    Es = np.array([-1e-4, -5e-5, -1e-5, 1e-5, 5e-5, 1e-4])
    vals = np.array([S.semigroup_density(hat, spec, 1.5, E) for E in Es])
    err = float(np.max(np.abs(vals - 0.7)))
    verdict(6, err <= 1e-3, f"plateau {vals.mean():.7f}, distance to 0.7 is {err:.3f}")


def test_criterion_7_critical_atom_divergence():
    b = M.bernoulli()
    hat = T.hat_measure(b)
    ks = []
    for x in (-1.0, 1.0):
        prof, _ = S.atom_profile(hat, b, 2.0, x)
        ks += [k for k in (prof.fitted_left, prof.fitted_right) if k is not None]
    ok = bool(ks) and all(abs(k + 0.5) <= 0.03 for k in ks)
    verdict(7, ok, f"one-sided exponents {ks}")


def test_criterion_8_pair():
    sc, b = M.semicircle(), M.bernoulli()
    Es = np.linspace(-2.8, 2.8, 1001)
    err_sc = float(np.max(np.abs(S.pair_density_grid(sc, sc, Es).values - sc_density(Es, 2.0))))
    err_b = abs(S.pair_density(b, b, 0.0) - 1 / (2 * math.pi))
    two = M.validate(M.MeasureSpec((M.JacobiComponent(-2, -0.5, 0.5, -0.5, 0.5),
                                    M.JacobiComponent(0.5, 2, -0.5, 0.5, 0.5)), ()))
    one = M.validate(M.MeasureSpec((M.JacobiComponent(-1, 1.5, 0.5, 0.3, 1.0, (1, 0.3)),), ()))
    rep = S.support_pair(two, one)
    outer = (rep.edges[0], rep.edges[-1])
    cls_ok, notes = True, []
    for e in rep.edges:
        r = S.classify_pair_edge(two, one, e, rep)
        d = r.details
        if abs(d["z2"]) < d["tol_cusp"]:
            cls_ok &= d["z3"] < 0
        if e in outer:
            cls_ok &= r.kind in (S.EdgeKind.SQUARE_ROOT_LEFT, S.EdgeKind.SQUARE_ROOT_RIGHT)
            cls_ok &= abs(r.fitted_exponent - 0.5) <= 0.02
        notes.append(f"{e:.4f}:{r.kind_label}:{r.fitted_exponent:.3f}")
    ok = err_sc <= 1e-6 and err_b <= 1e-8 and cls_ok
    verdict(8, ok, f"sc err {err_sc:.2e}, arcsine rho(0) err {err_b:.2e}, edges {notes}")


def _semigroup_runs():
    sc, b = M.semicircle(), M.bernoulli()
    return [(sc, 2.0), (sc, 1.5), (b, 1.5), (b, 2.0), (M.free_poisson(0.5), 1.6),
            (cusp_atoms(), 1.8), (plateau_measure(), 1.5), (two_cut(a=1.0, exps=(0.5, -0.5)), 1.3)]


def test_criterion_9_invariants():
    fails = []
    for spec, t in _semigroup_runs():
        hat = T.hat_measure(spec)
        if abs(hat.total_mass - M.moment(spec, 2) + M.moment(spec, 1) ** 2) > 1e-8:
            fails.append(f"hat mass {hat.total_mass} vs variance")
        rep = S.support_semigroup(hat, spec, t)
        Es = S.clustered_grid(rep.components_z, 600)
        sols = S.semigroup_solutions(hat, t, Es)
        for sol in sols:
            w = sol.omega
            res = semigroup_residual(spec, t, sol.z, w) / max(1.0, abs(w))
            if res > 1e-10 or w.imag < sol.z.imag:
                fails.append(f"semigroup t={t} z={sol.z}: residual {res:.1e}, Im w {w.imag}")
                continue
            try:
                I = T.I_function(hat, w)
            except T.TransformError:
                continue
            if I > 1 / (t - 1) + 1e-8:
                fails.append(f"I_hat {I} > 1/(t-1) at z={sol.z}")
        mass = S.component_mass(lambda x: S.semigroup_density_grid(hat, spec, t, x), rep.components_z)
        mass += sum(m for _, m in rep.atoms)
        if abs(mass - 1) > 1e-6:
            fails.append(f"mass {mass} for t={t}")
    sc, u = M.semicircle(), M.uniform(-1.5, 1.5)
    for a, b in [(sc, sc), (sc, u), (M.bernoulli(), u)]:
        ha, hb = T.hat_measure(a), T.hat_measure(b)
        rep = S.support_pair(a, b)
        Es = S.clustered_grid(rep.components_z, 600)
        for sol in S.pair_solutions(a, b, Es):
            wa, wb = sol.omega_alpha, sol.omega_beta
            r1, r2 = pair_residuals(a, b, sol.z, wa, wb)
            if max(r1, r2) / max(1.0, abs(wa), abs(wb)) > 1e-10:
                fails.append(f"pair residual {max(r1, r2):.1e} at z={sol.z}")
            try:
                prod = T.I_function(ha, wb) * T.I_function(hb, wa)
            except T.TransformError:
                continue
            if prod > 1 + 1e-8:
                fails.append(f"I.I = {prod} at z={sol.z}")
        mass = S.component_mass(lambda x: S.pair_density_grid(a, b, x), rep.components_z)
        mass += sum(m for _, m in rep.atoms)
        if abs(mass - 1) > 1e-6:
            fails.append(f"pair mass {mass}")
    verdict(9, not fails, f"{len(fails)} violations {fails}")


@pytest.mark.parametrize("case", ["semicircle", "bernoulli", "pair"])
def test_criterion_10_rmt(case):
    sc = M.semicircle()
    t0 = time.perf_counter()
    if case == "semicircle":
        res = R.validate_semigroup(sc, 2, N=2000, trials=4, seed=0)
    elif case == "bernoulli":
        res = R.validate_semigroup(M.bernoulli(), 2, N=2000, trials=4, seed=0)
    else:
        res = R.validate_pair(sc, sc, N=2000, trials=4, seed=0)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed <= 120
    verdict(10, ok, f"({case}) KS {[round(k, 4) for k in res.ks]}, {elapsed:.1f}s")
