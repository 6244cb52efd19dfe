"""Jacobi-type measures with atoms: data model, validation, quadrature, sampling.

A component on [lo, hi] has density proportional to

    (x - lo)**a * (hi - x)**b * g(s),   s = (x - c) / h,

where c, h are the midpoint and half-width and g is a Chebyshev series in s
that is strictly positive on [-1, 1].
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import optimize, special


class MeasureError(ValueError):
    code = "InvalidMeasure"


class ExponentOutOfRange(MeasureError):
    code = "ExponentOutOfRange"


class MassMismatch(MeasureError):
    code = "MassMismatch"


class OverlappingComponents(MeasureError):
    code = "OverlappingComponents"


class NonpositiveSmoothFactor(MeasureError):
    code = "NonpositiveSmoothFactor"


MASS_TOL = 1e-9


def _jacobi_eval(n: int, al: float, be: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P_n^(al,be)(x) and its derivative by the three-term recurrence."""
    p0 = np.ones_like(x)
    p1 = 0.5 * (al - be + (al + be + 2) * x)
    if n == 1:
        return p1, np.full_like(x, 0.5 * (al + be + 2))
    for k in range(2, n + 1):
        c = 2 * k + al + be
        a1 = 2 * k * (k + al + be) * (c - 2)
        a2 = (c - 1) * (al * al - be * be)
        a3 = (c - 2) * (c - 1) * c
        a4 = 2 * (k + al - 1) * (k + be - 1) * c
        p0, p1 = p1, ((a2 + a3 * x) * p1 - a4 * p0) / a1
    c = 2 * n + al + be
    dp = (n * (al - be - c * x) * p1 + 2 * (n + al) * (n + be) * p0) / (c * (1 - x) * (1 + x))
    return p1, dp


@lru_cache(maxsize=256)
def jacobi_rule_unit(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [-1, 1] for the weight (1+s)**a (1-s)**b.

    scipy's nodes are polished by Newton steps on the recurrence and the
    weights recomputed from P_n'; the plain scipy rule loses several digits
    for n in the hundreds when the exponents are far from -1/2.
    """
    al, be = b, a  # scipy / textbook convention: (1-s)**al (1+s)**be
    s, _ = special.roots_jacobi(n, al, be)
    for _ in range(3):
        p, dp = _jacobi_eval(n, al, be, s)
        s = s - p / dp
    _, dp = _jacobi_eval(n, al, be, s)
    logc = (
        (al + be + 1) * math.log(2)
        + special.gammaln(n + al + 1)
        + special.gammaln(n + be + 1)
        - special.gammaln(n + al + be + 1)
        - special.gammaln(n + 1)
    )
    w = np.exp(logc) / ((1 - s) * (1 + s) * dp**2)
    # the gammaln prefactor carries ~n*eps error; pin the total to the Beta integral
    w *= 2.0 ** (a + b + 1) * special.beta(a + 1, b + 1) / w.sum()
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


@dataclass(frozen=True)
class JacobiComponent:
    support_lo: float
    support_hi: float
    left_exponent: float = 0.0
    right_exponent: float = 0.0
    weight: float = 1.0
    smooth_factor: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "smooth_factor", tuple(float(c) for c in self.smooth_factor))

    @property
    def center(self) -> float:
        return 0.5 * (self.support_lo + self.support_hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.support_hi - self.support_lo)

    @property
    def degree(self) -> int:
        return len(self.smooth_factor) - 1

    @cached_property
    def chebyshev_moments(self) -> np.ndarray:
        """M_j = integral of (1+s)^a (1-s)^b T_j(s) over [-1, 1]."""
        d = self.degree
        s, w = jacobi_rule_unit(d // 2 + 2, self.left_exponent, self.right_exponent)
        T = C.chebvander(s, max(d, 0))
        return w @ T

    @cached_property
    def unit_norm(self) -> float:
        """Integral of (1+s)^a (1-s)^b g(s) ds over [-1, 1]."""
        return float(np.dot(self.smooth_factor, self.chebyshev_moments))

    @property
    def scale(self) -> float:
        """Factor K with dmu = K (1+s)^a (1-s)^b g(s) ds."""
        return self.weight / self.unit_norm

    def to_unit(self, x):
        return (np.asarray(x) - self.center) / self.half_width

    def g(self, s):
        return C.chebval(s, self.smooth_factor)

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = self.to_unit(x)
        out = np.zeros_like(s)
        inside = (s > -1) & (s < 1)
        si = s[inside]
        a, b = self.left_exponent, self.right_exponent
        out[inside] = (self.scale / self.half_width) * (1 + si) ** a * (1 - si) ** b * self.g(si)
        # exponent 0 endpoints carry a finite one-sided value
        out[(s == -1) & (a == 0)] = (self.scale / self.half_width) * 2.0 ** b * self.g(-1.0)
        out[(s == 1) & (b == 0)] = (self.scale / self.half_width) * 2.0 ** a * self.g(1.0)
        out[((s == -1) & (a < 0)) | ((s == 1) & (b < 0))] = np.inf
        return out

    def rule(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights for the measure itself (weights sum to `weight`)."""
        s, w = jacobi_rule_unit(n, self.left_exponent, self.right_exponent)
        return self.center + self.half_width * s, self.scale * w * self.g(s)

    def cdf(self, x: float) -> float:
        """Mass of the component on [lo, x]."""
        if x <= self.support_lo:
            return 0.0
        if x >= self.support_hi:
            return self.weight
        a, b = self.left_exponent, self.right_exponent
        y = float(self.to_unit(x))
        n = 48 + self.degree
        if y <= 0:
            # integrate from -1 to y with the left singularity in the weight
            hw = 0.5 * (y + 1)
            u, w = jacobi_rule_unit(n, a, 0.0)
            s = -1 + hw * (u + 1)
            val = hw ** (a + 1) * np.sum(w * (1 - s) ** b * self.g(s))
            return float(self.scale * val)
        hw = 0.5 * (1 - y)
        u, w = jacobi_rule_unit(n, 0.0, b)
        s = y + hw * (u + 1)
        val = hw ** (b + 1) * np.sum(w * (1 + s) ** a * self.g(s))
        return float(self.weight - self.scale * val)


@dataclass(frozen=True)
class Atom:
    location: float
    mass: float


@dataclass(frozen=True)
class MeasureSpec:
    components: tuple[JacobiComponent, ...] = ()
    atoms: tuple[Atom, ...] = ()
    strict: bool = True
    centering_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(sorted(self.components, key=lambda c: c.support_lo)))
        object.__setattr__(self, "atoms", tuple(sorted(self.atoms, key=lambda a: a.location)))

    @cached_property
    def atom_locations(self) -> np.ndarray:
        return np.array([a.location for a in self.atoms], dtype=float)

    @cached_property
    def atom_masses(self) -> np.ndarray:
        return np.array([a.mass for a in self.atoms], dtype=float)

    @cached_property
    def support_radius(self) -> float:
        pts = [abs(a.location) for a in self.atoms]
        pts += [max(abs(c.support_lo), abs(c.support_hi)) for c in self.components]
        return max(pts) if pts else 0.0

    @cached_property
    def support_pieces(self) -> list[tuple[float, float]]:
        """Closed pieces of supp(mu) in increasing order; atoms are degenerate intervals."""
        pieces = [(c.support_lo, c.support_hi) for c in self.components]
        for a in self.atoms:
            if not any(lo <= a.location <= hi for lo, hi in pieces):
                pieces.append((a.location, a.location))
        return sorted(pieces)

    @cached_property
    def variance(self) -> float:
        return moment(self, 2)

    def owning_component(self, E: float) -> JacobiComponent | None:
        for c in self.components:
            if c.support_lo <= E <= c.support_hi:
                return c
        return None

    def atom_at(self, E: float, tol: float = 0.0) -> Atom | None:
        for a in self.atoms:
            if abs(a.location - E) <= tol:
                return a
        return None

    def without_atom(self, E0: float) -> "MeasureSpec":
        """Same measure with the atom at E0 removed (not renormalized)."""
        return replace(self, atoms=tuple(a for a in self.atoms if a.location != E0))

    def to_dict(self) -> dict:
        return {
            "atoms": [{"location": a.location, "mass": a.mass} for a in self.atoms],
            "components": [
                {
                    "support": [c.support_lo, c.support_hi],
                    "left_exponent": c.left_exponent,
                    "right_exponent": c.right_exponent,
                    "weight": c.weight,
                    "smooth_factor": list(c.smooth_factor),
                }
                for c in self.components
            ],
            "strict": self.strict,
            "centering_shift": self.centering_shift,
        }


def _parse(raw: dict) -> MeasureSpec:
    comps = []
    for c in raw.get("components", []):
        lo, hi = c["support"]
        comps.append(
            JacobiComponent(
                float(lo),
                float(hi),
                float(c.get("left_exponent", 0.0)),
                float(c.get("right_exponent", 0.0)),
                float(c.get("weight", 1.0)),
                tuple(c.get("smooth_factor", [1.0])),
            )
        )
    atoms = [Atom(float(a["location"]), float(a["mass"])) for a in raw.get("atoms", [])]
    return MeasureSpec(tuple(comps), tuple(atoms), bool(raw.get("strict", True)))


def validate(raw: dict | MeasureSpec) -> MeasureSpec:
    """Check a measure description and return it centered."""
    spec = raw if isinstance(raw, MeasureSpec) else _parse(raw)
    for c in spec.components:
        for e in (c.left_exponent, c.right_exponent):
            if not -1 < e < 1:
                raise ExponentOutOfRange(f"exponent {e} not in (-1, 1)")
        if not c.support_lo < c.support_hi:
            raise MeasureError(f"empty interval [{c.support_lo}, {c.support_hi}]")
        if not c.weight > 0:
            raise MeasureError("component weight must be positive")
        s = np.cos(np.pi * (np.arange(64) + 0.5) / 64)
        if np.any(c.g(s) <= 0) or c.unit_norm <= 0:
            raise NonpositiveSmoothFactor("smooth factor must be positive on the interval")
    locs = [a.location for a in spec.atoms]
    if len(set(locs)) != len(locs):
        raise MeasureError("atom locations must be distinct")
    if any(not a.mass > 0 for a in spec.atoms):
        raise MeasureError("atom masses must be positive")
    total = sum(c.weight for c in spec.components) + sum(a.mass for a in spec.atoms)
    if abs(total - 1) > MASS_TOL:
        raise MassMismatch(f"total mass {total!r} differs from 1")
    if not spec.components and not spec.atoms:
        raise MeasureError("empty measure")
    if spec.strict:
        if not spec.components:
            raise MeasureError("strict mode needs at least one absolutely continuous component")
    comps = spec.components
    for c1, c2 in zip(comps, comps[1:]):
        if c2.support_lo < c1.support_hi or (spec.strict and c2.support_lo == c1.support_hi):
            raise OverlappingComponents(
                f"[{c1.support_lo}, {c1.support_hi}] and [{c2.support_lo}, {c2.support_hi}] overlap"
            )
    mean = moment(spec, 1)
    if mean == 0.0:
        return spec
    comps = tuple(
        replace(c, support_lo=c.support_lo - mean, support_hi=c.support_hi - mean) for c in spec.components
    )
    atoms = tuple(Atom(a.location - mean, a.mass) for a in spec.atoms)
    return MeasureSpec(comps, atoms, spec.strict, spec.centering_shift + mean)


def load(path: str) -> MeasureSpec:
    with open(path) as fh:
        return validate(json.load(fh))


def density_at(spec: MeasureSpec, E) -> np.ndarray | float:
    """Density of the absolutely continuous part (atoms carry none)."""
    E_arr = np.asarray(E, dtype=float)
    out = np.zeros_like(E_arr)
    for c in spec.components:
        out = out + c.density(E_arr)
    return float(out) if out.ndim == 0 else out


def gauss_jacobi_rule(component: JacobiComponent, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point rule on [lo, hi] for the bare weight (x-lo)^a (hi-x)^b."""
    if n < 2:
        raise ValueError("n must be at least 2")
    a, b = component.left_exponent, component.right_exponent
    s, w = jacobi_rule_unit(n, a, b)
    h = component.half_width
    return component.center + h * s, w * h ** (a + b + 1)


def moment(spec: MeasureSpec, k: int) -> float:
    total = float(np.sum(spec.atom_masses * spec.atom_locations**k)) if spec.atoms else 0.0
    for c in spec.components:
        x, w = c.rule(k // 2 + c.degree // 2 + 2)
        total += float(np.sum(w * x**k))
    return total


def cdf(spec: MeasureSpec, x: float) -> float:
    val = sum(a.mass for a in spec.atoms if a.location <= x)
    return val + sum(c.cdf(x) for c in spec.components)


def quantile(spec: MeasureSpec, p: float) -> float:
    """Generalized inverse of the CDF, inf{x : F(x) >= p}."""
    items = [(a.location, "atom", a) for a in spec.atoms] + [(c.support_lo, "comp", c) for c in spec.components]
    items.sort(key=lambda it: it[0])
    acc = 0.0
    for _, kind, obj in items:
        mass = obj.mass if kind == "atom" else obj.weight
        if p <= acc + mass or obj is items[-1][2]:
            if kind == "atom":
                return obj.location
            target = min(max(p - acc, 0.0), obj.weight)
            if target <= 0:
                return obj.support_lo
            if target >= obj.weight:
                return obj.support_hi
            return optimize.brentq(lambda x: obj.cdf(x) - target, obj.support_lo, obj.support_hi, xtol=1e-14)
        acc += mass
    return items[-1][0]


def quantiles(spec: MeasureSpec, ps: Sequence[float]) -> np.ndarray:
    return np.array([quantile(spec, float(p)) for p in ps])


def sample(spec: MeasureSpec, n: int, seed: int) -> np.ndarray:
    """Inverse-CDF samples; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    if not spec.components:
        # purely atomic: searchsorted on the cumulative masses
        cum = np.cumsum(spec.atom_masses)
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
        return spec.atom_locations[idx]
    return quantiles(spec, u)


# --- constructors used by tests, scripts and the CLI ------------------------


def semicircle(variance: float = 1.0) -> MeasureSpec:
    r = 2 * math.sqrt(variance)
    return validate(MeasureSpec((JacobiComponent(-r, r, 0.5, 0.5, 1.0),), ()))


def arcsine(radius: float = 2.0) -> MeasureSpec:
    return validate(MeasureSpec((JacobiComponent(-radius, radius, -0.5, -0.5, 1.0),), ()))


def uniform(lo: float = -1.0, hi: float = 1.0) -> MeasureSpec:
    return validate(MeasureSpec((JacobiComponent(lo, hi, 0.0, 0.0, 1.0),), ()))


def bernoulli(x: float = 1.0) -> MeasureSpec:
    return validate(MeasureSpec((), (Atom(-x, 0.5), Atom(x, 0.5)), strict=False))


def point_mass(x: float = 0.0) -> MeasureSpec:
    return MeasureSpec((), (Atom(x, 1.0),), strict=False)


def atomic(locations: Sequence[float], masses: Sequence[float]) -> MeasureSpec:
    return validate(MeasureSpec((), tuple(Atom(float(x), float(m)) for x, m in zip(locations, masses)), strict=False))


def free_poisson(rate: float, degree: int = 0) -> MeasureSpec:
    """Marchenko-Pastur law with jump size 1 (mean = variance = rate).

    The density sqrt((x-a)(b-x)) / (2 pi x) is a Jacobi weight with
    exponents (1/2, 1/2) times 1/x, which is interpolated in Chebyshev form.
    """
    lam = float(rate)
    a, b = (1 - math.sqrt(lam)) ** 2, (1 + math.sqrt(lam)) ** 2
    c, h = 0.5 * (a + b), 0.5 * (b - a)
    if degree <= 0:
        # 1/x has its pole at s = -c/h; pick the degree from the Bernstein ellipse
        s0 = c / h
        rho = s0 + math.sqrt(s0 * s0 - 1)
        degree = int(math.ceil(36 / math.log(rho))) + 4
    coef = C.chebinterpolate(lambda s: 1.0 / (c + h * s), degree)
    comps = (JacobiComponent(a, b, 0.5, 0.5, min(lam, 1.0), tuple(coef)),)
    atoms = (Atom(0.0, 1 - lam),) if lam < 1 else ()
    return validate(MeasureSpec(comps, atoms))


def free_poisson_density(x, rate: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    a, b = (1 - math.sqrt(rate)) ** 2, (1 + math.sqrt(rate)) ** 2
    inside = (x > a) & (x < b)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = np.sqrt((xi - a) * (b - xi)) / (2 * np.pi * xi)
    return out
