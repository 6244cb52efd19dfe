"""Random-matrix cross-checks: spectra of Haar-rotated sums against computed convolutions."""
from __future__ import annotations

import enum
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import measures
from .measures import MeasureSpec
from .spectrum import DensityGrid, pair_density_grid, semigroup_density_grid
from .transforms import hat_measure

MAX_N = 4096
KS_THRESHOLD = 0.05


class RmtError(RuntimeError):
    pass


class EigensolverFailure(RmtError):
    pass


class RangeMismatch(RmtError):
    pass


class Construction(str, enum.Enum):
    SemigroupSum = "SemigroupSum"
    PairSum = "PairSum"


@dataclass(frozen=True)
class SpectralSample:
    eigenvalues: np.ndarray
    n: int
    seed: int
    construction: Construction
    copies: int = 2
    trial: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        for x in self.eigenvalues:
            buf.write(f"{x:.17g}\n")
        return buf.getvalue()


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def haar_orthogonal(N: int, seed) -> np.ndarray:
    """Haar orthogonal matrix from the QR of a Gaussian matrix with the R-diagonal sign fix."""
    if N < 2:
        raise ValueError("N must be at least 2")
    G = _rng(seed).standard_normal((N, N))
    Q, R = np.linalg.qr(G)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def quantile_diagonal(spec: MeasureSpec, N: int) -> np.ndarray:
    """Entries quantile((i - 1/2)/N) of the original (uncentered) measure."""
    ps = (np.arange(N) + 0.5) / N
    return measures.quantiles(spec, ps) + spec.centering_shift


def _check_n(N):
    if not 2 <= N <= MAX_N:
        raise ValueError(f"N must lie in [2, {MAX_N}]")


def _eigvals(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    try:
        ev = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(ev)):
        raise EigensolverFailure("non-finite eigenvalues")
    return np.sort(ev)


def _rotate(D: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return (Q * D) @ Q.T


def sample_spectrum_semigroup(spec: MeasureSpec, t: int, N: int, seed: int, trial: int = 0) -> SpectralSample:
    if int(t) != t or t < 2:
        raise ValueError("the free-copy construction needs an integer t >= 2")
    _check_n(N)
    t = int(t)
    D = quantile_diagonal(spec, N)
    M = np.zeros((N, N))
    for k in range(t):
        M += _rotate(D, haar_orthogonal(N, [seed, trial, k]))
    return SpectralSample(_eigvals(M), N, seed, Construction.SemigroupSum, t, trial)


def sample_spectrum_pair(spec_alpha: MeasureSpec, spec_beta: MeasureSpec, N: int, seed: int,
                         trial: int = 0) -> SpectralSample:
    _check_n(N)
    A = quantile_diagonal(spec_alpha, N)
    B = quantile_diagonal(spec_beta, N)
    M = np.diag(A) + _rotate(B, haar_orthogonal(N, [seed, trial, 0]))
    return SpectralSample(_eigvals(M), N, seed, Construction.PairSum, 2, trial)


def predicted_cdf(grid: DensityGrid, x, atom_tol: float = 1e-9, strict: bool = False) -> np.ndarray:
    """CDF of grid density plus atoms; strict=True gives the left limit F(x-)."""
    E = np.asarray(grid.abscissae, dtype=float)
    rho = np.where(np.isfinite(grid.values), grid.values, 0.0)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(E))])
    x = np.asarray(x, dtype=float)
    out = np.interp(x, E, cum, left=0.0, right=cum[-1])
    for loc, mass in grid.atoms:
        below = x > loc + atom_tol if strict else x >= loc - atom_tol
        out = out + np.where(below, mass, 0.0)
    return np.clip(out, 0.0, 1.0)


def ks_distance(sample: SpectralSample | np.ndarray, predicted: DensityGrid, atom_tol: float | None = None) -> float:
    """sup |F_emp - F_pred| over the sample points, both one-sided limits included."""
    ev = np.sort(np.asarray(getattr(sample, "eigenvalues", sample), dtype=float))
    E = predicted.abscissae
    lo, hi = float(E[0]), float(E[-1])
    scale = max(1.0, abs(lo), abs(hi))
    slack = 1e-9 * scale
    if ev[0] < lo - slack or ev[-1] > hi + slack:
        raise RangeMismatch(f"sample range [{ev[0]}, {ev[-1]}] exceeds grid [{lo}, {hi}]")
    tol = slack if atom_tol is None else atom_tol
    n = len(ev)
    u, counts = np.unique(ev, return_counts=True)
    upper = np.cumsum(counts) / n
    lower = upper - counts / n
    Fu = predicted_cdf(predicted, u, tol)
    Fl = predicted_cdf(predicted, u, tol, strict=True)
    return float(max(np.max(np.abs(upper - Fu)), np.max(np.abs(lower - Fl))))


def ks_two_sample(a: SpectralSample | np.ndarray, b: SpectralSample | np.ndarray) -> float:
    from scipy.stats import ks_2samp

    xa = np.asarray(getattr(a, "eigenvalues", a))
    xb = np.asarray(getattr(b, "eigenvalues", b))
    return float(ks_2samp(xa, xb).statistic)


@dataclass
class RmtValidation:
    case: str
    n: int
    seed: int
    ks: list[float]
    threshold: float = KS_THRESHOLD
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(k <= self.threshold for k in self.ks)

    def to_dict(self) -> dict:
        return {"case": self.case, "n": self.n, "seed": self.seed, "ks": [float(k) for k in self.ks],
                "threshold": self.threshold, "passed": self.passed, **self.details}


def _grid_over(samples, pad, points):
    lo = min(float(s.eigenvalues[0]) for s in samples) - pad
    hi = max(float(s.eigenvalues[-1]) for s in samples) + pad
    return np.linspace(lo, hi, points)


def _trials(make, trials, threads):
    if threads > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(make, range(trials)))
    return [make(k) for k in range(trials)]


def validate_semigroup(spec: MeasureSpec, t: int, N: int = 2000, trials: int = 4, seed: int = 0,
                       threads: int | None = None, points: int = 4001,
                       threshold: float = KS_THRESHOLD) -> RmtValidation:
    threads = threads or os.cpu_count() or 1
    samples = _trials(lambda k: sample_spectrum_semigroup(spec, t, N, seed, k), trials, threads)
    pad = 0.05 * (1.0 + t * spec.support_radius)
    grid = semigroup_density_grid(hat_measure(spec), spec, t, _grid_over(samples, pad, points), threads)
    return RmtValidation(f"semigroup t={t}", N, seed, [ks_distance(s, grid) for s in samples], threshold,
                         {"grid_mass": grid.total_mass()})


def validate_pair(spec_alpha: MeasureSpec, spec_beta: MeasureSpec, N: int = 2000, trials: int = 4,
                  seed: int = 0, threads: int | None = None, points: int = 4001,
                  threshold: float = KS_THRESHOLD) -> RmtValidation:
    threads = threads or os.cpu_count() or 1
    samples = _trials(lambda k: sample_spectrum_pair(spec_alpha, spec_beta, N, seed, k), trials, threads)
    pad = 0.05 * (1.0 + spec_alpha.support_radius + spec_beta.support_radius)
    grid = pair_density_grid(spec_alpha, spec_beta, _grid_over(samples, pad, points), threads)
    return RmtValidation("pair", N, seed, [ks_distance(s, grid) for s in samples], threshold,
                         {"grid_mass": grid.total_mass()})
