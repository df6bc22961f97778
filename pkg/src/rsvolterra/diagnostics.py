"""Quenched burst statistics, tail estimation and phase-diagram assembly."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .montecarlo import substream_seed
from .network import LaplacianSpectrum, band_projection, ipr
from .regime import GeneratorMatrix, stationary_dist
from .volterra import SystemConfig, Trajectory, simulate_paths

__all__ = [
    "TailFitError",
    "BurstRecord",
    "Ccdf",
    "TailFit",
    "GrowthSummary",
    "PhaseCell",
    "burst_stats",
    "empirical_ccdf",
    "tail_exponent_regression",
    "hill_estimator",
    "theoretical_tail_exponent",
    "burst_moment",
    "growth_summary",
    "phase_diagram",
    "write_bursts_csv",
    "write_ccdf_csv",
    "write_phase_csv",
]

INFINITE_MOMENT = math.inf


class TailFitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BurstRecord:
    """Per-path burst summary.

    ``z_star`` is the full normalized peak state (shape ``(2, n)``); IPR and
    band fractions are taken on its excitation channel ``z_star[1]``.
    """

    path_id: int
    seed: int
    B: float
    t_star: float
    gamma_T: float
    z_star: Optional[np.ndarray]
    ipr: float
    band_fractions: np.ndarray
    censored: bool = False
    degenerate: bool = False


def burst_stats(traj: Trajectory, spectrum: Optional[LaplacianSpectrum] = None,
                n_bands: int = 4, path_id: int = 0, seed: int = 0) -> BurstRecord:
    u0 = float(np.linalg.norm(traj.u0))
    nb = n_bands if spectrum is not None else 0
    if u0 == 0.0:
        return BurstRecord(path_id, seed, math.nan, 0.0, math.nan, None, math.nan,
                           np.full(nb, math.nan), traj.overflow, True)
    norms = traj.norms
    idx = int(np.argmax(norms))
    B = float(norms[idx]) / u0
    gamma = math.log(norms[-1] / u0) / traj.T if norms[-1] > 0 else -math.inf
    peak = traj.peak_state
    if not np.any(peak):
        return BurstRecord(path_id, seed, B, float(traj.times[idx]), gamma, None, math.nan,
                           np.full(nb, math.nan), traj.overflow, True)
    z = peak / np.linalg.norm(peak)
    chan = z[1] if np.any(z[1]) else z[0]
    bands = band_projection(spectrum, chan, n_bands) if spectrum is not None else np.empty(0)
    return BurstRecord(path_id, seed, B, float(traj.times[idx]), gamma, z, ipr(chan),
                       bands, traj.overflow)


@dataclass(frozen=True, eq=False)
class Ccdf:
    """Empirical survival function at the distinct sample values."""

    values: np.ndarray
    survival: np.ndarray
    censored: np.ndarray
    n_samples: int


def empirical_ccdf(samples, censored=None) -> Ccdf:
    """``S(x_(i)) = (n - i)/n`` at ascending order statistics, ties collapsed.

    A value is flagged censored if any sample equal to it is censored.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample")
    c = np.zeros(x.size, bool) if censored is None else np.asarray(censored, bool).ravel()
    order = np.argsort(x, kind="stable")
    x, c = x[order], c[order]
    n = x.size
    vals, first, counts = np.unique(x, return_index=True, return_counts=True)
    surv = (n - (first + counts)) / n
    cens = np.logical_or.reduceat(c, first)
    return Ccdf(vals, surv, cens, n)


@dataclass(frozen=True)
class TailFit:
    exponent: float
    method: str
    window: tuple
    stderr: float
    n_samples: int
    n_points: int
    r2: float = math.nan


def tail_exponent_regression(ccdf: Ccdf, q_lo: float = 0.75, q_hi: float = 0.995,
                             min_points: int = 30) -> TailFit:
    """OLS of log survival on log value over CDF levels ``[q_lo, q_hi]``."""
    F = 1.0 - ccdf.survival
    sel = ((F >= q_lo) & (F <= q_hi) & (ccdf.survival > 0) & (ccdf.values > 0)
           & ~ccdf.censored)
    if sel.sum() < min_points:
        raise TailFitError(f"only {int(sel.sum())} points in the window, need {min_points}")
    fit = stats.linregress(np.log(ccdf.values[sel]), np.log(ccdf.survival[sel]))
    return TailFit(-float(fit.slope), "ccdf_regression", (q_lo, q_hi), float(fit.stderr),
                   ccdf.n_samples, int(sel.sum()), float(fit.rvalue ** 2))


def hill_estimator(samples, k: int) -> TailFit:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if np.any(x <= 0):
        raise ValueError("Hill estimator needs positive samples")
    n = x.size
    if k < 20 or k >= n:
        raise TailFitError(f"need 20 <= k < n, got k={k}, n={n}")
    logs = np.log(x[n - k:]) - math.log(x[n - k - 1])
    s = float(np.sum(logs))
    if s <= 0:
        raise TailFitError("top order statistics are tied; no tail to estimate")
    est = k / s
    return TailFit(est, "hill", (k,), est / math.sqrt(k), n, k)


def theoretical_tail_exponent(q_us: float, gamma_u: float) -> float:
    if gamma_u <= 0:
        raise ValueError("gamma_U must be positive for unstable amplification")
    if q_us <= 0:
        raise ValueError("q_US must be positive")
    return q_us / gamma_u


def burst_moment(p: float, q_us: float, gamma_u: float) -> float:
    """``E[B^p]`` for ``B = exp(gamma_U tau)``, ``tau ~ Exp(q_US)``."""
    theoretical_tail_exponent(q_us, gamma_u)
    if p * gamma_u >= q_us:
        return INFINITE_MOMENT
    return q_us / (q_us - p * gamma_u)


@dataclass(frozen=True)
class GrowthSummary:
    median: float
    quantiles: dict
    frac_positive: float
    n: int


def _lower_quantile(x_sorted, q):
    i = max(int(math.ceil(q * x_sorted.size)) - 1, 0)
    return float(x_sorted[i])


def growth_summary(values, quantiles: Sequence[float] = (0.1, 0.25, 0.75, 0.9)) -> GrowthSummary:
    """Order-statistic summary of growth proxies.

    Accepts BurstRecords or plain numbers.  The median is the lower median.
    """
    g = np.array([v.gamma_T if isinstance(v, BurstRecord) else v for v in values], dtype=float)
    g = g[~np.isnan(g)]
    if g.size == 0:
        raise ValueError("need at least one growth value")
    g.sort()
    med = float(g[(g.size - 1) // 2])
    qs = {float(q): _lower_quantile(g, q) for q in quantiles}
    return GrowthSummary(med, qs, float(np.mean(g > 0)), int(g.size))


@dataclass(frozen=True)
class PhaseCell:
    q_su: float
    q_us: float
    p_burst: float
    med_gamma_T: float
    frac_pos: float
    annealed: bool
    mean_terminal: float
    n_paths: int
    rho_bar: float
    censor_frac: float


def _phase_reduce(i, seed, path, traj):
    return float(traj.norms.max()), float(traj.norms[-1]), bool(traj.overflow)


def phase_diagram(sys: SystemConfig, rates: Sequence[tuple], n_paths: int, seed: int,
                  b_rel: float = 10.0, theta_ann: float = 5.0, init: Optional[int] = None,
                  workers: int = 1) -> list:
    """One PhaseCell per ``(q_SU, q_US)``.

    Path ``p`` of every cell uses substream ``p`` of ``seed``; paths within a
    cell are independent, and cells share random numbers, which sharpens
    comparisons across the grid.
    """
    if n_paths < 30:
        raise ValueError("need at least 30 paths per cell")
    u0 = float(np.linalg.norm(sys.u0))
    if u0 == 0:
        raise ValueError("phase diagram needs a nonzero initial state")
    seeds = [substream_seed(seed, p) for p in range(n_paths)]
    rho = np.asarray(sys.operators.rho, float)
    cells = []
    for q_su, q_us in rates:
        Q = GeneratorMatrix.two_state(q_su, q_us)
        runs = simulate_paths(sys, Q, seeds, init, _phase_reduce, workers)
        peaks = np.array([r[0] for r in runs]) / u0
        term = np.array([r[1] for r in runs])
        cens = np.array([r[2] for r in runs])
        gam = np.log(term / u0) / sys.T
        summ = growth_summary(gam)
        mean_term = float(np.mean(term))
        cells.append(PhaseCell(float(q_su), float(q_us), float(np.mean((peaks > b_rel) | cens)),
                               summ.median, summ.frac_positive,
                               bool(mean_term <= theta_ann * u0 and not cens.any()),
                               mean_term, n_paths, float(stationary_dist(Q) @ rho),
                               float(cens.mean())))
    return cells


def write_bursts_csv(records: Sequence[BurstRecord], fh) -> None:
    nb = max((r.band_fractions.size for r in records), default=0)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_id", "seed", "B", "t_star", "gamma_T", "ipr", "censored"]
               + [f"band_{i}" for i in range(nb)])
    for r in records:
        w.writerow([r.path_id, r.seed, repr(r.B), repr(r.t_star), repr(r.gamma_T),
                    repr(r.ipr), int(r.censored)] + [repr(float(b)) for b in r.band_fractions])


def write_ccdf_csv(ccdf: Ccdf, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["value", "survival", "censored"])
    for v, s, c in zip(ccdf.values, ccdf.survival, ccdf.censored):
        w.writerow([repr(float(v)), repr(float(s)), int(c)])


def write_phase_csv(cells: Sequence[PhaseCell], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["q_SU", "q_US", "P_burst", "med_gamma_T", "frac_pos", "annealed",
                "rho_bar", "censor_frac", "mean_terminal", "n_paths"])
    for c in cells:
        w.writerow([repr(c.q_su), repr(c.q_us), repr(c.p_burst), repr(c.med_gamma_T),
                    repr(c.frac_pos), int(c.annealed), repr(c.rho_bar), repr(c.censor_frac),
                    repr(c.mean_terminal), c.n_paths])
