"""Regime-modulated multivariate Hawkes replicas and their mean-field limit.

Each replica ``k`` has intensities

    lambda_i(t) = mu_{z(t), i} + sum_j A_{z(t), ij} int_0^t- g_{z(t)}(t - s) dN_j(s),

and all replicas share one environment path.  The replica average is
compared with the grid solution of ``lambda = mu_z + A_z (g_z * lambda)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .kernels import SOEKernel
from .montecarlo import parallel_map, substream_rng, substream_seed
from .regime import GeneratorMatrix, RegimePath, sample_path

__all__ = [
    "HawkesConfig",
    "EventLog",
    "IntensityPath",
    "MacroSolution",
    "ConvergenceResult",
    "simulate_hawkes",
    "empirical_mean_intensity",
    "solve_macro_volterra",
    "micro_macro_error",
    "convergence_study",
    "time_rescaled_intervals",
    "peak_amplification",
]


@dataclass(frozen=True, eq=False)
class HawkesConfig:
    n: int
    mu: tuple
    A: tuple
    kernels: tuple
    N: int = 100
    T: float = 20.0
    dt: float = 0.01
    max_events: int = 10_000_000
    overflow: float = 1e12

    def __post_init__(self):
        m = len(self.mu)
        if not (len(self.A) == len(self.kernels) == m) or m == 0:
            raise ValueError("one baseline, excitation matrix and kernel per regime")
        mu = tuple(np.array(v, dtype=float).reshape(self.n) for v in self.mu)
        A = tuple(np.array(a, dtype=float).reshape(self.n, self.n) for a in self.A)
        if any(np.any(v < 0) for v in mu):
            raise ValueError("baseline intensities must be nonnegative")
        if any(np.any(a < 0) for a in A):
            raise ValueError("Hawkes excitation matrices must be entrywise nonnegative")
        if self.N < 1 or self.T <= 0 or self.dt <= 0:
            raise ValueError("need N >= 1, T > 0 and dt > 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def m(self) -> int:
        return len(self.mu)

    def replace(self, **changes) -> "HawkesConfig":
        return replace(self, **changes)

    @property
    def branching_ratios(self) -> np.ndarray:
        """Spectral radius of ``A_z G_z`` per regime."""
        return np.array([max(abs(np.linalg.eigvals(a * k.mass))) for a, k in
                         zip(self.A, self.kernels)])

    def bank_layout(self):
        rates = np.concatenate([k.nodes for k in self.kernels])
        W = np.zeros((self.m, rates.size))
        start = 0
        for z, k in enumerate(self.kernels):
            W[z, start:start + k.K] = k.weights
            start += k.K
        return rates, W


@dataclass(eq=False)
class EventLog:
    """``times[k][j]``: sorted event times of node ``j`` in replica ``k``."""

    times: list
    T: float
    truncated: np.ndarray

    @property
    def N(self) -> int:
        return len(self.times)

    @property
    def n(self) -> int:
        return len(self.times[0]) if self.times else 0

    def counts(self) -> np.ndarray:
        return np.array([[t.size for t in rep] for rep in self.times], dtype=np.int64)

    def total(self) -> int:
        return int(self.counts().sum())

    def subset(self, N: int) -> "EventLog":
        return EventLog(self.times[:N], self.T, self.truncated[:N])

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "node", "time"])
        for k, rep in enumerate(self.times):
            node = np.concatenate([np.full(t.size, j) for j, t in enumerate(rep)])
            tt = np.concatenate(rep)
            order = np.argsort(tt, kind="stable")
            for j, t in zip(node[order], tt[order]):
                w.writerow([k, int(j), repr(float(t))])


def _simulate_replica(cfg: HawkesConfig, path: RegimePath, rng: np.random.Generator):
    rates, W = cfg.bank_layout()
    S = np.zeros((rates.size, cfg.n))
    events = [[] for _ in range(cfg.n)]
    count = 0
    truncated = False
    bp = path.breakpoints
    t = 0.0
    for a, b, z in zip(bp[:-1], bp[1:], path.states):
        b = min(b, cfg.T)
        if a >= cfg.T or truncated:
            break
        mu, A, w = cfg.mu[z], cfg.A[z], W[z]
        while True:
            lam = mu + A @ (w @ S)
            bound = lam.sum()
            if bound <= 0:
                S *= np.exp(-rates * (b - t))[:, None]
                t = b
                break
            step = rng.exponential(1.0 / bound)
            if t + step >= b:
                S *= np.exp(-rates * (b - t))[:, None]
                t = b
                break
            S *= np.exp(-rates * step)[:, None]
            t += step
            lam = mu + A @ (w @ S)
            u = rng.random() * bound
            cum = np.cumsum(lam)
            if u < cum[-1]:
                j = int(min(np.searchsorted(cum, u, side="right"), cfg.n - 1))
                events[j].append(t)
                S[:, j] += 1.0
                count += 1
                if count >= cfg.max_events:
                    truncated = True
                    break
    return [np.array(e) for e in events], truncated


def _replica_task(task):
    cfg, path, seed = task
    return _simulate_replica(cfg, path, np.random.default_rng(seed))


def simulate_hawkes(cfg: HawkesConfig, path: RegimePath, seed, workers: int = 1) -> EventLog:
    """Ogata thinning for ``cfg.N`` replicas on a shared environment.

    Replica ``k`` draws from substream ``k`` of ``seed`` (an int, or a
    Generator from which one master seed is drawn).  Inside one regime
    interval the total intensity only decays between events, so its value
    after each event or regime switch dominates the intensity until the next
    one.
    """
    if path.T < cfg.T:
        raise ValueError("environment path is shorter than the Hawkes horizon")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(0, 2**63))
    tasks = [(cfg, path, substream_seed(seed, k)) for k in range(cfg.N)]
    out = parallel_map(_replica_task, tasks, workers)
    return EventLog([o[0] for o in out], cfg.T, np.array([o[1] for o in out], dtype=bool))


@dataclass(frozen=True, eq=False)
class IntensityPath:
    times: np.ndarray
    values: np.ndarray
    regimes: np.ndarray


@dataclass(frozen=True, eq=False)
class MacroSolution(IntensityPath):
    overflow: bool = False


def _grid(cfg: HawkesConfig, grid=None) -> np.ndarray:
    if grid is None:
        steps = int(round(cfg.T / cfg.dt))
        return np.arange(steps + 1) * cfg.dt
    return np.asarray(grid, dtype=float)


def empirical_mean_intensity(log: EventLog, cfg: HawkesConfig, path: RegimePath,
                             grid=None) -> IntensityPath:
    """Replica-averaged intensity at grid times, as left limits.

    Intensity is linear in the event measure, so every event enters one
    pooled bank with magnitude ``1/N``.
    """
    grid = _grid(cfg, grid)
    if grid[0] < 0 or grid[-1] > cfg.T or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be increasing inside [0, T]")
    rates, W = cfg.bank_layout()
    R, n = rates.size, cfg.n
    times = [np.concatenate([rep[j] for rep in log.times]) for j in range(n)]
    # events in [grid[i-1], grid[i]) land in cell i and are seen from grid[i] on
    cells = np.zeros((grid.size + 1, R, n))
    for j, tj in enumerate(times):
        if tj.size == 0:
            continue
        idx = np.searchsorted(grid, tj, side="right")
        ok = idx < grid.size
        idx, tj = idx[ok], tj[ok]
        contrib = np.exp(-np.outer(grid[idx] - tj, rates))
        np.add.at(cells[:, :, j], idx, contrib)
    cells /= log.N
    z = path.state_at(grid)
    mu = np.stack(cfg.mu)[z]
    out = np.empty((grid.size, n))
    S = cells[0].copy()
    prev = grid[0]
    A = np.stack(cfg.A)
    for i, t in enumerate(grid):
        if i:
            S *= np.exp(-rates * (t - prev))[:, None]
            S += cells[i]
            prev = t
        out[i] = mu[i] + A[z[i]] @ (W[z[i]] @ S)
    return IntensityPath(grid, out, z)


def solve_macro_volterra(cfg: HawkesConfig, path: RegimePath, grid=None) -> MacroSolution:
    """Explicit causal recursion ``lam_k = mu_z + A_z * bank(lam_0..lam_{k-1})``."""
    grid = _grid(cfg, grid)
    dt = np.diff(grid)
    if dt.size and np.ptp(dt) > 1e-9 * dt.max():
        raise ValueError("macro solver needs a uniform grid")
    h = float(dt[0]) if dt.size else cfg.dt
    rates, W = cfg.bank_layout()
    decay = np.exp(-rates * h)[:, None]
    z = path.state_at(np.minimum(grid, path.T))
    S = np.zeros((rates.size, cfg.n))
    out = np.zeros((grid.size, cfg.n))
    overflow = False
    for k in range(grid.size):
        lam = cfg.mu[z[k]] + cfg.A[z[k]] @ (W[z[k]] @ S)
        if not np.linalg.norm(lam) <= cfg.overflow:
            overflow = True
            out[k:] = np.nan
            break
        out[k] = lam
        S += h * lam
        S *= decay
    return MacroSolution(grid, out, z, overflow)


def micro_macro_error(lbar: IntensityPath, macro: IntensityPath) -> float:
    """``max_t ||lbar(t) - lam(t)|| / (1 + ||lam(t)||)``."""
    if lbar.times.shape != macro.times.shape or not np.allclose(lbar.times, macro.times,
                                                                 rtol=0, atol=1e-12):
        raise ValueError("intensity paths live on different grids")
    ok = np.all(np.isfinite(macro.values), axis=1)
    diff = np.linalg.norm(lbar.values[ok] - macro.values[ok], axis=1)
    return float(np.max(diff / (1.0 + np.linalg.norm(macro.values[ok], axis=1))))


def peak_amplification(ip: IntensityPath) -> float:
    """``max_t ||lam(t)|| / ||lam(0)||``."""
    nrm = np.linalg.norm(ip.values, axis=1)
    return float(np.nanmax(nrm) / nrm[0])


def time_rescaled_intervals(log: EventLog, cfg: HawkesConfig, path: RegimePath,
                            replica: int = 0) -> np.ndarray:
    """Compensator increments of the ground process between consecutive events.

    For a correctly simulated replica these are iid Exp(1).
    """
    rates, W = cfg.bank_layout()
    rep = log.times[replica]
    node = np.concatenate([np.full(t.size, j) for j, t in enumerate(rep)]).astype(int)
    tt = np.concatenate(rep) if rep else np.empty(0)
    order = np.argsort(tt, kind="stable")
    node, tt = node[order], tt[order]
    jumps = path.jump_times[path.jump_times < cfg.T]
    marks = np.concatenate([tt, jumps])
    is_event = np.concatenate([np.ones(tt.size, bool), np.zeros(jumps.size, bool)])
    kind = np.concatenate([node, np.full(jumps.size, -1)])
    o = np.argsort(marks, kind="stable")
    marks, is_event, kind = marks[o], is_event[o], kind[o]

    S = np.zeros((rates.size, cfg.n))
    comp, t = 0.0, 0.0
    at_events = []
    for s, ev, j in zip(marks, is_event, kind):
        z = path.state_at(t)
        span = s - t
        ones = cfg.A[z].sum(axis=0)
        mass = (W[z] * (-np.expm1(-rates * span)) / rates) @ S
        comp += cfg.mu[z].sum() * span + ones @ mass
        S *= np.exp(-rates * span)[:, None]
        t = s
        if ev:
            at_events.append(comp)
            S[:, j] += 1.0
    return np.diff(np.concatenate(([0.0], at_events)))


@dataclass(frozen=True, eq=False)
class ConvergenceResult:
    mode: str
    N_list: tuple
    mean_err: np.ndarray
    per_env: np.ndarray
    slope: float
    slope_stderr: float


def _errors_for(cfg, path, seed, N_list, workers, nested):
    macro = solve_macro_volterra(cfg, path)
    if nested:
        log = simulate_hawkes(cfg.replace(N=max(N_list)), path, seed, workers)
        logs = [log.subset(N) for N in N_list]
    else:
        logs = [simulate_hawkes(cfg.replace(N=N), path, substream_seed(seed, i), workers)
                for i, N in enumerate(N_list)]
    return [micro_macro_error(empirical_mean_intensity(lg, cfg, path), macro) for lg in logs]


def convergence_study(cfg: HawkesConfig, Q: GeneratorMatrix, N_list: Sequence[int],
                      n_env: int, seed: int, mode: str = "annealed",
                      init: Optional[int] = None, path: Optional[RegimePath] = None,
                      nested: bool = False, workers: int = 1) -> ConvergenceResult:
    """Err against replica count, with a least-squares log-log slope.

    ``annealed``: one independent environment per row.  ``quenched``: one
    environment (``path`` or a sampled one) and ``n_env`` independent noise
    batches on it.  Each N gets its own replicas unless ``nested``, in which
    case smaller N reuse the first replicas of the largest.
    """
    N_list = tuple(int(N) for N in N_list)
    if len(N_list) < 2 or any(b < a for a, b in zip(N_list, N_list[1:])) or N_list[0] < 1:
        raise ValueError("N_list must be a nondecreasing list of positive counts")
    if n_env < 1:
        raise ValueError("need at least one environment")
    if mode not in ("annealed", "quenched"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "quenched" and path is None:
        path = sample_path(Q, cfg.T, substream_rng(substream_seed(seed, 0), 0), init)
    rows = []
    for e in range(n_env):
        env_seed = substream_seed(seed, e)
        env = path if mode == "quenched" else sample_path(Q, cfg.T, substream_rng(env_seed, 0),
                                                          init)
        rows.append(_errors_for(cfg, env, substream_seed(env_seed, 1), N_list, workers,
                                nested))
    per_env = np.array(rows)
    mean = per_env.mean(axis=0)
    if len(set(N_list)) > 1 and np.all(mean > 0):
        fit = stats.linregress(np.log(N_list), np.log(mean))
        slope, se = float(fit.slope), float(fit.stderr)
    else:
        slope, se = math.nan, math.nan
    return ConvergenceResult(mode, N_list, mean, per_env, slope, se)
