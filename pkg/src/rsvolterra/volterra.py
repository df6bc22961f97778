"""Semi-implicit integrator for the regime-switching Volterra system.

The state ``U = (x, lambda)`` is stored as an array of shape ``(2, n)``.  One
step of the scheme reads

    (I - dt B) U[k+1] = U[k] + dt * C_{z_k}[U_0..U_k],
    C_z[U] = (0, A_z conv_k) + F_z,

where ``conv_k = dt * sum_{j<k} g_{z_k}((k - j) dt) * (x_j + lambda_j)`` is read
from exponential memory banks, one slot set per distinct regime kernel, all
advanced every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .kernels import SOEKernel
from .montecarlo import chunked, parallel_map
from .network import OperatorSet
from .regime import GeneratorMatrix, RegimePath, frozen_path, sample_path

__all__ = [
    "SystemConfig",
    "Trajectory",
    "FrozenRate",
    "GronwallResult",
    "integrate",
    "integrate_batch",
    "simulate_paths",
    "frozen_growth_rate_sim",
    "frozen_growth_rate_root",
    "memory_gain",
    "averaged_gain",
    "gronwall_check",
    "lyapunov_series",
]


@dataclass(frozen=True, eq=False)
class SystemConfig:
    operators: OperatorSet
    kernels: tuple
    u0: np.ndarray
    dt: float = 0.05
    T: float = 120.0
    forcing: bool = False
    track_lyapunov: bool = False
    eta: float = 1.0
    snapshot_stride: int = 0
    overflow: float = 1e150

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T / dt = {steps} is not an integer")
        if len(self.kernels) != self.operators.m:
            raise ValueError("need one kernel per regime")
        u0 = np.array(self.u0, dtype=float)
        if u0.shape != (2, self.operators.n):
            raise ValueError(f"u0 must have shape (2, {self.operators.n})")
        u0.setflags(write=False)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def m(self) -> int:
        return self.operators.m

    def replace(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def bank_layout(self):
        """Shared rate vector and per-regime weight rows over it.

        Regimes with identical kernels share slots.
        """
        slots, rates = {}, []
        rows = []
        for soe in self.kernels:
            key = (soe.nodes.tobytes(), soe.weights.tobytes())
            if key not in slots:
                slots[key] = len(rates)
                rates.extend(soe.nodes)
            rows.append((slots[key], soe))
        rates = np.array(rates)
        weights = np.zeros((self.m, rates.size))
        for z, (start, soe) in enumerate(rows):
            weights[z, start:start + soe.K] = soe.weights
        return rates, weights


@dataclass(eq=False)
class Trajectory:
    dt: float
    T: float
    times: np.ndarray
    norms: np.ndarray
    regimes: np.ndarray
    u0: np.ndarray
    final_state: np.ndarray
    peak_index: int
    peak_state: np.ndarray
    overflow: bool = False
    last_finite: int = -1
    snapshot_steps: Optional[np.ndarray] = None
    snapshots: Optional[np.ndarray] = None
    memory_energy: Optional[np.ndarray] = None

    @property
    def t_star(self) -> float:
        return float(self.times[self.peak_index])

    def to_csv(self, fh, eta: Optional[float] = None) -> None:
        v = None
        if eta is not None and self.memory_energy is not None:
            v = lyapunov_series(self, eta)
        fh.write("t,norm,regime" + (",V" if v is not None else "") + "\n")
        for i, (t, nrm, z) in enumerate(zip(self.times, self.norms, self.regimes)):
            row = f"{float(t)!r},{float(nrm)!r},{int(z)}"
            if v is not None:
                row += f",{float(v[i])!r}"
            fh.write(row + "\n")

    def snapshots_to_csv(self, fh) -> None:
        if self.snapshots is None:
            raise ValueError("trajectory has no snapshots")
        n = self.snapshots.shape[-1]
        cols = [f"x{i}" for i in range(n)] + [f"lam{i}" for i in range(n)]
        fh.write("t," + ",".join(cols) + "\n")
        for k, snap in zip(self.snapshot_steps, self.snapshots):
            vals = ",".join(repr(float(x)) for x in snap.ravel())
            fh.write(f"{float(self.times[k])!r},{vals}\n")


def integrate(sys: SystemConfig, path: RegimePath) -> Trajectory:
    return integrate_batch(sys, [path])[0]


def integrate_batch(sys: SystemConfig, paths: Sequence[RegimePath]) -> list:
    """Integrate one trajectory per environment path, vectorized over paths.

    Paths evolve independently; batching only amortizes interpreter cost.
    """
    P = len(paths)
    N = sys.n_steps
    dt = sys.dt
    ops = sys.operators
    n, m = ops.n, ops.m
    grid = np.arange(N + 1) * dt
    for p in paths:
        if p.T < grid[-1] - 1e-9 * sys.T:
            raise ValueError("environment path is shorter than the horizon")
    Z = np.stack([p.state_at(np.minimum(grid, p.T)) for p in paths])
    if Z.max() >= m:
        raise ValueError("path visits a regime without operators")

    rates, W = sys.bank_layout()
    decay = np.exp(-rates * dt)[None, :, None]
    A_cat = np.ascontiguousarray(np.concatenate([a.T for a in ops.A], axis=1))
    F = np.stack(ops.F)
    res = ops.dissipation.resolvent(dt)
    rows = np.arange(P)

    U = np.broadcast_to(sys.u0, (P, 2, n)).copy()
    S = np.zeros((P, rates.size, n))
    norms = np.full((P, N + 1), np.nan)
    norms[:, 0] = np.linalg.norm(sys.u0)
    peak_val = norms[:, 0].copy()
    peak_idx = np.zeros(P, dtype=np.int64)
    peak_state = U.copy()
    alive = np.ones(P, dtype=bool)
    last = np.full(P, N, dtype=np.int64)

    track = sys.track_lyapunov
    if track:
        L = np.zeros((P, rates.size, 2, n))
        WR = W * rates
        energy = np.zeros((P, N + 1, m))
    stride = sys.snapshot_stride
    if stride:
        snap_steps = np.arange(0, N + 1, stride)
        snaps = np.zeros((P, snap_steps.size, 2, n))
        snaps[:, 0] = U

    for k in range(N):
        z = Z[:, k]
        conv = np.matmul(W[z][:, None, :], S)[:, 0, :]
        exc = (conv @ A_cat).reshape(P, m, n)[rows, z]
        rhs = U.copy()
        rhs[:, 1] += dt * exc
        if sys.forcing:
            rhs += dt * F[z]
        S += dt * (U[:, 0] + U[:, 1])[:, None, :]
        S *= decay
        if track:
            L += dt * U[:, None]
            L *= decay[..., None]
            energy[:, k + 1] = np.einsum("pkij,pkij->pk", L, L) @ WR.T
        U = res.solve(rhs)

        nrm = np.sqrt(np.einsum("pij,pij->p", U, U))
        bad = alive & ~(nrm <= sys.overflow)
        if bad.any():
            last[bad] = k
            alive &= ~bad
        if not alive.all():
            U[~alive] = 0.0
            S[~alive] = 0.0
            if track:
                L[~alive] = 0.0
        norms[alive, k + 1] = nrm[alive]
        up = alive & (nrm > peak_val)
        if up.any():
            peak_val[up] = nrm[up]
            peak_idx[up] = k + 1
            peak_state[up] = U[up]
        if stride and (k + 1) % stride == 0:
            snaps[:, (k + 1) // stride] = U

    out = []
    for p in range(P):
        keep = last[p] + 1
        final = U[p].copy() if alive[p] else np.full((2, n), np.nan)
        traj = Trajectory(
            dt=dt, T=sys.T, times=grid[:keep].copy(), norms=norms[p, :keep].copy(),
            regimes=Z[p, :keep].copy(), u0=sys.u0.copy(), final_state=final,
            peak_index=int(peak_idx[p]), peak_state=peak_state[p].copy(),
            overflow=not alive[p], last_finite=int(last[p]),
        )
        if stride:
            sel = snap_steps < keep
            traj.snapshot_steps = snap_steps[sel]
            traj.snapshots = snaps[p, sel].copy()
        if track:
            traj.memory_energy = energy[p, :keep].copy()
        out.append(traj)
    return out


CHUNK = 64


def _run_chunk(task):
    sys, Q, seeds, init, reduce = task
    paths = [sample_path(Q, sys.T, np.random.default_rng(s), init) for s in seeds]
    trajs = integrate_batch(sys, paths)
    if reduce is None:
        return list(zip(paths, trajs))
    return [reduce(i, s, p, t) for i, (s, p, t) in enumerate(zip(seeds, paths, trajs))]


def simulate_paths(sys: SystemConfig, Q: GeneratorMatrix, seeds: Sequence[int],
                   init: Optional[int] = None, reduce=None, workers: int = 1) -> list:
    """Sample one environment per seed and integrate all of them.

    ``reduce(i_in_chunk, seed, path, traj)`` (module-level when
    ``workers > 1``) maps each run to a smaller record.  Chunks have a fixed
    size, so results do not depend on ``workers``.
    """
    tasks = [(sys, Q, list(c), init, reduce) for c in chunked(list(seeds), CHUNK)]
    return [r for chunk in parallel_map(_run_chunk, tasks, workers) for r in chunk]


@dataclass(frozen=True)
class FrozenRate:
    regime: int
    gamma: float
    method: str
    r2: float = math.nan
    underflow: bool = False


def frozen_growth_rate_sim(sys: SystemConfig, z: int, T_fit: float) -> FrozenRate:
    """Least-squares slope of ``log ||U||`` over the final half of ``[0, T_fit]``."""
    tau = sys.kernels[z].mean_decay_time
    if T_fit < 50 * tau:
        raise ValueError(f"T_fit={T_fit} shorter than 50 mean decay times ({50 * tau:.3g})")
    local = sys.replace(T=T_fit, track_lyapunov=False, snapshot_stride=0)
    traj = integrate(local, frozen_path(z, T_fit))
    if traj.overflow:
        raise OverflowError("frozen run overflowed; shorten T_fit")
    half = traj.times >= 0.5 * T_fit
    nrm = traj.norms[half]
    if np.any(nrm == 0):
        return FrozenRate(z, -math.inf, "simulate_fit", underflow=True)
    fit = stats.linregress(traj.times[half], np.log(nrm))
    return FrozenRate(z, float(fit.slope), "simulate_fit", r2=float(fit.rvalue**2))


def frozen_growth_rate_root(a: float, beta: float, kappa_mu: float, soe: SOEKernel) -> float:
    """Real root ``s > -min r`` of ``s + beta + kappa_mu = a * sum_l w_l / (s + r_l)``.

    The left side increases and the right side decreases on the bracket, so
    the root is unique.  Returns ``-min r`` if the bracket has no sign change.
    """
    if a <= 0:
        raise ValueError("modal gain must be positive")
    d = beta + kappa_mu
    f = lambda s: s + d - a * soe.laplace(s)
    floor = -float(soe.nodes.min())
    lo = floor + 1e-12 * max(1.0, abs(floor))
    if f(lo) >= 0:
        return floor
    hi = max(1.0, a * soe.mass)
    while f(hi) <= 0:
        hi *= 2.0
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def memory_gain(A_norm: float, G: float) -> float:
    if not math.isfinite(G):
        raise ValueError("infinite kernel mass; supply a window-truncated mass")
    return float(A_norm) * float(G)


def averaged_gain(pi, rho) -> float:
    pi = np.asarray(pi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if pi.shape != rho.shape:
        raise ValueError("one gain per regime")
    return float(pi @ rho)


@dataclass(frozen=True, eq=False)
class GronwallResult:
    passed: bool
    margin: np.ndarray
    min_margin: float


def gronwall_check(traj: Trajectory, path: RegimePath, rho, M_F: float = 0.0,
                   slack: float = 1.05) -> GronwallResult:
    """Check ``sup_{s<=t} ||U(s)|| <= slack (||U0|| + t M_F) exp(int_0^t rho_{Z(s)} ds)``.

    The margin is bound / running sup; overflow-truncated runs are checked up
    to truncation.
    """
    t = traj.times
    running = np.maximum.accumulate(traj.norms)
    occ = path.occupation_integral(rho, np.minimum(t, path.T))
    bound = slack * (np.linalg.norm(traj.u0) + t * M_F) * np.exp(occ)
    with np.errstate(divide="ignore"):
        margin = np.where(running > 0, bound / running, np.inf)
    mmin = float(margin.min())
    return GronwallResult(bool(mmin >= 1.0), margin, mmin)


def lyapunov_series(traj: Trajectory, eta: float) -> np.ndarray:
    """``||U||^2 + eta * sum_l w_{z,l} r_{z,l} ||w_l||^2`` with ``z`` the active regime."""
    if traj.memory_energy is None:
        raise ValueError("integrate with track_lyapunov=True to record memory banks")
    mem = traj.memory_energy[np.arange(traj.norms.size), traj.regimes]
    return traj.norms**2 + eta * mem
