"""Finite-state continuous-time Markov environment, simulated exactly."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = [
    "StructuralError",
    "GeneratorMatrix",
    "RegimePath",
    "Sojourns",
    "stationary_dist",
    "sample_path",
    "frozen_path",
    "state_at",
    "occupation_fractions",
    "sojourn_samples",
]


class StructuralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    q: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise StructuralError("generator must be a square matrix")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise StructuralError("off-diagonal rates must be nonnegative")
        scale = max(1.0, float(np.max(np.abs(q))))
        if np.any(np.abs(q.sum(axis=1)) > 1e-12 * scale):
            raise StructuralError("generator rows must sum to zero")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        labels = tuple(self.labels) or tuple(str(i) for i in range(q.shape[0]))
        if len(labels) != q.shape[0]:
            raise StructuralError("one label per state")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_rates(cls, rates, labels=()) -> "GeneratorMatrix":
        off = np.array(rates, dtype=float)
        np.fill_diagonal(off, 0.0)
        return cls(off - np.diag(off.sum(axis=1)), labels)

    @classmethod
    def two_state(cls, q_su: float, q_us: float) -> "GeneratorMatrix":
        """States ``0 = S`` (stable) and ``1 = U`` (unstable)."""
        return cls.from_rates([[0.0, q_su], [q_us, 0.0]], ("S", "U"))

    @property
    def m(self) -> int:
        return self.q.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.q)

    def is_irreducible(self) -> bool:
        n_comp, _ = connected_components(self.q - np.diag(np.diag(self.q)) > 0,
                                         directed=True, connection="strong")
        return n_comp == 1


def stationary_dist(Q: GeneratorMatrix) -> np.ndarray:
    """Unique ``pi`` with ``pi^T Q = 0`` and ``sum(pi) = 1``."""
    if not Q.is_irreducible():
        raise StructuralError("generator is reducible; stationary law is not unique")
    m = Q.m
    lhs = Q.q.T.copy()
    lhs[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    pi = np.linalg.solve(lhs, rhs)
    resid = np.max(np.abs(pi @ Q.q))
    if resid > 1e-10 * max(1.0, np.max(np.abs(Q.q))) or np.any(pi <= 0):
        raise StructuralError(f"stationary solve failed (residual {resid:.2e})")
    return pi


@dataclass(frozen=True, eq=False)
class RegimePath:
    """Piecewise-constant environment on ``[0, T]``.

    ``states[0]`` holds on ``[0, jump_times[0])`` and ``states[i]`` on
    ``[jump_times[i-1], jump_times[i])``; the last state extends to ``T``.
    """

    jump_times: np.ndarray
    states: np.ndarray
    T: float
    absorbed: bool = False

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float).reshape(-1)
        st = np.asarray(self.states, dtype=np.int64).reshape(-1)
        if st.size != jt.size + 1:
            raise ValueError("need exactly one more state than jump times")
        if jt.size and (jt[0] <= 0 or np.any(np.diff(jt) <= 0) or jt[-1] > self.T):
            raise ValueError("jump times must be strictly increasing inside (0, T]")
        if np.any(st[1:] == st[:-1]):
            raise ValueError("consecutive states must differ")
        jt.setflags(write=False)
        st.setflags(write=False)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "T", float(self.T))

    @property
    def initial_state(self) -> int:
        return int(self.states[0])

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate(([0.0], self.jump_times, [self.T]))

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def state_at(self, t):
        return state_at(self, t)

    def restrict(self, T: float) -> "RegimePath":
        """The same path observed on ``[0, T]`` for ``T`` up to the horizon."""
        if T > self.T:
            raise ValueError("cannot extend a path beyond its horizon")
        keep = int(np.searchsorted(self.jump_times, T, side="left"))
        return RegimePath(self.jump_times[:keep], self.states[:keep + 1], T, self.absorbed)

    def occupation_integral(self, values, t):
        """``int_0^t values[Z(s)] ds`` evaluated exactly at times ``t``."""
        values = np.asarray(values, dtype=float)
        bp = self.breakpoints
        cum = np.concatenate(([0.0], np.cumsum(values[self.states] * np.diff(bp))))
        return np.interp(t, bp, cum)

    def to_csv(self, fh) -> None:
        fh.write(f"# T={self.T!r} initial_state={self.initial_state} absorbed={int(self.absorbed)}\n")
        fh.write("jump_time,state\n")
        for t, s in zip(self.jump_times, self.states[1:]):
            fh.write(f"{float(t)!r},{int(s)}\n")

    @classmethod
    def from_csv(cls, fh) -> "RegimePath":
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=") for item in header)
        fh.readline()
        times, states = [], [int(meta["initial_state"])]
        for line in fh:
            if line.strip():
                t, s = line.strip().split(",")
                times.append(float(t))
                states.append(int(s))
        return cls(np.array(times), np.array(states), float(meta["T"]),
                   bool(int(meta.get("absorbed", 0))))

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def sample_path(Q: GeneratorMatrix, T: float, rng: np.random.Generator,
                init: Optional[int] = None) -> RegimePath:
    """Exact CTMC path on ``[0, T]`` by inverse-CDF exponential holding times.

    Stream layout: one uniform for a stationary initial draw (only when
    ``init`` is None), then two uniforms per jump (holding time, destination).
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    if init is None:
        pi = stationary_dist(Q)
        z = int(min(np.searchsorted(np.cumsum(pi), rng.random(), side="right"), Q.m - 1))
    else:
        z = int(init)
        if not 0 <= z < Q.m:
            raise ValueError(f"initial state {z} out of range")
    exit_rates = Q.exit_rates
    jump_cdf = []
    for i in range(Q.m):
        row = np.maximum(Q.q[i], 0.0)
        row[i] = 0.0
        jump_cdf.append(np.cumsum(row) / exit_rates[i] if exit_rates[i] > 0 else None)

    times, states = [], [z]
    t = 0.0
    absorbed = False
    while True:
        rate = exit_rates[z]
        if rate <= 0:
            absorbed = True
            break
        t += -math.log1p(-rng.random()) / rate
        u = rng.random()
        if t >= T:
            break
        z = int(min(np.searchsorted(jump_cdf[z], u, side="right"), Q.m - 1))
        times.append(t)
        states.append(z)
    return RegimePath(np.array(times), np.array(states), T, absorbed)


def frozen_path(z: int, T: float) -> RegimePath:
    return RegimePath(np.empty(0), np.array([z]), T)


def state_at(path: RegimePath, t):
    """Right-continuous evaluation ``Z(t)``; accepts scalars or arrays."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > path.T):
        raise ValueError(f"t outside [0, {path.T}]")
    idx = np.searchsorted(path.jump_times, t_arr, side="right")
    out = path.states[idx]
    return int(out) if out.ndim == 0 else out


def occupation_fractions(path: RegimePath, m: Optional[int] = None) -> np.ndarray:
    m = int(path.states.max()) + 1 if m is None else m
    d = path.durations
    occ = np.bincount(path.states, weights=d, minlength=m)
    return occ / occ.sum()


class Sojourns(NamedTuple):
    complete: np.ndarray
    censored: Optional[float]


def sojourn_samples(path: RegimePath, z: int) -> Sojourns:
    """Maximal intervals spent in ``z``; the final interval is right-censored."""
    d = path.durations
    hit = path.states == z
    censored = None
    if hit[-1]:
        censored = float(d[-1])
        hit = hit.copy()
        hit[-1] = False
    return Sojourns(d[hit], censored)
