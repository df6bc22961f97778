"""Graphs, Laplacian spectra and the dissipation/excitation operators built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = [
    "GraphGenerationError",
    "Graph",
    "LaplacianSpectrum",
    "Dissipation",
    "OperatorSet",
    "build_graph",
    "laplacian_spectrum",
    "build_excitation",
    "build_dissipation",
    "commuting_profile",
    "ipr",
    "band_projection",
    "band_slices",
]

MAX_RETRIES = 100


class GraphGenerationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0)
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ValueError("edge endpoint out of range")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def laplacian(self) -> np.ndarray:
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a

    def is_connected(self) -> bool:
        return connected_components(self.adjacency(), directed=False)[0] == 1

    def to_csv(self, fh) -> None:
        fh.write("source,target\n")
        for i, j in self.edges:
            fh.write(f"{i},{j}\n")


def _ring_edges(n, k=2):
    return [(i, (i + j) % n) for i in range(n) for j in range(1, k // 2 + 1)]


def _watts_strogatz(n, k, p, rng):
    adj = [set() for _ in range(n)]
    for i, j in _ring_edges(n, k):
        adj[i].add(j)
        adj[j].add(i)
    for j in range(1, k // 2 + 1):
        for i in range(n):
            v = (i + j) % n
            if rng.random() < p and v in adj[i]:
                choices = [w for w in range(n) if w != i and w not in adj[i]]
                if not choices:
                    continue
                w = choices[int(rng.integers(len(choices)))]
                adj[i].discard(v)
                adj[v].discard(i)
                adj[i].add(w)
                adj[w].add(i)
    return [(i, j) for i in range(n) for j in adj[i] if i < j]


def build_graph(kind: str, n: int, rng: Optional[np.random.Generator] = None, *,
                p: float = 0.15, k: int = 4, p_rewire: float = 0.1) -> Graph:
    """Connected graph of family ``ring``, ``star``, ``erdos_renyi`` or ``small_world``.

    Random families are regenerated until connected (at most 100 tries).
    """
    if n < 3:
        raise ValueError("need n >= 3")
    if kind == "ring":
        return Graph(n, _ring_edges(n), kind)
    if kind == "star":
        return Graph(n, [(0, i) for i in range(1, n)], kind)
    if rng is None:
        raise ValueError(f"{kind} graphs need an rng")
    if kind == "erdos_renyi":
        if not 0.0 < p <= 1.0:
            raise ValueError("ER probability must lie in (0, 1]")
        iu = np.triu_indices(n, 1)
        for _ in range(MAX_RETRIES):
            mask = rng.random(iu[0].size) < p
            g = Graph(n, np.column_stack([iu[0][mask], iu[1][mask]]), kind, {"p": p})
            if g.is_connected():
                return g
    elif kind == "small_world":
        if k % 2 or k < 2 or k >= n:
            raise ValueError("small-world k must be even with 2 <= k < n")
        if not 0.0 <= p_rewire <= 1.0:
            raise ValueError("p_rewire must lie in [0, 1]")
        for _ in range(MAX_RETRIES):
            g = Graph(n, _watts_strogatz(n, k, p_rewire, rng), kind,
                      {"k": k, "p_rewire": p_rewire})
            if g.is_connected():
                return g
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    raise GraphGenerationError(f"no connected {kind} graph with n={n} in {MAX_RETRIES} tries")


@dataclass(frozen=True, eq=False)
class LaplacianSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    def laplacian(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T

    def to_csv(self, fh) -> None:
        fh.write("index,eigenvalue\n")
        for i, mu in enumerate(self.eigenvalues):
            fh.write(f"{i},{float(mu)!r}\n")


def laplacian_spectrum(g: Graph) -> LaplacianSpectrum:
    """Ascending eigenpairs of ``L = D - A``; each eigenvector's first
    non-negligible entry is made positive."""
    mu, v = np.linalg.eigh(g.laplacian())
    mu = np.where(np.abs(mu) < 1e-12, 0.0, mu)
    for i in range(v.shape[1]):
        lead = np.flatnonzero(np.abs(v[:, i]) > 1e-10)[0]
        if v[lead, i] < 0:
            v[:, i] = -v[:, i]
    mu.setflags(write=False)
    v.setflags(write=False)
    return LaplacianSpectrum(mu, v)


def commuting_profile(n: int) -> np.ndarray:
    """Linear ramp ``0.5 + i/n`` over eigen-index."""
    return 0.5 + np.arange(n) / n


def _random_orthogonal(n, rng):
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diag(r))


def build_excitation(spectrum: Optional[LaplacianSpectrum], rho_target: float, G: float,
                     mode: str = "commuting", rng: Optional[np.random.Generator] = None,
                     n: Optional[int] = None) -> np.ndarray:
    """Excitation matrix ``A`` scaled so that ``||A||_2 * G == rho_target``.

    ``spectrum`` may be None for a scalar-margin system of size ``n`` in
    commuting mode (the eigenbasis is then the identity).
    """
    if not math.isfinite(G):
        raise ValueError("infinite kernel mass; pass a window-truncated mass instead")
    if G <= 0 or rho_target <= 0:
        raise ValueError("need G > 0 and rho_target > 0")
    if spectrum is None:
        if n is None:
            raise ValueError("need a spectrum or n")
        basis = np.eye(n)
    else:
        basis = spectrum.eigenvectors
        n = spectrum.n
    if mode == "commuting":
        d = commuting_profile(n)
        a = (basis * d) @ basis.T
    elif mode == "noncommuting":
        if rng is None:
            raise ValueError("noncommuting mode needs an rng")
        r = _random_orthogonal(n, rng)
        d = rng.uniform(0.5, 1.5, size=n)
        a = (r * d) @ r.T
    else:
        raise ValueError(f"unknown excitation mode {mode!r}")
    a = 0.5 * (a + a.T)
    return a * (rho_target / (G * np.linalg.norm(a, 2)))


class Dissipation:
    """``B = blockdiag(-beta I - kappa L, -beta I - kappa L)`` on ``(x, lambda)``.

    States are arrays of shape ``(..., 2, n)``.
    """

    def __init__(self, beta: float, kappa: float = 0.0,
                 spectrum: Optional[LaplacianSpectrum] = None, n: Optional[int] = None):
        if beta <= 0:
            raise ValueError("beta must be positive")
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if kappa > 0 and spectrum is None:
            raise ValueError("kappa > 0 needs a Laplacian spectrum")
        self.beta = float(beta)
        self.kappa = float(kappa)
        self.spectrum = spectrum
        self.n = spectrum.n if spectrum is not None else n
        if self.n is None:
            raise ValueError("need a spectrum or n")

    @property
    def modal_rates(self) -> np.ndarray:
        """Decay rate ``beta + kappa mu_i`` of each Laplacian mode."""
        if self.spectrum is None:
            return np.full(self.n, self.beta)
        return self.beta + self.kappa * self.spectrum.eigenvalues

    def block(self) -> np.ndarray:
        blk = -self.beta * np.eye(self.n)
        if self.kappa > 0:
            blk = blk - self.kappa * self.spectrum.laplacian()
        return blk

    def matrix(self) -> np.ndarray:
        blk = self.block()
        z = np.zeros_like(blk)
        return np.block([[blk, z], [z, blk]])

    def apply(self, u):
        return np.asarray(u) @ self.block().T

    def resolvent(self, dt: float) -> "Resolvent":
        return Resolvent(self, dt)


class Resolvent:
    """Precomputed solve of ``(I - dt B) x = b`` in the Laplacian eigenbasis."""

    def __init__(self, diss: Dissipation, dt: float):
        self.dt = dt
        self.scale = 1.0 / (1.0 + dt * diss.modal_rates)
        if diss.kappa == 0:
            self.basis = None
            self.scalar = float(self.scale[0])
        else:
            self.basis = np.ascontiguousarray(diss.spectrum.eigenvectors)
            self.basis_t = np.ascontiguousarray(self.basis.T)

    def solve(self, b):
        if self.basis is None:
            return b * self.scalar
        return ((b @ self.basis) * self.scale) @ self.basis_t


def build_dissipation(beta: float, kappa: float = 0.0,
                      spectrum: Optional[LaplacianSpectrum] = None,
                      n: Optional[int] = None) -> Dissipation:
    return Dissipation(beta, kappa, spectrum, n)


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Per-regime excitation/forcing plus the shared dissipation."""

    dissipation: Dissipation
    A: tuple
    F: tuple
    rho: tuple
    masses: tuple

    def __post_init__(self):
        m = len(self.A)
        if not (len(self.F) == len(self.rho) == len(self.masses) == m):
            raise ValueError("one excitation, forcing, gain and mass per regime")
        n = self.dissipation.n
        for a in self.A:
            if np.shape(a) != (n, n):
                raise ValueError("excitation matrices must be n x n")
        for f in self.F:
            if np.shape(f) != (2, n):
                raise ValueError("forcing vectors must have shape (2, n)")

    @property
    def m(self) -> int:
        return len(self.A)

    @property
    def n(self) -> int:
        return self.dissipation.n

    @property
    def beta(self) -> float:
        return self.dissipation.beta

    @property
    def forcing_bound(self) -> float:
        return max(float(np.linalg.norm(f)) for f in self.F)

    def excitation_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(a, 2) for a in self.A])


def ipr(v) -> float:
    v = np.asarray(v, dtype=float).ravel()
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("IPR of the zero vector is undefined")
    return float(np.sum((v / nrm) ** 4))


def band_slices(n: int, n_bands: int):
    """Contiguous equal-count index bands; the remainder joins the last band."""
    if n_bands < 1 or n_bands > n:
        raise ValueError("need 1 <= n_bands <= n")
    size = n // n_bands
    starts = [b * size for b in range(n_bands)]
    return [slice(s, starts[b + 1] if b + 1 < n_bands else n) for b, s in enumerate(starts)]


def band_projection(spectrum: LaplacianSpectrum, v, n_bands: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("band projection of the zero vector is undefined")
    coeff = (spectrum.eigenvectors.T @ (v / nrm)) ** 2
    return np.array([coeff[s].sum() for s in band_slices(spectrum.n, n_bands)])
