"""Uniform time grid and the Monte Carlo ensemble of Brownian paths.

Randomness is counter-based: particles are grouped into fixed-size blocks and
each block draws from its own Philox stream keyed by (seed, block index), so
the increments of particle p at step i are a pure function of (seed, p, i) --
independent of the total particle count and of any parallel generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_BLOCK = 4096  # particles per keyed stream; fixed so streams never shift


@dataclass(frozen=True, eq=False)
class TimeGrid:
    T: float
    n: int
    nodes: np.ndarray
    dt: float

    def __post_init__(self):
        if self.T <= 0.0 or self.n < 1:
            raise ValueError("need T > 0 and n >= 1")


def make_grid(T: float, n: int) -> TimeGrid:
    """Uniform grid t_i = i*T/n, i = 0..n."""
    if T <= 0.0:
        raise ValueError("T must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    nodes = np.arange(n + 1) * (T / n)
    nodes[-1] = T
    return TimeGrid(T=float(T), n=int(n), nodes=nodes, dt=T / n)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    grid: TimeGrid
    N: int
    d: int
    seed: int
    increments: np.ndarray  # (N, n, d), Normal(0, dt)
    states: np.ndarray      # (N, n+1, d), cumulative sums starting at 0
    antithetic: bool = False


def _block_key(seed: int, block: int) -> np.ndarray:
    return np.array([seed & 0xFFFFFFFFFFFFFFFF, block], dtype=np.uint64)


def sample_ensemble(grid: TimeGrid, N: int, d: int, seed: int) -> ParticleEnsemble:
    """Draw N Brownian paths on the grid with per-block Philox streams."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if d < 1:
        raise ValueError("d must be >= 1")
    scale = math.sqrt(grid.dt)
    inc = np.empty((N, grid.n, d))
    for block in range(0, N, _BLOCK):
        size = min(_BLOCK, N - block)
        gen = np.random.Generator(np.random.Philox(key=_block_key(seed, block // _BLOCK)))
        inc[block:block + size] = gen.standard_normal((size, grid.n, d)) * scale
    states = np.zeros((N, grid.n + 1, d))
    np.cumsum(inc, axis=1, out=states[:, 1:, :])
    return ParticleEnsemble(grid=grid, N=N, d=d, seed=int(seed),
                            increments=inc, states=states)


def antithetic(ensemble: ParticleEnsemble) -> ParticleEnsemble:
    """Double the ensemble, pairing every path with its negation (interleaved)."""
    n, d = ensemble.grid.n, ensemble.d
    inc = np.empty((2 * ensemble.N, n, d))
    inc[0::2] = ensemble.increments
    inc[1::2] = -ensemble.increments
    states = np.zeros((2 * ensemble.N, n + 1, d))
    states[0::2, 1:, :] = ensemble.states[:, 1:, :]
    states[1::2, 1:, :] = -ensemble.states[:, 1:, :]
    return ParticleEnsemble(grid=ensemble.grid, N=2 * ensemble.N, d=ensemble.d,
                            seed=ensemble.seed, increments=inc, states=states,
                            antithetic=True)


def particle_mean(values, antithetic: bool = False):
    """Mean over the particle axis (axis 0), deterministic reduction order.

    On antithetic ensembles the +/- pairs are collapsed first, so odd
    functionals of the paths average to exactly zero.
    """
    v = np.asarray(values, dtype=float)
    if antithetic:
        v = 0.5 * (v[0::2] + v[1::2])
    return v.mean(axis=0)


def particle_mean_se(values, antithetic: bool = False) -> tuple[float, float]:
    """Mean and standard error of a scalar-per-particle sample."""
    v = np.asarray(values, dtype=float)
    if antithetic:
        v = 0.5 * (v[0::2] + v[1::2])
    m = float(v.mean())
    se = float(v.std()) / math.sqrt(v.shape[0])
    return m, se
