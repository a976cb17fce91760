"""Conditional-expectation engines for the backward induction: an exact
recombining binomial lattice (d = 1, the brute-force substrate) and
least-squares regression Monte Carlo (any d)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .lossop import EmpiricalLaw
from .paths import ParticleEnsemble, TimeGrid, particle_mean, particle_mean_se

LATTICE_MAX_STEPS = 12
COND_WARN = 1e10


class RegressionError(RuntimeError):
    """Rank-deficient design matrix in a per-step regression."""


def _monomial_exponents(degree: int, dim: int) -> tuple[tuple[int, ...], ...]:
    exps = []
    for deg in range(degree + 1):
        for combo in combinations_with_replacement(range(dim), deg):
            e = [0] * dim
            for j in combo:
                e[j] += 1
            exps.append(tuple(e))
    return tuple(exps)


@dataclass(frozen=True, eq=False)
class RegressionBasis:
    """Polynomial features of the current Brownian state up to total degree."""

    degree: int
    dim: int

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")

    @property
    def exponents(self) -> tuple[tuple[int, ...], ...]:
        return _monomial_exponents(self.degree, self.dim)

    @property
    def n_features(self) -> int:
        return len(self.exponents)

    def design(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=float)
        cols = [np.prod(x ** np.asarray(e), axis=-1) for e in self.exponents]
        return np.column_stack(cols)


def regress_condexp(ensemble: ParticleEnsemble, i: int, samples,
                    basis: RegressionBasis) -> np.ndarray:
    """Least-squares projection of step-(i+1) samples onto basis features of the
    step-i state, evaluated per particle."""
    backend = RegressionBackend(ensemble, degree=basis.degree)
    return backend.condexp(i, samples)


# ---------------------------------------------------------------------------
# Regression (Monte Carlo) backend
# ---------------------------------------------------------------------------


class RegressionBackend:
    """Projection-based E_{t_i}[.] on a particle ensemble.

    Step 0 has a deterministic state, so every projection there degenerates to
    the plain ensemble average.
    """

    kind = "regression"

    def __init__(self, ensemble: ParticleEnsemble, degree: int = 3,
                 cond_warn: float = COND_WARN):
        self.ensemble = ensemble
        self.grid = ensemble.grid
        self.basis = RegressionBasis(degree=degree, dim=ensemble.d)
        self.cond_warn = cond_warn
        if ensemble.N <= self.basis.n_features:
            raise ValueError("need more particles than basis features")

    @property
    def d(self) -> int:
        return self.ensemble.d

    def count(self, i: int) -> int:
        return self.ensemble.N

    def state(self, i: int) -> np.ndarray:
        return self.ensemble.states[:, i, :]

    def _project(self, i: int, targets: np.ndarray) -> np.ndarray:
        """Fit one or more target columns on the step-i features.

        Columns are equilibrated before the decomposition; this leaves the
        projection unchanged and keeps the conditioning scale-free.
        """
        if i == 0:
            means = particle_mean(targets, self.ensemble.antithetic)
            return np.broadcast_to(means, targets.shape).copy()
        phi = self.basis.design(self.state(i))
        scale = np.max(np.abs(phi), axis=0)
        scale[scale == 0.0] = 1.0
        phi /= scale
        beta, _, rank, sv = np.linalg.lstsq(phi, targets, rcond=None)
        if rank < self.basis.n_features:
            raise RegressionError(
                f"rank-deficient design matrix at step {i} "
                f"(degree {self.basis.degree}, rank {rank}/{self.basis.n_features})")
        if sv[-1] > 0 and sv[0] / sv[-1] > self.cond_warn:
            warnings.warn(f"ill-conditioned regression at step {i}: "
                          f"cond={sv[0] / sv[-1]:.3g}", RuntimeWarning)
        return phi @ beta

    def condexp(self, i: int, next_values) -> np.ndarray:
        v = np.asarray(next_values, dtype=float)
        return self._project(i, v[:, None])[:, 0]

    def step_z(self, i: int, next_values) -> np.ndarray:
        v = np.asarray(next_values, dtype=float)
        prods = v[:, None] * self.ensemble.increments[:, i, :]
        return self._project(i, prods) / self.grid.dt

    def condexp_and_z(self, i: int, next_values) -> tuple[np.ndarray, np.ndarray]:
        """One decomposition for E_{t_i}[V] and E_{t_i}[V dB_i]/dt together."""
        v = np.asarray(next_values, dtype=float)
        targets = np.column_stack([v, v[:, None] * self.ensemble.increments[:, i, :]])
        fit = self._project(i, targets)
        return fit[:, 0], fit[:, 1:] / self.grid.dt

    def mean(self, i: int, values):
        res = particle_mean(values, self.ensemble.antithetic)
        return float(res) if np.ndim(res) == 0 else res

    def mean_se(self, i: int, values) -> tuple[float, float]:
        return particle_mean_se(values, self.ensemble.antithetic)

    def law(self, i: int, values) -> EmpiricalLaw:
        return EmpiricalLaw(atoms=np.asarray(values, dtype=float))

    def sup_sq_mean(self, values_list: list[np.ndarray], lo: int = 0) -> float:
        """E[ sup_i |V_i|^2 ] over aligned per-node particle values."""
        stacked = np.abs(np.stack(values_list, axis=1))
        sup = stacked.max(axis=1)
        return float(particle_mean(sup * sup, self.ensemble.antithetic))


# ---------------------------------------------------------------------------
# Exact binomial lattice backend (d = 1)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Recombining +/-sqrt(dt) walk: step i holds i+1 nodes with exact dyadic
    probabilities; node j carries the state (2j - i) * sqrt(dt)."""

    grid: TimeGrid

    def __post_init__(self):
        if self.grid.n > LATTICE_MAX_STEPS:
            raise ValueError(f"lattice supports n <= {LATTICE_MAX_STEPS}")

    def states(self, i: int) -> np.ndarray:
        j = np.arange(i + 1, dtype=float)
        return (2.0 * j - i) * math.sqrt(self.grid.dt)

    def probs(self, i: int) -> np.ndarray:
        return np.array([math.comb(i, j) for j in range(i + 1)], dtype=float) / 2.0 ** i

    def path_nodes(self) -> np.ndarray:
        """(2^n, n+1) matrix of node indices along every up/down path."""
        n = self.grid.n
        paths = np.zeros((2 ** n, n + 1), dtype=np.int64)
        for i in range(n):
            bit = (np.arange(2 ** n) >> i) & 1
            paths[:, i + 1] = paths[:, i] + bit
        return paths


def lattice_condexp(model: LatticeModel, i: int, next_values) -> np.ndarray:
    """Exact one-step average with probabilities 1/2, 1/2."""
    v = np.asarray(next_values, dtype=float)
    if v.shape[0] != i + 2:
        raise ValueError(f"expected {i + 2} node values at step {i + 1}, got {v.shape[0]}")
    return 0.5 * (v[:-1] + v[1:])


def lattice_step_z(model: LatticeModel, i: int, next_values) -> np.ndarray:
    v = np.asarray(next_values, dtype=float)
    if v.shape[0] != i + 2:
        raise ValueError(f"expected {i + 2} node values at step {i + 1}, got {v.shape[0]}")
    return ((v[1:] - v[:-1]) / (2.0 * math.sqrt(model.grid.dt)))[:, None]


class LatticeBackend:
    """Exact conditional expectations on the binomial lattice."""

    kind = "lattice"

    def __init__(self, model: LatticeModel):
        self.model = model
        self.grid = model.grid
        self._paths = None

    @property
    def d(self) -> int:
        return 1

    def count(self, i: int) -> int:
        return i + 1

    def state(self, i: int) -> np.ndarray:
        return self.model.states(i)[:, None]

    def condexp(self, i: int, next_values) -> np.ndarray:
        return lattice_condexp(self.model, i, next_values)

    def step_z(self, i: int, next_values) -> np.ndarray:
        return lattice_step_z(self.model, i, next_values)

    def condexp_and_z(self, i: int, next_values) -> tuple[np.ndarray, np.ndarray]:
        return self.condexp(i, next_values), self.step_z(i, next_values)

    def mean(self, i: int, values):
        res = np.dot(self.model.probs(i), values)
        return float(res) if np.ndim(res) == 0 else res

    def mean_se(self, i: int, values) -> tuple[float, float]:
        return self.mean(i, values), 0.0

    def law(self, i: int, values) -> EmpiricalLaw:
        return EmpiricalLaw(atoms=np.asarray(values, dtype=float),
                            weights=self.model.probs(i))

    def sup_sq_mean(self, values_list: list[np.ndarray], lo: int = 0) -> float:
        """Exact E[ sup |V|^2 ] by enumerating all 2^n equally likely paths;
        values_list[j] holds the node values at grid node lo + j."""
        if self._paths is None:
            self._paths = self.model.path_nodes()
        gathered = np.stack(
            [np.asarray(values_list[j], dtype=float)[self._paths[:, lo + j]]
             for j in range(len(values_list))], axis=1)
        sup = np.abs(gathered).max(axis=1)
        return float(np.mean(sup * sup))


def one_step_z(backend, i: int, next_values) -> np.ndarray:
    """Martingale-integrand estimate Z_{t_i} = E_{t_i}[V_{i+1} dB_i] / dt."""
    return backend.step_z(i, next_values)
