"""Minimal-shift operator: the smallest x >= 0 making the expected running loss
of a shifted law nonnegative, on empirical and exact finite-support laws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LossSpec, hl_constant

DEFAULT_TOL = 1e-10
DEFAULT_BRACKET_CAP = 2.0 ** 60


class BracketError(RuntimeError):
    """Bracket expansion exceeded the cap: the loss violates the positive-tail
    assumption numerically."""


@dataclass(frozen=True, eq=False)
class EmpiricalLaw:
    """Finite-support law: atoms with optional weights (uniform when None)."""

    atoms: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        object.__setattr__(self, "atoms", atoms)
        if not np.all(np.isfinite(atoms)):
            raise ValueError("law atoms must be finite")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            object.__setattr__(self, "weights", w)
            if w.shape != atoms.shape:
                raise ValueError("weights must match atoms")
            if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")

    def mean(self, values) -> float:
        if self.weights is None:
            return float(np.mean(values))
        return float(np.dot(self.weights, values))


def expected_loss(loss: LossSpec, t: float, law: EmpiricalLaw, x: float) -> float:
    """E[l(t, x + X)] for the finite-support law of X; nondecreasing in x."""
    return law.mean(loss.evaluate(t, x + law.atoms))


def loss_operator(loss: LossSpec, t: float, law: EmpiricalLaw,
                  tol: float = DEFAULT_TOL,
                  bracket_cap: float = DEFAULT_BRACKET_CAP) -> float:
    """Smallest x >= 0 with E[l(t, x + X)] >= 0, to within `tol`.

    Returns exactly 0 when the constraint already holds at x = 0; otherwise
    doubles an upper bracket from 1 (termination guaranteed by the loss's
    positive tail) and bisects. The returned endpoint satisfies the constraint.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if expected_loss(loss, t, law, 0.0) >= 0.0:
        return 0.0
    hi = 1.0
    while expected_loss(loss, t, law, hi) < 0.0:
        hi *= 2.0
        if hi > bracket_cap:
            raise BracketError(
                f"no nonnegative expected loss below shift {bracket_cap:g} at t={t}")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if expected_loss(loss, t, law, mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def hl_lipschitz_probe(loss: LossSpec, t: float,
                       law_pairs: list[tuple[EmpiricalLaw, EmpiricalLaw]],
                       tol: float = DEFAULT_TOL) -> float:
    """Worst |shift(X) - shift(Y)| / (C * E|X - Y|) over coupled law pairs.

    Pairs are coupled by shared particle index; C is the bi-Lipschitz ratio of
    the loss. A value <= 1 + 1e-6 is a pass.
    """
    c = hl_constant(loss)
    worst = 0.0
    for law_a, law_b in law_pairs:
        if law_a.atoms.shape != law_b.atoms.shape:
            raise ValueError("coupled laws need equal atom counts")
        denom = c * law_a.mean(np.abs(law_a.atoms - law_b.atoms))
        if denom <= 0.0:
            continue
        gap = abs(loss_operator(loss, t, law_a, tol)
                  - loss_operator(loss, t, law_b, tol))
        worst = max(worst, gap / denom)
    return worst
