"""Problem-instance types (terminal, driver, resistance, loss) and numeric
validation of the standing regularity assumptions by randomized probing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LIPSCHITZ = "lipschitz"
QUADRATIC = "quadratic"

LOSS_KINDS = ("linear_shift", "sine_perturbed")
DRIVER_KINDS = ("zero", "constant", "linear_y", "linear_mean", "mean_resist",
                "quadratic_z")
RESISTANCE_KINDS = ("zero", "evaluation", "running_sup", "scaled_integral")
TERMINAL_KINDS = ("brownian", "brownian_shift", "scaled_tanh")

# Driver families whose increment bound is genuinely quadratic in z.
QUADRATIC_DRIVER_KINDS = ("quadratic_z",)

PASS_RATIO = 1.0 + 1e-9


class ModeError(ValueError):
    """Scenario mode flags contradict the declared coefficient family."""


@dataclass(frozen=True, eq=False)
class LossSpec:
    """Running loss y -> l(t, y): strictly increasing, bi-Lipschitz, linear growth.

    Built-in families:
      linear_shift:   l(t, y) = y - (c0 + amp*sin(omega*t))
      sine_perturbed: l(t, y) = y + beta*sin(y), 0 < beta < 1
    `positive_above` is the documented threshold with l(t, y) > 0 for y > threshold,
    which guarantees bracket expansion in the shift search terminates.
    """

    kind: str
    params: tuple = ()
    growth_const: float = 1.0
    lip_lower: float = 1.0
    lip_upper: float = 1.0
    positive_above: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not (0.0 < self.lip_lower <= self.lip_upper):
            raise ValueError("loss needs 0 < lip_lower <= lip_upper")
        if self.growth_const <= 0.0:
            raise ValueError("loss growth constant must be positive")

    def shift(self, t: float) -> float:
        """Deterministic shift c(t) subtracted by the linear_shift family."""
        if self.kind == "linear_shift":
            c0, amp, omega = self.params
            return c0 + amp * math.sin(omega * t)
        return 0.0

    def evaluate(self, t: float, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "linear_shift":
            return y - self.shift(t)
        beta = self.params[0]
        return y + beta * np.sin(y)


def linear_shift_loss(c0: float = 0.0, amp: float = 0.0, omega: float = 0.0) -> LossSpec:
    peak = abs(c0) + abs(amp)
    return LossSpec(
        kind="linear_shift",
        params=(float(c0), float(amp), float(omega)),
        growth_const=max(1.0, peak),
        lip_lower=1.0,
        lip_upper=1.0,
        positive_above=peak,
    )


def sine_perturbed_loss(beta: float) -> LossSpec:
    if not 0.0 < beta < 1.0:
        raise ValueError("sine_perturbed needs 0 < beta < 1")
    return LossSpec(
        kind="sine_perturbed",
        params=(float(beta),),
        growth_const=1.0,
        lip_lower=1.0 - beta,
        lip_upper=1.0 + beta,
        positive_above=beta,
    )


def hl_constant(loss: LossSpec) -> float:
    """Lipschitz constant of the shift operator on laws: lip_upper / lip_lower."""
    if loss.lip_lower <= 0.0:
        raise ValueError("bi-Lipschitz lower constant must be positive")
    return loss.lip_upper / loss.lip_lower


@dataclass(frozen=True, eq=False)
class DriverSpec:
    """Generator f(t, y, ybar, z, zbar, g) with declared regularity constants.

    `lam` is the Lipschitz constant (lipschitz mode) or the structure constant of
    the quadratic increment bound (quadratic mode); `alpha` the subquadratic
    exponent of the zbar slot; `zero_bound` bounds |f(t,0,0,0,0,0)|;
    `zero_z_bound`, when declared, asserts |f(t,y,ybar,0,zbar)| <= zero_z_bound
    and enables the uniform-bound check of the global solver.
    """

    kind: str
    mode: str = LIPSCHITZ
    lam: float = 0.0
    alpha: float = 0.0
    zero_bound: float | None = None
    zero_z_bound: float | None = None
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in DRIVER_KINDS:
            raise ValueError(f"unknown driver kind {self.kind!r}")
        if self.mode not in (LIPSCHITZ, QUADRATIC):
            raise ValueError(f"unknown driver mode {self.mode!r}")
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.kind in QUADRATIC_DRIVER_KINDS and self.mode != QUADRATIC:
            raise ModeError(f"driver family {self.kind!r} has a quadratic z term "
                            "but is declared lipschitz")
        if self.mode == QUADRATIC and self.zero_bound is None:
            raise ValueError("quadratic mode requires zero_bound")

    def evaluate(self, t: float, y, ybar: float, z, zbar, g: float):
        """Vectorized over the particle axis: y (m,), z (m, d); returns (m,)."""
        y = np.asarray(y, dtype=float)
        m = y.shape[0]
        if self.kind == "zero":
            return np.zeros(m)
        if self.kind == "constant":
            return np.full(m, self.params[0])
        if self.kind == "linear_y":
            return self.params[0] * y
        if self.kind == "linear_mean":
            a, = self.params
            return np.full(m, a * ybar)
        if self.kind == "mean_resist":
            a, b = self.params
            return np.full(m, a * ybar + b * g)
        # quadratic_z: a*y + (gamma/2)*min(|z|^2, cap) + b*|zbar|
        a, gamma, cap, b = self.params
        z = np.asarray(z, dtype=float)
        zsq = np.minimum(np.sum(z * z, axis=-1), cap)
        return a * y + 0.5 * gamma * zsq + b * float(np.linalg.norm(zbar))


def zero_driver() -> DriverSpec:
    return DriverSpec(kind="zero", lam=0.0)


def constant_driver(value: float) -> DriverSpec:
    return DriverSpec(kind="constant", lam=0.0, params=(float(value),))


def linear_y_driver(a: float) -> DriverSpec:
    return DriverSpec(kind="linear_y", lam=abs(a), params=(float(a),))


def linear_mean_driver(a: float) -> DriverSpec:
    return DriverSpec(kind="linear_mean", lam=abs(a), params=(float(a),))


def mean_resist_driver(a: float, b: float) -> DriverSpec:
    return DriverSpec(kind="mean_resist", lam=max(abs(a), abs(b)),
                      params=(float(a), float(b)))


def quadratic_z_driver(a: float, gamma: float, z_cap: float, b: float,
                       zero_bound: float, zero_z_bound: float | None = None,
                       alpha: float = 0.0) -> DriverSpec:
    lam = max(abs(a), abs(gamma) / 2.0, abs(b))
    return DriverSpec(kind="quadratic_z", mode=QUADRATIC, lam=lam, alpha=alpha,
                      zero_bound=zero_bound, zero_z_bound=zero_z_bound,
                      params=(float(a), float(gamma), float(z_cap), float(b)))


@dataclass(frozen=True, eq=False)
class ResistanceSpec:
    """Adapted, sup-norm-1-Lipschitz functional of the deterministic k-path."""

    kind: str

    def __post_init__(self):
        if self.kind not in RESISTANCE_KINDS:
            raise ValueError(f"unknown resistance kind {self.kind!r}")

    def apply(self, grid, k_path) -> np.ndarray:
        """Path t_i -> G_{t_i}(k) on the grid nodes.

        The integral family uses the left rule, matching the piecewise-constant
        interpretation of k between nodes.
        """
        k = np.asarray(k_path, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(k)
        if self.kind == "evaluation":
            return k.copy()
        if self.kind == "running_sup":
            return np.maximum.accumulate(np.abs(k))
        out = np.zeros_like(k)
        out[1:] = np.cumsum(k[:-1]) * grid.dt
        return out / max(grid.T, 1.0)


@dataclass(frozen=True, eq=False)
class TerminalSpec:
    """Terminal payoff g(B_T); `bound` is the essential bound used in quadratic mode.

    Built-in families read the first Brownian coordinate.
    """

    kind: str
    params: tuple = ()
    bound: float | None = None

    def __post_init__(self):
        if self.kind not in TERMINAL_KINDS:
            raise ValueError(f"unknown terminal kind {self.kind!r}")

    def evaluate(self, terminal_state) -> np.ndarray:
        x = np.asarray(terminal_state, dtype=float)[..., 0]
        if self.kind == "brownian":
            return x.copy()
        if self.kind == "brownian_shift":
            return x + self.params[0]
        scale, = self.params
        return scale * np.tanh(x)


def brownian_terminal() -> TerminalSpec:
    return TerminalSpec(kind="brownian")


def brownian_shift_terminal(c: float) -> TerminalSpec:
    return TerminalSpec(kind="brownian_shift", params=(float(c),))


def scaled_tanh_terminal(scale: float = 1.0) -> TerminalSpec:
    return TerminalSpec(kind="scaled_tanh", params=(float(scale),), bound=abs(scale))


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """Full problem instance on [0, horizon] with d-dimensional noise."""

    name: str
    horizon: float
    brownian_dim: int
    terminal: TerminalSpec
    driver: DriverSpec
    resistance: ResistanceSpec
    loss: LossSpec

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.brownian_dim < 1:
            raise ValueError("brownian_dim must be >= 1")
        if self.driver.mode == QUADRATIC and self.terminal.bound is None:
            raise ModeError("quadratic mode requires a bounded terminal condition")

    @property
    def mode(self) -> str:
        return self.driver.mode

    def effective_bound(self) -> float | None:
        """Common bound L for terminal and driver in quadratic mode."""
        if self.mode != QUADRATIC:
            return None
        return max(self.terminal.bound, self.driver.zero_bound)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    worst_ratio: float
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    scenario: str
    probes: int
    seed: int
    checks: tuple[AssumptionCheck, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def worst(self, name: str) -> float:
        for c in self.checks:
            if c.name == name:
                return c.worst_ratio
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "probes": self.probes,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "worst_ratio": c.worst_ratio,
                 "passed": c.passed, "detail": c.detail}
                for c in self.checks
            ],
        }


def _ratio_check(name, num, den, detail="") -> AssumptionCheck:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = den > 0.0
    worst = float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0
    return AssumptionCheck(name, worst, worst <= PASS_RATIO, detail)


def _bool_check(name, all_good: bool, detail="") -> AssumptionCheck:
    return AssumptionCheck(name, 0.0 if all_good else math.inf, all_good, detail)


def _driver_checks(spec: ScenarioSpec, rng, probes: int) -> list[AssumptionCheck]:
    drv, d, T = spec.driver, spec.brownian_dim, spec.horizon
    t = rng.uniform(0.0, T, probes)
    y, p = rng.uniform(-5, 5, (2, probes))
    yb, pb = rng.uniform(-5, 5, (2, probes))
    z, q = rng.uniform(-5, 5, (2, probes, d))
    zb, qb = rng.uniform(-5, 5, (2, probes, d))
    k, kb = rng.uniform(-3, 3, (2, probes))

    df = np.empty(probes)
    for j in range(probes):
        f1 = drv.evaluate(t[j], np.array([y[j]]), yb[j], z[j:j + 1], zb[j], k[j])
        f2 = drv.evaluate(t[j], np.array([p[j]]), pb[j], q[j:j + 1], qb[j], kb[j])
        df[j] = abs(float(f1[0] - f2[0]))

    nz = np.linalg.norm(z, axis=1)
    nq = np.linalg.norm(q, axis=1)
    dz = np.linalg.norm(z - q, axis=1)
    dzb = np.linalg.norm(zb - qb, axis=1)
    checks = []
    if drv.mode == LIPSCHITZ:
        bound = drv.lam * (np.abs(y - p) + np.abs(yb - pb) + dz + dzb + np.abs(k - kb))
        checks.append(_ratio_check("driver_lipschitz", df, bound))
    else:
        nzb = np.linalg.norm(zb, axis=1)
        nqb = np.linalg.norm(qb, axis=1)
        bound = drv.lam * (np.abs(y - p) + np.abs(yb - pb)
                           + (1.0 + nz + nq) * dz
                           + (1.0 + nzb ** drv.alpha + nqb ** drv.alpha) * dzb
                           + np.abs(k - kb))
        checks.append(_ratio_check("driver_quadratic_increment", df, bound))
        f0 = np.array([abs(float(drv.evaluate(tj, np.zeros(1), 0.0,
                                              np.zeros((1, d)), np.zeros(d), 0.0)[0]))
                       for tj in t])
        checks.append(_ratio_check("driver_zero_bound", f0,
                                   np.full(probes, drv.zero_bound)))
    return checks


def _resistance_checks(spec: ScenarioSpec, rng, probes: int) -> list[AssumptionCheck]:
    from .paths import make_grid

    res = spec.resistance
    grid = make_grid(spec.horizon, 8)
    zero_ok = bool(np.all(res.apply(grid, np.zeros(grid.n + 1)) == 0.0))

    ratios_num, ratios_den = [], []
    adapted_ok = True
    for _ in range(probes):
        a = rng.uniform(-2, 2, grid.n + 1)
        b = rng.uniform(-2, 2, grid.n + 1)
        ga, gb = res.apply(grid, a), res.apply(grid, b)
        sup = np.maximum.accumulate(np.abs(a - b))
        ratios_num.append(np.abs(ga - gb))
        ratios_den.append(sup)
        # perturbing the path strictly after t must not change G_t
        i = int(rng.integers(0, grid.n))
        pert = a.copy()
        pert[i + 1:] += rng.uniform(0.5, 2.0)
        if not np.all(res.apply(grid, pert)[: i + 1] == ga[: i + 1]):
            adapted_ok = False
    return [
        _bool_check("resistance_zero", zero_ok),
        _bool_check("resistance_adapted", adapted_ok),
        _ratio_check("resistance_lipschitz",
                     np.concatenate(ratios_num), np.concatenate(ratios_den)),
    ]


def _loss_checks(spec: ScenarioSpec, rng, probes: int) -> list[AssumptionCheck]:
    loss, T = spec.loss, spec.horizon
    t = rng.uniform(0.0, T, probes)
    y1 = rng.uniform(-8, 8, probes)
    y2 = y1 + rng.uniform(1e-4, 6.0, probes)

    l1 = np.array([float(loss.evaluate(tj, np.array([a]))[0]) for tj, a in zip(t, y1)])
    l2 = np.array([float(loss.evaluate(tj, np.array([a]))[0]) for tj, a in zip(t, y2)])
    dl = np.abs(l2 - l1)
    dy = y2 - y1
    tail = loss.positive_above + rng.uniform(1e-6, 10.0, probes)
    ltail = np.array([float(loss.evaluate(tj, np.array([a]))[0]) for tj, a in zip(t, tail)])

    return [
        _bool_check("loss_strictly_increasing", bool(np.all(l2 > l1))),
        _ratio_check("loss_linear_growth",
                     np.abs(np.concatenate([l1, l2])),
                     loss.growth_const * (1.0 + np.abs(np.concatenate([y1, y2])))),
        _ratio_check("loss_bilip_upper", dl, loss.lip_upper * dy),
        _ratio_check("loss_bilip_lower", loss.lip_lower * dy, dl),
        _bool_check("loss_positive_tail", bool(np.all(ltail > 0.0)),
                    detail=f"threshold={loss.positive_above}"),
    ]


def _terminal_checks(spec: ScenarioSpec, rng, probes: int) -> list[AssumptionCheck]:
    n_samp = max(4096, probes)
    b_T = rng.standard_normal((n_samp, spec.brownian_dim)) * math.sqrt(spec.horizon)
    xi = spec.terminal.evaluate(b_T)
    lvals = spec.loss.evaluate(spec.horizon, xi)
    mean = float(np.mean(lvals))
    se = float(np.std(lvals)) / math.sqrt(n_samp)
    checks = [
        _ratio_check("terminal_constraint_margin",
                     np.array([max(0.0, -mean)]), np.array([3.0 * se + 1e-12]),
                     detail=f"mean={mean:.6g} se={se:.3g}"),
    ]
    if spec.mode == QUADRATIC:
        checks.append(_ratio_check("terminal_bound", np.abs(xi),
                                   np.full(n_samp, spec.terminal.bound)))
    return checks


def validate_assumptions(spec: ScenarioSpec, probes: int, seed: int) -> ValidationReport:
    """Probe the standing assumptions on `probes` randomized tuples.

    Checks are numerical evidence, not proofs; the probe count and seed are
    recorded so the report is reproducible.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if spec.driver.kind in QUADRATIC_DRIVER_KINDS and spec.mode != QUADRATIC:
        raise ModeError("driver family has a quadratic z term but mode is lipschitz")
    rng = np.random.default_rng(seed)
    checks = []
    checks += _driver_checks(spec, rng, probes)
    checks += _resistance_checks(spec, rng, max(8, probes // 4))
    checks += _loss_checks(spec, rng, probes)
    checks += _terminal_checks(spec, rng, probes)
    return ValidationReport(scenario=spec.name, probes=probes, seed=seed,
                            checks=tuple(checks))
