"""Built-in verification scenarios with documented closed forms.

A: pure noise with a sinusoidal constraint profile -- the reflection path has
   an explicit formula from the backward running supremum.
B: linear mean-field drift with a slack constraint -- the mean solves a scalar
   ODE and the reflection vanishes.
C: mean-field drift plus evaluation resistance on a short horizon -- no closed
   form, referenced against the exact lattice solver.
D: capped quadratic driver with bounded terminal value -- quadratic mode,
   horizon set to its own contraction horizon, lattice-referenced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .model import (DriverSpec, ResistanceSpec, ScenarioSpec,
                    brownian_shift_terminal, brownian_terminal, hl_constant,
                    linear_mean_driver, linear_shift_loss, linear_y_driver,
                    mean_resist_driver, quadratic_z_driver,
                    scaled_tanh_terminal, sine_perturbed_loss, zero_driver)
from .picard import quadratic_ball_floor, quadratic_contraction_horizon


@dataclass(frozen=True, eq=False)
class NamedScenario:
    name: str
    spec: ScenarioSpec
    closed_form: dict | None = None
    notes: str = ""


def _scenario_a() -> NamedScenario:
    T = 1.0
    spec = ScenarioSpec(
        name="A_sine_constraint",
        horizon=T,
        brownian_dim=1,
        terminal=brownian_terminal(),
        driver=zero_driver(),
        resistance=ResistanceSpec("zero"),
        loss=linear_shift_loss(c0=0.0, amp=0.3, omega=math.pi / T),
    )

    def k_exact(t):
        if t <= T / 2.0:
            return 0.0
        return 0.3 * (1.0 - math.sin(math.pi * t / T))

    def mean_y_exact(t):
        # E[Y_t] equals the remaining reflection, sup_{t<=s<=T} 0.3 sin(pi s/T)
        if t <= T / 2.0:
            return 0.3
        return 0.3 * math.sin(math.pi * t / T)

    return NamedScenario(
        name=spec.name, spec=spec,
        closed_form={"k": k_exact, "mean_y": mean_y_exact},
        notes="driverless; constraint profile 0.3*sin(pi t/T) saturates on [T/2, T]")


def _scenario_b() -> NamedScenario:
    a, T = 0.5, 0.5
    spec = ScenarioSpec(
        name="B_meanfield_linear",
        horizon=T,
        brownian_dim=1,
        terminal=brownian_shift_terminal(1.0),
        driver=linear_mean_driver(a),
        resistance=ResistanceSpec("zero"),
        loss=linear_shift_loss(),
    )
    return NamedScenario(
        name=spec.name, spec=spec,
        closed_form={"k": lambda t: 0.0,
                     "mean_y": lambda t: math.exp(a * (T - t))},
        notes="mean solves m' = -a m, m(T) = 1; constraint slack so k vanishes")


def _scenario_c() -> NamedScenario:
    spec = ScenarioSpec(
        name="C_resistance_lipschitz",
        horizon=0.01,
        brownian_dim=1,
        terminal=brownian_shift_terminal(1.0),
        driver=mean_resist_driver(0.2, -0.1),
        resistance=ResistanceSpec("evaluation"),
        loss=linear_shift_loss(),
    )
    return NamedScenario(name=spec.name, spec=spec,
                         notes="resistance feeds back through the generator; "
                               "horizon within the contraction horizon")


def _scenario_d() -> NamedScenario:
    driver = quadratic_z_driver(a=0.05, gamma=0.1, z_cap=1e3, b=0.02,
                                zero_bound=1.0, zero_z_bound=1.0)
    loss = linear_shift_loss(c0=-0.5)
    # pin the horizon to the scenario's own contraction horizon
    floor = quadratic_ball_floor(hl_constant(loss), 1.0, driver.lam)
    horizon, _, _ = quadratic_contraction_horizon(floor, hl_constant(loss), 1.0,
                                                  driver.lam, driver.alpha)
    spec = ScenarioSpec(
        name="D_quadratic",
        horizon=horizon,
        brownian_dim=1,
        terminal=scaled_tanh_terminal(1.0),
        driver=driver,
        resistance=ResistanceSpec("zero"),
        loss=loss,
    )
    return NamedScenario(name=spec.name, spec=spec,
                         notes="capped quadratic z-term keeps the declared "
                               "increment constants exact under probing")


def registry() -> list[NamedScenario]:
    return [_scenario_a(), _scenario_b(), _scenario_c(), _scenario_d()]


def get(name: str) -> NamedScenario:
    for entry in registry():
        if entry.name == name:
            return entry
    raise KeyError(f"unknown scenario {name!r}; "
                   f"known: {[e.name for e in registry()]}")


def with_horizon(spec: ScenarioSpec, horizon: float) -> ScenarioSpec:
    return replace(spec, horizon=horizon)


# ---------------------------------------------------------------------------
# Inline scenario construction (JSON config support)
# ---------------------------------------------------------------------------

_LOSS_BUILDERS = {
    "linear_shift": lambda p: linear_shift_loss(**p),
    "sine_perturbed": lambda p: sine_perturbed_loss(**p),
}

_DRIVER_BUILDERS = {
    "zero": lambda p: zero_driver(),
    "constant": lambda p: DriverSpec(kind="constant", lam=0.0,
                                     params=(float(p["value"]),)),
    "linear_y": lambda p: linear_y_driver(**p),
    "linear_mean": lambda p: linear_mean_driver(**p),
    "mean_resist": lambda p: mean_resist_driver(**p),
    "quadratic_z": lambda p: quadratic_z_driver(**p),
}

_TERMINAL_BUILDERS = {
    "brownian": lambda p: brownian_terminal(),
    "brownian_shift": lambda p: brownian_shift_terminal(**p),
    "scaled_tanh": lambda p: scaled_tanh_terminal(**p),
}


def _build(table, section: str, cfg: dict):
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in table:
        raise ValueError(f"{section}: unknown kind {kind!r} "
                         f"(expected one of {sorted(table)})")
    params = cfg.pop("params", {})
    if cfg:
        raise ValueError(f"{section}: unknown keys {sorted(cfg)}")
    return table[kind](params)


def scenario_from_dict(cfg: dict) -> ScenarioSpec:
    """Build a ScenarioSpec from a plain configuration mapping."""
    cfg = dict(cfg)
    try:
        name = cfg.pop("name", "inline")
        horizon = float(cfg.pop("T"))
        dim = int(cfg.pop("d", 1))
        terminal = _build(_TERMINAL_BUILDERS, "terminal", cfg.pop("terminal"))
        driver = _build(_DRIVER_BUILDERS, "driver", cfg.pop("driver"))
        res_cfg = dict(cfg.pop("resistance", {"kind": "zero"}))
        resistance = ResistanceSpec(kind=res_cfg.pop("kind"))
        if res_cfg:
            raise ValueError(f"resistance: unknown keys {sorted(res_cfg)}")
        loss = _build(_LOSS_BUILDERS, "loss", cfg.pop("loss"))
    except KeyError as exc:
        raise ValueError(f"scenario config missing key {exc}") from exc
    if cfg:
        raise ValueError(f"scenario config has unknown keys {sorted(cfg)}")
    return ScenarioSpec(name=name, horizon=horizon, brownian_dim=dim,
                        terminal=terminal, driver=driver,
                        resistance=resistance, loss=loss)


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    """Canonical mapping of a scenario (drives the provenance content hash)."""
    return {
        "name": spec.name,
        "T": spec.horizon,
        "d": spec.brownian_dim,
        "terminal": {"kind": spec.terminal.kind, "params": list(spec.terminal.params),
                     "bound": spec.terminal.bound},
        "driver": {"kind": spec.driver.kind, "mode": spec.driver.mode,
                   "lam": spec.driver.lam, "alpha": spec.driver.alpha,
                   "zero_bound": spec.driver.zero_bound,
                   "zero_z_bound": spec.driver.zero_z_bound,
                   "params": list(spec.driver.params)},
        "resistance": {"kind": spec.resistance.kind},
        "loss": {"kind": spec.loss.kind, "params": list(spec.loss.params),
                 "growth_const": spec.loss.growth_const,
                 "lip_lower": spec.loss.lip_lower,
                 "lip_upper": spec.loss.lip_upper},
    }
