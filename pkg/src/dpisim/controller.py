"""Setpoint stabilization control: mode selection, battery power target,
duty-cycle law and the three-switch actuation pattern.

The controller holds delivered power at a setpoint by charging the battery
with PV surplus and inserting battery power into deficits. Everything here is
a pure function; the only carried state is the duty-law integrator owned by
the caller.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Mode(enum.Enum):
    CHARGE = "Charge"
    INSERT = "Insert"
    BYPASS = "Bypass"


@dataclass(frozen=True)
class ControllerConfig:
    p_set: float = 13.0          # W, the output setpoint
    duty_scale: float = 300.0    # PWM register full scale
    duty_min: float = 0.0
    duty_max: float = 300.0
    hysteresis_w: float = 0.1    # deadband around p_set against mode chatter
    ki: float = 0.0              # integral gain, 1/s; 0 = proportional only

    def validate(self) -> None:
        if not self.p_set > 0:
            raise ValueError("p_set must be > 0")
        if not 0.0 <= self.hysteresis_w < self.p_set:
            raise ValueError("hysteresis_w must be in [0, p_set)")
        if self.duty_max < self.duty_min:
            raise ValueError("duty_max must be >= duty_min")
        if not self.duty_scale > 0:
            raise ValueError("duty_scale must be > 0")
        if self.ki < 0:
            raise ValueError("ki must be >= 0")


@dataclass(frozen=True)
class SwitchStates:
    """On/off pattern for the charge, bypass and insert switches.

    The bypass switch is on in every mode (the load is always fed); the
    charge and insert switches are never both on.
    """

    s_charge: bool
    s_bypass: bool
    s_insert: bool


@dataclass(frozen=True)
class ControlDecision:
    mode: Mode
    p_batt_target: float   # signed W, positive = discharge/insert
    duty: float
    switches: SwitchStates


def decide_mode(p_pv: float, cfg: ControllerConfig) -> Mode:
    """Charge above the deadband, Insert below it, Bypass inside it."""
    if p_pv > cfg.p_set + cfg.hysteresis_w:
        return Mode.CHARGE
    if p_pv < cfg.p_set - cfg.hysteresis_w:
        return Mode.INSERT
    return Mode.BYPASS


def battery_power_target(p_pv: float, cfg: ControllerConfig) -> float:
    """Signed battery power request: p_set - p_pv outside the deadband, else 0."""
    if decide_mode(p_pv, cfg) is Mode.BYPASS:
        return 0.0
    return cfg.p_set - p_pv


def duty_cycle(
    p_set: float,
    p_load: float,
    cfg: ControllerConfig,
    integ: float = 0.0,
    dt: float = 0.0,
) -> tuple[float, float]:
    """Duty register value from the load-power error, saturated to its range.

    Proportional term is ((p_set - p_load) / p_set) * duty_scale. With
    ki > 0 an integral term ki * integral((p_set - p_load) dt) is added;
    the integrator freezes while the output is saturated in the direction
    the error is pushing (anti-windup).

    Returns (duty, updated integrator state).
    """
    err = p_set - p_load
    prop = (err / p_set) * cfg.duty_scale
    if cfg.ki > 0.0:
        cand = integ + err * dt
        raw = prop + cfg.ki * cand
        if (raw > cfg.duty_max and err > 0) or (raw < cfg.duty_min and err < 0):
            cand = integ
        integ = cand
        raw = prop + cfg.ki * integ
    else:
        raw = prop
    duty = min(max(raw, cfg.duty_min), cfg.duty_max)
    return duty, integ


def switch_states(mode: Mode) -> SwitchStates:
    if mode is Mode.CHARGE:
        return SwitchStates(s_charge=True, s_bypass=True, s_insert=False)
    if mode is Mode.INSERT:
        return SwitchStates(s_charge=False, s_bypass=True, s_insert=True)
    return SwitchStates(s_charge=False, s_bypass=True, s_insert=False)


def control_step(
    p_pv: float,
    p_load_measured: float,
    cfg: ControllerConfig,
    integ: float = 0.0,
    dt: float = 0.0,
) -> tuple[ControlDecision, float]:
    """Full decision for one step: mode, battery target, duty, switches.

    Returns (decision, updated duty integrator).
    """
    mode = decide_mode(p_pv, cfg)
    target = battery_power_target(p_pv, cfg)
    duty, integ = duty_cycle(cfg.p_set, p_load_measured, cfg, integ, dt)
    return ControlDecision(mode, target, duty, switch_states(mode)), integ
