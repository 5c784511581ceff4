"""Energy-reservoir battery model with power, ramp and state-of-charge limits.

No voltage dynamics: the battery is a Wh store with charge/discharge
efficiencies. Sign convention throughout: positive power = discharging
(insertion into the bus), negative = charging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BatteryParams:
    """Storage battery ratings. Defaults model a 42 Ah / 12 V VRLA unit."""

    capacity_ah: float = 42.0
    nominal_v: float = 12.0
    soc_min: float = 0.2
    soc_max: float = 1.0
    p_charge_max: float = 50.0      # W, 0 disables charging
    p_discharge_max: float = 50.0   # W, 0 disables discharging
    ramp_limit: float = 10.0        # W/s
    eta_charge: float = 0.95
    eta_discharge: float = 0.95

    @property
    def capacity_wh(self) -> float:
        return self.capacity_ah * self.nominal_v

    def validate(self) -> None:
        if not self.capacity_ah > 0:
            raise ValueError("capacity_ah must be > 0")
        if not self.nominal_v > 0:
            raise ValueError("nominal_v must be > 0")
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ValueError("require 0 <= soc_min < soc_max <= 1")
        if self.p_charge_max < 0 or self.p_discharge_max < 0:
            raise ValueError("power limits must be >= 0")
        if not self.ramp_limit > 0:
            raise ValueError("ramp_limit must be > 0")
        if not 0.0 < self.eta_charge <= 1.0:
            raise ValueError("eta_charge must be in (0, 1]")
        if not 0.0 < self.eta_discharge <= 1.0:
            raise ValueError("eta_discharge must be in (0, 1]")


@dataclass(frozen=True)
class BatteryState:
    soc: float
    last_power: float = 0.0   # signed W, positive = discharging
    energy_wh: float = 0.0    # derived: soc * capacity_wh, kept consistent


@dataclass(frozen=True)
class StepResult:
    """Outcome of one battery step: realized power, next state, SoC-bound flags."""

    power: float
    state: BatteryState
    depleted: bool = False
    full: bool = False


def initial_state(params: BatteryParams, soc: float) -> BatteryState:
    if not params.soc_min <= soc <= params.soc_max:
        raise ValueError(f"soc={soc} outside [{params.soc_min}, {params.soc_max}]")
    return BatteryState(soc=soc, last_power=0.0, energy_wh=soc * params.capacity_wh)


def soc_of(state: BatteryState) -> float:
    return state.soc


def battery_step(
    params: BatteryParams,
    state: BatteryState,
    p_request: float,
    dt: float,
    charge_limit_w: float = math.inf,
) -> StepResult:
    """Realize a power request against the physical limits over one step.

    The request is clipped by the rated power limits, by the ramp window
    around the previous power, and by stored energy / headroom including
    efficiency. The energy bounds reserve enough margin to ramp back to zero
    at ``ramp_limit``, so following the ramp window can never push the SoC
    out of range: both the SoC band and the ramp bound hold for any request
    sequence. ``charge_limit_w`` lets a caller cap charge acceptance at the
    power actually available on the bus; that cap is physical and overrides
    the ramp window.

    Discharging draws ``p*dt/eta_discharge`` from the store; charging banks
    ``|p|*dt*eta_charge``. Flags mark steps where the clip was SoC-bound.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    cap_j = params.capacity_wh * 3600.0
    r = params.ramp_limit
    avail_j = max(0.0, (state.soc - params.soc_min) * cap_j)
    head_j = max(0.0, (params.soc_max - state.soc) * cap_j)

    # SoC-derived bounds with the ramp-down reserve p^2/(2r) folded in.
    # Written as x / (rdt + sqrt(rdt^2 + x)) to stay stable for large ramps,
    # where it tends to the plain headroom limit E/dt.
    rdt = r * dt
    x_dis = 2.0 * r * avail_j * params.eta_discharge
    x_chg = 2.0 * r * head_j / params.eta_charge
    dis_soc = x_dis / (rdt + math.sqrt(rdt * rdt + x_dis)) if x_dis > 0 else 0.0
    chg_soc = x_chg / (rdt + math.sqrt(rdt * rdt + x_chg)) if x_chg > 0 else 0.0

    hard_hi = min(params.p_discharge_max, dis_soc)
    hard_lo = -min(params.p_charge_max, chg_soc, charge_limit_w)

    ramp_lo = state.last_power - rdt
    ramp_hi = state.last_power + rdt

    p = min(max(p_request, ramp_lo), ramp_hi)
    p = min(max(p, hard_lo), hard_hi)

    depleted = (
        p_request - p > 1e-12
        and p_request > 0
        and dis_soc <= min(params.p_discharge_max, ramp_hi) + 1e-12
    )
    full = (
        p - p_request > 1e-12
        and p_request < 0
        and chg_soc <= min(params.p_charge_max, -ramp_lo, charge_limit_w) + 1e-12
    )

    if p >= 0:
        soc = state.soc - (p * dt / params.eta_discharge) / cap_j
    else:
        soc = state.soc + (-p * dt * params.eta_charge) / cap_j
    # The bounds above keep soc in range analytically; clamp only fp dust.
    soc = min(max(soc, params.soc_min), params.soc_max)

    next_state = BatteryState(soc=soc, last_power=p, energy_wh=soc * params.capacity_wh)
    return StepResult(power=p, state=next_state, depleted=depleted, full=full)
