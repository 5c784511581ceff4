"""PV panel electrical models and the perturb-and-observe tracker.

Two panel models are provided. The power-scaling model turns irradiance and
temperature directly into output watts and is the one the system simulator
runs on. The single-diode model resolves the full implicit I-V curve and
exists so the tracker can be exercised against a realistic curve shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Linear cell temperature rise above ambient, degC per W/m^2 (NOCT-style).
CELL_TEMP_RISE = 0.03

# Boltzmann constant over elementary charge, V/K.
K_OVER_Q = 8.617333262e-5

SOLVER_TOL_A = 1e-9
SOLVER_MAX_ITER = 200


class NonConvergence(RuntimeError):
    """The implicit I-V solve failed to reach tolerance within the iteration cap."""


@dataclass(frozen=True)
class PanelParams:
    """Electrical parameters of one PV panel.

    Defaults describe a 100 Wp mono-crystalline module. ``p_stc``, ``gamma``
    and the reference conditions drive the power-scaling model; the remaining
    fields parameterize the single-diode curve.
    """

    p_stc: float = 100.0       # W at standard test conditions
    gamma: float = -0.004      # power temperature coefficient, 1/degC (<= 0)
    g_stc: float = 1000.0      # reference irradiance, W/m^2
    t_stc: float = 25.0        # reference cell temperature, degC
    i_sc: float = 6.1          # short-circuit current, A
    v_oc: float = 22.0         # open-circuit voltage, V
    n_ideality: float = 1.3    # diode ideality factor
    r_s: float = 0.35          # series resistance, ohm
    r_sh: float = 300.0        # shunt resistance, ohm
    n_cells: int = 36          # series cell count

    def validate(self) -> None:
        if not self.p_stc > 0:
            raise ValueError("p_stc must be > 0")
        if not self.g_stc > 0:
            raise ValueError("g_stc must be > 0")
        if not -0.01 <= self.gamma <= 0:
            raise ValueError("gamma must be in [-0.01, 0] per degC")
        if not self.i_sc > 0:
            raise ValueError("i_sc must be > 0")
        if not self.v_oc > 0:
            raise ValueError("v_oc must be > 0")
        if self.r_s < 0:
            raise ValueError("r_s must be >= 0")
        if not self.r_sh > 0:
            raise ValueError("r_sh must be > 0")
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if not self.n_ideality > 0:
            raise ValueError("n_ideality must be > 0")


@dataclass(frozen=True)
class EnvSample:
    """One environment reading: time, plane-of-array irradiance, ambient temperature."""

    t: float                # seconds since scenario start
    irradiance: float       # W/m^2
    ambient_temp: float     # degC

    def validate(self) -> None:
        if self.irradiance < 0:
            raise ValueError("irradiance must be >= 0")


def cell_temperature(env: EnvSample) -> float:
    """Cell temperature from ambient plus an irradiance-proportional rise."""
    return env.ambient_temp + CELL_TEMP_RISE * env.irradiance


def scaled_power(params: PanelParams, env: EnvSample) -> float:
    """Available panel power from the linear scaling model, clamped at >= 0.

    p_stc * (G / g_stc) * (1 + gamma * (T_cell - t_stc))
    """
    t_cell = cell_temperature(env)
    p = params.p_stc * (env.irradiance / params.g_stc) * (
        1.0 + params.gamma * (t_cell - params.t_stc)
    )
    return max(p, 0.0)


def _saturation_current(params: PanelParams) -> float:
    # Calibrated so the curve passes exactly through (v_oc, 0) at STC.
    vt = K_OVER_Q * (params.t_stc + 273.15)
    den = params.n_ideality * vt * params.n_cells
    return (params.i_sc - params.v_oc / params.r_sh) / math.expm1(params.v_oc / den)


def diode_current(params: PanelParams, v: float, env: EnvSample) -> float:
    """Terminal current at voltage ``v`` from the implicit single-diode equation.

    Solves I = I_ph - I_0*(exp((V + I*Rs)/(n*Vt*Ns)) - 1) - (V + I*Rs)/Rsh by
    bisection on the residual, which is strictly decreasing in I. Converges to
    an interval narrower than ``SOLVER_TOL_A``; raises NonConvergence past the
    iteration cap.
    """
    if not 0.0 <= v <= 1.2 * params.v_oc:
        raise ValueError(f"v={v} outside [0, 1.2*v_oc]")
    i_ph = params.i_sc * env.irradiance / params.g_stc
    i_0 = _saturation_current(params)
    vt = K_OVER_Q * (cell_temperature(env) + 273.15)
    den = params.n_ideality * vt * params.n_cells

    def residual(i: float) -> float:
        arg = (v + i * params.r_s) / den
        if arg > 700.0:   # expm1 would overflow; the residual is hugely negative
            return -math.inf
        return i_ph - i_0 * math.expm1(arg) - (v + i * params.r_s) / params.r_sh - i

    hi = i_ph + 1.0
    lo = -(i_ph + 1.0)
    expand = 0
    while residual(lo) <= 0.0:
        lo *= 2.0
        expand += 1
        if expand > 60:
            raise NonConvergence("could not bracket the I-V solution")
    for _ in range(SOLVER_MAX_ITER):
        if hi - lo < SOLVER_TOL_A:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    raise NonConvergence(f"no convergence after {SOLVER_MAX_ITER} iterations")


@dataclass(frozen=True)
class MpptState:
    """Perturb-and-observe tracker state.

    ``v_max`` bounds the operating voltage; set it to the panel's v_oc.
    """

    v_ref: float
    last_p: float = 0.0
    last_v: float = 0.0
    step_v: float = 0.1
    v_max: float = 22.0

    def validate(self) -> None:
        if not self.step_v > 0:
            raise ValueError("step_v must be > 0")
        if not 0.0 <= self.v_ref <= self.v_max:
            raise ValueError("v_ref must be within [0, v_max]")


def mppt_step(state: MpptState, measured_p: float, measured_v: float) -> MpptState:
    """One perturb-and-observe update.

    If power rose (or held), keep perturbing in the same voltage direction,
    otherwise reverse. The reference moves by one step and is clamped to
    [0, v_max].
    """
    dp = measured_p - state.last_p
    dv = measured_v - state.last_v
    direction = 1.0 if dv >= 0 else -1.0
    if dp < 0:
        direction = -direction
    v_ref = min(max(state.v_ref + direction * state.step_v, 0.0), state.v_max)
    return MpptState(v_ref, measured_p, measured_v, state.step_v, state.v_max)
