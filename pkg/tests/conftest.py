"""Shared test helpers: independent oracles and canned scenarios."""

from pathlib import Path

import numpy as np
import pytest

from dpisim.battery import BatteryParams
from dpisim.controller import ControllerConfig
from dpisim.pv import EnvSample, PanelParams
from dpisim.scenario import Scenario, reference_scenario

REPO_ROOT = Path(__file__).resolve().parent.parent

K_OVER_Q = 8.617333262e-5
CELL_TEMP_RISE = 0.03


def stc_env() -> EnvSample:
    # Ambient chosen so the modeled cell temperature lands exactly on 25 degC.
    return EnvSample(t=0.0, irradiance=1000.0, ambient_temp=25.0 - CELL_TEMP_RISE * 1000.0)


def grid_scan_mpp(params: PanelParams, env: EnvSample, resolution: float = 0.001):
    """Exhaustive-scan MPP oracle, independent of the library's point solver.

    Solves the single-diode equation on a voltage grid with vectorized
    bisection and returns (v_mpp, p_mpp).
    """
    v = np.arange(0.0, params.v_oc + resolution / 2, resolution)
    i_ph = params.i_sc * env.irradiance / params.g_stc
    vt_stc = K_OVER_Q * (params.t_stc + 273.15)
    den_stc = params.n_ideality * vt_stc * params.n_cells
    i_0 = (params.i_sc - params.v_oc / params.r_sh) / np.expm1(params.v_oc / den_stc)
    t_cell = env.ambient_temp + CELL_TEMP_RISE * env.irradiance
    den = params.n_ideality * K_OVER_Q * (t_cell + 273.15) * params.n_cells

    def residual(i):
        va = v + i * params.r_s
        return i_ph - i_0 * np.expm1(va / den) - va / params.r_sh - i

    lo = np.full_like(v, -(i_ph + 1.0))
    hi = np.full_like(v, i_ph + 1.0)
    for _ in range(80):
        bad = residual(lo) <= 0
        if not bad.any():
            break
        lo[bad] = lo[bad] * 2.0 - 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        pos = residual(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    p = v * 0.5 * (lo + hi)
    k = int(np.argmax(p))
    return float(v[k]), float(p[k])


def flat_panel(p_stc: float = 100.0) -> PanelParams:
    """Panel with zero temperature coefficient: power is exactly linear in
    irradiance, which makes engine expectations closed-form."""
    return PanelParams(p_stc=p_stc, gamma=0.0)


def balanced_scenario(eta: float = 1.0) -> Scenario:
    """Surplus then deficit around the setpoint, sized so the battery fills
    to soc_max (forcing curtailment) and then drains back and parks exactly
    at soc_min = soc_init. Starts and ends in equilibrium with the battery
    idle, so trapezoidal and rectangle energy accounting coincide."""
    battery = BatteryParams(
        capacity_ah=0.005, nominal_v=12.0, soc_min=0.2, soc_max=1.0,
        p_charge_max=50.0, p_discharge_max=50.0, ramp_limit=10.0,
        eta_charge=eta, eta_discharge=eta,
    )
    profile = (
        (0.0, 130.0), (5.0, 130.0),      # hold at the setpoint
        (10.0, 150.0), (110.0, 150.0),   # +2 W surplus for 100 s
        (115.0, 130.0), (120.0, 110.0),  # through the setpoint into deficit
        (220.0, 110.0),                  # -2 W deficit for 100 s
        (225.0, 130.0), (240.0, 130.0),  # back to equilibrium
    )
    return Scenario(
        duration_s=240.0, dt_s=0.1,
        base_irradiance=profile, base_temp=25.0,
        panel=flat_panel(),
        battery=battery,
        controller=ControllerConfig(p_set=13.0, hysteresis_w=0.0),
        soc_init=0.2, load_w=20.0, seed=7,
    )


@pytest.fixture
def reference() -> Scenario:
    return reference_scenario()
