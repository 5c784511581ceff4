"""Post-run analysis: stabilization error, ramp rates and energy totals.

The stabilization error is the mean absolute deviation of delivered load
power from the setpoint, normalized by the setpoint and expressed in percent.
Ramp rates are least-squares slopes, robust to step noise. Energies are
trapezoidal integrals in watt-hours.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import Mode
from .engine import SimResult, SimSample
from .scenario import Scenario

RAMP_THRESHOLD_W_PER_S = 0.5
TRANSIENT_MASK_S = 5.0


class EmptySeries(ValueError):
    """Metric requested on too few samples."""


class WindowTooSmall(ValueError):
    """Ramp window holds fewer than two samples."""


def stabilization_error(samples, p_set: float) -> float:
    """Percent error: 100 * (sum|p_load - p_set| / N) / p_set."""
    if not samples:
        raise EmptySeries("no samples")
    if not p_set > 0:
        raise ValueError("p_set must be > 0")
    dev = sum(abs(s.p_load - p_set) for s in samples) / len(samples)
    return 100.0 * dev / p_set


def ramp_rate(samples, field_name: str, window: tuple[float, float]) -> tuple[float, str]:
    """Least-squares slope magnitude of one field over [t_start, t_end].

    Returns (W/s magnitude, direction) with direction one of "up", "down"
    or "flat".
    """
    t0, t1 = window
    sel = [s for s in samples if t0 <= s.t <= t1]
    if len(sel) < 2:
        raise WindowTooSmall(f"window [{t0}, {t1}] holds {len(sel)} samples")
    return _slope([s.t for s in sel], [getattr(s, field_name) for s in sel])


def _slope(ts, ys) -> tuple[float, str]:
    slope = float(np.polyfit(np.asarray(ts), np.asarray(ys), 1)[0])
    if slope > 0:
        return slope, "up"
    if slope < 0:
        return -slope, "down"
    return 0.0, "flat"


def energy_wh(samples, field_name: str) -> float:
    """Trapezoidal integral of one power field over time, in Wh."""
    if len(samples) < 2:
        raise EmptySeries("need at least two samples")
    ts = np.asarray([s.t for s in samples])
    ys = np.asarray([getattr(s, field_name) for s in samples])
    return float(np.trapz(ys, ts)) / 3600.0


@dataclass(frozen=True)
class RampEvent:
    label: str
    direction: str          # "up" or "down"
    t_start: float
    t_end: float
    pv_ramp: float          # W/s magnitude over the window
    batt_ramp: float        # W/s magnitude while the battery is engaged


def detect_ramp_events(samples, threshold: float = RAMP_THRESHOLD_W_PER_S) -> list[RampEvent]:
    """Contiguous intervals where |d(p_pv)/dt| exceeds ``threshold``.

    Events are labeled A, B, ... in time order. The battery ramp is measured
    over the window's non-Bypass samples only, so the deadband dwell around
    the mode change does not dilute the slope.
    """
    events: list[RampEvent] = []
    n = len(samples)
    i = 1
    while i < n:
        dt = samples[i].t - samples[i - 1].t
        rate = (samples[i].p_pv - samples[i - 1].p_pv) / dt if dt > 0 else 0.0
        if abs(rate) > threshold:
            start = i - 1
            j = i
            while j + 1 < n:
                dt2 = samples[j + 1].t - samples[j].t
                rate2 = (samples[j + 1].p_pv - samples[j].p_pv) / dt2 if dt2 > 0 else 0.0
                if abs(rate2) > threshold:
                    j += 1
                else:
                    break
            win = samples[start:j + 1]
            pv_rate, direction = _slope([s.t for s in win], [s.p_pv for s in win])
            active = [s for s in win if s.mode is not Mode.BYPASS]
            if len(active) >= 2:
                batt_rate, _ = _slope([s.t for s in active], [s.p_batt for s in active])
            else:
                batt_rate = 0.0
            label = chr(ord("A") + len(events))
            events.append(RampEvent(
                label=label, direction=direction,
                t_start=samples[start].t, t_end=samples[j].t,
                pv_ramp=pv_rate, batt_ramp=batt_rate,
            ))
            i = j + 1
        else:
            i += 1
    return events


@dataclass(frozen=True)
class MetricsReport:
    error_pct: float
    max_abs_deviation_w: float
    ramp_events: tuple[RampEvent, ...]
    e_pv_wh: float
    e_stabilized_wh: float
    e_diff_wh: float
    n_samples: int
    p_set: float
    transient_mask_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "error_pct": self.error_pct,
            "max_abs_deviation_w": self.max_abs_deviation_w,
            "ramp_events": [
                {
                    "label": ev.label, "direction": ev.direction,
                    "t_start": ev.t_start, "t_end": ev.t_end,
                    "pv_ramp_w_per_s": ev.pv_ramp, "batt_ramp_w_per_s": ev.batt_ramp,
                }
                for ev in self.ramp_events
            ],
            "e_pv_wh": self.e_pv_wh,
            "e_stabilized_wh": self.e_stabilized_wh,
            "e_diff_wh": self.e_diff_wh,
            "n_samples": self.n_samples,
            "p_set": self.p_set,
            "transient_mask_s": self.transient_mask_s,
        }

    def format_table(self) -> str:
        lines = [
            f"setpoint            {self.p_set:10.3f} W",
            f"stabilization error {self.error_pct:10.3f} %",
            f"max deviation       {self.max_abs_deviation_w:10.3f} W",
            f"pv energy           {self.e_pv_wh:10.3f} Wh",
            f"stabilized energy   {self.e_stabilized_wh:10.3f} Wh",
            f"energy difference   {self.e_diff_wh:10.3f} Wh",
            f"samples             {self.n_samples:10d}",
        ]
        if self.ramp_events:
            lines.append("ramp events:")
            for ev in self.ramp_events:
                lines.append(
                    f"  {ev.label} {ev.direction:<4} t=[{ev.t_start:.1f}, {ev.t_end:.1f}] s"
                    f"  pv {ev.pv_ramp:.3f} W/s  batt {ev.batt_ramp:.3f} W/s"
                )
        else:
            lines.append("ramp events:        none")
        return "\n".join(lines)


def steady_state_mask(samples, settle_s: float = TRANSIENT_MASK_S) -> list[bool]:
    """False for the first ``settle_s`` seconds after every mode change."""
    mask = [True] * len(samples)
    blocked_until = None
    for i, s in enumerate(samples):
        if i > 0 and s.mode is not samples[i - 1].mode:
            blocked_until = s.t + settle_s
        if blocked_until is not None and s.t < blocked_until:
            mask[i] = False
    return mask


def report(
    result: SimResult,
    scenario: Scenario | None = None,
    threshold: float = RAMP_THRESHOLD_W_PER_S,
    exclude_transients: bool = False,
) -> MetricsReport:
    """Assemble the full metrics report for one run.

    With ``exclude_transients`` the first 5 s after each mode change are
    masked out of the error statistics (never out of the energies).
    """
    samples = result.samples
    if not samples:
        raise EmptySeries("empty result")
    p_set = scenario.controller.p_set if scenario is not None else samples[0].p_set
    if exclude_transients:
        mask = steady_state_mask(samples)
        steady = [s for s, keep in zip(samples, mask) if keep]
        mask_s = TRANSIENT_MASK_S
    else:
        steady = list(samples)
        mask_s = 0.0
    if not steady:
        raise EmptySeries("no steady-state samples left after masking")
    err = stabilization_error(steady, p_set)
    max_dev = max(abs(s.p_load - p_set) for s in steady)
    events = detect_ramp_events(samples, threshold)
    e_pv = energy_wh(samples, "p_avail") if len(samples) >= 2 else 0.0
    e_load = energy_wh(samples, "p_load") if len(samples) >= 2 else 0.0
    return MetricsReport(
        error_pct=err,
        max_abs_deviation_w=max_dev,
        ramp_events=tuple(events),
        e_pv_wh=e_pv,
        e_stabilized_wh=e_load,
        e_diff_wh=e_pv - e_load,
        n_samples=len(steady),
        p_set=p_set,
        transient_mask_s=mask_s,
    )
