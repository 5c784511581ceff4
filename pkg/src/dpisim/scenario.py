"""Scenario definition, JSON loading and environment sampling.

A scenario is one self-describing JSON document: run length and step, base
irradiance/temperature (constant or breakpoint list), shading events, and the
panel / battery / controller parameter blocks. See the README for the schema
with one example per field.
"""

from __future__ import annotations

import dataclasses
import json
import random
from bisect import bisect_right
from dataclasses import dataclass, field

from .battery import BatteryParams
from .controller import ControllerConfig
from .pv import EnvSample, PanelParams, scaled_power

Profile = "float | list[tuple[float, float]]"


class ParseError(ValueError):
    """The scenario document is not well-formed JSON."""


class ValidationError(ValueError):
    """A scenario field violates an invariant; the message names the field."""


class OutOfRange(ValueError):
    """Sampling time outside [0, duration_s]."""


@dataclass(frozen=True)
class ShadingEvent:
    """Temporary irradiance reduction: multiplier ramps 1 -> depth -> 1.

    ``depth`` is the remaining fraction (1.0 = no shading, 0.4 = irradiance
    cut to 40%). The multiplier moves linearly over ``ramp_s`` seconds at
    both edges of [start_s, end_s].
    """

    start_s: float
    end_s: float
    depth: float
    ramp_s: float = 0.0

    def multiplier(self, t: float) -> float:
        if t <= self.start_s or t >= self.end_s:
            return 1.0
        if self.ramp_s > 0.0 and t < self.start_s + self.ramp_s:
            frac = (t - self.start_s) / self.ramp_s
            return 1.0 + (self.depth - 1.0) * frac
        if self.ramp_s > 0.0 and t > self.end_s - self.ramp_s:
            frac = (self.end_s - t) / self.ramp_s
            return 1.0 + (self.depth - 1.0) * frac
        return self.depth


@dataclass(frozen=True)
class Scenario:
    duration_s: float
    dt_s: float = 0.1
    base_irradiance: object = 1000.0   # W/m^2, constant or [(t, G), ...]
    base_temp: object = 25.0           # degC, same structure
    shading: tuple[ShadingEvent, ...] = ()
    panel: PanelParams = field(default_factory=PanelParams)
    battery: BatteryParams = field(default_factory=BatteryParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    soc_init: float = 0.6
    load_w: float = 20.0               # constant-power demand of the DC load
    seed: int = 0
    noise_sigma: float = 0.0           # W/m^2 gaussian noise on irradiance

    def validate(self) -> None:
        if not self.duration_s > 0:
            raise ValidationError("duration_s must be > 0")
        if not self.dt_s > 0:
            raise ValidationError("dt_s must be > 0")
        _check_profile("base_irradiance", self.base_irradiance, minimum=0.0)
        _check_profile("base_temp", self.base_temp)
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        for i, ev in enumerate(self.shading):
            path = f"shading[{i}]"
            if not 0.0 <= ev.start_s < ev.end_s:
                raise ValidationError(f"{path}: require 0 <= start_s < end_s")
            if not 0.0 < ev.depth <= 1.0:
                raise ValidationError(f"{path}: depth must be in (0, 1]")
            if ev.ramp_s < 0 or ev.ramp_s > (ev.end_s - ev.start_s) / 2:
                raise ValidationError(f"{path}: ramp_s must be in [0, (end_s - start_s)/2]")
        for i in range(len(self.shading)):
            for j in range(i + 1, len(self.shading)):
                a, b = self.shading[i], self.shading[j]
                if a.start_s < b.end_s and b.start_s < a.end_s:
                    raise ValidationError(f"shading[{i}] overlaps shading[{j}]")
        try:
            self.panel.validate()
        except ValueError as exc:
            raise ValidationError(f"panel: {exc}") from exc
        try:
            self.battery.validate()
        except ValueError as exc:
            raise ValidationError(f"battery: {exc}") from exc
        try:
            self.controller.validate()
        except ValueError as exc:
            raise ValidationError(f"controller: {exc}") from exc
        if not self.battery.soc_min <= self.soc_init <= self.battery.soc_max:
            raise ValidationError("soc_init must be within [battery.soc_min, battery.soc_max]")
        if self.load_w < self.controller.p_set:
            raise ValidationError("load_w must be >= controller.p_set")


def _check_profile(name: str, profile, minimum: float | None = None) -> None:
    if isinstance(profile, (int, float)):
        if minimum is not None and profile < minimum:
            raise ValidationError(f"{name} must be >= {minimum}")
        return
    if not isinstance(profile, (list, tuple)) or not profile:
        raise ValidationError(f"{name} must be a number or a nonempty [t, value] list")
    last_t = None
    for k, point in enumerate(profile):
        if not isinstance(point, (list, tuple)) or len(point) != 2:
            raise ValidationError(f"{name}[{k}] must be a [t, value] pair")
        t, v = point
        if last_t is not None and t < last_t:
            raise ValidationError(f"{name}[{k}]: breakpoints must be sorted by t")
        if minimum is not None and v < minimum:
            raise ValidationError(f"{name}[{k}]: value must be >= {minimum}")
        last_t = t


def _interp(profile, t: float) -> float:
    """Piecewise-linear lookup, clamped at the profile ends."""
    if isinstance(profile, (int, float)):
        return float(profile)
    ts = [p[0] for p in profile]
    vs = [p[1] for p in profile]
    if t <= ts[0]:
        return float(vs[0])
    if t >= ts[-1]:
        return float(vs[-1])
    j = bisect_right(ts, t)
    t0, t1 = ts[j - 1], ts[j]
    v0, v1 = vs[j - 1], vs[j]
    if t1 == t0:
        return float(v1)
    return v0 + (v1 - v0) * (t - t0) / (t1 - t0)


def sample_env(scenario: Scenario, t: float) -> EnvSample:
    """Environment at time ``t``: interpolated base values times the active
    shading multipliers, with optional seeded gaussian irradiance noise.

    Deterministic given (scenario, t, seed): the noise draw is keyed on both.
    """
    if t < 0 or t > scenario.duration_s:
        raise OutOfRange(f"t={t} outside [0, {scenario.duration_s}]")
    g = _interp(scenario.base_irradiance, t)
    temp = _interp(scenario.base_temp, t)
    for ev in scenario.shading:
        g *= ev.multiplier(t)
    if scenario.noise_sigma > 0.0:
        rng = random.Random(f"{scenario.seed}:{t!r}")
        g += rng.gauss(0.0, scenario.noise_sigma)
    return EnvSample(t=t, irradiance=max(g, 0.0), ambient_temp=temp)


# --- JSON round trip ---------------------------------------------------------

_SCENARIO_SCALARS = (
    "duration_s", "dt_s", "soc_init", "load_w", "seed", "noise_sigma",
)


def scenario_to_dict(s: Scenario) -> dict:
    d = {k: getattr(s, k) for k in _SCENARIO_SCALARS}
    d["base_irradiance"] = _profile_to_json(s.base_irradiance)
    d["base_temp"] = _profile_to_json(s.base_temp)
    d["shading"] = [dataclasses.asdict(ev) for ev in s.shading]
    d["panel"] = dataclasses.asdict(s.panel)
    d["battery"] = dataclasses.asdict(s.battery)
    d["controller"] = dataclasses.asdict(s.controller)
    return d


def _profile_to_json(profile):
    if isinstance(profile, (int, float)):
        return profile
    return [list(p) for p in profile]


def _profile_from_json(raw):
    if isinstance(raw, (int, float)):
        return float(raw)
    return tuple((float(p[0]), float(p[1])) for p in raw)


def scenario_to_json(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2, sort_keys=True) + "\n"


def _build_block(cls, raw: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"{path}: unknown field(s) {sorted(unknown)}")
    return cls(**raw)


def scenario_from_dict(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ValidationError("scenario document must be a JSON object")
    known = set(_SCENARIO_SCALARS) | {
        "base_irradiance", "base_temp", "shading", "panel", "battery", "controller",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown field(s) {sorted(unknown)}")
    if "duration_s" not in raw:
        raise ValidationError("duration_s is required")
    kwargs = {k: raw[k] for k in _SCENARIO_SCALARS if k in raw}
    if "base_irradiance" in raw:
        kwargs["base_irradiance"] = _profile_from_json(raw["base_irradiance"])
    if "base_temp" in raw:
        kwargs["base_temp"] = _profile_from_json(raw["base_temp"])
    if "shading" in raw:
        events = []
        for k, ev in enumerate(raw["shading"]):
            events.append(_build_block(ShadingEvent, ev, f"shading[{k}]"))
        kwargs["shading"] = tuple(events)
    for name, cls in (("panel", PanelParams), ("battery", BatteryParams), ("controller", ControllerConfig)):
        if name in raw:
            kwargs[name] = _build_block(cls, raw[name], name)
    try:
        scenario = Scenario(**kwargs)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc
    scenario.validate()
    return scenario


def load_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario JSON document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return scenario_from_dict(raw)


def load_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


# --- Reference scenario ------------------------------------------------------

def _irradiance_for_power(panel: PanelParams, ambient: float, target_w: float) -> float:
    """Invert the scaling model: irradiance at which the panel makes target_w."""
    lo, hi = 0.0, 2000.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if scaled_power(panel, EnvSample(0.0, mid, ambient)) < target_w:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def reference_scenario() -> Scenario:
    """The shipped two-shading replay: steady output near 14.4 W with two
    dips whose falling edges are shaped to 1.25 W/s and 1.767 W/s.

    Panel, battery, load and setpoint carry the default hardware-style
    values (100 Wp panel, 42 Ah / 12 V battery, 20 W lamp, 13 W setpoint).
    Irradiance leads in from the exactly-at-setpoint level over 10 s so the
    battery starts idle, and the controller deadband is zero: the trace is
    noise-free, so battery power tracks p_set - p_pv without a dwell and the
    ramp comparison stays clean.
    """
    panel = PanelParams()
    base_g, base_t = 150.0, 30.0
    g_at_setpoint = _irradiance_for_power(panel, base_t, 13.0)
    p0 = scaled_power(panel, EnvSample(0.0, base_g, base_t))
    events = (
        # 8.0 W drop over 6.4 s -> 1.25 W/s falling edge
        ShadingEvent(start_s=60.0, end_s=100.0, depth=1.0 - 8.0 / p0, ramp_s=6.4),
        # 8.835 W drop over 5.0 s -> 1.767 W/s falling edge
        ShadingEvent(start_s=150.0, end_s=190.0, depth=1.0 - 8.835 / p0, ramp_s=5.0),
    )
    return Scenario(
        duration_s=240.0,
        dt_s=0.1,
        base_irradiance=((0.0, g_at_setpoint), (10.0, base_g)),
        base_temp=base_t,
        shading=events,
        panel=panel,
        battery=BatteryParams(),
        controller=ControllerConfig(p_set=13.0, hysteresis_w=0.0),
        soc_init=0.6,
        load_w=20.0,
        seed=42,
        noise_sigma=0.0,
    )
