"""Closed-loop time-stepped simulation: scenario -> panel -> controller ->
battery -> load, one record per step.

Per step the engine samples the environment, computes available panel power,
takes a control decision, actuates the battery and settles the power routing:

* delivered load power never exceeds the setpoint (surplus is stored or
  curtailed), and
* battery clipping feeds back, so the record shows what was actually
  delivered, not what was requested.

The run loop is single-threaded and deterministic; streaming consumers attach
through :class:`SampleRelay`, which never blocks the producer.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import queue
import tempfile
import threading
import time
from dataclasses import dataclass

from .battery import battery_step, initial_state
from .controller import Mode, control_step
from .pv import scaled_power
from .scenario import Scenario, sample_env, scenario_to_json


class ImbalanceError(RuntimeError):
    """Energy bookkeeping residual exceeded tolerance; indicates an engine bug."""


CSV_HEADER = "t,irradiance,temperature,p_set,p_pv,p_load,p_batt,soc,mode,duty"


@dataclass(frozen=True)
class SimSample:
    """One timestep record. ``p_pv`` is the power actually produced at the
    panel terminals (after any curtailment); ``p_avail`` keeps the
    pre-curtailment potential for the energy accounting."""

    t: float
    irradiance: float
    temperature: float
    p_set: float
    p_pv: float
    p_load: float
    p_batt: float      # signed, positive = discharging
    soc: float
    mode: Mode
    duty: float
    p_avail: float = 0.0
    flag: str = ""     # "", "depleted" or "full"


@dataclass(frozen=True)
class SimResult:
    samples: tuple[SimSample, ...]
    scenario_digest: str


def scenario_digest(scenario: Scenario) -> str:
    return hashlib.sha256(scenario_to_json(scenario).encode("utf-8")).hexdigest()


def run(scenario: Scenario, relay: "SampleRelay | None" = None) -> SimResult:
    """Execute the scenario and return every step's record.

    Identical scenarios produce bit-identical results. If ``relay`` is given,
    each sample is also handed off to it without ever blocking the loop.
    """
    scenario.validate()
    cfg = scenario.controller
    bparams = scenario.battery
    bstate = initial_state(bparams, scenario.soc_init)
    integ = 0.0
    p_load_measured = cfg.p_set   # sensor seed: zero error before first delivery
    n_steps = max(1, round(scenario.duration_s / scenario.dt_s))
    dt = scenario.dt_s

    samples = []
    for i in range(n_steps):
        t = i * dt
        env = sample_env(scenario, t)
        p_avail = scaled_power(scenario.panel, env)
        decision, integ = control_step(p_avail, p_load_measured, cfg, integ, dt)
        step = battery_step(bparams, bstate, decision.p_batt_target, dt, charge_limit_w=p_avail)
        bstate = step.state
        p_batt = step.power
        p_load = max(0.0, min(p_avail + p_batt, cfg.p_set, scenario.load_w))
        p_pv = p_load - p_batt   # routed to load plus charge intake
        flag = "depleted" if step.depleted else "full" if step.full else ""
        sample = SimSample(
            t=t,
            irradiance=env.irradiance,
            temperature=env.ambient_temp,
            p_set=cfg.p_set,
            p_pv=p_pv,
            p_load=p_load,
            p_batt=p_batt,
            soc=bstate.soc,
            mode=decision.mode,
            duty=decision.duty,
            p_avail=p_avail,
            flag=flag,
        )
        samples.append(sample)
        if relay is not None:
            relay.emit(sample)
        p_load_measured = p_load
    if relay is not None:
        relay.close()
    return SimResult(samples=tuple(samples), scenario_digest=scenario_digest(scenario))


@dataclass(frozen=True)
class EnergyBalance:
    """Energy totals of one run, all in Wh."""

    e_pv_delivered: float    # produced at the panel terminals
    e_load: float
    e_charge_in: float       # electrical energy into the battery
    e_discharge_out: float   # electrical energy out of the battery
    e_loss: float            # efficiency losses inside the battery
    e_curtailed: float       # available but deliberately not harvested
    residual_rel: float


def energy_balance(result: SimResult, scenario: Scenario, tol: float = 1e-6) -> EnergyBalance:
    """Per-step energy accounting; raises ImbalanceError past ``tol``.

    Checks e_pv_delivered + e_discharge_out = e_load + e_charge_in. The sums
    use the same rectangle rule as the simulation bookkeeping, so any
    residual beyond rounding signals an engine bug.
    """
    if not result.samples:
        raise ValueError("empty result")
    if scenario_digest(scenario) != result.scenario_digest:
        raise ValueError("scenario does not match the result's digest")
    dt = scenario.dt_s
    e_pv = e_load = e_chg = e_dis = e_loss = e_curt = 0.0
    for s in result.samples:
        e_pv += s.p_pv * dt
        e_load += s.p_load * dt
        if s.p_batt > 0:
            e_dis += s.p_batt * dt
            e_loss += s.p_batt * (1.0 / scenario.battery.eta_discharge - 1.0) * dt
        elif s.p_batt < 0:
            e_chg += -s.p_batt * dt
            e_loss += -s.p_batt * (1.0 - scenario.battery.eta_charge) * dt
        e_curt += max(0.0, s.p_avail - s.p_pv) * dt
    residual = abs((e_pv + e_dis) - (e_load + e_chg))
    scale = max(e_load + e_chg, 1e-12)
    residual_rel = residual / scale
    if residual_rel > tol:
        raise ImbalanceError(f"energy residual {residual_rel:.3e} exceeds {tol:.1e}")
    to_wh = 1.0 / 3600.0
    return EnergyBalance(
        e_pv_delivered=e_pv * to_wh,
        e_load=e_load * to_wh,
        e_charge_in=e_chg * to_wh,
        e_discharge_out=e_dis * to_wh,
        e_loss=e_loss * to_wh,
        e_curtailed=e_curt * to_wh,
        residual_rel=residual_rel,
    )


# --- CSV output ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_csv(result: SimResult, fh) -> None:
    """Write the run as CSV, numbers at 6 significant digits.

    Repeated identical runs serialize to byte-identical output.
    """
    fh.write(CSV_HEADER + "\n")
    for s in result.samples:
        fh.write(",".join([
            _fmt(s.t), _fmt(s.irradiance), _fmt(s.temperature), _fmt(s.p_set),
            _fmt(s.p_pv), _fmt(s.p_load), _fmt(s.p_batt), _fmt(s.soc),
            s.mode.value, _fmt(s.duty),
        ]) + "\n")


def csv_text(result: SimResult) -> str:
    buf = io.StringIO()
    write_csv(result, buf)
    return buf.getvalue()


def read_csv(fh) -> SimResult:
    """Rebuild a result from CSV. The pre-curtailment potential is not part
    of the CSV, so ``p_avail`` falls back to the recorded panel power."""
    header = fh.readline().strip()
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {header!r}")
    samples = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise ValueError(f"malformed CSV row: {line!r}")
        t, g, temp, p_set, p_pv, p_load, p_batt, soc = (float(x) for x in parts[:8])
        mode = Mode(parts[8])
        duty = float(parts[9])
        samples.append(SimSample(
            t=t, irradiance=g, temperature=temp, p_set=p_set, p_pv=p_pv,
            p_load=p_load, p_batt=p_batt, soc=soc, mode=mode, duty=duty,
            p_avail=p_pv,
        ))
    return SimResult(samples=tuple(samples), scenario_digest="")


# --- Streaming hand-off ---------------------------------------------------------

def _sample_to_record(s: SimSample) -> dict:
    return {
        "t": s.t, "irradiance": s.irradiance, "temperature": s.temperature,
        "p_set": s.p_set, "p_pv": s.p_pv, "p_load": s.p_load, "p_batt": s.p_batt,
        "soc": s.soc, "mode": s.mode.value, "duty": s.duty, "p_avail": s.p_avail,
        "flag": s.flag,
    }


def _sample_from_record(d: dict) -> SimSample:
    d = dict(d)
    d["mode"] = Mode(d["mode"])
    return SimSample(**d)


class SampleRelay:
    """Bounded producer/consumer hand-off that never blocks the producer.

    Samples go through an in-memory queue while it has room. Once full, the
    producer switches permanently to an on-disk spool so nothing is dropped
    and ordering is preserved: the consumer drains the queue first and then
    follows the spool file until the relay is closed. Consumer lag can
    therefore never alter the simulation.
    """

    def __init__(self, maxsize: int = 1024, spool_dir: str | None = None):
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._spool_dir = spool_dir
        self._spool_path: str | None = None
        self._spool_fh = None
        self._spooling = False
        self._closed = threading.Event()

    def emit(self, sample: SimSample) -> None:
        if not self._spooling:
            try:
                self._q.put_nowait(sample)
                return
            except queue.Full:
                fd, path = tempfile.mkstemp(prefix="dpisim-spool-", suffix=".ndjson",
                                            dir=self._spool_dir)
                self._spool_fh = os.fdopen(fd, "w", encoding="utf-8")
                self._spool_path = path
                self._spooling = True
        self._spool_fh.write(json.dumps(_sample_to_record(sample)) + "\n")
        self._spool_fh.flush()

    def close(self) -> None:
        if self._spool_fh is not None:
            self._spool_fh.flush()
            self._spool_fh.close()
            self._spool_fh = None
        self._closed.set()

    def __iter__(self):
        while True:
            try:
                yield self._q.get(timeout=0.05)
            except queue.Empty:
                if self._spooling or self._closed.is_set():
                    break
        if self._spool_path is None:
            return
        try:
            with open(self._spool_path, "r", encoding="utf-8") as fh:
                while True:
                    line = fh.readline()
                    if line:
                        yield _sample_from_record(json.loads(line))
                    elif self._closed.is_set():
                        line = fh.readline()
                        if not line:
                            break
                        yield _sample_from_record(json.loads(line))
                    else:
                        time.sleep(0.005)
        finally:
            try:
                os.unlink(self._spool_path)
            except OSError:
                pass
