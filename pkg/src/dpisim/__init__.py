"""dpisim: battery-backed stabilization of fluctuating PV output.

A deterministic simulator and control library: a PV plant model, an
energy-reservoir battery, a setpoint controller that stores surplus and
inserts power into deficits, scenario replay, stabilization metrics and a
ThingSpeak-compatible telemetry service.
"""

from .battery import BatteryParams, BatteryState, StepResult, battery_step, initial_state, soc_of
from .controller import (
    ControlDecision,
    ControllerConfig,
    Mode,
    SwitchStates,
    battery_power_target,
    control_step,
    decide_mode,
    duty_cycle,
    switch_states,
)
from .engine import (
    EnergyBalance,
    ImbalanceError,
    SampleRelay,
    SimResult,
    SimSample,
    energy_balance,
    run,
    write_csv,
)
from .metrics import MetricsReport, RampEvent, energy_wh, ramp_rate, report, stabilization_error
from .pv import EnvSample, MpptState, NonConvergence, PanelParams, diode_current, mppt_step, scaled_power
from .scenario import (
    OutOfRange,
    ParseError,
    Scenario,
    ShadingEvent,
    ValidationError,
    load_scenario,
    load_scenario_file,
    reference_scenario,
    sample_env,
    scenario_to_json,
)
from .telemetry import TelemetryClient, TelemetryServer, TelemetryService, encode_update

__version__ = "0.1.0"
