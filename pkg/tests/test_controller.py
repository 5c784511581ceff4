import pytest

from dpisim.controller import (
    ControllerConfig,
    Mode,
    battery_power_target,
    control_step,
    decide_mode,
    duty_cycle,
    switch_states,
)


def cfg(**kwargs):
    base = dict(p_set=13.0, hysteresis_w=0.0)
    base.update(kwargs)
    return ControllerConfig(**base)


class TestDecideMode:
    def test_surplus_charges(self):
        assert decide_mode(15.0, cfg()) is Mode.CHARGE

    def test_deficit_inserts(self):
        assert decide_mode(10.0, cfg()) is Mode.INSERT

    def test_boundary_bypasses(self):
        assert decide_mode(13.0, cfg()) is Mode.BYPASS

    def test_hysteresis_thresholds_are_exact(self):
        c = cfg(hysteresis_w=0.5)
        assert decide_mode(13.5, c) is Mode.BYPASS
        assert decide_mode(13.5 + 1e-12, c) is Mode.CHARGE
        assert decide_mode(12.5, c) is Mode.BYPASS
        assert decide_mode(12.5 - 1e-12, c) is Mode.INSERT


class TestBatteryPowerTarget:
    def test_deficit_discharges_three_watts(self):
        assert battery_power_target(10.0, cfg()) == pytest.approx(3.0)

    def test_surplus_charges_two_watts(self):
        assert battery_power_target(15.0, cfg()) == pytest.approx(-2.0)

    def test_at_setpoint_idle(self):
        assert battery_power_target(13.0, cfg()) == 0.0

    def test_deadband_is_zero(self):
        c = cfg(hysteresis_w=0.5)
        assert battery_power_target(12.8, c) == 0.0
        assert battery_power_target(12.4, c) == pytest.approx(0.6)


class TestDutyCycle:
    def test_one_watt_error(self):
        duty, _ = duty_cycle(13.0, 12.0, cfg())
        assert duty == pytest.approx((1.0 / 13.0) * 300.0)

    def test_zero_error(self):
        duty, _ = duty_cycle(13.0, 13.0, cfg())
        assert duty == 0.0

    def test_full_scale_error_saturates(self):
        duty, _ = duty_cycle(13.0, 0.0, cfg())
        assert duty == 300.0

    def test_negative_error_clamps_to_zero(self):
        duty, _ = duty_cycle(13.0, 14.0, cfg())
        assert duty == 0.0

    def test_integral_term_accumulates(self):
        c = cfg(ki=1.0)
        integ = 0.0
        duty0, integ = duty_cycle(13.0, 12.9, c, integ, dt=0.1)
        duty1, integ = duty_cycle(13.0, 12.9, c, integ, dt=0.1)
        assert integ == pytest.approx(0.02)
        assert duty1 > duty0

    def test_integrator_freezes_while_saturated(self):
        c = cfg(ki=1.0)
        integ = 0.0
        for _ in range(50):
            duty, integ = duty_cycle(13.0, 0.0, c, integ, dt=1.0)
        assert duty == 300.0
        # once the error flips, the output must leave saturation immediately
        duty, integ = duty_cycle(13.0, 13.0, c, integ, dt=1.0)
        assert duty < 300.0

    def test_proportional_mode_keeps_integ_untouched(self):
        duty, integ = duty_cycle(13.0, 12.0, cfg(), 5.0, dt=1.0)
        assert integ == 5.0


class TestSwitchStates:
    def test_charge_pattern(self):
        s = switch_states(Mode.CHARGE)
        assert (s.s_charge, s.s_bypass, s.s_insert) == (True, True, False)

    def test_insert_pattern(self):
        s = switch_states(Mode.INSERT)
        assert (s.s_charge, s.s_bypass, s.s_insert) == (False, True, True)

    def test_bypass_pattern(self):
        s = switch_states(Mode.BYPASS)
        assert (s.s_charge, s.s_bypass, s.s_insert) == (False, True, False)

    def test_bypass_always_on_and_never_both(self):
        for mode in Mode:
            s = switch_states(mode)
            assert s.s_bypass
            assert not (s.s_charge and s.s_insert)


class TestControlStep:
    def test_deficit_composition(self):
        decision, _ = control_step(10.0, 10.0, cfg())
        assert decision.mode is Mode.INSERT
        assert decision.p_batt_target == pytest.approx(3.0)
        assert decision.duty == pytest.approx((3.0 / 13.0) * 300.0)
        s = decision.switches
        assert (s.s_charge, s.s_bypass, s.s_insert) == (False, True, True)

    def test_surplus_composition(self):
        decision, _ = control_step(15.0, 13.0, cfg())
        assert decision.mode is Mode.CHARGE
        assert decision.p_batt_target == pytest.approx(-2.0)
        assert decision.duty == 0.0
        s = decision.switches
        assert (s.s_charge, s.s_bypass, s.s_insert) == (True, True, False)

    def test_equilibrium_composition(self):
        decision, _ = control_step(13.0, 13.0, cfg())
        assert decision.mode is Mode.BYPASS
        assert decision.p_batt_target == 0.0
        assert decision.duty == 0.0

    def test_exhaustive_sweep_invariants(self):
        c = ControllerConfig(p_set=13.0)  # default deadband
        p = 0.0
        while p <= 26.0:
            decision, _ = control_step(p, p, c)
            s = decision.switches
            assert not (s.s_charge and s.s_insert)
            assert 0.0 <= decision.duty <= c.duty_scale
            if decision.mode is Mode.INSERT:
                assert decision.p_batt_target >= 0.0
            elif decision.mode is Mode.CHARGE:
                assert decision.p_batt_target <= 0.0
            else:
                assert decision.p_batt_target == 0.0
            p += 0.01


class TestValidation:
    @pytest.mark.parametrize("kwargs", [
        {"p_set": 0.0},
        {"hysteresis_w": -0.1},
        {"hysteresis_w": 13.0},
        {"duty_max": -1.0, "duty_min": 0.0},
        {"ki": -1.0},
    ])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            ControllerConfig(**{"p_set": 13.0, **kwargs}).validate()
