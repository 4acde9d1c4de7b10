"""Time-domain co-simulation: RK4 integrity, events, saturation, determinism."""

import numpy as np
import pytest

from vsictrl import StateSpace
from vsictrl.baseline import baseline_controller_ss, design_baseline
from vsictrl.sim import (
    Event,
    Scenario,
    SimulationDiverged,
    default_event_schedule,
    default_harmonic_bank,
    harmonic_bank_current,
    hosted_controller,
    simulate,
)
from vsictrl.vsi import VsiParameters, default_load, nominal_load_values

P = VsiParameters()
R_N, L_N = nominal_load_values(P)


def zero_controller():
    return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[0.0]])


def damped_controller(k_e=4.0, k_d=4.0):
    """Voltage error plus virtual-resistance current feedback.

    Only adequate on loaded plants; the undamped no-load resonance needs
    the real designs.
    """
    return StateSpace(np.zeros((0, 0)), np.zeros((0, 3)), np.zeros((1, 0)),
                      [[k_e, -k_e, -k_d]])


@pytest.fixture(scope="module")
def baseline_k3():
    des = design_baseline(P, default_load(P))
    return baseline_controller_ss(des.controller, P.omega0)


class TestScenario:
    def test_event_ordering_required(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            Scenario(params=P, events=(Event(0.1), Event(0.05)), t_end=0.2)

    def test_events_inside_horizon(self):
        with pytest.raises(ValueError, match="within"):
            Scenario(params=P, events=(Event(0.5),), t_end=0.2)

    def test_default_schedule_shape(self):
        scen = default_event_schedule(P)
        times = [e.time for e in scen.events]
        assert times == [0.05, 0.10, 0.15, 0.20, 0.25]
        assert scen.t_end == 0.3
        # full load arrives with the harmonic bank; reactive drops at 0.1
        assert scen.events[0].rl_load is not None
        assert scen.events[0].harmonic_bank
        assert np.isclose(scen.events[0].rl_load[0], R_N)
        assert scen.events[1].rl_load == (R_N, None)
        assert scen.events[3].vref_scale == 0.8
        assert scen.events[4].rl_load == (None, None)

    def test_schedule_truncates_to_horizon(self):
        scen = default_event_schedule(P, t_end=0.1)
        assert [e.time for e in scen.events] == [0.05]


class TestHarmonicBank:
    def test_empty_bank_zero(self):
        assert np.all(harmonic_bank_current((), np.linspace(0, 0.1, 50), P.omega0) == 0)

    def test_single_component_peak(self):
        t = np.pi / (2 * P.omega0)
        val = harmonic_bank_current(((1, 7.5, 0.0),), t, P.omega0)
        assert np.isclose(val, 7.5, rtol=1e-12)

    def test_default_bank_rms_parseval(self):
        bank = default_harmonic_bank(P)
        t = np.linspace(0.0, 1.0 / 60.0, 20000, endpoint=False)
        rms = np.sqrt(np.mean(harmonic_bank_current(bank, t, P.omega0) ** 2))
        expected = np.sqrt(sum(a ** 2 for _, a, _ in bank) / 2.0)
        assert np.isclose(rms, expected, rtol=1e-4)


class TestHostedController:
    def test_error_input_wrapping(self):
        k = hosted_controller(
            StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[3.0]]),
            1.0 / P.f_sw)
        assert k.n_inputs == 3
        assert np.allclose(k.D, [[3.0, -3.0, 0.0]])

    def test_continuous_gets_discretized(self):
        kc = StateSpace([[-100.0]], [[1.0]], [[50.0]], [[0.0]])
        k = hosted_controller(kc, 1.0 / P.f_sw)
        assert k.dt == 1.0 / P.f_sw

    def test_wrong_rate_rejected(self):
        from vsictrl import c2d_tustin
        kd = c2d_tustin(StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]]), 1e-3)
        with pytest.raises(ValueError, match="sample period"):
            hosted_controller(kd, 1.0 / P.f_sw)


class TestSimulate:
    def test_zero_everything_gives_zero_traces(self):
        scen = Scenario(params=P, events=(), t_end=0.02, vref_scale0=0.0)
        ts = simulate(scen, damped_controller())
        for ch in (ts.v_ref, ts.v_c, ts.i_inv, ts.i_grid, ts.v_inv):
            assert np.all(ch == 0.0)

    def test_sampling_rate(self):
        scen = Scenario(params=P, events=(), t_end=0.01, rl_load0=(R_N, None))
        ts = simulate(scen, damped_controller())
        assert np.isclose(ts.dt, 1.0 / (20 * P.f_sw))
        assert ts.t.size == int(round(0.01 / ts.dt)) + 1

    def test_full_load_fundamental_current(self):
        # phasor oracle: i_grid fundamental equals |Y(j w0)| * v_C fundamental
        # for the parallel R-L branch, in the amps range of S/V
        scen = Scenario(params=P, events=(), t_end=0.2, rl_load0=(R_N, L_N))
        ts = simulate(scen, damped_controller())
        sl = ts.window(0.15, 0.2)
        n = sl.stop - sl.start
        rot = np.exp(-2j * np.pi * 3.0 * np.arange(n) / n)
        phasor_i = 2.0 / n * np.sum(ts.i_grid[sl] * rot)
        phasor_v = 2.0 / n * np.sum(ts.v_c[sl] * rot)
        y_mag = np.sqrt((1 / R_N) ** 2 + (1 / (P.omega0 * L_N)) ** 2)
        assert np.isclose(abs(phasor_i), abs(phasor_v) * y_mag, rtol=2e-2)
        assert abs(phasor_i) / np.sqrt(2) > 6.0

    def test_tracking_controller_reaches_rated_current(self, baseline_k3):
        # with the designed baseline holding v_C at the reference, the rated
        # load draws within a few percent of S/V = 9.09 A rms
        scen = Scenario(params=P, events=(), t_end=0.2, rl_load0=(R_N, L_N))
        ts = simulate(scen, baseline_k3)
        sl = ts.window(0.15, 0.2)
        n = sl.stop - sl.start
        rot = np.exp(-2j * np.pi * 3.0 * np.arange(n) / n)
        i_rms = abs(2.0 / n * np.sum(ts.i_grid[sl] * rot)) / np.sqrt(2)
        assert np.isclose(i_rms, P.s_rated / P.v_rated, rtol=0.05)

    def test_resistive_load_current_in_phase(self):
        scen = Scenario(params=P, events=(), t_end=0.2, rl_load0=(R_N, None))
        ts = simulate(scen, damped_controller())
        sl = ts.window(0.15, 0.2)
        n = sl.stop - sl.start
        rot = np.exp(-2j * np.pi * 3.0 * np.arange(n) / n)
        dphi = np.degrees(np.angle(np.sum(ts.i_grid[sl] * rot))
                          - np.angle(np.sum(ts.v_c[sl] * rot)))
        assert abs((dphi + 180) % 360 - 180) < 1.0

    def test_saturation_clamps_v_inv(self):
        scen = Scenario(params=P, events=(), t_end=0.02, vref_scale0=2.0,
                        rl_load0=(R_N, None))
        ts = simulate(scen, damped_controller(k_e=50.0))
        assert np.max(np.abs(ts.v_inv)) <= P.v_dc + 1e-12
        assert np.max(np.abs(ts.v_inv)) > 0.99 * P.v_dc

    def test_step_halving_convergence(self, baseline_k3):
        scen20 = default_event_schedule(P, t_end=0.1)
        scen40 = default_event_schedule(P, t_end=0.1, oversample=40)
        a = simulate(scen20, baseline_k3)
        b = simulate(scen40, baseline_k3)
        vb = b.v_c[::2]
        rel = np.sqrt(np.mean((a.v_c - vb) ** 2)) / np.sqrt(np.mean(vb ** 2))
        assert rel < 1e-6

    def test_linearity_below_saturation(self):
        # gains and amplitudes chosen so the startup transient never clamps
        bank = tuple((h, a / 2, ph) for h, a, ph in default_harmonic_bank(P))
        half = tuple((h, a / 2, ph) for h, a, ph in bank)
        scen_full = Scenario(params=P, events=(), t_end=0.05, vref_scale0=0.3,
                             rl_load0=(R_N, L_N), harmonic_bank0=bank)
        scen_half = Scenario(params=P, events=(), t_end=0.05, vref_scale0=0.15,
                             rl_load0=(R_N, L_N), harmonic_bank0=half)
        k = damped_controller(k_e=2.0, k_d=2.0)
        a = simulate(scen_full, k)
        b = simulate(scen_half, k)
        assert np.max(np.abs(a.v_inv)) < 0.9 * P.v_dc
        scale = np.sqrt(np.mean(a.v_c ** 2))
        rel = np.sqrt(np.mean((a.v_c - 2.0 * b.v_c) ** 2)) / scale
        assert rel < 1e-9

    def test_energy_decay_unforced(self):
        # with no drive and no load, the stored LC energy decays through the
        # filter ESR; the sampled energy must be monotone within RK4 error
        scen = Scenario(params=P, events=(), t_end=0.05, vref_scale0=0.0)
        ts = simulate(scen, zero_controller(), x0=(5.0, 120.0))
        e = 0.5 * P.l_f * ts.i_inv ** 2 + 0.5 * P.c_f * ts.v_c ** 2
        assert e[-1] < e[0] * 0.5
        assert np.max(np.diff(e)) <= 1e-9 * e[0]
        # rate sanity against a 10x finer integration
        fine = simulate(Scenario(params=P, events=(), t_end=0.05, vref_scale0=0.0,
                                 oversample=200), zero_controller(), x0=(5.0, 120.0))
        ef = 0.5 * P.l_f * fine.i_inv ** 2 + 0.5 * P.c_f * fine.v_c ** 2
        assert np.isclose(e[-1], ef[-1], rtol=1e-6)

    def test_divergence_detected(self):
        # a controller with an unstable internal mode winds up even though
        # the actuator clamps, so the controller state trips the limit
        T = 1.0 / P.f_sw
        unstable = StateSpace([[1.05]], [[1.0, 0.0, 0.0]], [[1.0]],
                              [[0.0, 0.0, 0.0]], dt=T)
        scen = Scenario(params=P, events=(), t_end=0.05)
        with pytest.raises(SimulationDiverged) as err:
            simulate(scen, unstable, divergence_limit=1e4)
        assert 0.0 < err.value.t_last <= 0.05

    def test_determinism(self, baseline_k3):
        scen = default_event_schedule(P, t_end=0.1)
        a = simulate(scen, baseline_k3)
        b = simulate(scen, baseline_k3)
        assert np.array_equal(a.v_c, b.v_c)
        assert np.array_equal(a.i_grid, b.i_grid)

    def test_preroll_reaches_steady_state(self):
        # compare three-cycle blocks: only 3 fundamental cycles land on a
        # whole number of samples (20000) at the default rates
        scen = Scenario(params=P, events=(), t_end=0.1, rl_load0=(R_N, None))
        k = damped_controller()
        cold = simulate(scen, k)
        warm = simulate(scen, k, preroll=0.1)
        n3 = int(round(3.0 / 60.0 / warm.dt))
        d = warm.v_c[:n3] - warm.v_c[n3:2 * n3]
        dc = cold.v_c[:n3] - cold.v_c[n3:2 * n3]
        rms = np.sqrt(np.mean(warm.v_c ** 2))
        assert np.sqrt(np.mean(d ** 2)) < 1e-6 * rms
        assert np.sqrt(np.mean(dc ** 2)) > np.sqrt(np.mean(d ** 2))

    def test_inserted_inductor_starts_at_zero_current(self):
        scen = Scenario(params=P, events=(Event(0.05, rl_load=(R_N, L_N)),),
                        t_end=0.1, rl_load0=(R_N, None))
        ts = simulate(scen, damped_controller())
        k0 = int(round(0.05 / ts.dt))
        assert np.isclose(ts.i_grid[k0], ts.v_c[k0] / R_N, atol=0.2)

    def test_csv_round_trip(self, tmp_path):
        scen = Scenario(params=P, events=(), t_end=0.005, rl_load0=(R_N, None))
        ts = simulate(scen, damped_controller())
        path = tmp_path / "ts.csv"
        ts.to_csv(path)
        data = np.genfromtxt(path, delimiter=",", names=True)
        assert data.shape[0] == ts.t.size
        assert np.allclose(data["v_C"], ts.v_c, rtol=1e-11, atol=1e-9)
