"""Plant, load, weight, and generalized-plant construction."""

import numpy as np
import pytest

from vsictrl import (
    StateSpace,
    TransferFunction,
    close_lower,
    close_upper,
    freq_response,
    tf_to_ss,
)
from vsictrl.config import calibrated_scales, calibrated_weights
from vsictrl.vsi import (
    HARMONICS,
    ChannelScales,
    LoadModel,
    VsiParameters,
    WeightConfig,
    assemble_generalized_plant,
    biquad,
    build_plant,
    build_weights,
    closed_loop_targets,
    default_load,
    load_admittance,
    nominal_load,
    nominal_load_values,
    perturbed_plant,
)

P = VsiParameters()


class TestParameters:
    def test_resonance(self):
        assert np.isclose(P.omega_res, 5000.0)

    def test_positive_required(self):
        with pytest.raises(ValueError):
            VsiParameters(l_f=0.0)
        with pytest.raises(ValueError):
            VsiParameters(v_rated=-220.0)

    def test_power_triangle(self):
        with pytest.raises(ValueError, match="s_rated"):
            VsiParameters(p_rated=1900.0, q_rated=1200.0, s_rated=2000.0)


class TestPlant:
    def test_dc_gains(self):
        g_inv, g_i = build_plant(P)
        assert np.isclose(g_inv(0.0).real, 1.0)
        assert np.isclose(g_i(0.0).real, P.r_f)

    def test_coefficients_match_filter_parameters(self):
        g_inv, g_i = build_plant(P)
        assert np.allclose(g_inv.den, [1.0, P.r_f / P.l_f, 1.0 / (P.l_f * P.c_f)])
        assert np.allclose(g_i.num * g_i.den[0], g_i.num)  # monic den convention


class TestLoads:
    def test_unity_pf_resistance(self):
        p2 = VsiParameters(p_rated=2000.0, q_rated=0.0)
        r, l = nominal_load_values(p2)
        assert np.isclose(r, 24.2)
        assert l is None

    def test_inductance_formula(self):
        p2 = VsiParameters(v_rated=220.0, p_rated=1600.0, q_rated=2000.0,
                           s_rated=2600.0)
        r, l = nominal_load_values(p2)
        assert np.isclose(l, 220.0 ** 2 / (p2.omega0 * 2000.0), rtol=1e-12)
        assert np.isclose(l, 0.0642, rtol=1e-3)

    def test_admittance_dc(self):
        load = default_load(P)
        y = load_admittance(load)
        assert np.isclose(y(0.0).real, 1.0 / load.r_nominal)

    def test_resistive_nominal_warns(self):
        p2 = VsiParameters(p_rated=2000.0, q_rated=0.0)
        with pytest.warns(UserWarning, match="resistive"):
            y = nominal_load(p2)
        assert y.order == 0

    def test_bank_validation(self):
        with pytest.raises(ValueError, match="odd"):
            LoadModel(r_nominal=10.0, l_nominal=None, harmonic_bank=((2, 1.0, 0.0),))
        with pytest.raises(ValueError, match="duplicate"):
            LoadModel(r_nominal=10.0, l_nominal=None,
                      harmonic_bank=((3, 1.0, 0.0), (3, 2.0, 0.0)))


class TestPerturbedPlant:
    def test_nominal_dc_gain(self):
        load = default_load(P)
        g_v, z_d = perturbed_plant(P, load, 0.0)
        expected = 1.0 / (1.0 + P.r_f / load.r_nominal)
        assert np.isclose(g_v(0.0).real, expected, rtol=1e-10)

    def test_open_circuit_exact(self):
        load = default_load(P)
        g_v, z_d = perturbed_plant(P, load, -1.0)
        g_inv, g_i = build_plant(P)
        assert np.array_equal(g_v.num, g_inv.num)
        assert np.array_equal(g_v.den, g_inv.den)
        assert np.array_equal(z_d.num, g_i.num)

    def test_inadmissible_delta_flagged(self):
        load = default_load(P)
        with pytest.warns(UserWarning, match="not an admissible"):
            perturbed_plant(P, load, 1.5)

    def test_resonant_peak_moves_monotonically(self):
        # heavier load (larger Delta) damps and shifts the resonant peak;
        # the peak frequency must vary monotonically across the family
        load = default_load(P)
        w = np.linspace(3000.0, 7000.0, 4000)
        peaks = []
        for delta in (-1.0, -0.5, 0.0, 0.5, 1.0):
            g_v, _ = perturbed_plant(P, load, delta)
            mag = np.abs(g_v(1j * w))
            peaks.append(w[np.argmax(mag)])
        diffs = np.diff(peaks)
        assert np.all(diffs > 0) or np.all(diffs < 0)

    def test_dynamic_delta(self):
        from vsictrl import allpass_delta
        load = default_load(P)
        g_v, z_d = perturbed_plant(P, load, allpass_delta(1e3))
        assert g_v.order > 2  # the dynamic block enters the family


class TestWeights:
    def test_biquad_center_gain_exact(self):
        w0, k, z = 377.0, 25.0, 0.01
        b = biquad(w0, k, z)
        assert np.isclose(abs(b(1j * w0)), k, rtol=1e-12)
        assert np.isclose(abs(b(0.0)), 1.0, rtol=1e-12)

    def test_ws_peak_value(self):
        cfg = WeightConfig()
        w_s, _, _, _ = build_weights(P, cfg)
        b3 = biquad(P.omega_res, cfg.k_s3, cfg.zeta)
        expected = cfg.k_s1 * cfg.k_s2 * abs(b3(1j * P.omega0))
        assert np.isclose(abs(w_s(1j * P.omega0)), expected, rtol=1e-9)

    def test_wcs_limits(self):
        cfg = WeightConfig()
        _, w_cs, _, _ = build_weights(P, cfg)
        assert np.isclose(w_cs(0.0).real, cfg.k_cs1 / cfg.k_cs2, rtol=1e-12)
        assert np.isclose(abs(w_cs(1j * 1e9)), 1.0, rtol=1e-3)

    def test_tdes_dc_and_bandwidth(self):
        cfg = WeightConfig(k_b=1.0)
        _, _, _, t_des = build_weights(P, cfg)
        assert np.isclose(t_des(0.0).real, 1.0, rtol=1e-12)
        wb = cfg.bandwidth(P)
        assert np.isclose(abs(t_des(1j * wb)), 1.0 / np.sqrt(2.0), rtol=1e-9)

    def test_wd_factor_products(self):
        cfg = WeightConfig()
        _, _, w_d, _ = build_weights(P, cfg)
        for h in HARMONICS:
            factors = [biquad(hh * P.omega0, cfg.k_d[hh], cfg.zeta) for hh in HARMONICS]
            expected = np.prod([abs(f(1j * h * P.omega0)) for f in factors])
            assert np.isclose(abs(w_d(1j * h * P.omega0)), expected, rtol=1e-8)

    def test_weights_stable_and_proper(self):
        for cfg in (WeightConfig(), calibrated_weights(P)):
            for w in build_weights(P, cfg):
                assert np.max(w.poles().real) < 0
                assert w.num.size <= w.den.size

    def test_config_validation(self):
        with pytest.raises(ValueError, match="k_cs1"):
            WeightConfig(k_cs1=100.0, k_cs2=333.0)
        with pytest.raises(ValueError, match="zeta"):
            WeightConfig(zeta=1.5)
        with pytest.raises(ValueError, match="k_d"):
            WeightConfig(k_d={2: 1.0})


class TestGeneralizedPlant:
    def setup_method(self):
        self.load = default_load(P)
        self.cfg = calibrated_weights(P)
        self.scales = calibrated_scales(P)
        self.plant = assemble_generalized_plant(P, self.load, self.cfg, self.scales)

    def test_dimensions(self):
        assert self.plant.sys.n_states == 23
        assert (self.plant.n_w_unc, self.plant.n_w, self.plant.n_u) == (1, 2, 1)
        assert (self.plant.n_z_unc, self.plant.n_z, self.plant.n_y) == (1, 3, 1)

    def test_feedthrough_blocks(self):
        D = self.plant.sys.D
        vb = self.scales.v_ref
        assert np.isclose(D[4, 1], vb)                      # e <- v_ref direct
        assert np.isclose(D[1, 1] / (self.scales.z_s * vb), self.cfg.k_s1)
        assert np.isclose(D[2, 3] / self.scales.z_cs, 1.0)  # z_CS <- v_inv
        assert D[4, 3] == 0.0                               # D22 = 0

    def test_lft_reproduces_plant_family(self):
        # closing the uncertainty channel must reproduce the rational family
        # on a 100-point grid to 1e-8 relative
        w = np.logspace(0, 5, 100)
        raw = assemble_generalized_plant(P, self.load, self.cfg, scales=None)
        _, _, w_d, _ = build_weights(P, self.cfg)
        for delta in (-1.0, -0.5, 0.0, 0.5, 1.0):
            dblk = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)),
                              np.zeros((1, 0)), [[delta]])
            closed = close_upper(raw.sys, dblk, 1, 1)
            g_v_ref, z_d_ref = perturbed_plant(P, self.load, delta)
            got_gv = -freq_response(closed.select([3], [2]), w).siso()
            ref_gv = g_v_ref(1j * w)
            assert np.max(np.abs(got_gv - ref_gv) / np.abs(ref_gv)) < 1e-8
            got_zd = freq_response(closed.select([3], [1]), w).siso()
            ref_zd = (z_d_ref * w_d)(1j * w)
            assert np.max(np.abs(got_zd - ref_zd) / np.abs(ref_zd)) < 1e-8

    def test_disturbance_path_with_zero_controller(self):
        # with no control action the i_d channel reads -Z_d * W_d
        raw = assemble_generalized_plant(P, self.load, self.cfg, scales=None)
        _, z_d = perturbed_plant(P, self.load, 0.0)
        _, _, w_d, _ = build_weights(P, self.cfg)
        w = np.logspace(1, 4, 30)
        k0 = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[0.0]])
        clp = close_lower(raw.sys, k0, 1, 1)
        # with v_ref = 0 the e_o row reads v_C directly
        got = freq_response(clp.select([3], [2]), w).siso()
        ref = -(z_d * w_d)(1j * w)
        assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-8


class TestClosedLoopTargets:
    def setup_method(self):
        self.load = default_load(P)
        self.cfg = calibrated_weights(P)
        self.scales = calibrated_scales(P)
        self.plant = assemble_generalized_plant(P, self.load, self.cfg, self.scales)

    def test_zero_controller(self):
        k0 = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[0.0]])
        rep = closed_loop_targets(self.plant, k0, P.omega0, scales=self.scales)
        assert rep.g_fund == 0.0
        _, z_d = perturbed_plant(P, self.load, 0.0)
        for h in HARMONICS:
            assert np.isclose(rep.z_harmonics[h], abs(z_d(1j * h * P.omega0)), rtol=1e-8)

    def test_high_gain_limit_of_tracking(self):
        # G = L/(1+L) -> 1 as the loop gain at the fundamental grows
        g_v, _ = perturbed_plant(P, self.load, 0.0)
        loop = g_v(1j * P.omega0) * 1e9
        assert abs(loop / (1.0 + loop) - 1.0) < 1e-8

    def test_unstable_loop_rejected_with_poles(self):
        k_bad = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)),
                           np.zeros((1, 0)), [[-2000.0]])
        with pytest.raises(ValueError, match="unstable"):
            closed_loop_targets(self.plant, k_bad, P.omega0, scales=self.scales)
