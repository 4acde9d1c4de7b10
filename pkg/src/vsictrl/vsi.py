"""Single-phase grid-forming VSI models.

Averaged LC-filter plant, nominal/uncertain load admittance, the four
loop-shaping weights, and the generalized plant that wires them together
for synthesis.  Physical quantities are SI throughout (volts, amps, ohms,
henry, farad, rad/s); no per-unit scaling is applied by default.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .lti import StateSpace, TransferFunction, freq_response, parallel, series, tf_to_ss
from .synthesis import (
    GeneralizedPlant,
    SynthesisReport,
    allpass_delta,
    close_lower,
    hinf_norm,
    hinfsyn,
    reduce_controller,
    robust_stability_check,
)

HARMONICS = (1, 3, 5, 7, 9, 11, 13)

DEFAULT_K_D = {1: 10.0, 3: 4.0, 5: 4.0, 7: 4.0, 9: 4.0, 11: 2.0, 13: 2.0}


@dataclass(frozen=True)
class VsiParameters:
    """Inverter electrical ratings and filter components."""

    v_rated: float = 220.0          # rated RMS output voltage, V
    omega0: float = 2 * np.pi * 60  # rated output frequency, rad/s
    v_dc: float = 500.0             # DC link voltage, V
    f_sw: float = 20e3              # switching frequency, Hz
    l_f: float = 2e-3               # filter inductance, H
    c_f: float = 20e-6              # filter capacitance, F
    r_f: float = 0.05               # filter inductor ESR, ohm
    s_rated: float = 2000.0         # rated apparent power, VA
    p_rated: float = 1600.0         # rated active power, W
    q_rated: float = 1200.0         # rated reactive power, var

    def __post_init__(self):
        for name in ("v_rated", "omega0", "v_dc", "f_sw", "l_f", "c_f", "r_f", "s_rated"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("p_rated", "q_rated"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.p_rated ** 2 + self.q_rated ** 2 > self.s_rated ** 2 * (1 + 1e-9):
            raise ValueError("p_rated^2 + q_rated^2 exceeds s_rated^2")

    @property
    def omega_res(self) -> float:
        """LC resonance frequency 1/sqrt(Lf*Cf), rad/s."""
        return 1.0 / np.sqrt(self.l_f * self.c_f)


@dataclass(frozen=True)
class LoadModel:
    """Uncertain-admittance load plus a harmonic current-source bank.

    The bank is a tuple of (odd harmonic order, peak amplitude in A,
    phase in rad) entries; ``l_nominal=None`` marks a purely resistive
    nominal admittance.
    """

    r_nominal: float
    l_nominal: float | None
    harmonic_bank: tuple = ()

    def __post_init__(self):
        if self.r_nominal <= 0:
            raise ValueError("r_nominal must be positive")
        if self.l_nominal is not None and self.l_nominal <= 0:
            raise ValueError("l_nominal must be positive (or None for resistive)")
        seen = set()
        for h, amp, _phase in self.harmonic_bank:
            if h % 2 == 0 or not (1 <= h <= max(HARMONICS)):
                raise ValueError(f"harmonic order {h} must be odd and within 1..13")
            if h in seen:
                raise ValueError(f"duplicate harmonic order {h}")
            if amp < 0:
                raise ValueError("harmonic amplitudes must be nonnegative")
            seen.add(h)


@dataclass(frozen=True)
class WeightConfig:
    """All loop-shaping knobs.

    ``omega_b`` (performance-bound bandwidth, rad/s) defaults to ten times
    the fundamental when left at None.  ``zeta_d`` lets the disturbance
    weight use its own damping; by default it shares ``zeta``.
    """

    k_s1: float = 0.5
    k_s2: float = 2000.0
    k_s3: float = 2000.0
    zeta: float = 0.01
    k_cs1: float = 1.0
    k_cs2: float = 333.0
    k_d: dict = field(default_factory=lambda: dict(DEFAULT_K_D))
    k_b: float = 1.0
    omega_b: float | None = None
    zeta_d: float | None = None

    def __post_init__(self):
        if not (0 < self.zeta < 1):
            raise ValueError("zeta must lie in (0, 1)")
        if self.zeta_d is not None and not (0 < self.zeta_d < 1):
            raise ValueError("zeta_d must lie in (0, 1)")
        for name in ("k_s1", "k_s2", "k_s3", "k_cs1", "k_cs2", "k_b"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.k_cs1 > self.k_cs2 / 10.0:
            raise ValueError("k_cs1 must be << k_cs2 (enforced as k_cs1 <= k_cs2/10)")
        if set(self.k_d) - set(HARMONICS):
            raise ValueError("k_d keys must be odd harmonic orders 1..13")
        if any(v <= 0 for v in self.k_d.values()):
            raise ValueError("k_d gains must be strictly positive")
        if self.omega_b is not None and self.omega_b <= 0:
            raise ValueError("omega_b must be positive")

    def bandwidth(self, p: VsiParameters) -> float:
        return self.omega_b if self.omega_b is not None else 10.0 * p.omega0


def build_plant(p: VsiParameters) -> tuple[TransferFunction, TransferFunction]:
    """Open-loop voltage dynamics: V_C = G_inv*V_inv - G_i*I_grid.

    G_inv = 1/(Lf Cf s^2 + Rf Cf s + 1), G_i = (Lf s + Rf)/(same denominator).
    """
    den = [p.l_f * p.c_f, p.r_f * p.c_f, 1.0]
    g_inv = TransferFunction([1.0], den)
    g_i = TransferFunction([p.l_f, p.r_f], den)
    return g_inv, g_i


def vsi_state_space(p: VsiParameters) -> StateSpace:
    """Physical two-state realization; inputs [v_inv, i_grid], outputs [i_inv, v_C]."""
    A = np.array([[-p.r_f / p.l_f, -1.0 / p.l_f],
                  [1.0 / p.c_f, 0.0]])
    B = np.array([[1.0 / p.l_f, 0.0],
                  [0.0, -1.0 / p.c_f]])
    C = np.eye(2)
    D = np.zeros((2, 2))
    return StateSpace(A, B, C, D)


def nominal_load_values(p: VsiParameters) -> tuple[float, float | None]:
    """(R_L, L_L) of the nominal admittance from the power ratings."""
    if p.p_rated <= 0:
        raise ValueError("p_rated must be positive to define a nominal load")
    r = p.v_rated ** 2 / p.p_rated
    if p.q_rated <= 0:
        return r, None
    l = p.v_rated ** 2 / (p.omega0 * p.q_rated)
    return r, l


def nominal_load(p: VsiParameters) -> TransferFunction:
    """Nominal load admittance Y(s) = 1/(L_L s + R_L).

    With q_rated = 0 the admittance degenerates to the purely resistive
    1/R_L (the inductive term is omitted); a warning reports the case.
    """
    r, l = nominal_load_values(p)
    if l is None:
        warnings.warn("q_rated is zero: nominal load admittance is purely resistive",
                      stacklevel=2)
        return TransferFunction([1.0 / r], [1.0])
    return TransferFunction([1.0], [l, r])


def load_admittance(load: LoadModel) -> TransferFunction:
    if load.l_nominal is None:
        return TransferFunction([1.0 / load.r_nominal], [1.0])
    return TransferFunction([1.0], [load.l_nominal, load.r_nominal])


def default_load(p: VsiParameters, harmonic_bank=()) -> LoadModel:
    r, l = nominal_load_values(p)
    return LoadModel(r_nominal=r, l_nominal=l, harmonic_bank=tuple(harmonic_bank))


def perturbed_plant(p: VsiParameters, load: LoadModel, delta) \
        -> tuple[TransferFunction, TransferFunction]:
    """Plant family member for one uncertainty sample Delta.

    Returns (G_v, Z_d) with Y_L = (1 + Delta) * Y_nominal closed around the
    filter:  G_v = G_inv/(1 + G_i Y_L), Z_d = G_i/(1 + G_i Y_L).  A Delta
    with norm above one is still computed but flagged non-admissible.
    """
    if isinstance(delta, TransferFunction):
        dtf = delta
        dnorm = hinf_norm(tf_to_ss(delta)) if delta.order > 0 else abs(delta.num[0])
    else:
        dtf = TransferFunction([float(delta)], [1.0])
        dnorm = abs(float(delta))
    if dnorm > 1.0 + 1e-6:
        warnings.warn(f"uncertainty sample has norm {dnorm:.4g} > 1: not an admissible "
                      "member of the modeled family", stacklevel=2)
    g_inv, g_i = build_plant(p)
    y_l = (1.0 + dtf) * load_admittance(load)
    if np.all(y_l.num == 0.0):
        return g_inv, g_i  # open circuit (Delta = -1): loop term vanishes identically
    den = 1.0 + g_i * y_l
    return g_inv / den, g_i / den


def biquad(omega: float, k: float, zeta: float) -> TransferFunction:
    """(s^2 + 2k*zeta*w*s + w^2)/(s^2 + 2*zeta*w*s + w^2): gain k at w, 1 at 0 and inf."""
    if omega <= 0:
        raise ValueError("biquad center frequency must be positive")
    return TransferFunction([1.0, 2.0 * k * zeta * omega, omega ** 2],
                            [1.0, 2.0 * zeta * omega, omega ** 2])


def _weight_factors(p: VsiParameters, cfg: WeightConfig):
    """Factored form of every weight, for well-conditioned realizations."""
    zeta_d = cfg.zeta if cfg.zeta_d is None else cfg.zeta_d
    ws = [TransferFunction([cfg.k_s1], [1.0]),
          biquad(p.omega0, cfg.k_s2, cfg.zeta),
          biquad(p.omega_res, cfg.k_s3, cfg.zeta)]
    wcs = [TransferFunction([1.0, cfg.k_cs1 * p.omega0], [1.0, cfg.k_cs2 * p.omega0])]
    wd = [biquad(h * p.omega0, cfg.k_d[h], zeta_d) for h in sorted(cfg.k_d)]
    wb = cfg.bandwidth(p)
    tdes = [TransferFunction([cfg.k_b * wb], [1.0, wb])]
    return ws, wcs, wd, tdes


def build_weights(p: VsiParameters, cfg: WeightConfig) \
        -> tuple[TransferFunction, TransferFunction, TransferFunction, TransferFunction]:
    """The four loop-shaping weights (W_S, W_CS, W_d, T_des) as transfer functions.

    W_S peaks at the fundamental and at the LC resonance, W_CS is the
    high-pass control-effort weight, W_d stacks biquad peaks on the odd
    harmonics, and T_des is the first-order performance bound.
    """
    ws_f, wcs_f, wd_f, tdes_f = _weight_factors(p, cfg)

    def prod(factors):
        out = factors[0]
        for f in factors[1:]:
            out = out * f
        return out

    return prod(ws_f), prod(wcs_f), prod(wd_f), prod(tdes_f)


def _series_ss(factors) -> StateSpace:
    out = tf_to_ss(factors[0])
    for f in factors[1:]:
        out = series(out, tf_to_ss(f))
    return out


@dataclass(frozen=True)
class ChannelScales:
    """Optional diagonal scalings for the synthesis channels (default: SI, all ones)."""

    w_unc: float = 1.0
    v_ref: float = 1.0
    i_d: float = 1.0
    z_unc: float = 1.0
    z_s: float = 1.0
    z_cs: float = 1.0
    e_o: float = 1.0


def assemble_generalized_plant(p: VsiParameters, load: LoadModel, cfg: WeightConfig,
                               scales: ChannelScales | None = None) -> GeneralizedPlant:
    """Wire plant, nominal load, and weights into the synthesis plant.

    Inputs  [w_unc, v_ref, i_d_hat, v_inv]; outputs [z_unc, z_S, z_CS, e_o, e].
    The grid current seen by the filter is Y_nom*v_C + w_unc + W_d*i_d_hat,
    and z_unc = Y_nom*v_C, so closing w_unc = Delta*z_unc reproduces the
    multiplicative-admittance plant family exactly.
    """
    ws_f, wcs_f, wd_f, tdes_f = _weight_factors(p, cfg)
    sS = _series_ss(ws_f)
    sCS = _series_ss(wcs_f)
    sD = _series_ss(wd_f)
    sT = _series_ss(tdes_f)

    r_l, l_l = load.r_nominal, load.l_nominal
    if l_l is not None:
        aY = np.array([[-r_l / l_l]])
        bY = np.array([[1.0 / l_l]])
        cY = np.array([[1.0]])
        dY = 0.0
        nY = 1
    else:
        aY = np.zeros((0, 0))
        bY = np.zeros((0, 1))
        cY = np.zeros((1, 0))
        dY = 1.0 / r_l
        nY = 0

    n_p, n_d, n_s, n_cs, n_t = 2, sD.n_states, sS.n_states, sCS.n_states, sT.n_states
    n = n_p + nY + n_d + n_s + n_cs + n_t
    i_p = slice(0, n_p)
    i_y = slice(n_p, n_p + nY)
    i_d = slice(i_y.stop, i_y.stop + n_d)
    i_s = slice(i_d.stop, i_d.stop + n_s)
    i_cs = slice(i_s.stop, i_s.stop + n_cs)
    i_t = slice(i_cs.stop, i_cs.stop + n_t)

    # plant rows: i_grid = cY xY + dY vC + w_unc + (Cd xd + Dd id_hat)
    c_pv = np.zeros(n_p)
    c_pv[1] = 1.0  # v_C is the second plant state
    b_pu = np.array([1.0 / p.l_f, 0.0])
    b_pg = np.array([0.0, -1.0 / p.c_f])
    a_p = np.array([[-p.r_f / p.l_f, -1.0 / p.l_f],
                    [1.0 / p.c_f, 0.0]])

    A = np.zeros((n, n))
    A[i_p, i_p] = a_p + np.outer(b_pg, dY * c_pv)
    A[i_p, i_d] = b_pg[:, None] @ sD.C
    if nY:
        A[i_p, i_y] = b_pg[:, None] @ cY
        A[i_y, i_p] = bY @ c_pv[None, :]
        A[i_y, i_y] = aY
    A[i_d, i_d] = sD.A
    A[i_s, i_p] = -sS.B @ c_pv[None, :]
    A[i_s, i_s] = sS.A
    A[i_cs, i_cs] = sCS.A
    A[i_t, i_t] = sT.A

    # inputs: [w_unc, v_ref, i_d_hat, v_inv]
    B = np.zeros((n, 4))
    B[i_p, 0] = b_pg
    B[i_p, 3] = b_pu
    B[i_p, 2] = b_pg * float(sD.D[0, 0])
    B[i_d, 2] = sD.B[:, 0]
    B[i_s, 1] = sS.B[:, 0]
    B[i_cs, 3] = sCS.B[:, 0]
    B[i_t, 1] = sT.B[:, 0]

    # outputs: [z_unc, z_S, z_CS, e_o, e]
    C = np.zeros((5, n))
    D = np.zeros((5, 4))
    C[0, i_p] = dY * c_pv
    if nY:
        C[0, i_y] = cY[0]
    C[1, i_p] = -float(sS.D[0, 0]) * c_pv
    C[1, i_s] = sS.C[0]
    D[1, 1] = float(sS.D[0, 0])
    C[2, i_cs] = sCS.C[0]
    D[2, 3] = float(sCS.D[0, 0])
    C[3, i_p] = c_pv
    C[3, i_t] = -sT.C[0]
    D[3, 1] = -float(sT.D[0, 0])
    C[4, i_p] = -c_pv
    D[4, 1] = 1.0

    if scales is not None:
        din = np.diag([scales.w_unc, scales.v_ref, scales.i_d, 1.0])
        dout = np.diag([scales.z_unc, scales.z_s, scales.z_cs, scales.e_o, 1.0])
        B = B @ din
        C = dout @ C
        D = dout @ D @ din

    sys = StateSpace(A, B, C, D)
    return GeneralizedPlant(sys, n_w_unc=1, n_w=2, n_u=1, n_z_unc=1, n_z=3, n_y=1)


@dataclass
class TargetReport:
    """Closed-loop design targets at the fundamental and the odd harmonics."""

    g_fund: complex                    # reference-tracking transfer at omega0
    z_harmonics: dict                  # |Z(j h omega0)| in ohms per odd h
    g_tolerance: float = 0.01
    z_tolerance: float = 0.1

    @property
    def g_error(self) -> float:
        return abs(self.g_fund - 1.0)

    @property
    def g_phase_deg(self) -> float:
        return float(np.degrees(np.angle(self.g_fund)))

    @property
    def passed(self) -> bool:
        return (self.g_error <= self.g_tolerance
                and all(v <= self.z_tolerance for v in self.z_harmonics.values()))


def closed_loop_targets(plant: GeneralizedPlant, controller: StateSpace,
                        omega0: float, g_tolerance: float = 0.01,
                        z_tolerance: float = 0.1,
                        scales: ChannelScales | None = None) -> TargetReport:
    """Evaluate G(j*omega0) and |Z(j*h*omega0)| for the closed voltage loop.

    The nominal loop (Delta = 0) must be stable; otherwise the offending
    poles are listed.  The transfers are read off the generalized plant:
    G_v = -P[e <- v_inv], Z_d = P[e <- w_unc], then G = GvK/(1+GvK) and
    Z = Zd/(1+GvK).  Pass the same ``scales`` used at assembly so Z comes
    out in ohms regardless of channel normalization.
    """
    clp = close_lower(plant.sys, controller, plant.n_y, plant.n_u)
    cl_poles = clp.poles()
    if cl_poles.size and np.max(cl_poles.real) >= 0:
        bad = cl_poles[cl_poles.real >= 0]
        raise ValueError(f"nominal closed loop is unstable; offending poles: {bad}")

    w_unc_scale = scales.w_unc if scales is not None else 1.0
    e_row = plant.sys.n_outputs - 1
    z_mags = {}
    g_fund = None
    for h in HARMONICS:
        s = 1j * h * omega0
        pmat = plant.sys(s)
        g_v = -pmat[e_row, 3]
        z_d = pmat[e_row, 0] / w_unc_scale
        k = controller(s)[0, 0]
        loop = g_v * k
        if h == 1:
            g_fund = loop / (1.0 + loop)
        z_mags[h] = float(np.abs(z_d / (1.0 + loop)))
    return TargetReport(g_fund=complex(g_fund), z_harmonics=z_mags,
                        g_tolerance=g_tolerance, z_tolerance=z_tolerance)


def default_delta_samples(allpass_corners=(10.0, 1e3, 1e5), n_real: int = 9):
    """Real-constant grid over [-1, 1] plus first-order all-pass blocks."""
    reals = list(np.linspace(-1.0, 1.0, n_real))
    return reals + [allpass_delta(a) for a in allpass_corners]


def design_voltage_controller(p: VsiParameters, load: LoadModel, cfg: WeightConfig,
                              scales: ChannelScales | None = None,
                              gamma_range=(0.1, 100.0), tol: float = 1e-3,
                              reduction_band_max: float | None = None,
                              reduction_rel_tol: float = 0.01,
                              reduction_norm_cap: float | None = 1.0,
                              delta_samples=None,
                              g_tolerance: float = 0.01,
                              z_tolerance: float = 0.1) -> SynthesisReport:
    """Full design pipeline: synthesize, reduce, and certify the controller.

    Returns a SynthesisReport carrying the full-order and reduced
    controllers, the gamma history, Hankel values, truncation bounds
    (a-priori and measured), the sampled-uncertainty robustness verdict,
    and the closed-loop target evaluation.
    """
    plant = assemble_generalized_plant(p, load, cfg, scales=scales)
    report = hinfsyn(plant, gamma_range=gamma_range, tol=tol)
    K = report.controller

    if reduction_band_max is None:
        reduction_band_max = 2 * np.pi * p.f_sw
    reduced, hsv, bound = reduce_controller(
        K, plant, band_max=reduction_band_max,
        rel_tol=reduction_rel_tol, norm_cap=reduction_norm_cap)
    diff = parallel(K, StateSpace(reduced.A, reduced.B, -reduced.C, -reduced.D))
    report.hsv = hsv
    report.reduced_controller = reduced
    report.truncation_error_bound = bound
    report.truncation_error_measured = hinf_norm(diff)

    if delta_samples is None:
        delta_samples = default_delta_samples()
    verdict = robust_stability_check(plant, K, delta_samples)
    report.robust_stable = verdict.robust
    report.robust_margin = verdict.margin

    targets = closed_loop_targets(plant, K, p.omega0, g_tolerance=g_tolerance,
                                  z_tolerance=z_tolerance, scales=scales)
    report.targets = {
        "g_fund_mag": float(abs(targets.g_fund)),
        "g_fund_phase_deg": targets.g_phase_deg,
        "g_error": targets.g_error,
        "z_harmonics_ohm": {str(h): v for h, v in targets.z_harmonics.items()},
        "passed": targets.passed,
    }
    return report
