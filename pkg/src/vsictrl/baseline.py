"""Conventional multi-loop baseline: inner PI current loop, outer PR voltage loop.

Design plants close the nominal load (parallel R and L branches, matching
the time-domain simulator) around the LC filter.  The tuning procedure is a
deterministic log-grid search maximizing closed-loop bandwidth subject to
gain/phase-margin constraints, so every returned design can be re-verified
from scratch with :func:`margins`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lti import StateSpace, TransferFunction, _as_ss, feedback, freq_response, series, tf_to_ss
from .vsi import HARMONICS, LoadModel, VsiParameters


@dataclass(frozen=True)
class MultiLoopController:
    """Inner PI gains plus outer PR gains (per odd harmonic)."""

    k_pc: float
    k_ic: float
    k_p: float
    k_r: dict
    omega_c: float

    def __post_init__(self):
        if min(self.k_pc, self.k_ic, self.k_p) < 0 or self.omega_c <= 0:
            raise ValueError("gains must be nonnegative and omega_c positive")
        if 1 not in self.k_r:
            raise ValueError("a resonant term at the fundamental is required")
        if any(v < 0 for v in self.k_r.values()):
            raise ValueError("resonant gains must be nonnegative")


@dataclass
class MarginReport:
    gm_db: float
    pm_deg: float
    gain_crossover: float       # rad/s
    bandwidth: float            # rad/s, closed-loop -3 dB
    no_gain_crossover: bool = False
    no_phase_crossover: bool = False

    def meets(self, pm_min: float, gm_min_db: float, bw_min: float) -> bool:
        return self.pm_deg >= pm_min and self.gm_db >= gm_min_db and self.bandwidth >= bw_min


_DEFAULT_GRID = np.logspace(0, 7, 6000)


def _margins_from_response(omega: np.ndarray, L: np.ndarray) -> MarginReport:
    mag = np.abs(L)
    # worst-case gain margin: every crossing of the negative real axis
    gm_db = np.inf
    no_pc = True
    im_sign = np.sign(L.imag)
    for k in np.flatnonzero(im_sign[:-1] * im_sign[1:] < 0):
        a = abs(L.imag[k]) / (abs(L.imag[k]) + abs(L.imag[k + 1]))
        re = L.real[k] + a * (L.real[k + 1] - L.real[k])
        if re < 0:
            no_pc = False
            gm_db = min(gm_db, -20.0 * np.log10(abs(re)))
    # worst-case phase margin: angular distance from each unity-gain
    # crossing to the critical point, in [0, 180]
    pm_deg = np.inf
    wc = np.nan
    no_gc = True
    lg = np.log10(np.maximum(mag, 1e-300))
    hits = [(omega[k], float(np.degrees(np.angle(L[k]))))
            for k in np.flatnonzero(lg == 0.0)]
    for k in np.flatnonzero(np.sign(lg[:-1]) * np.sign(lg[1:]) < 0):
        a = abs(lg[k]) / (abs(lg[k]) + abs(lg[k + 1]))
        w = omega[k] * (omega[k + 1] / omega[k]) ** a
        ph = np.degrees(np.angle(L[k]) + a * np.angle(L[k + 1] / L[k]))
        hits.append((w, ph))
    for w, ph in hits:
        ph = (ph + 180.0) % 360.0 - 180.0
        pm = 180.0 - abs(ph)
        if pm < pm_deg:
            pm_deg = pm
            wc = w
        no_gc = False
    # closed-loop -3 dB bandwidth: final crossing below peak/sqrt(2); the
    # peak (instead of DC) reference keeps the figure meaningful for loops
    # whose load inductance kills the DC gain
    T = L / (1.0 + L)
    tmag = np.abs(T)
    thresh = np.max(tmag) / np.sqrt(2.0)
    above = tmag >= thresh
    bandwidth = np.inf if above[-1] else 0.0
    idx = np.flatnonzero(above[:-1] & ~above[1:])
    if idx.size:
        k = idx[-1]
        a = (np.log(tmag[k]) - np.log(thresh)) / (np.log(tmag[k]) - np.log(tmag[k + 1]))
        bandwidth = omega[k] * (omega[k + 1] / omega[k]) ** a
    return MarginReport(gm_db=gm_db, pm_deg=pm_deg, gain_crossover=wc,
                        bandwidth=bandwidth, no_gain_crossover=no_gc,
                        no_phase_crossover=no_pc)


def margins(loop, omega: np.ndarray | None = None) -> MarginReport:
    """Gain/phase margins and closed-loop bandwidth of an open SISO loop.

    Multi-crossover loops report the worst-case margins; absent crossovers
    report infinite margins with the corresponding flag set.
    """
    if omega is None:
        omega = _DEFAULT_GRID
    fr = freq_response(_as_ss(loop), omega)
    return _margins_from_response(omega, fr.siso())


def inner_current_plant(p: VsiParameters, load: LoadModel) -> StateSpace:
    """v_inv -> i_inv dynamics with the nominal load (parallel R, L) closed."""
    r_l, l_l = load.r_nominal, load.l_nominal
    g_r = 1.0 / (r_l * p.c_f)
    if l_l is not None:
        A = np.array([
            [-p.r_f / p.l_f, -1.0 / p.l_f, 0.0],
            [1.0 / p.c_f, -g_r, -1.0 / p.c_f],
            [0.0, 1.0 / l_l, 0.0],
        ])
    else:
        A = np.array([
            [-p.r_f / p.l_f, -1.0 / p.l_f],
            [1.0 / p.c_f, -g_r],
        ])
    n = A.shape[0]
    B = np.zeros((n, 1))
    B[0, 0] = 1.0 / p.l_f
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    return StateSpace(A, B, C, np.zeros((1, 1)))


def output_admittance_plant(p: VsiParameters, load: LoadModel) -> StateSpace:
    """i_inv -> v_C dynamics: filter capacitor loaded by the parallel R, L branches."""
    r_l, l_l = load.r_nominal, load.l_nominal
    g_r = 1.0 / (r_l * p.c_f)
    if l_l is not None:
        A = np.array([
            [-g_r, -1.0 / p.c_f],
            [1.0 / l_l, 0.0],
        ])
    else:
        A = np.array([[-g_r]])
    n = A.shape[0]
    B = np.zeros((n, 1))
    B[0, 0] = 1.0 / p.c_f
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    return StateSpace(A, B, C, np.zeros((1, 1)))


def pi_tf(k_pc: float, k_ic: float) -> TransferFunction:
    return TransferFunction([k_pc, k_ic], [1.0, 0.0])


def pr_tf(k_p: float, k_r: dict, omega_c: float, omega0: float) -> TransferFunction:
    """Proportional plus damped resonators k_r*2*wc*s/(s^2 + 2*wc*s + (h*w0)^2)."""
    out = TransferFunction([k_p], [1.0])
    for h, kr in sorted(k_r.items()):
        out = out + TransferFunction([2.0 * kr * omega_c, 0.0],
                                     [1.0, 2.0 * omega_c, (h * omega0) ** 2])
    return out


def _pi_response(omega, k_pc, k_ic):
    return k_pc + k_ic / (1j * omega)


def _pr_response(omega, k_p, k_r, omega_c, omega0):
    s = 1j * omega
    out = np.full_like(s, k_p, dtype=complex)
    for h, kr in k_r.items():
        out = out + 2.0 * kr * omega_c * s / (s * s + 2.0 * omega_c * s + (h * omega0) ** 2)
    return out


def design_inner_pi(plant: StateSpace, pm_min: float = 60.0, gm_min_db: float = 40.0,
                    bw_min: float = 2 * np.pi * 5e3,
                    k_pc_grid=None, k_ic_grid=None,
                    omega: np.ndarray | None = None,
                    hold_delay: float | None = None,
                    pm_hold_min: float = 30.0, gm_hold_min_db: float = 4.0):
    """Log-grid search for PI gains maximizing bandwidth under the margin spec.

    ``hold_delay`` (seconds) adds a digital-hosting feasibility check: the
    loop with an extra e^(-j*w*delay) phase must keep modest margins, so the
    design survives zero-order-hold implementation.  The returned margins
    are always the pure continuous ones.  Returns (k_pc, k_ic, MarginReport);
    raises with the best-found margins when the spec is infeasible.
    """
    if k_pc_grid is None:
        k_pc_grid = np.logspace(-1, np.log10(300.0), 45)
    if k_ic_grid is None:
        k_ic_grid = np.logspace(1, 6, 21)
    if omega is None:
        omega = _DEFAULT_GRID
    pl = freq_response(plant, omega).siso()
    hold = np.exp(-1j * omega * hold_delay) if hold_delay else None

    best = None
    best_any = None
    for k_pc in k_pc_grid:
        for k_ic in k_ic_grid:
            L = _pi_response(omega, k_pc, k_ic) * pl
            rep = _margins_from_response(omega, L)
            score = min(rep.pm_deg - pm_min, rep.gm_db - gm_min_db)
            if best_any is None or score > best_any[3]:
                best_any = (k_pc, k_ic, rep, score)
            if not rep.meets(pm_min, gm_min_db, bw_min):
                continue
            if hold is not None:
                rep_h = _margins_from_response(omega, L * hold)
                if not (rep_h.pm_deg >= pm_hold_min and rep_h.gm_db >= gm_hold_min_db):
                    continue
            if best is None or rep.bandwidth > best[2].bandwidth:
                best = (float(k_pc), float(k_ic), rep)
    if best is None:
        _, _, rep, _ = best_any
        raise ValueError(
            f"inner PI spec infeasible on the search grid; best margins "
            f"PM={rep.pm_deg:.1f} deg, GM={rep.gm_db:.1f} dB, BW={rep.bandwidth:.0f} rad/s")
    return best


def design_outer_pr(outer_plant: StateSpace, omega0: float,
                    pm_min: float = 45.0, gm_min_db: float = 40.0,
                    bw_min: float = 2 * np.pi * 5e3,
                    k_p_grid=None, k_r_grid=None, omega_c_grid=None,
                    harmonics=HARMONICS, taper: float = 0.5,
                    omega: np.ndarray | None = None,
                    hold_delay: float | None = None,
                    pm_hold_min: float = 25.0, gm_hold_min_db: float = 4.0):
    """Log-grid search for PR gains on the inner-closed voltage plant.

    The fundamental resonant gain is searched; higher harmonics share it
    scaled by ``taper``.  Candidates whose resonant action does not dominate
    the proportional term by 20 dB at every compensated harmonic are skipped,
    as are candidates failing the ``hold_delay`` hosting check (see
    :func:`design_inner_pi`).  Returns (k_p, k_r dict, omega_c, MarginReport).
    """
    if k_p_grid is None:
        k_p_grid = np.logspace(-2, 1, 46)
    if k_r_grid is None:
        k_r_grid = np.logspace(0, 3, 28)
    if omega_c_grid is None:
        omega_c_grid = [2 * np.pi * 1.0]
    if omega is None:
        omega = np.unique(np.concatenate([
            _DEFAULT_GRID,
            np.concatenate([h * omega0 + np.linspace(-20, 20, 41) for h in harmonics]),
        ]))
    pl = freq_response(outer_plant, omega).siso()
    hold = np.exp(-1j * omega * hold_delay) if hold_delay else None

    best = None
    best_any = None
    for omega_c in omega_c_grid:
        for k_p in k_p_grid:
            for k_r1 in k_r_grid:
                if taper * k_r1 < 10.0 * k_p:
                    continue
                k_r = {h: (k_r1 if h == 1 else taper * k_r1) for h in harmonics}
                L = _pr_response(omega, k_p, k_r, omega_c, omega0) * pl
                rep = _margins_from_response(omega, L)
                score = min(rep.pm_deg - pm_min, rep.gm_db - gm_min_db)
                if best_any is None or score > best_any[4]:
                    best_any = (k_p, k_r, omega_c, rep, score)
                if not rep.meets(pm_min, gm_min_db, bw_min):
                    continue
                if hold is not None:
                    rep_h = _margins_from_response(omega, L * hold)
                    if not (rep_h.pm_deg >= pm_hold_min and rep_h.gm_db >= gm_hold_min_db):
                        continue
                if best is None or rep.bandwidth > best[3].bandwidth:
                    best = (float(k_p), k_r, float(omega_c), rep)
    if best is None:
        _, _, _, rep, _ = best_any
        raise ValueError(
            f"outer PR spec infeasible on the search grid; best margins "
            f"PM={rep.pm_deg:.1f} deg, GM={rep.gm_db:.1f} dB, BW={rep.bandwidth:.0f} rad/s")
    return best


@dataclass
class BaselineDesign:
    controller: MultiLoopController
    inner_margins: MarginReport
    outer_margins: MarginReport
    spec_met: bool
    notes: list = field(default_factory=list)


def design_baseline(p: VsiParameters, load: LoadModel,
                    pm_inner: float = 60.0, pm_outer: float = 45.0,
                    gm_min_db: float = 40.0, bw_min: float = 2 * np.pi * 5e3,
                    hold_aware: bool = True, **grids) -> BaselineDesign:
    """Design both loops on the nominal-load plant and re-verify from scratch.

    With ``hold_aware`` (default) candidates must also tolerate the
    half-period hold lag of digital hosting at the switching frequency.
    """
    hold_delay = 0.5 / p.f_sw if hold_aware else None
    p_i = inner_current_plant(p, load)
    k_pc, k_ic, _ = design_inner_pi(
        p_i, pm_min=pm_inner, gm_min_db=gm_min_db, bw_min=bw_min,
        k_pc_grid=grids.get("k_pc_grid"), k_ic_grid=grids.get("k_ic_grid"),
        hold_delay=hold_delay)

    inner_closed = feedback(series(tf_to_ss(pi_tf(k_pc, k_ic)), p_i))   # i_ref -> i_inv
    outer_plant = series(inner_closed, output_admittance_plant(p, load))

    k_p, k_r, omega_c, _ = design_outer_pr(
        outer_plant, p.omega0, pm_min=pm_outer, gm_min_db=gm_min_db, bw_min=bw_min,
        k_p_grid=grids.get("k_p_grid"), k_r_grid=grids.get("k_r_grid"),
        omega_c_grid=grids.get("omega_c_grid"), hold_delay=hold_delay)

    ctrl = MultiLoopController(k_pc=k_pc, k_ic=k_ic, k_p=k_p,
                               k_r={h: float(v) for h, v in k_r.items()},
                               omega_c=omega_c)
    rep_i = margins(series(tf_to_ss(pi_tf(ctrl.k_pc, ctrl.k_ic)), p_i))
    rep_o = margins(series(tf_to_ss(pr_tf(ctrl.k_p, ctrl.k_r, ctrl.omega_c, p.omega0)),
                           outer_plant))
    ok = rep_i.meets(pm_inner, gm_min_db, bw_min) and rep_o.meets(pm_outer, gm_min_db, bw_min)
    notes = [] if ok else ["re-verified margins fell short of the requested spec"]
    return BaselineDesign(controller=ctrl, inner_margins=rep_i, outer_margins=rep_o,
                          spec_met=ok, notes=notes)


def baseline_controller_ss(ctrl: MultiLoopController, omega0: float) -> StateSpace:
    """Combined continuous controller: [v_ref, v_C, i_inv] -> v_inv.

    The outer PR turns the voltage error into a current reference; the
    inner PI turns the current error into the inverter voltage command.
    """
    pr = tf_to_ss(pr_tf(ctrl.k_p, ctrl.k_r, ctrl.omega_c, omega0))
    pi = tf_to_ss(pi_tf(ctrl.k_pc, ctrl.k_ic))
    n_r, n_i = pr.n_states, pi.n_states
    A = np.zeros((n_r + n_i, n_r + n_i))
    A[:n_r, :n_r] = pr.A
    A[n_r:, :n_r] = pi.B @ pr.C
    A[n_r:, n_r:] = pi.A
    B = np.zeros((n_r + n_i, 3))
    B[:n_r, 0] = pr.B[:, 0]
    B[:n_r, 1] = -pr.B[:, 0]
    B[n_r:, 0] = (pi.B @ pr.D)[:, 0]
    B[n_r:, 1] = -(pi.B @ pr.D)[:, 0]
    B[n_r:, 2] = -pi.B[:, 0]
    C = np.zeros((1, n_r + n_i))
    C[0, :n_r] = (pi.D @ pr.C)[0]
    C[0, n_r:] = pi.C[0]
    D = np.zeros((1, 3))
    D[0, 0] = float((pi.D @ pr.D)[0, 0])
    D[0, 1] = -float((pi.D @ pr.D)[0, 0])
    D[0, 2] = -float(pi.D[0, 0])
    return StateSpace(A, B, C, D)
