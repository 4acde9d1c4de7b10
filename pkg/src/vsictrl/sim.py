"""Closed-loop time-domain simulation of the averaged inverter.

The LC filter (plus an optional parallel R/L load branch) is integrated
with fixed-step RK4 while the controller runs as a discrete system updated
once per switching period and held between updates (split-rate
co-simulation).  The inverter voltage command is clamped to the DC-link
magnitude, standing in for the modulator limits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lti import StateSpace, c2d_tustin
from .vsi import VsiParameters, nominal_load_values

DEFAULT_OVERSAMPLE = 20


@dataclass(frozen=True)
class Event:
    """Scheduled change applied at ``time``.

    ``rl_load``: (R, L) of the parallel load branch; R=None removes the
    resistor, L=None removes the inductor, the whole field None leaves the
    branch unchanged.  ``harmonic_bank``: new bank tuple, () clears, None
    leaves unchanged.  ``vref_scale``: new reference amplitude factor.
    """

    time: float
    rl_load: tuple | None = None
    harmonic_bank: tuple | None = None
    vref_scale: float | None = None


@dataclass(frozen=True)
class Scenario:
    params: VsiParameters
    events: tuple = ()
    t_end: float = 0.3
    vref_scale0: float = 1.0
    rl_load0: tuple = (None, None)
    harmonic_bank0: tuple = ()
    oversample: int = DEFAULT_OVERSAMPLE

    def __post_init__(self):
        times = [e.time for e in self.events]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.t_end):
            raise ValueError("event times must lie within [0, t_end]")
        if self.t_end <= 0 or self.oversample < 1:
            raise ValueError("t_end must be positive and oversample >= 1")


@dataclass
class TimeSeries:
    """Uniformly sampled traces of one simulation run."""

    dt: float
    t: np.ndarray
    v_ref: np.ndarray
    v_c: np.ndarray
    i_inv: np.ndarray
    i_grid: np.ndarray
    v_inv: np.ndarray

    def __post_init__(self):
        n = self.t.size
        for name in ("v_ref", "v_c", "i_inv", "i_grid", "v_inv"):
            if getattr(self, name).size != n:
                raise ValueError("all channels must have equal length")

    def window(self, t0: float, t1: float) -> slice:
        """Index slice covering [t0, t1) on the sample grid."""
        i0 = int(round(t0 / self.dt))
        i1 = int(round(t1 / self.dt))
        if not (0 <= i0 < i1 <= self.t.size):
            raise ValueError(f"window [{t0}, {t1}) outside the series")
        return slice(i0, i1)

    def to_csv(self, path):
        header = "t,v_ref,v_C,i_inv,i_grid,v_inv"
        data = np.column_stack([self.t, self.v_ref, self.v_c,
                                self.i_inv, self.i_grid, self.v_inv])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.12g")


def harmonic_bank_current(bank, t, omega0: float):
    """Sum of sin components: sum_h A_h * sin(h*omega0*t + phi_h)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for h, amp, phase in bank:
        out = out + amp * np.sin(h * omega0 * t + phase)
    return out


def default_harmonic_bank(p: VsiParameters) -> tuple:
    """Rectifier-like odd-harmonic current bank at the rated fundamental.

    Fundamental at rated apparent current, with 20/12/8/5/4/3 percent at
    the 3rd..13th harmonics and zero phases.
    """
    i1 = np.sqrt(2.0) * p.s_rated / p.v_rated
    fractions = {3: 0.20, 5: 0.12, 7: 0.08, 9: 0.05, 11: 0.04, 13: 0.03}
    bank = [(1, i1, 0.0)]
    bank += [(h, frac * i1, 0.0) for h, frac in sorted(fractions.items())]
    return tuple(bank)


def default_event_schedule(p: VsiParameters, vref_dip: float = 0.8,
                           second_load: tuple | None = None,
                           bank: tuple | None = None,
                           t_end: float = 0.3,
                           oversample: int = DEFAULT_OVERSAMPLE) -> Scenario:
    """The reference test sequence: no-load start, full-load step at 50 ms,
    reactive drop at 100 ms, combined P/Q change at 150 ms, reference dip at
    200 ms, and back to no-load at 250 ms."""
    r_n, l_n = nominal_load_values(p)
    if second_load is None:
        second_load = (r_n / 2.0, l_n)
    if bank is None:
        bank = default_harmonic_bank(p)
    events = (
        Event(0.05, rl_load=(r_n, l_n), harmonic_bank=bank),
        Event(0.10, rl_load=(r_n, None)),
        Event(0.15, rl_load=second_load),
        Event(0.20, vref_scale=vref_dip),
        Event(0.25, rl_load=(None, None), harmonic_bank=()),
    )
    events = tuple(e for e in events if e.time < t_end)
    return Scenario(params=p, events=events, t_end=t_end, oversample=oversample)


def hosted_controller(controller: StateSpace, period: float) -> StateSpace:
    """Discrete 3-input controller [v_ref, v_C, i_inv] -> v_inv at ``period``.

    Continuous controllers are Tustin-discretized.  Single-input controllers
    are taken to act on the error e = v_ref - v_C.
    """
    k = controller
    if k.n_outputs != 1:
        raise ValueError("controller must have a single output (v_inv)")
    if k.n_inputs == 1:
        T = np.array([[1.0, -1.0, 0.0]])
        k = StateSpace(k.A, k.B @ T, k.C, k.D @ T, dt=k.dt)
    elif k.n_inputs != 3:
        raise ValueError("controller must take 1 input (error) or 3 inputs "
                         "(v_ref, v_C, i_inv)")
    if k.dt is None:
        k = c2d_tustin(k, period)
    elif abs(k.dt - period) > 1e-12 * period:
        raise ValueError(f"controller sample period {k.dt} does not match 1/f_sw {period}")
    return k


class SimulationDiverged(RuntimeError):
    def __init__(self, t_last: float):
        super().__init__(f"simulation diverged; last good time {t_last:.6g} s")
        self.t_last = t_last


def _rk4_matrices(A: np.ndarray, h: float):
    n = A.shape[0]
    eye = np.eye(n)
    hA = h * A
    E = eye + hA @ (eye + hA @ (eye / 2 + hA @ (eye / 6 + hA / 24)))
    G1 = eye + hA @ (eye + hA @ (eye / 2 + hA / 4))
    G2 = 4 * eye + hA @ (2 * eye + hA / 2)
    G3 = eye
    return E, G1, G2, G3


def simulate(scenario: Scenario, controller: StateSpace,
             divergence_limit: float = 1e6, x0=None,
             preroll: float = 0.0) -> TimeSeries:
    """Run the event schedule and return sampled traces.

    Plant states (i_inv, v_C, and the load-inductor current when present)
    advance by RK4 at 1/(oversample*f_sw); the controller updates every
    1/f_sw with zero-order hold; v_inv is clamped to +/-V_dc.  ``x0`` sets
    the initial (i_inv, v_C); ``preroll`` runs that many seconds (a whole
    number of fundamental cycles) under the initial configuration first so
    the recorded run starts from steady state.
    """
    p = scenario.params
    t_ctrl = 1.0 / p.f_sw
    m = scenario.oversample
    h = t_ctrl / m
    n_steps = int(round(scenario.t_end / h))
    if abs(n_steps * h - scenario.t_end) > 1e-9 * scenario.t_end:
        raise ValueError("t_end must be a multiple of the plant step 1/(oversample*f_sw)")
    n_periods = n_steps // m
    if n_periods * m != n_steps:
        raise ValueError("t_end must span whole controller periods")

    K = hosted_controller(controller, t_ctrl)
    vref_peak = np.sqrt(2.0) * p.v_rated

    # segment boundaries on the controller-period grid
    seg_bounds = [0.0] + [e.time for e in scenario.events] + [scenario.t_end]
    for tb in seg_bounds:
        k = tb / h
        if abs(k - round(k)) > 1e-6:
            raise ValueError(f"event time {tb} is not aligned with the plant step")

    t = np.arange(n_steps + 1) * h
    v_ref = np.empty(n_steps + 1)
    v_c = np.empty(n_steps + 1)
    i_inv = np.empty(n_steps + 1)
    i_grid = np.empty(n_steps + 1)
    v_inv_tr = np.empty(n_steps + 1)

    r_load, l_load = scenario.rl_load0
    bank = tuple(scenario.harmonic_bank0)
    vref_scale = scenario.vref_scale0

    if preroll > 0.0:
        cycles = preroll * p.omega0 / (2 * np.pi)
        if abs(cycles - round(cycles)) > 1e-9 \
                or abs(preroll / t_ctrl - round(preroll / t_ctrl)) > 1e-9:
            raise ValueError("preroll must span whole fundamental cycles and "
                             "controller periods")
        shifted = replace(
            scenario, t_end=scenario.t_end + preroll,
            events=tuple(replace(e, time=e.time + preroll) for e in scenario.events))
        full = simulate(shifted, controller, divergence_limit=divergence_limit, x0=x0)
        i0 = int(round(preroll / full.dt))
        return TimeSeries(dt=full.dt, t=full.t[i0:] - preroll,
                          v_ref=full.v_ref[i0:], v_c=full.v_c[i0:],
                          i_inv=full.i_inv[i0:], i_grid=full.i_grid[i0:],
                          v_inv=full.v_inv[i0:])

    x_p = np.zeros(2) if x0 is None else np.asarray(x0, dtype=float).copy()
    i_l = 0.0               # parallel-branch inductor current
    xc = np.zeros(K.n_states)
    u_held = 0.0

    events = list(scenario.events)
    ev_idx = 0
    step = 0

    while step < n_steps:
        while ev_idx < len(events) and abs(events[ev_idx].time - step * h) < h / 2:
            ev = events[ev_idx]
            if ev.rl_load is not None:
                r_new, l_new = ev.rl_load
                if l_new is not None and l_load is None:
                    i_l = 0.0  # branch freshly connected carries no current
                r_load, l_load = r_new, l_new
            if ev.harmonic_bank is not None:
                bank = tuple(ev.harmonic_bank)
            if ev.vref_scale is not None:
                vref_scale = float(ev.vref_scale)
            ev_idx += 1

        seg_end_t = events[ev_idx].time if ev_idx < len(events) else scenario.t_end
        seg_end = int(round(seg_end_t / h))
        n_seg = seg_end - step

        has_l = l_load is not None
        nx = 3 if has_l else 2
        A = np.zeros((nx, nx))
        A[0, 0] = -p.r_f / p.l_f
        A[0, 1] = -1.0 / p.l_f
        A[1, 0] = 1.0 / p.c_f
        if r_load is not None:
            A[1, 1] -= 1.0 / (r_load * p.c_f)
        if has_l:
            A[1, 2] = -1.0 / p.c_f
            A[2, 1] = 1.0 / l_load
        b_u = np.zeros(nx)
        b_u[0] = 1.0 / p.l_f
        b_d = np.zeros(nx)
        b_d[1] = -1.0 / p.c_f

        E, G1, G2, G3 = _rk4_matrices(A, h)
        M_u = (h / 6.0) * (G1 + G2 + G3) @ b_u
        # bank current at the substep and half-step times of this segment
        tt = (step + np.arange(2 * n_seg + 1) * 0.5) * h
        d = harmonic_bank_current(bank, tt, p.omega0)
        cb = (h / 6.0) * (np.outer(d[0:-1:2], G1 @ b_d)
                          + np.outer(d[1::2], G2 @ b_d)
                          + np.outer(d[2::2], G3 @ b_d))

        x = np.zeros(nx)
        x[:2] = x_p
        if has_l:
            x[2] = i_l

        local = 0
        while local < n_seg:
            t_now = (step + local) * h
            if (step + local) % m == 0:
                vr = vref_peak * vref_scale * np.sin(p.omega0 * t_now)
                y = np.array([vr, x[1], x[0]])
                u_raw = float((K.C @ xc + K.D @ y)[0])
                xc = K.A @ xc + K.B @ y
                u_held = float(np.clip(u_raw, -p.v_dc, p.v_dc))
            idx = step + local
            v_c[idx] = x[1]
            i_inv[idx] = x[0]
            v_inv_tr[idx] = u_held
            ib = d[2 * local]
            i_grid[idx] = ib + (x[1] / r_load if r_load is not None else 0.0) \
                + (x[2] if has_l else 0.0)
            x = E @ x + M_u * u_held + cb[local]
            local += 1
            if (step + local) % m == 0:
                worst = max(np.max(np.abs(x)),
                            np.max(np.abs(xc)) if xc.size else 0.0)
                if not np.isfinite(worst) or worst > divergence_limit:
                    raise SimulationDiverged((step + local) * h)

        x_p = x[:2].copy()
        i_l = float(x[2]) if has_l else 0.0
        step = seg_end

    # final sample
    v_c[n_steps] = x_p[1]
    i_inv[n_steps] = x_p[0]
    v_inv_tr[n_steps] = u_held
    ib_end = harmonic_bank_current(bank, np.array([scenario.t_end]), p.omega0)[0]
    i_grid[n_steps] = ib_end + (x_p[1] / r_load if r_load is not None else 0.0) \
        + (i_l if l_load is not None else 0.0)

    # the reference trace is analytic; rebuild it segment-wise
    scale = np.full(n_steps + 1, scenario.vref_scale0)
    for ev in scenario.events:
        if ev.vref_scale is not None:
            scale[int(round(ev.time / h)):] = ev.vref_scale
    v_ref[:] = vref_peak * scale * np.sin(p.omega0 * t)

    return TimeSeries(dt=h, t=t, v_ref=v_ref, v_c=v_c, i_inv=i_inv,
                      i_grid=i_grid, v_inv=v_inv_tr)
