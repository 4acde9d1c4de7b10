"""Steady-state waveform metrics and frequency-response exports.

THD and fundamental tracking errors are computed from single-bin DFTs over
windows spanning an exact integer number of fundamental cycles (rectangular
window, exact bin alignment), matching how power-quality figures are
usually quoted.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .lti import freq_response
from .sim import Scenario, TimeSeries, simulate


class WindowError(ValueError):
    """Analysis window is not an integer number of fundamental cycles."""


def _window_samples(series: TimeSeries, f0: float, window, min_cycles: int):
    t0, t1 = window
    sl = series.window(t0, t1)
    n = sl.stop - sl.start
    cycles = (t1 - t0) * f0
    if abs(cycles - round(cycles)) > 1e-6 or round(cycles) < 1:
        raise WindowError(f"window spans {cycles:.6f} cycles; integer count required")
    if round(cycles) < min_cycles:
        raise WindowError(f"window spans {round(cycles)} cycles; at least {min_cycles} required")
    return sl, n, int(round(cycles))


def _dft_bin(x: np.ndarray, cycles: int, harmonic: int) -> complex:
    """Amplitude/phase phasor of harmonic h over an integer-cycle window."""
    n = x.size
    k = np.arange(n)
    w = np.exp(-2j * np.pi * harmonic * cycles * k / n)
    return 2.0 / n * np.sum(x * w)


def thd(series: TimeSeries, channel: str = "v_c", f0: float = 60.0,
        max_harmonic: int = 13, window=None, min_cycles: int = 5) -> float:
    """Total harmonic distortion in percent over an integer-cycle window.

    THD = 100*sqrt(sum_{h=2..max} |V_h|^2)/|V_1| with V_h the DFT bin at
    h*f0.  A fundamental below 1e-9 of the channel range raises (undefined
    THD).  ``min_cycles`` guards against windows too short to be steady
    state; the automatic per-segment analysis relaxes it to the segment
    length.
    """
    x_full = getattr(series, channel)
    if window is None:
        window = (series.t[0], series.t[-1] + series.dt)
    sl, n, cycles = _window_samples(series, f0, window, min_cycles)
    x = x_full[sl]
    v1 = abs(_dft_bin(x, cycles, 1))
    rng = np.max(np.abs(x)) if x.size else 0.0
    if v1 <= 1e-9 * max(rng, 1.0):
        raise WindowError("fundamental amplitude is vanishing; THD undefined")
    acc = 0.0
    for h in range(2, max_harmonic + 1):
        acc += abs(_dft_bin(x, cycles, h)) ** 2
    return 100.0 * np.sqrt(acc) / v1


def tracking_error(series: TimeSeries, f0: float = 60.0, window=None,
                   min_cycles: int = 5, phase_in_degrees: bool = False):
    """Fundamental magnitude and phase error of v_C against v_ref.

    Magnitude error: 100*(|Vc1|-|Vr1|)/|Vr1|.  Phase error: the wrapped
    fundamental phase difference (positive when the output lags) as percent
    of a full cycle, or in degrees with ``phase_in_degrees``.
    """
    if window is None:
        window = (series.t[0], series.t[-1] + series.dt)
    sl, n, cycles = _window_samples(series, f0, window, min_cycles)
    vc = _dft_bin(series.v_c[sl], cycles, 1)
    vr = _dft_bin(series.v_ref[sl], cycles, 1)
    if abs(vr) <= 1e-12:
        raise WindowError("reference fundamental is vanishing")
    mag_err = 100.0 * (abs(vc) - abs(vr)) / abs(vr)
    dphi = np.degrees(np.angle(vr) - np.angle(vc))
    dphi = (dphi + 180.0) % 360.0 - 180.0
    phase_err = dphi if phase_in_degrees else 100.0 * dphi / 360.0
    return float(mag_err), float(phase_err)


@dataclass
class MetricsReport:
    """Steady-state metrics of one analysis window."""

    window: tuple
    thd_pct: float
    mag_err_pct: float
    phase_err_pct: float
    harmonic_volts: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "window_s": list(self.window),
            "thd_pct": self.thd_pct,
            "mag_err_pct": self.mag_err_pct,
            "phase_err_pct": self.phase_err_pct,
            "harmonic_volts": dict(self.harmonic_volts),
        }


def window_metrics(series: TimeSeries, f0: float, window, max_harmonic: int = 13,
                   min_cycles: int = 3) -> MetricsReport:
    sl, n, cycles = _window_samples(series, f0, window, min_cycles)
    x = series.v_c[sl]
    harm = {h: float(abs(_dft_bin(x, cycles, h))) for h in range(1, max_harmonic + 1)}
    t = thd(series, "v_c", f0, max_harmonic, window, min_cycles=min_cycles)
    m, ph = tracking_error(series, f0, window, min_cycles=min_cycles)
    return MetricsReport(window=tuple(window), thd_pct=float(t),
                         mag_err_pct=m, phase_err_pct=ph, harmonic_volts=harm)


def steady_state_windows(scenario: Scenario, f0: float, cycles: int = 3):
    """Last ``cycles`` whole fundamental periods before each event and the end."""
    bounds = [e.time for e in scenario.events] + [scenario.t_end]
    span = cycles / f0
    windows = []
    for b in bounds:
        t0 = b - span
        if t0 >= -1e-12:
            windows.append((max(t0, 0.0), b))
    return windows


@dataclass
class ControllerComparison:
    names: list
    metrics: dict            # name -> list[MetricsReport]
    worst: dict              # name -> dict of worst-case figures
    winners: dict            # metric -> name | "tie"

    def table_text(self) -> str:
        out = io.StringIO()
        hdr = f"{'controller':<14}{'window (s)':<18}{'THD %':>9}{'mag err %':>12}{'phase err %':>13}"
        print(hdr, file=out)
        print("-" * len(hdr), file=out)
        for name in self.names:
            for rep in self.metrics[name]:
                w = f"{rep.window[0]:.3f}-{rep.window[1]:.3f}"
                print(f"{name:<14}{w:<18}{rep.thd_pct:>9.4f}{rep.mag_err_pct:>12.4f}"
                      f"{rep.phase_err_pct:>13.4f}", file=out)
        print("-" * len(hdr), file=out)
        for name in self.names:
            w = self.worst[name]
            print(f"{name:<14}{'worst-case':<18}{w['thd_pct']:>9.4f}{w['mag_err_pct']:>12.4f}"
                  f"{w['phase_err_pct']:>13.4f}", file=out)
        print(f"verdict: THD -> {self.winners['thd_pct']}, magnitude -> "
              f"{self.winners['mag_err_pct']}, phase -> {self.winners['phase_err_pct']}",
              file=out)
        return out.getvalue()


def compare_controllers(scenario: Scenario, controllers: dict, f0: float | None = None,
                        cycles: int = 3, max_harmonic: int = 13) -> ControllerComparison:
    """Simulate every controller on the same scenario and tabulate metrics.

    ``controllers`` maps name -> controller system.  Worst-case figures are
    taken over the steady-state windows; the verdict row names the winner
    of each metric (smaller magnitude wins).
    """
    if f0 is None:
        f0 = scenario.params.omega0 / (2 * np.pi)
    windows = steady_state_windows(scenario, f0, cycles)
    names = list(controllers)
    metrics = {}
    for name in names:
        try:
            series = simulate(scenario, controllers[name])
        except Exception as exc:
            raise RuntimeError(f"simulation failed for controller {name!r}: {exc}") from exc
        metrics[name] = [window_metrics(series, f0, w, max_harmonic, min_cycles=cycles)
                         for w in windows]
    worst = {}
    for name in names:
        reps = metrics[name]
        worst[name] = {
            "thd_pct": max(r.thd_pct for r in reps),
            "mag_err_pct": max(abs(r.mag_err_pct) for r in reps),
            "phase_err_pct": max(abs(r.phase_err_pct) for r in reps),
        }
    winners = {}
    for key in ("thd_pct", "mag_err_pct", "phase_err_pct"):
        vals = {name: worst[name][key] for name in names}
        ranked = sorted(vals.items(), key=lambda kv: kv[1])
        if len(ranked) > 1 and np.isclose(ranked[0][1], ranked[1][1], rtol=1e-9, atol=1e-12):
            winners[key] = "tie"
        else:
            winners[key] = ranked[0][0]
    return ControllerComparison(names=names, metrics=metrics, worst=worst, winners=winners)


def bode_export(systems: dict, omega) -> str:
    """CSV text with magnitude (dB) and unwrapped phase (deg) per named system."""
    omega = np.asarray(omega, dtype=float)
    cols = [("omega_rad_s", omega)]
    for name, sys in systems.items():
        fr = freq_response(sys, omega)
        cols.append((f"{name}_mag_db", fr.magnitude_db()[:, 0, 0]))
        cols.append((f"{name}_phase_deg", np.degrees(fr.phase_rad(unwrap=True)[:, 0, 0])))
    out = io.StringIO()
    print(",".join(name for name, _ in cols), file=out)
    data = np.column_stack([c for _, c in cols])
    for row in data:
        print(",".join(f"{v:.12g}" for v in row), file=out)
    return out.getvalue()
