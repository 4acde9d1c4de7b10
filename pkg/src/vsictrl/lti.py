"""Continuous-time LTI building blocks.

Transfer functions (polynomial coefficients in descending powers of s),
state-space realizations, frequency response, series/parallel/feedback
interconnection, and Tustin discretization.  Everything downstream
(plant models, weights, synthesis, simulation) is built on these types.

All objects are immutable values after construction and all operations
are pure functions, so they are safe to evaluate concurrently.
"""

from __future__ import annotations

import numpy as np

# Companion-form conditioning degrades quickly with polynomial degree;
# every composition in this toolkit stays far below this cap.
MAX_DEGREE = 30


def _as_poly(coeffs) -> np.ndarray:
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if c.ndim != 1 or c.size == 0:
        raise ValueError("polynomial coefficients must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(c)):
        raise ValueError("polynomial coefficients must be finite")
    return c


def _strip_leading_zeros(c: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return c[-1:]  # identically zero polynomial, keep one coefficient
    return c[nz[0]:]


class TransferFunction:
    """Rational SISO transfer function, coefficients in descending powers of s.

    The denominator is normalized to a unit leading coefficient at
    construction.  Only proper functions (deg num <= deg den) are accepted.
    """

    __slots__ = ("num", "den")

    def __init__(self, num, den):
        num = _strip_leading_zeros(_as_poly(num))
        den = _strip_leading_zeros(_as_poly(den))
        if den[0] == 0.0:
            raise ValueError("denominator is identically zero")
        if num.size > den.size:
            raise ValueError(
                f"improper transfer function: deg(num)={num.size - 1} > deg(den)={den.size - 1}"
            )
        if den.size - 1 > MAX_DEGREE:
            raise ValueError(f"polynomial degree {den.size - 1} exceeds the cap of {MAX_DEGREE}")
        # normalize: monic denominator
        self.num = num / den[0]
        self.den = den / den[0]
        self.num.setflags(write=False)
        self.den.setflags(write=False)

    @property
    def order(self) -> int:
        return self.den.size - 1

    def __repr__(self):
        return f"TransferFunction(num={self.num.tolist()}, den={self.den.tolist()})"

    def __call__(self, s):
        """Evaluate at complex s (scalar or array); poles evaluate to inf."""
        s = np.asarray(s, dtype=complex)
        n = np.polyval(self.num, s)
        d = np.polyval(self.den, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(d == 0, np.inf + 0j, n / np.where(d == 0, 1, d))
        return out

    def poles(self) -> np.ndarray:
        if self.order == 0:
            return np.array([], dtype=complex)
        return np.roots(self.den)

    def zeros(self) -> np.ndarray:
        if self.num.size <= 1:
            return np.array([], dtype=complex)
        return np.roots(self.num)

    def dcgain(self) -> float:
        val = self(0.0)
        return float(np.real(val)) if np.isfinite(val) else float("inf")

    # Rational arithmetic: used to compose weights and to spell out the
    # perturbed-plant formulas without going through state space.
    def _coerce(self, other):
        if isinstance(other, TransferFunction):
            return other
        if np.isscalar(other):
            return TransferFunction([float(other)], [1.0])
        return NotImplemented

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return TransferFunction(np.polymul(self.num, other.num), np.polymul(self.den, other.den))

    __rmul__ = __mul__

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        num = np.polyadd(np.polymul(self.num, other.den), np.polymul(other.num, self.den))
        return TransferFunction(num, np.polymul(self.den, other.den))

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(-self.num, self.den)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return TransferFunction(np.polymul(self.num, other.den), np.polymul(self.den, other.num))

    def __rtruediv__(self, other):
        other = self._coerce(other)
        return other / self

    def feedback(self, other=1.0, sign: float = -1.0) -> "TransferFunction":
        """Close a feedback loop around self: self / (1 - sign*self*other)."""
        other = self._coerce(other)
        num = np.polymul(self.num, other.den)
        den = np.polyadd(
            np.polymul(self.den, other.den), -sign * np.polymul(self.num, other.num)
        )
        return TransferFunction(num, den)


class StateSpace:
    """State-space realization dx/dt = Ax + Bu, y = Cx + Du.

    ``dt=None`` marks a continuous-time system; a positive ``dt`` marks a
    discrete-time system with that sample period (produced by
    :func:`c2d_tustin`).  Zero-state (static-gain) systems are supported
    with empty A.
    """

    __slots__ = ("A", "B", "C", "D", "dt")

    def __init__(self, A, B, C, D, dt: float | None = None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if A.size == 0:
            A = A.reshape(0, 0)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        p, m = D.shape
        if B.size == 0:
            B = B.reshape(n, m)
        if C.size == 0:
            C = C.reshape(p, n)
        if B.shape != (n, m):
            raise ValueError(f"B must be {(n, m)}, got {B.shape}")
        if C.shape != (p, n):
            raise ValueError(f"C must be {(p, n)}, got {C.shape}")
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} contains non-finite entries")
        if dt is not None and dt <= 0:
            raise ValueError("dt must be positive for discrete systems")
        self.A, self.B, self.C, self.D = A, B, C, D
        self.dt = dt
        for M in (self.A, self.B, self.C, self.D):
            M.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    def __repr__(self):
        kind = "continuous" if self.dt is None else f"dt={self.dt}"
        return (
            f"StateSpace(n={self.n_states}, inputs={self.n_inputs}, "
            f"outputs={self.n_outputs}, {kind})"
        )

    def __call__(self, s):
        """Transfer matrix at one complex point: C (sI - A)^-1 B + D."""
        if self.n_states == 0:
            return self.D.astype(complex)
        M = s * np.eye(self.n_states) - self.A
        try:
            X = np.linalg.solve(M, self.B)
        except np.linalg.LinAlgError:
            return np.full((self.n_outputs, self.n_inputs), np.inf + 0j)
        return self.C @ X + self.D

    def poles(self) -> np.ndarray:
        if self.n_states == 0:
            return np.array([], dtype=complex)
        return np.linalg.eigvals(self.A)

    def dcgain(self) -> np.ndarray:
        if self.dt is None:
            return np.real_if_close(self(0.0))
        return np.real_if_close(self(1.0))

    def select(self, outputs, inputs) -> "StateSpace":
        """Subsystem with the given output/input index lists (states kept)."""
        outputs = np.atleast_1d(outputs)
        inputs = np.atleast_1d(inputs)
        return StateSpace(
            self.A, self.B[:, inputs], self.C[outputs, :], self.D[np.ix_(outputs, inputs)],
            dt=self.dt,
        )


class FrequencyResponse:
    """Sampled frequency response on a strictly increasing grid (rad/s).

    ``values[k, i, j]`` is the response from input j to output i at
    ``omega[k]``.  Samples landing exactly on an imaginary-axis pole are
    flagged and carry infinite magnitude.
    """

    __slots__ = ("omega", "values", "singular")

    def __init__(self, omega, values, singular=None):
        omega = np.asarray(omega, dtype=float)
        values = np.asarray(values, dtype=complex)
        if omega.ndim != 1 or omega.size == 0:
            raise ValueError("frequency grid must be a nonempty 1-D array")
        if np.any(np.diff(omega) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if values.ndim == 1:
            values = values[:, None, None]
        if values.shape[0] != omega.size:
            raise ValueError("one response sample required per grid point")
        if singular is None:
            singular = ~np.all(np.isfinite(values.reshape(omega.size, -1)), axis=1)
        self.omega = omega
        self.values = values
        self.singular = np.asarray(singular, dtype=bool)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def magnitude_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.values))

    def phase_rad(self, unwrap: bool = True) -> np.ndarray:
        ph = np.angle(self.values)
        return np.unwrap(ph, axis=0) if unwrap else ph

    def siso(self) -> np.ndarray:
        """1-D complex samples for a single-output single-input response."""
        if self.values.shape[1:] != (1, 1):
            raise ValueError("response is not SISO")
        return self.values[:, 0, 0]


def tf_to_ss(tf: TransferFunction) -> StateSpace:
    """Controllable companion realization of a proper transfer function.

    The polynomials are first frequency-normalized by the geometric mean of
    the pole magnitudes (a deterministic similarity scaling) so the companion
    form stays well conditioned; the realization order equals the denominator
    degree and no pole-zero cancellation is attempted.
    """
    if not isinstance(tf, TransferFunction):
        raise TypeError("tf_to_ss expects a TransferFunction")
    n = tf.order
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[tf.num[0]]])

    roots = np.roots(tf.den)
    mags = np.abs(roots[np.abs(roots) > 0])
    alpha = float(np.exp(np.mean(np.log(mags)))) if mags.size else 1.0
    alpha = min(max(alpha, 1e-9), 1e12)

    # substitute s = alpha*q: coefficient k (descending) picks up alpha^(deg-k)
    powers = alpha ** np.arange(n, -1, -1, dtype=float)
    den = tf.den * powers
    den = den / den[0]
    b = np.zeros(n + 1)
    b[n + 1 - tf.num.size:] = tf.num * powers[n + 1 - tf.num.size:] / (tf.den[0] * powers[0])

    d = b[0]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[::-1][:-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    # state k carries q^k of the input chain; undo the scaling via A,B *= alpha
    C = (b[1:][::-1] - den[1:][::-1] * d)[None, :]
    return StateSpace(alpha * A, alpha * B, C, [[d]])


def _as_ss(sys) -> StateSpace:
    if isinstance(sys, StateSpace):
        return sys
    if isinstance(sys, TransferFunction):
        return tf_to_ss(sys)
    raise TypeError(f"expected StateSpace or TransferFunction, got {type(sys).__name__}")


def freq_response(sys, omega) -> FrequencyResponse:
    """Evaluate a system on a frequency grid (rad/s).

    Continuous systems are evaluated at s = j*omega; discrete ones at
    z = exp(j*omega*dt).  Grid points falling on an imaginary-axis pole
    are flagged rather than raising.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.size == 0:
        raise ValueError("frequency grid must be nonempty")
    if np.any(omega < 0):
        raise ValueError("frequencies must be nonnegative (rad/s)")

    if isinstance(sys, TransferFunction):
        s = 1j * omega
        vals = sys(s)[:, None, None]
        return FrequencyResponse(omega, vals)

    ss = _as_ss(sys)
    pts = 1j * omega if ss.dt is None else np.exp(1j * omega * ss.dt)
    vals = np.empty((omega.size, ss.n_outputs, ss.n_inputs), dtype=complex)
    for k, s in enumerate(pts):
        vals[k] = ss(s)
    return FrequencyResponse(omega, vals)


def poles(sys) -> np.ndarray:
    """Poles with multiplicity: eigenvalues of A, or denominator roots."""
    if isinstance(sys, TransferFunction):
        return sys.poles()
    return _as_ss(sys).poles()


def is_stable(sys, margin: float = 0.0) -> bool:
    """True if every pole has real part < -margin (continuous-time)."""
    p = poles(sys)
    if p.size == 0:
        return True
    return bool(np.max(p.real) < -margin)


def series(a, b) -> StateSpace:
    """Cascade: output of ``a`` feeds ``b``; transfer equals b*a."""
    a, b = _as_ss(a), _as_ss(b)
    if b.n_inputs != a.n_outputs:
        raise ValueError(
            f"series: {a.n_outputs} output(s) of the first system do not match "
            f"{b.n_inputs} input(s) of the second"
        )
    na, nb = a.n_states, b.n_states
    A = np.block([
        [a.A, np.zeros((na, nb))],
        [b.B @ a.C, b.A],
    ])
    B = np.vstack([a.B, b.B @ a.D])
    C = np.hstack([b.D @ a.C, b.C])
    D = b.D @ a.D
    return StateSpace(A, B, C, D)


def parallel(a, b) -> StateSpace:
    """Shared input, summed outputs."""
    a, b = _as_ss(a), _as_ss(b)
    if a.n_inputs != b.n_inputs or a.n_outputs != b.n_outputs:
        raise ValueError("parallel: systems must share input and output dimensions")
    na, nb = a.n_states, b.n_states
    A = np.block([
        [a.A, np.zeros((na, nb))],
        [np.zeros((nb, na)), b.A],
    ])
    B = np.vstack([a.B, b.B])
    C = np.hstack([a.C, b.C])
    D = a.D + b.D
    return StateSpace(A, B, C, D)


def feedback(a, b=None, sign: float = -1.0) -> StateSpace:
    """Close a loop: forward path ``a``, feedback path ``b`` (unity if None).

    With the default negative sign, y = a(u - b(y)).  Raises if the loop is
    ill-posed (I - sign*Da*Db singular).
    """
    a = _as_ss(a)
    b = _as_ss(b) if b is not None else StateSpace(
        np.zeros((0, 0)), np.zeros((0, a.n_outputs)), np.zeros((a.n_inputs, 0)),
        np.eye(a.n_inputs, a.n_outputs),
    )
    if b.n_inputs != a.n_outputs or b.n_outputs != a.n_inputs:
        raise ValueError("feedback: dimensions of forward and feedback paths do not match")
    na, nb = a.n_states, b.n_states
    M = np.eye(a.n_outputs) - sign * (a.D @ b.D)
    if np.linalg.matrix_rank(M) < M.shape[0] or abs(np.linalg.det(M)) < 1e-300:
        raise ValueError("feedback loop is ill-posed (algebraic loop is singular)")
    Minv = np.linalg.inv(M)
    # y = Minv @ (Ca xa + sign*Da Cb xb + Da u)
    Cy = Minv @ np.hstack([a.C, sign * (a.D @ b.C)])
    Dy = Minv @ a.D
    A = np.block([
        [a.A, sign * (a.B @ b.C)],
        [np.zeros((nb, na)), b.A],
    ])
    A = A + np.vstack([sign * (a.B @ b.D), b.B]) @ Cy
    B = np.vstack([a.B, np.zeros((nb, a.n_inputs))]) + np.vstack([sign * (a.B @ b.D), b.B]) @ Dy
    return StateSpace(A, B, Cy, Dy)


def interconnect(kind: str, a, b, sign: float = -1.0) -> StateSpace:
    """Series/parallel/feedback composition of two systems as a StateSpace."""
    if kind == "series":
        return series(a, b)
    if kind == "parallel":
        return parallel(a, b)
    if kind == "feedback":
        return feedback(a, b, sign=sign)
    raise ValueError(f"unknown interconnection kind {kind!r}")


def c2d_tustin(sys, period: float) -> StateSpace:
    """Bilinear (Tustin) discretization with sample period in seconds.

    Exact in the transfer-function sense: the discrete response at
    z = exp(j*w*T) equals the continuous response at (2/T)*tan(w*T/2).
    """
    ss = _as_ss(sys)
    if ss.dt is not None:
        raise ValueError("system is already discrete")
    if period <= 0:
        raise ValueError("sample period must be positive")
    n = ss.n_states
    if n == 0:
        return StateSpace(ss.A, ss.B, ss.C, ss.D, dt=period)
    a = period / 2.0
    lam = a * np.linalg.eigvals(ss.A)
    # singular exactly when A has an eigenvalue at 2/period
    if np.any(np.abs(1.0 - lam) <= 1e-9 * (1.0 + np.abs(lam))):
        raise ValueError("Tustin singularity: continuous pole at 2/period")
    M = np.eye(n) - a * ss.A
    Minv = np.linalg.inv(M)
    Ad = Minv @ (np.eye(n) + a * ss.A)
    Bd = Minv @ ss.B * period
    Cd = ss.C @ Minv
    Dd = ss.D + a * (ss.C @ Minv @ ss.B)
    return StateSpace(Ad, Bd, Cd, Dd, dt=period)
