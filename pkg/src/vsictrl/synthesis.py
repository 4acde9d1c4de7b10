"""Numerical synthesis engines.

Dense, dependency-light implementations of the machinery needed to design
and certify the voltage controller:

* Lyapunov and algebraic Riccati solvers (Schur-subspace based),
* H-infinity norm by Hamiltonian imaginary-eigenvalue bisection,
* output-feedback H-infinity synthesis by gamma-iteration over the two
  Riccati feasibility conditions, returning the central controller,
* balanced truncation with the 2*sum(discarded HSV) error bound,
* a small-gain robust-stability verdict over sampled uncertainty blocks.

All functions are pure; matrices are never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lti import StateSpace, TransferFunction, _as_ss, freq_response


class SynthesisError(RuntimeError):
    """Numerical synthesis step failed (no stabilizing solution, infeasible gamma, ...)."""


# ---------------------------------------------------------------------------
# Lyapunov / Riccati
# ---------------------------------------------------------------------------

def solve_lyapunov(A, Q) -> np.ndarray:
    """Solve A P + P A^T + Q = 0 for symmetric P (A Hurwitz, Q symmetric).

    Complex-Schur reduction of A followed by column back-substitution.
    The residual is checked against 1e-10 * (||A||*||P|| + ||Q||).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise ValueError("A and Q must be square matrices of the same size")
    if not np.allclose(Q, Q.T, rtol=1e-10, atol=1e-12 * max(1.0, np.linalg.norm(Q))):
        raise ValueError("Q must be symmetric")
    if n == 0:
        return np.zeros((0, 0))
    ev = np.linalg.eigvals(A)
    if np.max(ev.real) >= 0:
        raise ValueError(f"A is not Hurwitz (max real part {np.max(ev.real):.3e})")

    T, U = sla.schur(A, output="complex")
    Qt = U.conj().T @ Q @ U
    Y = np.zeros((n, n), dtype=complex)
    # T Y + Y T^H = -Qt, columns solved from the last one backwards
    for k in range(n - 1, -1, -1):
        rhs = -Qt[:, k]
        if k < n - 1:
            rhs = rhs - Y[:, k + 1:] @ T[k, k + 1:].conj()
        Tk = T + np.conj(T[k, k]) * np.eye(n)
        Y[:, k] = sla.solve_triangular(Tk, rhs, lower=False)
    P = (U @ Y @ U.conj().T).real
    P = (P + P.T) / 2.0

    res = np.linalg.norm(A @ P + P @ A.T + Q, "fro")
    scale = np.linalg.norm(A, "fro") * np.linalg.norm(P, "fro") + np.linalg.norm(Q, "fro")
    if res > 1e-10 * max(scale, 1e-300):
        raise SynthesisError(f"Lyapunov residual {res:.3e} exceeds tolerance for scale {scale:.3e}")
    return P


def _balance_realization(A, B, C):
    """Diagonal state scaling equalizing row/column norms of [A B; C 0].

    Powers of two only, so the transform is exact in floating point.
    Returns scaled copies (A, B, C) and the scale vector d (x_new = x/d).
    """
    A = A.copy()
    B = B.copy()
    C = C.copy()
    n = A.shape[0]
    d = np.ones(n)
    for _ in range(50):
        converged = True
        for i in range(n):
            c = np.sum(np.abs(A[:, i])) - abs(A[i, i]) + np.sum(np.abs(C[:, i]))
            r = np.sum(np.abs(A[i, :])) - abs(A[i, i]) + np.sum(np.abs(B[i, :]))
            if c <= 0.0 or r <= 0.0:
                continue
            f = 2.0 ** round(np.log2(np.sqrt(r / c)))
            if f != 1.0:
                A[:, i] *= f
                A[i, :] /= f
                B[i, :] /= f
                C[:, i] *= f
                d[i] *= f
                if f > 2.0 or f < 0.5:
                    converged = False
        if converged:
            break
    return A, B, C, d


def _hamiltonian_residual(H, X) -> float:
    n = X.shape[0]
    H11, H12, H21 = H[:n, :n], H[:n, n:], H[n:, :n]
    R = H21 - H11.T @ X - X @ H11 - X @ H12 @ X
    return R


def _stable_invariant_solution(H, what: str) -> np.ndarray:
    """X = U21 U11^-1 from the stable invariant subspace of a 2n x 2n Hamiltonian.

    The raw Schur solution is polished by Newton steps (Lyapunov solves on
    the closed-loop matrix) until the algebraic-Riccati residual stops
    improving.
    """
    n2 = H.shape[0]
    n = n2 // 2
    ev = np.linalg.eigvals(H)
    axis_dist = np.abs(ev.real) / np.maximum(1.0, np.abs(ev))
    if np.min(axis_dist) < 1e-9:
        raise SynthesisError(f"{what}: Hamiltonian has imaginary-axis eigenvalues, "
                             "no stabilizing solution")
    T, Z, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError(f"{what}: stable subspace has dimension {sdim}, expected {n}")
    U11 = Z[:n, :n]
    U21 = Z[n:, :n]
    cond = np.linalg.cond(U11)
    if not np.isfinite(cond) or cond > 1e13:
        raise SynthesisError(f"{what}: stabilizing solution is singular/ill-conditioned "
                             f"(cond {cond:.2e})")
    X = sla.solve(U11.T, U21.T).T
    X = (X + X.T) / 2.0

    # Newton polish: Ac' dX + dX Ac + residual = 0 with Ac = H11 + H12 X
    H11, H12 = H[:n, :n], H[:n, n:]
    best = np.linalg.norm(_hamiltonian_residual(H, X), "fro")
    for _ in range(4):
        if best <= 1e-14 * max(1.0, np.linalg.norm(X, "fro")):
            break
        Ac = H11 + H12 @ X
        if np.max(np.linalg.eigvals(Ac).real) >= 0:
            break
        R = _hamiltonian_residual(H, X)
        try:
            dX = solve_lyapunov(Ac.T, -(R + R.T) / 2.0)
        except (SynthesisError, ValueError):
            break
        Xn = (X + dX + (X + dX).T) / 2.0
        rn = np.linalg.norm(_hamiltonian_residual(H, Xn), "fro")
        if rn >= best:
            break
        X, best = Xn, rn
    return X


def _check_stabilizable(A, B, label: str):
    """PBH test on every closed-right-half-plane eigenvalue."""
    ev = np.linalg.eigvals(A)
    scale = np.linalg.norm(A) + np.linalg.norm(B) + 1.0
    for lam in ev:
        if lam.real >= -1e-9 * max(1.0, abs(lam)):
            M = np.hstack([A - lam * np.eye(A.shape[0]), B])
            if np.linalg.svd(M, compute_uv=False)[-1] < 1e-10 * scale:
                raise ValueError(f"{label}: mode at {lam:.4g} is not controllable")


def solve_care(A, B, Q, R) -> np.ndarray:
    """Stabilizing solution of A^T X + X A - X B R^-1 B^T X + Q = 0.

    R must be symmetric positive definite and (A, B) stabilizable.  Solved by
    the ordered real Schur decomposition of the associated Hamiltonian.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError("B row count must match A")
    if not np.allclose(Q, Q.T, rtol=1e-10, atol=1e-12 * max(1.0, np.linalg.norm(Q))):
        raise ValueError("Q must be symmetric")
    try:
        sla.cholesky(R)
    except sla.LinAlgError:
        raise ValueError("R must be symmetric positive definite") from None
    _check_stabilizable(A, B, "(A, B)")

    G = B @ sla.solve(R, B.T, assume_a="pos")
    H = np.block([[A, -G], [-Q, -A.T]])
    X = _stable_invariant_solution(H, "CARE")

    res = np.linalg.norm(A.T @ X + X @ A - X @ G @ X + Q, "fro")
    scale = max(1.0, np.linalg.norm(X, "fro")) * max(1.0, np.linalg.norm(A, "fro"))
    if res > 1e-8 * scale:
        raise SynthesisError(f"CARE residual {res:.3e} too large (scale {scale:.3e})")
    cl = np.linalg.eigvals(A - G @ X)
    if np.max(cl.real) >= 0:
        raise SynthesisError("CARE solution is not stabilizing")
    return X


# ---------------------------------------------------------------------------
# H-infinity norm
# ---------------------------------------------------------------------------

def _sigma_max_at(ss: StateSpace, w: float) -> float:
    M = ss(1j * w)
    if not np.all(np.isfinite(M)):
        return np.inf
    return float(np.linalg.svd(M, compute_uv=False)[0]) if M.size else 0.0


def hankel_singular_values(sys) -> np.ndarray:
    """Hankel singular values of a stable system, sorted descending."""
    ss = _as_ss(sys)
    if ss.n_states == 0:
        return np.zeros(0)
    A, B, C, _ = _balance_realization(ss.A, ss.B, ss.C)
    Wc = solve_lyapunov(A, B @ B.T)
    Wo = solve_lyapunov(A.T, C.T @ C)
    ev = np.linalg.eigvals(Wc @ Wo)
    hsv = np.sqrt(np.clip(ev.real, 0.0, None))
    return np.sort(hsv)[::-1]


def hinf_norm(sys, tol: float = 1e-8) -> float:
    """H-infinity norm of a continuous LTI system to relative tolerance ``tol``.

    Bisection on gamma, testing for imaginary-axis eigenvalues of the
    associated Hamiltonian.  Unstable (or marginally stable) systems report
    ``inf`` rather than raising.
    """
    ss = _as_ss(sys)
    if ss.dt is not None:
        raise ValueError("hinf_norm expects a continuous-time system")
    D = ss.D
    sig_d = float(np.linalg.svd(D, compute_uv=False)[0]) if D.size else 0.0
    if ss.n_states == 0:
        return sig_d
    Ab, Bb, Cb, _ = _balance_realization(ss.A, ss.B, ss.C)
    ss = StateSpace(Ab, Bb, Cb, D)
    ev = np.linalg.eigvals(ss.A)
    if np.max(ev.real / np.maximum(1.0, np.abs(ev))) >= -1e-12:
        return np.inf

    # lower bound from structured probes: DC, feedthrough, pole resonances
    probes = [0.0] + [abs(lam.imag) for lam in ev if abs(lam.imag) > 0]
    wmax = max(1.0, np.max(np.abs(ev)))
    probes += list(np.logspace(-2, np.log10(10 * wmax), 40))
    lo = max([sig_d] + [_sigma_max_at(ss, w) for w in probes])

    hsv = hankel_singular_values(ss)
    hi = sig_d + 2.0 * float(np.sum(hsv))
    hi = max(hi, lo * (1 + 10 * tol) + 1e-300)
    if lo <= 0.0:
        return 0.0

    n = ss.n_states
    In = np.eye(n)

    def has_imag_eig(gamma: float) -> bool:
        Rg = gamma ** 2 * np.eye(D.shape[1]) - D.T @ D
        try:
            Rinv_Bt = sla.solve(Rg, ss.B.T, assume_a="sym")
            Rinv_Dt_C = sla.solve(Rg, D.T @ ss.C, assume_a="sym")
        except sla.LinAlgError:
            return True  # gamma <= sigma_max(D): below the norm for sure
        Abar = ss.A + ss.B @ Rinv_Dt_C
        M = np.block([
            [Abar, ss.B @ Rinv_Bt],
            [-ss.C.T @ (np.eye(D.shape[0]) + D @ sla.solve(Rg, D.T, assume_a="sym")) @ ss.C,
             -Abar.T],
        ])
        lam = np.linalg.eigvals(M)
        return bool(np.any(np.abs(lam.real) <= 1e-9 * np.maximum(1.0, np.abs(lam))))

    # make sure the upper bound is truly above the norm
    for _ in range(60):
        if not has_imag_eig(hi):
            break
        hi *= 2.0
    else:
        raise SynthesisError("hinf_norm: failed to bracket the norm from above")

    while hi - lo > tol * lo:
        gamma = np.sqrt(lo * hi)
        if has_imag_eig(gamma):
            lo = gamma
        else:
            hi = gamma
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Generalized plant and LFT closures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneralizedPlant:
    """Partitioned plant for synthesis, with labeled channel groups.

    Input ordering:  [uncertainty inputs | exogenous inputs | control inputs]
    Output ordering: [uncertainty outputs | performance outputs | measurements]
    """

    sys: StateSpace
    n_w_unc: int
    n_w: int
    n_u: int
    n_z_unc: int
    n_z: int
    n_y: int

    def __post_init__(self):
        if any(k < 0 for k in (self.n_w_unc, self.n_w, self.n_u,
                               self.n_z_unc, self.n_z, self.n_y)):
            raise ValueError("channel sizes must be nonnegative")
        if self.sys.n_inputs != self.n_w_unc + self.n_w + self.n_u:
            raise ValueError("input channel sizes do not sum to the system input count")
        if self.sys.n_outputs != self.n_z_unc + self.n_z + self.n_y:
            raise ValueError("output channel sizes do not sum to the system output count")
        A, B2 = self.sys.A, self.sys.B[:, self.m1:]
        C2 = self.sys.C[self.p1:, :]
        _check_stabilizable(A, B2, "generalized plant (A, B_u)")
        _check_stabilizable(A.T, C2.T, "generalized plant (A, C_y) [detectability]")

    @property
    def m1(self) -> int:
        """Width of the synthesis disturbance block (uncertainty + exogenous)."""
        return self.n_w_unc + self.n_w

    @property
    def p1(self) -> int:
        """Height of the synthesis performance block (uncertainty + performance)."""
        return self.n_z_unc + self.n_z

    def partition(self):
        s = self.sys
        m1, p1 = self.m1, self.p1
        return (s.A,
                s.B[:, :m1], s.B[:, m1:],
                s.C[:p1, :], s.C[p1:, :],
                s.D[:p1, :m1], s.D[:p1, m1:],
                s.D[p1:, :m1], s.D[p1:, m1:])


def close_lower(P: StateSpace, K: StateSpace, n_y: int, n_u: int) -> StateSpace:
    """Feedback closure of the last n_u inputs with K driven by the last n_y outputs."""
    n_in, n_out = P.n_inputs, P.n_outputs
    m1, p1 = n_in - n_u, n_out - n_y
    A, B1, B2 = P.A, P.B[:, :m1], P.B[:, m1:]
    C1, C2 = P.C[:p1, :], P.C[p1:, :]
    D11, D12 = P.D[:p1, :m1], P.D[:p1, m1:]
    D21, D22 = P.D[p1:, :m1], P.D[p1:, m1:]
    Ak, Bk, Ck, Dk = K.A, K.B, K.C, K.D
    if Bk.shape[1] != n_y or Ck.shape[0] != n_u:
        raise ValueError("controller dimensions do not match the plant partition")

    M = np.eye(n_u) - Dk @ D22
    try:
        E = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        raise ValueError("closed loop is ill-posed (I - Dk D22 singular)") from None
    Ux = E @ Dk @ C2
    Uk = E @ Ck
    Uw = E @ Dk @ D21

    n, nk = P.n_states, K.n_states
    A_cl = np.block([
        [A + B2 @ Ux, B2 @ Uk],
        [Bk @ C2 + Bk @ D22 @ Ux, Ak + Bk @ D22 @ Uk],
    ])
    B_cl = np.vstack([B1 + B2 @ Uw, Bk @ D21 + Bk @ D22 @ Uw])
    C_cl = np.hstack([C1 + D12 @ Ux, D12 @ Uk])
    D_cl = D11 + D12 @ Uw
    return StateSpace(A_cl, B_cl, C_cl, D_cl)


def close_upper(P: StateSpace, block: StateSpace, n_z: int, n_w: int) -> StateSpace:
    """Feedback closure of the first n_w inputs with ``block`` driven by the first n_z outputs."""
    in_perm = list(range(n_w, P.n_inputs)) + list(range(n_w))
    out_perm = list(range(n_z, P.n_outputs)) + list(range(n_z))
    Pp = StateSpace(P.A, P.B[:, in_perm], P.C[out_perm, :], P.D[np.ix_(out_perm, in_perm)])
    return close_lower(Pp, block, n_z, n_w)


# ---------------------------------------------------------------------------
# H-infinity synthesis (two-Riccati gamma-iteration, central controller)
# ---------------------------------------------------------------------------

def _sigma_max(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


@dataclass
class GammaStep:
    gamma: float
    feasible: bool
    note: str = ""


@dataclass
class SynthesisReport:
    """Everything produced by the synthesis pipeline."""

    controller: StateSpace
    gamma: float
    history: list = field(default_factory=list)
    closed_loop_norm: float = np.nan
    regularized: bool = False
    hsv: np.ndarray | None = None
    reduced_controller: StateSpace | None = None
    truncation_error_bound: float = np.nan
    truncation_error_measured: float = np.nan
    robust_stable: bool | None = None
    robust_margin: float = np.nan
    targets: dict | None = None


class _ScaledProblem:
    """Plant normalized so D12 = [0; I] and D21 = [0, I], with back-transforms."""

    def __init__(self, A, B1, B2, C1, C2, D11, D12, D21):
        n = A.shape[0]
        m1, m2 = B1.shape[1], B2.shape[1]
        p1, p2 = C1.shape[0], C2.shape[0]
        eps_rank = 1e-9

        u12, s12, vt12 = np.linalg.svd(D12)
        if m2 > 0 and (s12.size < m2 or s12[-1] <= eps_rank * max(1.0, s12[0])):
            raise SynthesisError("D12 is not full column rank (regularize the plant)")
        Q1 = np.hstack([u12[:, m2:], u12[:, :m2]])  # rotated so the range sits last
        Tu = vt12.T @ np.diag(1.0 / s12) if m2 > 0 else np.zeros((0, 0))

        u21, s21, vt21 = np.linalg.svd(D21)
        if p2 > 0 and (s21.size < p2 or s21[-1] <= eps_rank * max(1.0, s21[0])):
            raise SynthesisError("D21 is not full row rank (regularize the plant)")
        V = vt21.T
        W = np.hstack([V[:, p2:], V[:, :p2]])
        Ty = np.diag(1.0 / s21) @ u21.T if p2 > 0 else np.zeros((0, 0))

        self.A = A
        self.B1 = B1 @ W
        self.B2 = B2 @ Tu
        self.C1 = Q1.T @ C1
        self.C2 = Ty @ C2
        self.D11 = Q1.T @ D11 @ W
        self.D12 = np.vstack([np.zeros((p1 - m2, m2)), np.eye(m2)])
        self.D21 = np.hstack([np.zeros((p2, m1 - p2)), np.eye(p2)])
        self.Tu, self.Ty = Tu, Ty
        self.n, self.m1, self.m2, self.p1, self.p2 = n, m1, m2, p1, p2

        # D11 blocks: rows (p1-m2, m2), cols (m1-p2, p2)
        self.D1111 = self.D11[:p1 - m2, :m1 - p2]
        self.D1112 = self.D11[:p1 - m2, m1 - p2:]
        self.D1121 = self.D11[p1 - m2:, :m1 - p2]
        self.D1122 = self.D11[p1 - m2:, m1 - p2:]

        self.gamma_floor = max(
            _sigma_max(np.hstack([self.D1111, self.D1112])),
            _sigma_max(np.vstack([self.D1111, self.D1121])),
        )

        self.B = np.hstack([self.B1, self.B2])
        self.C = np.vstack([self.C1, self.C2])
        self.D1dot = np.hstack([self.D11, self.D12])   # p1 x (m1+m2)
        self.Ddot1 = np.vstack([self.D11, self.D21])   # (p1+p2) x m1

    def _quadratic_terms(self, gamma: float):
        m1, p1 = self.m1, self.p1
        R = self.D1dot.T @ self.D1dot
        R[:m1, :m1] -= gamma ** 2 * np.eye(m1)
        Rt = self.Ddot1 @ self.Ddot1.T
        Rt[:p1, :p1] -= gamma ** 2 * np.eye(p1)
        return R, Rt

    def riccati_pair(self, gamma: float):
        R, Rt = self._quadratic_terms(gamma)

        top = self.B
        bot = -self.C1.T @ self.D1dot
        rhs = np.hstack([self.D1dot.T @ self.C1, self.B.T])
        H = np.block([[self.A, np.zeros((self.n, self.n))],
                      [-self.C1.T @ self.C1, -self.A.T]])
        H -= np.vstack([top, bot]) @ sla.solve(R, rhs)

        topJ = self.C.T
        botJ = -self.B1 @ self.Ddot1.T
        rhsJ = np.hstack([self.Ddot1 @ self.B1.T, self.C])
        J = np.block([[self.A.T, np.zeros((self.n, self.n))],
                      [-self.B1 @ self.B1.T, -self.A]])
        J -= np.vstack([topJ, botJ]) @ sla.solve(Rt, rhsJ)

        X = _stable_invariant_solution(H, "state-feedback Riccati")
        Y = _stable_invariant_solution(J, "estimation Riccati")
        return X, Y, R, Rt

    def feasible(self, gamma: float):
        """Return (ok, note, X, Y)."""
        if gamma <= self.gamma_floor * (1 + 1e-9):
            return False, "gamma below the feedthrough bound", None, None
        try:
            X, Y, _, _ = self.riccati_pair(gamma)
        except SynthesisError as e:
            return False, str(e), None, None
        tolX = 1e-8 * max(1.0, _sigma_max(X))
        tolY = 1e-8 * max(1.0, _sigma_max(Y))
        if np.min(np.linalg.eigvalsh((X + X.T) / 2)) < -tolX:
            return False, "X Riccati solution not positive semidefinite", None, None
        if np.min(np.linalg.eigvalsh((Y + Y.T) / 2)) < -tolY:
            return False, "Y Riccati solution not positive semidefinite", None, None
        rho = np.max(np.abs(np.linalg.eigvals(X @ Y)))
        if rho >= gamma ** 2 * (1 - 1e-9):
            return False, f"spectral-radius coupling rho(XY)={rho:.3e} >= gamma^2", None, None
        return True, "", X, Y

    def central_controller(self, gamma: float, X, Y) -> StateSpace:
        m1, m2, p1, p2, n = self.m1, self.m2, self.p1, self.p2, self.n
        R, Rt = self._quadratic_terms(gamma)
        F = -sla.solve(R, self.D1dot.T @ self.C1 + self.B.T @ X)
        L = -sla.solve(Rt.T, (self.B1 @ self.Ddot1.T + Y @ self.C.T).T).T

        F12 = F[m1 - p2:m1, :]
        F2 = F[m1:, :]
        L12 = L[:, p1 - m2:p1]
        L2 = L[:, p1:]

        Z = np.linalg.inv(np.eye(n) - (Y @ X) / gamma ** 2)

        G1 = gamma ** 2 * np.eye(p1 - m2) - self.D1111 @ self.D1111.T
        G2 = gamma ** 2 * np.eye(m1 - p2) - self.D1111.T @ self.D1111
        G1inv_D1112 = sla.solve(G1, self.D1112) if G1.size else np.zeros((0, p2))

        Dh11 = -self.D1121 @ self.D1111.T @ G1inv_D1112 - self.D1122
        M12 = np.eye(m2) - self.D1121 @ sla.solve(G2, self.D1121.T) if G2.size \
            else np.eye(m2)
        M21 = np.eye(p2) - self.D1112.T @ G1inv_D1112
        try:
            Dh12 = sla.cholesky(M12, lower=True)           # lower triangular
            Dh21 = sla.cholesky(M21, lower=True).T         # upper triangular
        except sla.LinAlgError:
            raise SynthesisError("controller feedthrough factorization failed "
                                 "(gamma too close to the D11 bound)") from None

        Bh2 = Z @ (self.B2 + L12) @ Dh12
        Ch2 = -Dh21 @ (self.C2 + F12)
        Dh21inv_Ch2 = sla.solve_triangular(Dh21, Ch2, lower=False)
        Bh1 = -Z @ L2 + Bh2 @ sla.solve_triangular(Dh12, Dh11, lower=True)
        Ch1 = F2 + Dh11 @ Dh21inv_Ch2
        Ah = self.A + self.B @ F + Bh1 @ Dh21inv_Ch2

        # back to original controller coordinates: u = Tu u~, y~ = Ty y
        Bk = Bh1 @ self.Ty
        Ck = self.Tu @ Ch1
        Dk = self.Tu @ Dh11 @ self.Ty
        return StateSpace(Ah, Bk, Ck, Dk)


def _augment_regular(A, B1, B2, C1, C2, D11, D12, D21, eps: float):
    """Add eps-scaled virtual penalty/noise channels when D12/D21 lose rank."""
    m1, m2, p1, p2 = B1.shape[1], B2.shape[1], C1.shape[0], C2.shape[0]
    changed = False
    if m2 > 0 and (_sigma_max(D12) == 0.0 or
                   np.linalg.svd(D12, compute_uv=False)[-1] <= 1e-9 * max(1.0, _sigma_max(D12))):
        C1 = np.vstack([C1, np.zeros((m2, A.shape[0]))])
        D11 = np.vstack([D11, np.zeros((m2, m1))])
        D12 = np.vstack([D12, eps * np.eye(m2)])
        changed = True
    if p2 > 0 and (_sigma_max(D21) == 0.0 or
                   np.linalg.svd(D21, compute_uv=False)[-1] <= 1e-9 * max(1.0, _sigma_max(D21))):
        B1 = np.hstack([B1, np.zeros((A.shape[0], p2))])
        D11 = np.hstack([D11, np.zeros((D11.shape[0], p2))])
        D21 = np.hstack([D21, eps * np.eye(p2)])
        changed = True
    return (A, B1, B2, C1, C2, D11, D12, D21), changed


def hinfsyn(plant: GeneralizedPlant, gamma_range=(0.1, 100.0), tol: float = 1e-3,
            reg_eps: float = 1e-6) -> SynthesisReport:
    """Suboptimal H-infinity synthesis by bisection on gamma.

    Returns the central controller at the smallest feasible gamma found
    within the bracket, together with the iteration history and the
    closed-loop norm recomputed from scratch on the original plant.
    """
    A, B1, B2, C1, C2, D11, D12, D21, D22 = plant.partition()
    n_y, n_u = plant.n_y, plant.n_u

    (A_, B1_, B2_, C1_, C2_, D11_, D12_, D21_), regularized = _augment_regular(
        A, B1, B2, C1, C2, D11, D12, D21, reg_eps)
    m1_aug, p1_aug = B1_.shape[1], C1_.shape[0]
    Ab, Bb, Cb, _ = _balance_realization(A_, np.hstack([B1_, B2_]),
                                         np.vstack([C1_, C2_]))
    sp = _ScaledProblem(Ab, Bb[:, :m1_aug], Bb[:, m1_aug:],
                        Cb[:p1_aug, :], Cb[p1_aug:, :], D11_, D12_, D21_)

    lo, hi = float(gamma_range[0]), float(gamma_range[1])
    if lo <= 0 or hi <= lo:
        raise ValueError("gamma_range must satisfy 0 < lo < hi")
    lo = max(lo, sp.gamma_floor * (1 + 1e-6))

    history: list[GammaStep] = []
    ok, note, X, Y = sp.feasible(hi)
    history.append(GammaStep(hi, ok, note))
    if not ok:
        raise SynthesisError(
            f"infeasible at gamma upper bound {hi:g}: {note}")
    best = (hi, X, Y)

    ok_lo, note_lo, X_lo, Y_lo = sp.feasible(lo)
    history.append(GammaStep(lo, ok_lo, note_lo))
    if ok_lo:
        best = (lo, X_lo, Y_lo)
    else:
        g_lo, g_hi = lo, hi
        while g_hi - g_lo > tol * g_hi:
            g = np.sqrt(g_lo * g_hi)
            ok, note, X, Y = sp.feasible(g)
            history.append(GammaStep(g, ok, note))
            if ok:
                g_hi = g
                best = (g, X, Y)
            else:
                g_lo = g

    def build_at(gamma_try: float):
        ok, note, Xg, Yg = sp.feasible(gamma_try)
        history.append(GammaStep(gamma_try, ok, note))
        if not ok:
            return None
        K = sp.central_controller(gamma_try, Xg, Yg)
        if np.any(D22 != 0.0):
            # reinsert the measurement feedthrough removed for synthesis
            M = np.eye(n_u) + K.D @ D22
            Minv = np.linalg.inv(M)
            K = StateSpace(K.A - K.B @ D22 @ Minv @ K.C,
                           K.B - K.B @ D22 @ Minv @ K.D,
                           Minv @ K.C, Minv @ K.D)
        clp = close_lower(plant.sys, K, n_y, n_u)
        if np.max(clp.poles().real) >= 0:
            return None
        return K, hinf_norm(clp)

    # Synthesize slightly above the converged level and verify against the
    # recomputed closed-loop norm; right at the optimum the feasibility test
    # and the controller formulas are only tolerance-accurate, so inflate
    # until the certificate holds.
    margin = max(2.0 * tol, 1e-3)
    gamma_f = min(best[0] * (1.0 + margin), hi)
    result = None
    for _ in range(8):
        built = build_at(gamma_f)
        if built is not None:
            K, cl_norm = built
            if cl_norm <= gamma_f * (1 + 1e-6):
                result = (K, gamma_f, cl_norm)
                break
            gamma_f = min(max(cl_norm, gamma_f) * (1.0 + margin), hi)
        else:
            gamma_f = min(gamma_f * (1.0 + margin), hi)
    if result is None:
        raise SynthesisError("failed to certify a controller: the recomputed "
                             "closed-loop norm kept exceeding the synthesis level")
    K, gamma_f, cl_norm = result
    return SynthesisReport(controller=K, gamma=gamma_f, history=history,
                           closed_loop_norm=cl_norm, regularized=regularized)


# ---------------------------------------------------------------------------
# Balanced truncation
# ---------------------------------------------------------------------------

def _psd_factor(W: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((W + W.T) / 2)
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]
    return V[:, order] * np.sqrt(w[order])


def balanced_truncate(sys, target_order: int | None = None, hsv_tol: float | None = None,
                      residualize: bool = False):
    """Balanced truncation of a stable system.

    Keeps ``target_order`` states, or all states with HSV > hsv_tol * max(HSV)
    when ``hsv_tol`` is given instead.  With ``residualize`` the discarded
    states keep their quasi-static contribution (singular perturbation of the
    balanced realization, DC-exact); by default they are dropped outright,
    which preserves the feedthrough instead.  Both variants satisfy the same
    a-priori bound.  Returns (reduced, hsv, error_bound) with error_bound =
    2 * sum(discarded HSVs).
    """
    ss = _as_ss(sys)
    if ss.dt is not None:
        raise ValueError("balanced truncation expects a continuous-time system")
    if target_order is None and hsv_tol is None:
        raise ValueError("either target_order or hsv_tol is required")
    n = ss.n_states
    if n == 0:
        return ss, np.zeros(0), 0.0
    if np.max(ss.poles().real) >= 0:
        raise ValueError("balanced truncation requires a stable system")

    Ab, Bb, Cb, _ = _balance_realization(ss.A, ss.B, ss.C)
    ss = StateSpace(Ab, Bb, Cb, ss.D)
    Wc = solve_lyapunov(ss.A, ss.B @ ss.B.T)
    Wo = solve_lyapunov(ss.A.T, ss.C.T @ ss.C)
    Lc = _psd_factor(Wc)
    Lo = _psd_factor(Wo)
    U, s, Vt = np.linalg.svd(Lo.T @ Lc)
    hsv = s.copy()

    if hsv[0] <= 0.0:
        reduced = StateSpace(np.zeros((0, 0)), np.zeros((0, ss.n_inputs)),
                             np.zeros((ss.n_outputs, 0)), ss.D)
        return reduced, hsv, 0.0

    # states with negligible HSV are never kept (and never residualized:
    # their balancing transform is numerically meaningless)
    r_max = int(np.sum(hsv > 1e-8 * hsv[0]))
    if target_order is not None:
        r = min(int(target_order), r_max)
    else:
        r = int(np.sum(hsv > hsv_tol * hsv[0]))
        r = min(r, r_max)
    r = max(r, 0)
    # avoid splitting a group of (numerically) equal HSVs
    while 0 < r < r_max and (hsv[r - 1] - hsv[r]) <= 1e-12 * hsv[0]:
        r += 1
    bound = 2.0 * float(np.sum(hsv[r:]))

    if r == 0:
        reduced = StateSpace(np.zeros((0, 0)), np.zeros((0, ss.n_inputs)),
                             np.zeros((ss.n_outputs, 0)), ss.D)
        return reduced, hsv, bound

    sr = np.sqrt(hsv[:r])
    T1 = Lc @ Vt[:r, :].T / sr
    Ti1 = (U[:, :r] / sr).T @ Lo.T
    if residualize and r < r_max:
        s2 = np.sqrt(hsv[r:r_max])
        T2 = Lc @ Vt[r:r_max, :].T / s2
        Ti2 = (U[:, r:r_max] / s2).T @ Lo.T
        A11 = Ti1 @ ss.A @ T1
        A12 = Ti1 @ ss.A @ T2
        A21 = Ti2 @ ss.A @ T1
        A22 = Ti2 @ ss.A @ T2
        B1 = Ti1 @ ss.B
        B2 = Ti2 @ ss.B
        C1 = ss.C @ T1
        C2 = ss.C @ T2
        X21 = sla.solve(A22, A21)
        X2B = sla.solve(A22, B2)
        reduced = StateSpace(A11 - A12 @ X21, B1 - A12 @ X2B,
                             C1 - C2 @ X21, ss.D - C2 @ X2B)
    else:
        reduced = StateSpace(Ti1 @ ss.A @ T1, Ti1 @ ss.B, ss.C @ T1, ss.D)
    if reduced.n_states and np.max(reduced.poles().real) >= 0:
        raise SynthesisError("balanced truncation produced an unstable reduced model")
    return reduced, hsv, bound


def reduce_controller(controller: StateSpace, plant: "GeneralizedPlant | None" = None,
                      band_max: float = 2 * np.pi * 20e3, rel_tol: float = 0.01,
                      norm_cap: float | None = 1.0):
    """Reduce a stable controller by balanced truncation.

    Picks the smallest order whose reduced controller matches the full one
    within ``rel_tol`` relative H-infinity error over frequencies up to
    ``band_max`` and, when a generalized plant is supplied, keeps the closed
    loop stable with recomputed norm at most ``norm_cap``.  Returns
    (reduced, hsv, error_bound).
    """
    K = _as_ss(controller)
    hsv = hankel_singular_values(K)
    n = K.n_states
    if n == 0:
        return K, hsv, 0.0

    pole_freqs = np.abs(K.poles().imag)
    grid = np.unique(np.concatenate([
        np.logspace(0, np.log10(band_max), 400),
        pole_freqs[(pole_freqs > 1.0) & (pole_freqs <= band_max)],
    ]))
    full_fr = freq_response(K, grid).values
    peak = np.max(np.abs(full_fr))

    last_err = None
    for order in range(1, n + 1):
        try:
            reduced, hsv, bound = balanced_truncate(K, target_order=order)
        except SynthesisError:
            continue
        if reduced.n_states < order and order < n:
            continue  # order swallowed by the HSV floor; larger asks are no-ops
        red_fr = freq_response(reduced, grid).values
        last_err = float(np.max(np.abs(full_fr - red_fr)) / peak)
        if last_err > rel_tol:
            continue
        if plant is not None:
            clp = close_lower(plant.sys, reduced, plant.n_y, plant.n_u)
            if np.max(clp.poles().real) >= 0:
                continue
            if norm_cap is not None and hinf_norm(clp) > norm_cap:
                continue
        return reduced, hsv, bound

    raise SynthesisError(
        f"no reduced order satisfied the band error / closed-loop criteria "
        f"(last band error {last_err})")


# ---------------------------------------------------------------------------
# Robust stability over sampled uncertainty
# ---------------------------------------------------------------------------

@dataclass
class RobustStabilityVerdict:
    robust: bool
    norm_ok: bool
    closed_loop_norm: float
    margin: float
    failing_sample: object = None
    worst_pole_real: float = -np.inf


def _as_delta_system(delta) -> StateSpace:
    if isinstance(delta, StateSpace):
        return delta
    if isinstance(delta, TransferFunction):
        return _as_ss(delta)
    return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                      [[float(delta)]])


def robust_stability_check(plant: GeneralizedPlant, controller: StateSpace,
                           delta_samples, pole_margin: float = 1e-6) -> RobustStabilityVerdict:
    """Small-gain verdict plus a pole sweep over sampled uncertainty blocks.

    The verdict is true when the nominal closed-loop norm over all
    disturbance channels is below one AND every sampled Delta with
    ||Delta|| <= 1 leaves the perturbed closed loop strictly stable.
    """
    clp = close_lower(plant.sys, controller, plant.n_y, plant.n_u)
    if np.max(clp.poles().real) >= 0:
        return RobustStabilityVerdict(False, False, np.inf, 0.0, failing_sample="nominal",
                                      worst_pole_real=float(np.max(clp.poles().real)))

    cl_norm = hinf_norm(clp)
    nzu, nwu = plant.n_z_unc, plant.n_w_unc
    chan = clp.select(list(range(nzu)), list(range(nwu)))
    chan_norm = hinf_norm(chan)
    margin = np.inf if chan_norm == 0 else 1.0 / chan_norm

    worst = float(np.max(clp.poles().real))
    failing = None
    for delta in delta_samples:
        dsys = _as_delta_system(delta)
        perturbed = close_upper(clp, dsys, nzu, nwu)
        p = perturbed.poles()
        worst = max(worst, float(np.max(p.real)) if p.size else -np.inf)
        if p.size and np.max(p.real) >= -pole_margin:
            failing = delta
            break

    robust = (cl_norm < 1.0) and failing is None
    return RobustStabilityVerdict(robust=robust, norm_ok=cl_norm < 1.0,
                                  closed_loop_norm=cl_norm, margin=margin,
                                  failing_sample=failing, worst_pole_real=worst)


def allpass_delta(corner: float) -> TransferFunction:
    """First-order all-pass (a - s)/(a + s): unit magnitude at every frequency."""
    if corner <= 0:
        raise ValueError("corner frequency must be positive")
    return TransferFunction([-1.0, corner], [1.0, corner])
