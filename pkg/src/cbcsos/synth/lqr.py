from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.optimize import linprog

from ..polyalg import Polynomial, jacobian_at, variables
from .. import verify
from .system import ControlAffineSystem, ProblemError, SemialgebraicUnion, SynthesisConfig


class RiccatiError(RuntimeError):
    pass


def care_residual(A, B, Q, R, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def is_stabilizable(A, B, tol: float = 1e-9) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -tol:
            M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-8 * max(1.0, np.abs(M).max())) < n:
                return False
    return True


def care_solve(A, B, Q, R, newton_steps: int = 5) -> np.ndarray:
    """Stabilizing solution of A'P + PA - PBR^-1B'P + Q = 0.

    A Schur-method solution is polished with Kleinman-Newton steps until the
    residual stops improving.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    if not is_stabilizable(A, B):
        raise RiccatiError("(A, B) is not stabilizable")
    P = la.solve_continuous_are(A, B, Q, R)
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(care_residual(A, B, Q, R, P))
    for _ in range(newton_steps):
        K = np.linalg.solve(R, B.T @ P)
        Ak = A - B @ K
        P_new = la.solve_continuous_lyapunov(Ak.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        res_new = np.linalg.norm(care_residual(A, B, Q, R, P_new))
        if not np.isfinite(res_new):
            raise RiccatiError("Newton iteration diverged")
        if res_new >= res:
            break
        P, res = P_new, res_new
    if res > 1e-6 * (1 + np.linalg.norm(P)):
        raise RiccatiError(f"Riccati residual {res:.2e} too large")
    if np.linalg.eigvalsh(P)[0] < -1e-9 * (1 + np.linalg.norm(P)):
        raise RiccatiError("Riccati solution is not PSD")
    return P


def quadratic_form(P, center) -> Polynomial:
    """(x - c)' P (x - c) as a polynomial."""
    n = len(center)
    xs = variables(n)
    d = [xs[i] - float(center[i]) for i in range(n)]
    out = Polynomial.zero(n)
    for i in range(n):
        for j in range(n):
            if P[i, j] != 0.0:
                out = out + d[i] * d[j] * float(P[i, j])
    return out


def equilibrium_input(system: ControlAffineSystem, x_eq, tol: float = 1e-8) -> np.ndarray:
    """Some u in U with f(x_eq) + g(x_eq) u = 0, via an L-inf LP."""
    fx, gx = system.f_at(x_eq), system.g_at(x_eq)
    nu = system.nu
    # variables (u, t): min t s.t. |f + g u| <= t, A_u u + c_u >= 0
    c = np.zeros(nu + 1)
    c[-1] = 1.0
    ones = np.ones((len(fx), 1))
    A_ub = np.vstack([
        np.hstack([gx, -ones]),
        np.hstack([-gx, -ones]),
        np.hstack([-system.A_u, np.zeros((len(system.c_u), 1))]),
    ])
    b_ub = np.concatenate([-fx, fx, system.c_u])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * nu + [(0, None)], method="highs")
    if res.status != 0 or res.x[-1] > tol:
        raise ProblemError(f"x_eq={list(x_eq)} is not an equilibrium for any admissible input")
    return res.x[:nu]


@dataclass
class LqrInit:
    b0: Polynomial
    K: np.ndarray
    P: np.ndarray
    delta: float
    x_eq: np.ndarray
    u_eq: np.ndarray


def lqr_gain(system: ControlAffineSystem, x_eq, config: SynthesisConfig):
    """(K, P, u_eq) of the LQR design for the linearization at x_eq."""
    x_eq = np.asarray(x_eq, dtype=float)
    u_eq = equilibrium_input(system, x_eq)
    A = jacobian_at(system.f, x_eq)
    for j in range(system.nu):
        A = A + jacobian_at([row[j] for row in system.g], x_eq) * u_eq[j]
    B = system.g_at(x_eq)
    Q = np.eye(system.nx) if config.Q is None else np.asarray(config.Q, float)
    R = np.eye(system.nu) if config.R is None else np.asarray(config.R, float)
    P = care_solve(A, B, Q, R)
    return np.linalg.solve(R, B.T @ P), P, u_eq


def lqr_init(system: ControlAffineSystem, x_eq, config: SynthesisConfig,
             unsafe: SemialgebraicUnion | None = None, domain=None) -> LqrInit:
    """b0 = delta - (x - x_eq)' P (x - x_eq) from the LQR cost-to-go at x_eq.

    With ``config.delta is None`` delta is halved from 1.0 until no sampled
    unsafe point lies in {b0 >= 0}.
    """
    x_eq = np.asarray(x_eq, dtype=float)
    K, P, u_eq = lqr_gain(system, x_eq, config)
    V0 = quadratic_form(P, x_eq)

    if unsafe is not None and unsafe.contains(x_eq):
        raise ProblemError("the equilibrium lies inside the unsafe set")

    delta = config.delta
    if delta is None:
        if unsafe is None:
            raise ValueError("automatic delta needs the unsafe set")
        box = config.sample_box if config.sample_box is not None else domain
        if box is None:
            raise ValueError("automatic delta needs a sampling box")
        v_min = np.inf
        for i in range(len(unsafe)):
            pts, _ = verify.sample_component(unsafe, i, config.n_unsafe_samples, box, config.seed)
            if len(pts):
                v_min = min(v_min, float(np.min(V0(pts))))
        delta = 1.0
        while delta >= v_min:
            delta /= 2
            if delta < config.delta_min:
                raise ProblemError("no delta >= delta_min separates the initial set from the unsafe samples")
    b0 = Polynomial.constant(system.nx, delta) - V0
    return LqrInit(b0, K, P, delta, x_eq, u_eq)
