"""Online use of a certificate: QP safety filter and closed-loop simulation."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .polyalg import Polynomial, evaluate_vector

FEAS_TOL = 1e-10
BLOWUP = 1e6


@dataclass
class FilterOutput:
    u: np.ndarray
    feasible: bool
    barrier_active: bool = False


def _project(u_nom, G, h, tol=FEAS_TOL):
    """argmin |u - u_nom|^2 s.t. G u >= h, by enumerating active sets.

    The optimum is the projection onto some face, so the feasible candidate
    with the smallest objective is optimal. Returns (u, active_rows) or None.
    """
    nu = len(u_nom)
    best, best_val, best_set = None, np.inf, ()
    rows = range(len(h))
    scale = 1.0 + np.abs(h)
    for k in range(0, nu + 1):
        for S in itertools.combinations(rows, k):
            if k:
                GS = G[list(S)]
                M = GS @ GS.T
                if np.linalg.matrix_rank(M) < k:
                    continue
                u = u_nom + GS.T @ np.linalg.solve(M, h[list(S)] - GS @ u_nom)
            else:
                u = np.array(u_nom, dtype=float)
            if np.all(G @ u - h >= -tol * scale):
                val = float(np.sum((u - u_nom) ** 2))
                if val < best_val - 1e-15:
                    best, best_val, best_set = u, val, S
    return None if best is None else (best, best_set)


@dataclass
class SafetyFilter:
    """min |u - u_N|^2 over u in U with db/dx (f + g u) >= -eta b(x)."""

    b: Polynomial
    system: object
    eta: float = 10.0
    grad: list[Polynomial] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        self.grad = self.b.gradient()

    def barrier_row(self, x) -> tuple[np.ndarray, float]:
        """(a, r) such that the barrier constraint reads a . u >= r."""
        x = np.asarray(x, float)
        gb = evaluate_vector(self.grad, x)
        a = gb @ self.system.g_at(x)
        r = -self.eta * self.b.evaluate(x) - gb @ self.system.f_at(x)
        return a, float(r)

    def __call__(self, x, u_nominal) -> FilterOutput:
        u_nom = np.asarray(u_nominal, float).ravel()
        if not np.all(np.isfinite(u_nom)):
            raise ValueError("nominal input must be finite")
        a, r = self.barrier_row(x)
        G = np.vstack([self.system.A_u, a[None, :]])
        h = np.concatenate([-self.system.c_u, [r]])
        sol = _project(u_nom, G, h)
        if sol is not None:
            u, active = sol
            return FilterOutput(u, True, len(self.system.c_u) in active)
        # best effort: largest Lie derivative the input set allows
        res = linprog(-a, A_ub=-self.system.A_u, b_ub=self.system.c_u,
                      bounds=[(None, None)] * len(a), method="highs")
        return FilterOutput(np.asarray(res.x), False, True)


def safe_filter(filt: SafetyFilter, x, u_nominal) -> FilterOutput:
    return filt(x, u_nominal)


def nominal_pd(K, x_eq, x) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K, float))
    return -K @ (np.asarray(x, float) - np.asarray(x_eq, float))


class CbcQpController:
    """Safety filter around a nominal feedback; counts infeasible QP steps."""

    def __init__(self, filt: SafetyFilter, nominal: Callable[[np.ndarray], np.ndarray]):
        self.filter = filt
        self.nominal = nominal
        self.infeasible_steps = 0
        self.active_steps = 0

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        out = self.filter(x, self.nominal(x))
        self.infeasible_steps += not out.feasible
        self.active_steps += out.barrier_active
        return out.u


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    b_values: np.ndarray
    aborted: bool = False

    def to_csv(self, path) -> None:
        nx, nu = self.states.shape[1], self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(nx)] + [f"u{j + 1}" for j in range(nu)] + ["b"])
            for t, x, u, bv in zip(self.times, self.states, self.inputs, self.b_values):
                w.writerow([repr(float(v)) for v in (t, *x, *u, bv)])


def simulate(system, controller: Callable[[float, np.ndarray], np.ndarray], x0, T: float, dt: float,
             b: Polynomial | None = None) -> Trajectory:
    """Fixed-step RK4 with the input held constant over each step."""
    if not dt > 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    steps = int(round(T / dt))
    x = np.asarray(x0, dtype=float).copy()
    times, states, inputs, bvals = [], [], [], []
    aborted = False
    for k in range(steps + 1):
        t = k * dt
        u = np.asarray(controller(t, x), dtype=float).ravel()
        times.append(t)
        states.append(x.copy())
        inputs.append(u)
        bvals.append(b.evaluate(x) if b is not None else np.nan)
        if k == steps:
            break
        k1 = system.dynamics(x, u)
        k2 = system.dynamics(x + 0.5 * dt * k1, u)
        k3 = system.dynamics(x + 0.5 * dt * k2, u)
        k4 = system.dynamics(x + dt * k3, u)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP:
            aborted = True
            break
    return Trajectory(np.array(times), np.array(states), np.array(inputs), np.array(bvals), aborted)
