from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from ..polyalg import Polynomial, evaluate_matrix, evaluate_vector


class ProblemError(ValueError):
    pass


@dataclass
class ControlAffineSystem:
    """xdot = f(x) + g(x) u with u in {u | A_u u + c_u >= 0}."""

    f: list[Polynomial]
    g: list[list[Polynomial]]
    A_u: np.ndarray
    c_u: np.ndarray

    def __post_init__(self):
        self.A_u = np.atleast_2d(np.asarray(self.A_u, dtype=float))
        self.c_u = np.asarray(self.c_u, dtype=float).ravel()
        nx = len(self.f)
        if any(p.nvars != nx for p in self.f):
            raise ProblemError("every entry of f must have nvars == len(f)")
        if len(self.g) != nx:
            raise ProblemError(f"g has {len(self.g)} rows, expected {nx}")
        nu = len(self.g[0]) if nx else 0
        if any(len(row) != nu for row in self.g) or any(p.nvars != nx for row in self.g for p in row):
            raise ProblemError("g must be an nx-by-nu matrix of polynomials in nx vars")
        if self.A_u.shape != (len(self.c_u), nu):
            raise ProblemError(f"A_u has shape {self.A_u.shape}, expected ({len(self.c_u)}, {nu})")
        self._check_polytope()

    @classmethod
    def with_box(cls, f, g, lower: Sequence[float], upper: Sequence[float]) -> ControlAffineSystem:
        lower, upper = np.asarray(lower, float), np.asarray(upper, float)
        nu = len(lower)
        A = np.vstack([-np.eye(nu), np.eye(nu)])
        c = np.concatenate([upper, -lower])
        return cls(f, g, A, c)

    @property
    def nx(self) -> int:
        return len(self.f)

    @property
    def nu(self) -> int:
        return self.A_u.shape[1]

    def _check_polytope(self):
        nu = self.nu
        for i in range(nu):
            for sign in (1.0, -1.0):
                c = np.zeros(nu)
                c[i] = sign
                res = linprog(c, A_ub=-self.A_u, b_ub=self.c_u, bounds=[(None, None)] * nu, method="highs")
                if res.status == 2:
                    raise ProblemError("input polytope is empty")
                if res.status == 3:
                    raise ProblemError("input polytope is unbounded")

    def f_at(self, x) -> np.ndarray:
        return evaluate_vector(self.f, x)

    def g_at(self, x) -> np.ndarray:
        return evaluate_matrix(self.g, x)

    def dynamics(self, x, u) -> np.ndarray:
        return self.f_at(x) + self.g_at(x) @ np.asarray(u, dtype=float)

    def input_margin(self, u) -> np.ndarray:
        return self.A_u @ np.asarray(u, dtype=float) + self.c_u


@dataclass
class SemialgebraicUnion:
    """Union of sets {x | s_1(x) < 0, ..., s_m(x) < 0}."""

    components: list[list[Polynomial]]

    def __post_init__(self):
        if not self.components:
            raise ProblemError("unsafe set needs at least one component")
        nv = {p.nvars for comp in self.components for p in comp}
        if any(not comp for comp in self.components):
            raise ProblemError("every unsafe component needs at least one inequality")
        if len(nv) != 1:
            raise ProblemError("unsafe polynomials disagree on variable count")

    @property
    def nvars(self) -> int:
        return self.components[0][0].nvars

    def __len__(self) -> int:
        return len(self.components)

    def member_mask(self, i: int, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        mask = np.ones(pts.shape[0], dtype=bool)
        for s in self.components[i]:
            mask &= np.asarray(s(pts)) < 0
        return mask

    def contains(self, point) -> bool:
        return any(self.member_mask(i, np.atleast_2d(point))[0] for i in range(len(self)))


@dataclass
class X0Spec:
    """Initial set as {phi >= 0}; ``phi=None`` means "taken from b0"."""

    phi: Polynomial | None = None


@dataclass
class SynthesisConfig:
    deg_b: int = 4
    deg_u: int = 3
    deg_sigma: int = 4
    deg_sigma2: int = 4
    deg_lambda1: int = 4
    deg_lambda2: int = 4
    deg_lambda3: int = 4
    deg_mu: int = 4
    eps: float = 1e-3
    gamma_threshold: float = 1e-3
    max_iterations: int = 50
    delta: float | None = None  # None: halving search from 1.0
    delta_min: float = 1e-4
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    normalize: bool = True
    x_eq: np.ndarray | None = None
    sample_box: np.ndarray | None = None  # (nx, 2) lo/hi for unsafe sampling
    n_unsafe_samples: int = 10_000
    seed: int = 0
    recon_tol: float = 1e-6
    solver_opts: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("deg_b", "deg_u", "deg_sigma", "deg_sigma2", "deg_lambda1", "deg_lambda2", "deg_lambda3", "deg_mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.gamma_threshold > 0:
            raise ValueError("gamma_threshold must be positive")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
