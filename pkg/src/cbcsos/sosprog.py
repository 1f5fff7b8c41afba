"""SOS programs over polynomial decision variables.

Unknown polynomials are vectors of scalar coefficient variables; every
constraint ``expr in Sigma[x]`` is compiled by coefficient matching against a
Gram matrix ``Z(x)^T Q Z(x)`` with ``Z`` the full monomial basis of degree
``ceil(deg(expr) / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sdpbackend
from .polyalg import Monomial, Polynomial, grlex_key, monomial_basis

CONST = -1

DEFAULT_RECON_TOL = 1e-6


class BilinearError(ValueError):
    """Product of two expressions that both depend on decision variables."""

    def __init__(self, left: str, right: str):
        super().__init__(f"bilinear term: '{left}' multiplied by '{right}' (both are unknowns)")
        self.pair = (left, right)


class ReconstructionError(RuntimeError):
    def __init__(self, report: dict):
        lines = ", ".join(f"{k}: {v:.3g}" for k, v in report.items())
        super().__init__(f"Gram reconstruction residual too large ({lines})")
        self.report = report


def _scalar(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating))


class PolyExpr:
    """Polynomial whose coefficients are affine in decision variables.

    ``coeffs[mono][var]`` is the coefficient of decision variable ``var`` in the
    coefficient of ``mono``; ``var == CONST`` holds the constant part.
    """

    __slots__ = ("nvars", "coeffs", "program")

    def __init__(self, nvars: int, coeffs=None, program: SosProgram | None = None):
        self.nvars = nvars
        self.coeffs: dict[Monomial, dict[int, float]] = coeffs if coeffs is not None else {}
        self.program = program

    @classmethod
    def lift(cls, p, nvars: int | None = None, program=None) -> PolyExpr:
        if isinstance(p, PolyExpr):
            return p
        if isinstance(p, Polynomial):
            return cls(p.nvars, {m: {CONST: c} for m, c in p.items()}, program)
        if _scalar(p):
            if nvars is None:
                raise ValueError("nvars required to lift a scalar")
            v = float(p)
            return cls(nvars, {(0,) * nvars: {CONST: v}} if v else {}, program)
        raise TypeError(f"cannot use {type(p).__name__} in a polynomial expression")

    # -- structure ------------------------------------------------------------
    def decision_vars(self) -> set[int]:
        out = set()
        for lin in self.coeffs.values():
            out.update(v for v in lin if v != CONST)
        return out

    def is_constant(self) -> bool:
        return not self.decision_vars()

    @property
    def degree(self) -> int:
        return max((sum(m) for m, lin in self.coeffs.items() if any(c != 0.0 for c in lin.values())), default=-1)

    def constant_part(self) -> Polynomial:
        return Polynomial(self.nvars, {m: lin.get(CONST, 0.0) for m, lin in self.coeffs.items()})

    def _owner(self, var: int) -> str:
        if self.program is None:
            return f"v{var}"
        return self.program.var_owner[var]

    # -- arithmetic -----------------------------------------------------------
    def _other(self, other):
        if isinstance(other, (PolyExpr, Polynomial)) or _scalar(other):
            o = PolyExpr.lift(other, self.nvars)
            if o.nvars != self.nvars:
                raise ValueError(f"variable count mismatch: {self.nvars} vs {o.nvars}")
            return o
        return None

    def __add__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        out = {m: dict(lin) for m, lin in self.coeffs.items()}
        for m, lin in o.coeffs.items():
            tgt = out.setdefault(m, {})
            for v, c in lin.items():
                tgt[v] = tgt.get(v, 0.0) + c
        return PolyExpr(self.nvars, out, self.program or o.program)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        return o + (-self)

    def __mul__(self, other):
        if _scalar(other):
            s = float(other)
            return PolyExpr(self.nvars, {m: {v: c * s for v, c in lin.items()} for m, lin in self.coeffs.items()}, self.program)
        o = self._other(other)
        if o is None:
            return NotImplemented
        mine, theirs = self.decision_vars(), o.decision_vars()
        if mine and theirs:
            raise BilinearError(self._owner(min(mine)), o._owner(min(theirs)))
        if mine:
            expr, fixed = self, o.constant_part()
        else:
            expr, fixed = o, self.constant_part()
        out: dict[Monomial, dict[int, float]] = {}
        for m2, c2 in fixed.items():
            for m1, lin in expr.coeffs.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                tgt = out.setdefault(m, {})
                for v, c in lin.items():
                    tgt[v] = tgt.get(v, 0.0) + c * c2
        return PolyExpr(self.nvars, out, self.program or o.program)

    __rmul__ = __mul__

    def differentiate(self, var_index: int) -> PolyExpr:
        out = {}
        for m, lin in self.coeffs.items():
            e = m[var_index]
            if e:
                dm = list(m)
                dm[var_index] -= 1
                out[tuple(dm)] = {v: c * e for v, c in lin.items()}
        return PolyExpr(self.nvars, out, self.program)

    def evaluate(self, values: np.ndarray) -> Polynomial:
        """Substitute decision variable values."""
        out = {}
        for m, lin in self.coeffs.items():
            out[m] = sum(c * (1.0 if v == CONST else values[v]) for v, c in lin.items())
        return Polynomial(self.nvars, out)


@dataclass
class PolyDecisionVar:
    name: str
    nvars: int
    degree: int
    basis: list[Monomial]
    indices: list[int]
    expr: PolyExpr
    sos: bool = False

    def value(self, values: np.ndarray, tol: float = 1e-12) -> Polynomial:
        return self.expr.evaluate(values).truncate(tol)


@dataclass
class SosConstraint:
    name: str
    expr: PolyExpr


@dataclass
class GramCertificate:
    basis: list[Monomial]
    Q: np.ndarray
    min_eigenvalue: float
    residual: float

    def polynomial(self) -> Polynomial:
        return gram_polynomial(self.basis, self.Q)


def gram_polynomial(basis, Q) -> Polynomial:
    nv = len(basis[0]) if basis else 1
    out: dict[Monomial, float] = {}
    n = len(basis)
    for i in range(n):
        for j in range(n):
            m = tuple(a + b for a, b in zip(basis[i], basis[j]))
            out[m] = out.get(m, 0.0) + Q[i, j]
    return Polynomial(nv, out)


@dataclass
class CompiledProgram:
    sdp: sdpbackend.SdpProblem
    bases: list[list[Monomial]]  # per constraint (same order as program.constraints)
    blocks: list[int]  # SDP block index per constraint (-1 if the expression vanishes)


@dataclass
class SosResult:
    status: str
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polys: dict[str, Polynomial] = field(default_factory=dict)
    grams: dict[str, GramCertificate] = field(default_factory=dict)
    objective: float = float("nan")
    sdp_solution: sdpbackend.SdpSolution | None = None

    @property
    def ok(self) -> bool:
        return self.status == sdpbackend.OPTIMAL

    def __getitem__(self, name: str) -> Polynomial:
        return self.polys[name]


class SosProgram:
    def __init__(self, nvars: int, name: str = "sosp"):
        self.nvars = nvars
        self.name = name
        self.var_owner: list[str] = []
        self.poly_vars: dict[str, PolyDecisionVar] = {}
        self.constraints: list[SosConstraint] = []
        self.objective: PolyExpr | None = None

    @property
    def n_coefficients(self) -> int:
        return len(self.var_owner)

    def new_poly_var(self, name: str, degree: int, sos: bool = False) -> PolyDecisionVar:
        """A fresh unknown polynomial with one coefficient per basis monomial.

        With ``sos=True`` the degree is rounded down to even and an SOS
        constraint on the polynomial itself is registered.
        """
        if degree < 0:
            raise ValueError("degree must be >= 0")
        if name in self.poly_vars:
            raise ValueError(f"duplicate decision variable name {name!r}")
        if sos:
            degree -= degree % 2
        basis = monomial_basis(self.nvars, degree)
        start = len(self.var_owner)
        idx = list(range(start, start + len(basis)))
        self.var_owner.extend([name] * len(basis))
        expr = PolyExpr(self.nvars, {m: {i: 1.0} for m, i in zip(basis, idx)}, self)
        var = PolyDecisionVar(name, self.nvars, degree, basis, idx, expr, sos)
        self.poly_vars[name] = var
        if sos:
            self.add_sos_constraint(expr, f"{name}:sos")
        return var

    def new_scalar(self, name: str) -> PolyDecisionVar:
        return self.new_poly_var(name, 0)

    def add_sos_constraint(self, expr, name: str | None = None) -> int:
        expr = PolyExpr.lift(expr, self.nvars, self)
        if expr.nvars != self.nvars:
            raise ValueError(f"constraint has {expr.nvars} vars, program has {self.nvars}")
        self.constraints.append(SosConstraint(name or f"c{len(self.constraints)}", expr))
        return len(self.constraints) - 1

    def maximize(self, expr) -> None:
        expr = PolyExpr.lift(expr, self.nvars, self)
        if expr.degree > 0:
            raise ValueError("objective must be a scalar linear form")
        self.objective = expr

    # -- compilation ------------------------------------------------------------
    def compile(self) -> CompiledProgram:
        b = sdpbackend.SdpBuilder()
        b.add_free(self.n_coefficients, [f"{o}[{i}]" for i, o in enumerate(self.var_owner)])
        if self.objective is not None:
            for lin in self.objective.coeffs.values():
                for v, c in lin.items():
                    if v != CONST:
                        b.obj_free[v] = b.obj_free.get(v, 0.0) + c
        bases, blocks = [], []
        for con in self.constraints:
            deg = con.expr.degree
            if deg < 0:
                bases.append([])
                blocks.append(-1)
                continue
            basis = monomial_basis(self.nvars, math.ceil(deg / 2))
            k = b.add_block(len(basis))
            pairs: dict[Monomial, list] = {}
            for i in range(len(basis)):
                for j in range(i, len(basis)):
                    m = tuple(x + y for x, y in zip(basis[i], basis[j]))
                    pairs.setdefault(m, []).append((k, i, j, 1.0 if i == j else 2.0))
            monos = set(pairs) | {m for m, lin in con.expr.coeffs.items() if lin}
            for m in sorted(monos, key=grlex_key):
                lin = con.expr.coeffs.get(m, {})
                free_terms = [(v, -c) for v, c in sorted(lin.items()) if v != CONST and c != 0.0]
                b.add_constraint(pairs.get(m, []), free_terms, lin.get(CONST, 0.0))
            bases.append(basis)
            blocks.append(k)
        return CompiledProgram(b.build(), bases, blocks)

    def extract_solution(self, compiled: CompiledProgram, solution: sdpbackend.SdpSolution,
                         recon_tol: float = DEFAULT_RECON_TOL, psd_tol: float | None = None,
                         truncate_tol: float = 1e-12) -> SosResult:
        """Substitute solver values and build a Gram certificate per constraint.

        Raises :class:`ReconstructionError` when any certificate misses its
        polynomial by more than ``recon_tol`` or is not PSD within ``psd_tol``.
        """
        if psd_tol is None:
            psd_tol = sdpbackend.default_tolerances()[1]
        values = np.asarray(solution.free, dtype=float)
        result = SosResult(solution.status, values, objective=solution.objective, sdp_solution=solution)
        for name, var in self.poly_vars.items():
            result.polys[name] = var.value(values, truncate_tol)
        bad = {}
        for con, basis, k in zip(self.constraints, compiled.bases, compiled.blocks):
            target = con.expr.evaluate(values)
            if k < 0:
                result.grams[con.name] = GramCertificate([], np.zeros((0, 0)), 0.0, 0.0)
                continue
            Q = 0.5 * (solution.blocks[k] + solution.blocks[k].T)
            diff = gram_polynomial(basis, Q) - target
            res = diff.max_abs_coeff()
            eig = float(np.linalg.eigvalsh(Q)[0])
            result.grams[con.name] = GramCertificate(basis, Q, eig, res)
            if res > recon_tol or eig < -psd_tol:
                bad[con.name] = max(res, -eig)
        if bad:
            raise ReconstructionError(bad)
        return result

    def solve(self, recon_tol: float = DEFAULT_RECON_TOL, dump=None, **solver_opts) -> SosResult:
        compiled = self.compile()
        if dump is not None:
            dump(self.name, compiled.sdp)
        sol = sdpbackend.solve(compiled.sdp, **solver_opts)
        if not sol.ok:
            return SosResult(sol.status, sdp_solution=sol)
        return self.extract_solution(compiled, sol, recon_tol)


# Functional wrappers -------------------------------------------------------------

def add_poly_var(program: SosProgram, name: str, degree: int, sos: bool = False) -> PolyDecisionVar:
    return program.new_poly_var(name, degree, sos)


def add_sos_constraint(program: SosProgram, expr, name: str | None = None) -> int:
    return program.add_sos_constraint(expr, name)


def compile_to_sdp(program: SosProgram) -> CompiledProgram:
    return program.compile()


@dataclass
class SosCheck:
    feasible: bool
    status: str
    certificate: GramCertificate | None = None


def check_sos(p: Polynomial, recon_tol: float = DEFAULT_RECON_TOL, **solver_opts) -> SosCheck:
    """Decide membership of ``p`` in the SOS cone via its Gram SDP.

    A solver failure is reported with ``status == 'numerical_failure'`` and is
    never folded into "infeasible".
    """
    if p.is_zero():
        return SosCheck(True, sdpbackend.OPTIMAL, GramCertificate([(0,) * p.nvars], np.zeros((1, 1)), 0.0, 0.0))
    if p.degree % 2:
        return SosCheck(False, sdpbackend.INFEASIBLE)
    prog = SosProgram(p.nvars, "check_sos")
    prog.add_sos_constraint(p, "p")
    compiled = prog.compile()
    sol = sdpbackend.solve(compiled.sdp, **solver_opts)
    if not sol.ok:
        return SosCheck(False, sol.status)
    try:
        res = prog.extract_solution(compiled, sol, recon_tol)
    except ReconstructionError:
        return SosCheck(False, sdpbackend.NUMERICAL_FAILURE)
    return SosCheck(True, sdpbackend.OPTIMAL, res.grams["p"])
