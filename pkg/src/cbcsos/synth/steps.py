"""The three convex SOS programs used by the alternation.

* :func:`build_theorem2_program`: barrier conditions with any subset of
  (b, u, lambda1, lambda2) known. Used at initialization with b = b0.
* :func:`enlarge_step`: new b that keeps every old certificate condition
  with u, lambda1, lambda2 frozen, contains the old set, and sits at least
  gamma above zero on the old boundary; gamma is maximized.
* :func:`refine_step`: new u, lambda1, lambda2 for a fixed b.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .. import sdpbackend
from ..polyalg import Polynomial, lie_derivative
from ..sosprog import PolyDecisionVar, ReconstructionError, SosProgram, SosResult
from .system import ControlAffineSystem, SemialgebraicUnion, SynthesisConfig, X0Spec


def _expr(v):
    return v.expr if isinstance(v, PolyDecisionVar) else v


def _value(v, result: SosResult):
    return result.polys[v.name] if isinstance(v, PolyDecisionVar) else v


def _input_rows(system: ControlAffineSystem, u: list):
    """Row r of A_u u + c_u as an expression."""
    rows = []
    for r in range(len(system.c_u)):
        e = system.c_u[r]
        for j, uj in enumerate(u):
            a = system.A_u[r, j]
            if a != 0.0:
                e = uj * a + e
        rows.append(e)
    return rows


def _add_unsafe_constraints(prog: SosProgram, b, unsafe: SemialgebraicUnion, config: SynthesisConfig):
    sigmas = []
    for i, comp in enumerate(unsafe.components):
        expr = -b - config.eps
        sig_i = []
        for j, s in enumerate(comp):
            sig = prog.new_poly_var(f"sigma_{i + 1}_{j + 1}", config.deg_sigma, sos=True)
            expr = expr + sig.expr * s
            sig_i.append(sig)
        prog.add_sos_constraint(expr, f"unsafe_{i + 1}")
        sigmas.append(sig_i)
    return sigmas


@dataclass
class StepOutcome:
    """Result of one SOS solve, plus the handles needed to read it."""

    status: str
    result: SosResult | None = None
    values: dict = field(default_factory=dict)
    gamma: float = float("nan")
    record: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == sdpbackend.OPTIMAL


def _run(prog: SosProgram, config: SynthesisConfig, dump, step: str) -> tuple[str, SosResult | None, dict]:
    t0 = time.perf_counter()
    diag: dict = {}
    try:
        res = prog.solve(recon_tol=config.recon_tol, dump=dump, **config.solver_opts)
        status = res.status
        if res.sdp_solution is not None:
            diag = res.sdp_solution.diagnostics
    except ReconstructionError as exc:
        res, status = None, sdpbackend.NUMERICAL_FAILURE
        diag = {"residuals": {"reconstruction": exc.report}}
    record = {
        "step": step,
        "status": status,
        "solver_iterations": diag.get("iterations"),
        "residuals": diag.get("residuals"),
        "wall_time": time.perf_counter() - t0,
    }
    return status, res, record


# ---------------------------------------------------------------------------

@dataclass
class BarrierProgram:
    program: SosProgram
    b: object
    u: list
    lam1: list
    lam2: object
    sigma: list
    sigma2: object = None


def build_theorem2_program(system: ControlAffineSystem, unsafe: SemialgebraicUnion, x0: X0Spec | None,
                           b: Polynomial | None, config: SynthesisConfig, *, u=None, lam1=None, lam2=None,
                           name: str = "barrier") -> BarrierProgram:
    """Barrier-certificate SOSP; ``None`` arguments become decision variables.

    Unknown b together with unknown u, lambda1 or lambda2 raises
    :class:`~cbcsos.sosprog.BilinearError` while the constraints are built.
    """
    n = system.nx
    prog = SosProgram(n, name)
    bv = prog.new_poly_var("b", config.deg_b) if b is None else b
    uv = [prog.new_poly_var(f"u_{j + 1}", config.deg_u) for j in range(system.nu)] if u is None else list(u)
    l1 = ([prog.new_poly_var(f"lambda1_{r + 1}", config.deg_lambda1) for r in range(len(system.c_u))]
          if lam1 is None else list(lam1))
    l2 = prog.new_poly_var("lambda2", config.deg_lambda2) if lam2 is None else lam2

    be = _expr(bv)
    sigmas = _add_unsafe_constraints(prog, be, unsafe, config)
    sigma2 = None
    if x0 is not None and x0.phi is not None:
        sigma2 = prog.new_poly_var("sigma2", config.deg_sigma2, sos=True)
        prog.add_sos_constraint(be - sigma2.expr * x0.phi, "initial_set")
    ue = [_expr(v) for v in uv]
    for r, row in enumerate(_input_rows(system, ue)):
        prog.add_sos_constraint(row - _expr(l1[r]) * be, f"input_{r + 1}")
    lie = lie_derivative(be, system.f, system.g, ue)
    prog.add_sos_constraint(lie - _expr(l2) * be, "invariance")
    return BarrierProgram(prog, bv, uv, l1, l2, sigmas, sigma2)


def solve_barrier_program(t2: BarrierProgram, config: SynthesisConfig, dump=None, step: str = "init") -> StepOutcome:
    status, res, record = _run(t2.program, config, dump, step)
    out = StepOutcome(status, res, record=record)
    if res is not None and res.ok:
        out.values = {
            "b": _value(t2.b, res),
            "u": [_value(v, res) for v in t2.u],
            "lambda1": [_value(v, res) for v in t2.lam1],
            "lambda2": _value(t2.lam2, res),
            "sigma": [[_value(s, res) for s in comp] for comp in t2.sigma],
        }
        if t2.sigma2 is not None:
            out.values["sigma2"] = _value(t2.sigma2, res)
    return out


def build_enlarge_program(b_prev, u_prev, lam1_prev, lam2_prev, system, unsafe, config) -> BarrierProgram:
    t2 = build_theorem2_program(system, unsafe, None, None, config, u=u_prev, lam1=lam1_prev, lam2=lam2_prev,
                                name="enlarge")
    prog = t2.program
    be = t2.b.expr
    mu = prog.new_poly_var("mu", config.deg_mu, sos=True)
    prog.add_sos_constraint(be - mu.expr * b_prev, "containment")
    lam3 = prog.new_poly_var("lambda3", config.deg_lambda3)
    gamma = prog.new_scalar("gamma")
    prog.add_sos_constraint(be - lam3.expr * b_prev - gamma.expr, "boundary_gap")
    prog.maximize(gamma.expr)
    return t2


def enlarge_step(b_prev: Polynomial, u_prev, lam1_prev, lam2_prev, system: ControlAffineSystem,
                 unsafe: SemialgebraicUnion, config: SynthesisConfig, dump=None, step: str = "enlarge") -> StepOutcome:
    """Maximize gamma over new b with the controller and lambda1, lambda2 frozen.

    ``b_prev`` enters only through the containment and boundary-gap terms,
    so rescaling it is absorbed by mu and lambda3.
    """
    t2 = build_enlarge_program(b_prev, u_prev, lam1_prev, lam2_prev, system, unsafe, config)
    status, res, record = _run(t2.program, config, dump, step)
    out = StepOutcome(status, res, record=record)
    if res is not None and res.ok:
        out.gamma = float(res.polys["gamma"].coefficient((0,) * system.nx))
        out.values = {
            "b": res.polys["b"],
            "mu": res.polys["mu"],
            "lambda3": res.polys["lambda3"],
            "sigma": [[res.polys[s.name] for s in comp] for comp in t2.sigma],
        }
        record["gamma"] = out.gamma
    return out


def build_refine_program(b: Polynomial, system: ControlAffineSystem, config: SynthesisConfig) -> SosProgram:
    n = system.nx
    prog = SosProgram(n, "refine")
    u = [prog.new_poly_var(f"u_{j + 1}", config.deg_u) for j in range(system.nu)]
    ue = [v.expr for v in u]
    for r, row in enumerate(_input_rows(system, ue)):
        l1 = prog.new_poly_var(f"lambda1_{r + 1}", config.deg_lambda1)
        prog.add_sos_constraint(row - l1.expr * b, f"input_{r + 1}")
    l2 = prog.new_poly_var("lambda2", config.deg_lambda2)
    prog.add_sos_constraint(lie_derivative(b, system.f, system.g, ue) - l2.expr * b, "invariance")
    return prog


def refine_step(b: Polynomial, system: ControlAffineSystem, config: SynthesisConfig, dump=None,
                step: str = "refine") -> StepOutcome:
    prog = build_refine_program(b, system, config)
    status, res, record = _run(prog, config, dump, step)
    out = StepOutcome(status, res, record=record)
    if res is not None and res.ok:
        out.values = {
            "u": [res.polys[f"u_{j + 1}"] for j in range(system.nu)],
            "lambda1": [res.polys[f"lambda1_{r + 1}"] for r in range(len(system.c_u))],
            "lambda2": res.polys["lambda2"],
        }
    return out
