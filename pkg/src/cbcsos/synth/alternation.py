from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..polyalg import Polynomial
from .lqr import LqrInit, lqr_init
from .steps import build_theorem2_program, enlarge_step, refine_step, solve_barrier_program
from .system import ControlAffineSystem, SemialgebraicUnion, SynthesisConfig, X0Spec

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"


def infeasible_at(k: int) -> str:
    return f"infeasible_at_{k}"


@dataclass
class CbcCertificate:
    b: Polynomial
    u: list[Polynomial]
    multipliers: dict
    gamma_history: list[float]
    iterates: list[Polynomial]  # b0 first, then every accepted enlargement
    status: str
    log: list[dict] = field(default_factory=list)
    init: LqrInit | None = None

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def synthesize(system: ControlAffineSystem, unsafe: SemialgebraicUnion, config: SynthesisConfig,
               x0: X0Spec | None = None, domain=None, on_record: Callable[[dict], None] | None = None,
               dump=None) -> CbcCertificate:
    """Grow a barrier certificate by alternating enlargement and refinement.

    The loop stops when gamma drops to ``config.gamma_threshold`` or below
    (converged), when a step is infeasible (``infeasible_at_k``, keeping the
    last valid iterate), or after ``config.max_iterations`` enlargements.
    """
    records: list[dict] = []

    def emit(k, rec):
        rec = {"k": k, **rec}
        rec.setdefault("gamma", None)
        records.append(rec)
        log.info("k=%d %s %s gamma=%s", k, rec["step"], rec["status"], rec["gamma"])
        if on_record is not None:
            on_record(rec)

    x_eq = np.zeros(system.nx) if config.x_eq is None else np.asarray(config.x_eq, float)
    init = lqr_init(system, x_eq, config, unsafe, domain)
    b = init.b0
    t2 = build_theorem2_program(system, unsafe, x0, b, config, name="init")
    out = solve_barrier_program(t2, config, dump, step="init")
    emit(0, out.record)
    if not out.ok:
        return CbcCertificate(b, [], {}, [], [b], infeasible_at(0), records, init)
    u, lam1, lam2 = out.values["u"], out.values["lambda1"], out.values["lambda2"]
    multipliers = {"sigma": out.values["sigma"], "lambda1": lam1, "lambda2": lam2}
    if "sigma2" in out.values:
        multipliers["sigma2"] = out.values["sigma2"]

    gammas: list[float] = []
    iterates = [b]
    status = MAX_ITER
    for k in range(1, config.max_iterations + 1):
        if config.normalize:
            scale = b.max_abs_coeff()
            b_ref, lam1_ref = b / scale, [l * scale for l in lam1]
        else:
            b_ref, lam1_ref = b, lam1
        enl = enlarge_step(b_ref, u, lam1_ref, lam2, system, unsafe, config, dump, step="enlarge")
        emit(k, enl.record)
        if not enl.ok:
            status = infeasible_at(k)
            break
        if enl.gamma > 0:
            b = enl.values["b"]
            gammas.append(enl.gamma)
            iterates.append(b)
            multipliers = {"sigma": enl.values["sigma"], "mu": enl.values["mu"],
                           "lambda1": lam1_ref, "lambda2": lam2, "lambda3": enl.values["lambda3"]}
        if enl.gamma <= config.gamma_threshold:
            status = CONVERGED
            break
        ref = refine_step(b, system, config, dump, step="refine")
        emit(k, ref.record)
        if not ref.ok:
            status = infeasible_at(k)
            break
        u, lam1, lam2 = ref.values["u"], ref.values["lambda1"], ref.values["lambda2"]
        # the new b is certified by the refined controller too
        multipliers = dict(multipliers, lambda1=lam1, lambda2=lam2)
    return CbcCertificate(b, list(u), multipliers, gammas, iterates, status, records, init)
