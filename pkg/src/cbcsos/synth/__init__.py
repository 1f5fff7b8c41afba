"""Barrier-certificate synthesis by bilinear alternation."""

from .alternation import CONVERGED, MAX_ITER, CbcCertificate, synthesize
from .lqr import LqrInit, RiccatiError, care_residual, care_solve, lqr_gain, lqr_init
from .steps import (
    build_enlarge_program,
    build_refine_program,
    build_theorem2_program,
    enlarge_step,
    refine_step,
    solve_barrier_program,
)
from .system import ControlAffineSystem, ProblemError, SemialgebraicUnion, SynthesisConfig, X0Spec

__all__ = [
    "CONVERGED", "MAX_ITER", "CbcCertificate", "synthesize",
    "LqrInit", "RiccatiError", "care_residual", "care_solve", "lqr_gain", "lqr_init",
    "build_enlarge_program", "build_refine_program", "build_theorem2_program",
    "enlarge_step", "refine_step", "solve_barrier_program",
    "ControlAffineSystem", "ProblemError", "SemialgebraicUnion", "SynthesisConfig", "X0Spec",
]
