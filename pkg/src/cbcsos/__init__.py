"""Control barrier certificates by sum-of-squares programming.

Submodules: :mod:`~cbcsos.polyalg` (sparse polynomials),
:mod:`~cbcsos.sosprog` (SOS modeling), :mod:`~cbcsos.sdpbackend`
(SDP solve, SDPA I/O), :mod:`~cbcsos.synth` (alternation),
:mod:`~cbcsos.verify`, :mod:`~cbcsos.runtime` and :mod:`~cbcsos.cli`.
"""

from .polyalg import Polynomial, lie_derivative
from .sosprog import SosProgram, check_sos
from .synth import CbcCertificate, ControlAffineSystem, SemialgebraicUnion, SynthesisConfig, synthesize

__version__ = "0.1.0"

__all__ = [
    "Polynomial", "lie_derivative", "SosProgram", "check_sos",
    "CbcCertificate", "ControlAffineSystem", "SemialgebraicUnion", "SynthesisConfig", "synthesize",
]
