"""Contraction-metric certificates for periodic orbits of polynomial systems."""
from .polyring import PolyMatrix, Polynomial, VectorField
from .frontend import ProblemSpec, load_problem, parse_problem, validate
from .soscert import (build_contraction_program, build_invariance_program, build_rate_program,
                      putinar_augment)
from .sdp import Certificate, SdpProblem, SolverOptions, extract_certificate, lower, solve
from .analysis import integrate, nagumo_scan, verify_certificate
from .certio import read_certificate, write_certificate

__all__ = [
    "PolyMatrix", "Polynomial", "VectorField",
    "ProblemSpec", "load_problem", "parse_problem", "validate",
    "build_contraction_program", "build_invariance_program", "build_rate_program",
    "putinar_augment",
    "Certificate", "SdpProblem", "SolverOptions", "extract_certificate", "lower", "solve",
    "integrate", "nagumo_scan", "verify_certificate",
    "read_certificate", "write_certificate",
]
__version__ = "0.1.0"
