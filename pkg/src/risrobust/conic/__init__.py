"""Solver-agnostic conic modeling with complex data lowered to real cones."""

import numpy as np

from .expr import Affine, Variable, bmat, concat, kron, lift, outer, vec
from .lmi import s_procedure_lmi, schur_lift, sign_definiteness_lmi
from .program import ConicProgram, SolveReport, Tolerances, hermitian_embed, solve


class InfeasibleSubproblem(RuntimeError):
    """A subproblem of an iterative scheme came back infeasible."""

    def __init__(self, msg, iteration=None, status=None):
        super().__init__(msg if iteration is None else f"{msg} (iteration {iteration})")
        self.iteration = iteration
        self.status = status


def svec_vec_identity(A, B, C, D):
    """Both sides of Tr(A^H B C D) = vec(A)^H (D^T kron B) vec(C)."""
    lhs = np.trace(A.conj().T @ B @ C @ D)
    rhs = vec(A).conj() @ np.kron(D.T, B) @ vec(C)
    return lhs, rhs


__all__ = ["Affine", "Variable", "ConicProgram", "SolveReport", "Tolerances", "solve",
           "hermitian_embed", "schur_lift", "s_procedure_lmi", "sign_definiteness_lmi",
           "bmat", "concat", "kron", "lift", "outer", "vec", "InfeasibleSubproblem"]
