"""
Sparse solvers: a reusable direct factorization and conjugate gradients.

Matrices are ``scipy.sparse`` CSR/CSC arrays; the direct factorization is
SuperLU with a COLAMD column ordering and relaxed diagonal pivoting.
Minimum-degree orderings on ``A + A^T`` were slower to compute by orders of
magnitude on saddle systems with a dense mean-pressure row.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SolverError(RuntimeError):
    """Base class for numerical solver failures."""


class SingularMatrixError(SolverError):
    pass


class IndefiniteMatrixError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class Factorization:
    """LU factors of a square sparse matrix, reusable across solves."""

    def __init__(self, A: sp.spmatrix, ordering: str = "COLAMD", pivot_threshold: float = 0.1):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        try:
            self._lu = splu(A, permc_spec=ordering, diag_pivot_thresh=pivot_threshold)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"right-hand side has length {b.shape[0]}, expected {self.shape[0]}")
        return self._lu.solve(b)


def factorize(A: sp.spmatrix, **options) -> Factorization:
    """See :class:`Factorization` for ``ordering`` and ``pivot_threshold``."""
    return Factorization(A, **options)


def solve(f: Factorization, b: np.ndarray) -> np.ndarray:
    return f.solve(b)


def cg_solve(A: sp.spmatrix, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None,
             x0: np.ndarray | None = None) -> np.ndarray:
    """Conjugate gradients for SPD ``A`` to relative residual ``tol``.

    Raises
    ------
    IndefiniteMatrixError
        On a search direction with non-positive curvature.
    ConvergenceError
        If the residual target is not met within ``maxiter`` (default
        ``10 * n``) iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    p = r.copy()
    rr = r @ r
    for _ in range(maxiter):
        if np.sqrt(rr) <= tol * bnorm:
            return x
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0.0:
            raise IndefiniteMatrixError("matrix is not positive definite (non-positive curvature)")
        alpha = rr / curv
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= tol * bnorm:
        return x
    raise ConvergenceError(f"CG did not reach relative residual {tol} in {maxiter} iterations")
