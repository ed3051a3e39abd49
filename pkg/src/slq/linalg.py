"""Symmetric linear-algebra helpers: pseudo-inverse, range tests, PSD reports.

Everything here deals with real symmetric matrices. Eigendecomposition-based
pseudo-inverses are used instead of SVD so that the cutoff is applied to
signed eigenvalues of the symmetric matrix, keeping the result symmetric by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Relative eigenvalue cutoff below which a direction counts as null.
PINV_CUTOFF = 1e-10
# Range-inclusion residual scale.
RANGE_TOL = 1e-8
# PSD slack for eigenvalue tests.
PSD_TOL = 1e-9


def sym(M: np.ndarray) -> np.ndarray:
    """Symmetrize: (M + M') / 2. Works on stacks (..., k, k)."""
    return (M + np.swapaxes(M, -1, -2)) / 2.0


def pseudo_inverse(M: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse of a real symmetric matrix.

    Eigenvalues with |lambda| <= PINV_CUTOFF * max|lambda| are treated as
    zero and excluded; the rest are inverted. The zero matrix returns the
    zero matrix.
    """
    return pseudo_inverse_batched(np.asarray(M, dtype=float)[None])[0]


def pseudo_inverse_batched(stack: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of a stack (..., k, k) of symmetric matrices."""
    w, V = np.linalg.eigh(sym(stack))
    scale = np.max(np.abs(w), axis=-1, keepdims=True)
    cutoff = PINV_CUTOFF * scale
    keep = np.abs(w) > cutoff
    inv_w = np.where(keep, np.divide(1.0, w, out=np.zeros_like(w), where=keep), 0.0)
    return (V * inv_w[..., None, :]) @ np.swapaxes(V, -1, -2)


def range_included(S: np.ndarray, R: np.ndarray) -> bool:
    """Whether every column of S lies in the range of symmetric R.

    Tested as ||(I - R R^+) S||_F <= RANGE_TOL * (1 + ||S||_F).
    """
    return range_residual(S, R) <= RANGE_TOL * (1.0 + float(np.linalg.norm(S)))


def range_residual(S: np.ndarray, R: np.ndarray) -> float:
    S = np.asarray(S, dtype=float)
    R = np.asarray(R, dtype=float)
    proj = np.eye(R.shape[0]) - R @ pseudo_inverse(R)
    return float(np.linalg.norm(proj @ S))


def schur_psd_test(Q: np.ndarray, S: np.ndarray, R: np.ndarray, tol: float = PSD_TOL) -> bool:
    """Positive semidefiniteness of the block matrix [[Q, S'], [S, R]].

    Decided through the generalized Schur complement: R >= 0, the columns of
    S lie in the range of R, and Q - S' R^+ S >= 0 (all up to tol).
    """
    Q = np.asarray(Q, dtype=float)
    S = np.asarray(S, dtype=float)
    R = np.asarray(R, dtype=float)
    if float(np.linalg.eigvalsh(sym(R)).min()) < -tol:
        return False
    if not range_included(S, R):
        return False
    comp = sym(Q - S.T @ pseudo_inverse(R) @ S)
    return float(np.linalg.eigvalsh(comp).min()) >= -tol


@dataclass
class PsdReport:
    """Eigenvalue summary of a symmetric matrix.

    is_psd allows the usual numerical slack; is_uniformly_pd_delta is the
    positivity margin clamped at zero (so 0 means "not uniformly positive").
    """

    min_eigenvalue: float
    is_psd: bool = field(init=False)
    is_uniformly_pd_delta: float = field(init=False)

    def __post_init__(self) -> None:
        self.is_psd = bool(self.min_eigenvalue >= -PSD_TOL)
        self.is_uniformly_pd_delta = max(self.min_eigenvalue, 0.0)


def psd_report(M: np.ndarray) -> PsdReport:
    return PsdReport(min_eigenvalue=float(np.linalg.eigvalsh(sym(np.asarray(M))).min()))


def min_eig_batched(stack: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each symmetric matrix in a stack (..., k, k)."""
    return np.linalg.eigvalsh(sym(stack))[..., 0]


def spectral_norm_batched(stack: np.ndarray) -> np.ndarray:
    """Largest singular value of each matrix in a stack (..., m, k)."""
    return np.linalg.svd(np.asarray(stack, dtype=float), compute_uv=False)[..., 0]
