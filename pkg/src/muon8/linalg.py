"""Small dense linear algebra: norms, one-sided Jacobi SVD, polar factor, Newton-Schulz.

Matrices are 2-D ``float64`` numpy arrays. Heavy loops (matmul, Jacobi
sweeps) run in the compiled core when available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import NumericalError, RankError, ShapeError, ZeroInputError

# Quintic Newton-Schulz coefficients from the reference Muon implementation
# (Jordan et al., 2024).
NS_COEFFS = (3.4445, -4.7750, 2.0315)
NS_STEPS = 5
NS_EPS = 1e-7

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
POLAR_RANK_RTOL = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``a`` to a C-contiguous finite float64 2-D array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericalError(f"{name}: contains NaN or Inf")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return kernels.matmul(a, b)


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return math.sqrt(float(np.sum(a * a)))


def max_abs(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.max(np.abs(a))) if a.size else 0.0


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def _complete_basis(u: np.ndarray, known: int) -> None:
    """Fill columns ``known:`` of ``u`` with an orthonormal completion (in place)."""
    m, r = u.shape
    col = known
    for e in range(m):
        if col == r:
            return
        cand = np.zeros(m)
        cand[e] = 1.0
        for _ in range(2):
            cand -= u[:, :col] @ (u[:, :col].T @ cand)
        nrm = np.linalg.norm(cand)
        if nrm > 1e-8:
            u[:, col] = cand / nrm
            col += 1


def _svd_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, n = a.shape
    w = np.asfortranarray(a.copy())
    v = np.asfortranarray(np.eye(n))
    sweeps = kernels.jacobi_sweeps(w, v, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if sweeps < 0:
        raise NumericalError(
            f"thin_svd: Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
            f"(shape {a.shape}, frobenius norm {frobenius_norm(a):.6g}, "
            f"max abs {max_abs(a):.6g})"
        )
    s = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros((m, n))
    nz = s > 0.0
    u[:, nz] = w[:, nz] / s[nz]
    k = int(nz.sum())
    if k < n:
        _complete_basis(u, k)
    return u, s, np.ascontiguousarray(v.T)


def thin_svd(a) -> SvdResult:
    """Thin SVD ``a = u @ diag(s) @ vt`` by one-sided Jacobi with cyclic sweeps.

    Singular values are nonincreasing. Each left singular vector is signed so
    that its largest-magnitude entry is nonnegative, which makes the output
    deterministic.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m >= n:
        u, s, vt = _svd_tall(a)
    else:
        ut, s, vtt = _svd_tall(a.T)
        u, vt = np.ascontiguousarray(vtt.T), np.ascontiguousarray(ut.T)
    lead = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    flip = np.where(lead < 0, -1.0, 1.0)
    u = u * flip
    vt = vt * flip[:, None]
    return SvdResult(u=np.ascontiguousarray(u), s=s, vt=vt)


def polar_factor(a) -> np.ndarray:
    """Orthogonal polar factor ``u @ vt`` of a full-column-rank matrix."""
    res = thin_svd(a)
    s_max, s_min = float(res.s[0]), float(res.s[-1])
    if s_min <= POLAR_RANK_RTOL * s_max:
        raise RankError(
            f"polar_factor: rank deficient, smallest singular value {s_min:.3e} "
            f"(largest {s_max:.3e})",
            s_min,
        )
    return kernels.matmul(res.u, res.vt)


def newton_schulz(m, steps: int = NS_STEPS, eps: float = NS_EPS) -> np.ndarray:
    """Approximate the polar factor of ``m`` with the quintic Newton-Schulz iteration.

    The input is scaled by ``1 / (||m||_F + eps)``; tall inputs are iterated
    on their transpose so the Gram matrix has the smaller dimension.
    """
    if steps < 1:
        raise ValueError(f"newton_schulz: steps must be >= 1, got {steps}")
    if not eps > 0:
        raise ValueError(f"newton_schulz: eps must be > 0, got {eps}")
    x = as_matrix(m, "newton_schulz input")
    norm = frobenius_norm(x)
    if norm == 0.0:
        raise ZeroInputError("newton_schulz: zero input matrix")
    a, b, c = NS_COEFFS
    x = x / (norm + eps)
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = np.ascontiguousarray(x.T)
    mm = kernels.matmul
    for _ in range(steps):
        gram = mm(x, np.ascontiguousarray(x.T))
        poly = b * gram + c * mm(gram, gram)
        x = a * x + mm(poly, x)
    if transposed:
        x = np.ascontiguousarray(x.T)
    return x
