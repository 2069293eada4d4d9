"""Core operations on the manifold of fixed-rank symmetric PSD matrices.

Points are kept in factored form Z = U S U^T with U an n-by-r matrix with
orthonormal columns and S a symmetric r-by-r core.  Dense n-by-n symmetric
matrices only appear at module boundaries; the iterative drivers in
:mod:`spsdflow.rgd` and :mod:`spsdflow.flows` work on the factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Orthonormality drift tolerance for stored factors.
TAU_ORTH = 1e-10
# Gradient norm below which a point is treated as stationary.
TAU_GRAD = 1e-8


def sym(A: np.ndarray) -> np.ndarray:
    """Symmetric part (A + A^T) / 2."""
    return 0.5 * (A + A.T)


def frob(A: np.ndarray) -> float:
    """Frobenius norm."""
    return float(np.linalg.norm(A))


def orth_defect(U: np.ndarray) -> float:
    """Frobenius distance of U^T U from the identity."""
    r = U.shape[1]
    return frob(U.T @ U - np.eye(r))


def _freeze(A: np.ndarray) -> np.ndarray:
    out = np.array(A, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GroundTruth:
    """Rank-r SPSD target X = U diag(d) U^T in eigenfactored form.

    ``U`` is n-by-r with orthonormal columns, ``d`` holds r strictly
    positive, strictly decreasing eigenvalues.  Distinct eigenvalues are
    required; several spectral constructions downstream rely on simple
    eigenvalues.
    """

    U: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        U = _freeze(self.U)
        d = _freeze(self.d)
        if U.ndim != 2 or d.ndim != 1 or U.shape[1] != d.shape[0]:
            raise ValueError("U must be n-by-r and d of length r")
        if U.shape[0] < U.shape[1]:
            raise ValueError("need n >= r")
        if orth_defect(U) > TAU_ORTH:
            raise ValueError("U does not have orthonormal columns")
        if np.any(d <= 0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(d) >= 0):
            raise ValueError("eigenvalues must be strictly decreasing (and distinct)")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]

    @property
    def sigma_r(self) -> float:
        """Smallest retained eigenvalue of the target."""
        return float(self.d[-1])

    def dense(self) -> np.ndarray:
        """Materialize X as a dense n-by-n symmetric matrix."""
        return sym((self.U * self.d) @ self.U.T)

    def apply(self, V: np.ndarray) -> np.ndarray:
        """Compute X @ V without forming X (O(n r) per column)."""
        return self.U @ (self.d[:, None] * (self.U.T @ V))


@dataclass(frozen=True)
class FactoredPoint:
    """Candidate point Z = U S U^T with orthonormal U and symmetric S.

    Membership in the rank-r manifold additionally requires S to be
    nonsingular; that is checked by callers (``sigma_min``), not enforced
    here, so boundary points can be represented too.
    """

    U: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=float)
        S = sym(np.array(self.S, dtype=float))
        if U.ndim != 2 or S.shape != (U.shape[1], U.shape[1]):
            raise ValueError("U must be n-by-r and S r-by-r")
        if orth_defect(U) > TAU_ORTH:
            raise ValueError("U does not have orthonormal columns")
        object.__setattr__(self, "U", _freeze(U))
        object.__setattr__(self, "S", _freeze(S))

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]

    def dense(self) -> np.ndarray:
        return sym(self.U @ self.S @ self.U.T)

    def sigma_min(self) -> float:
        """Smallest eigenvalue of the core S (equals the r-th eigenvalue of Z)."""
        return float(np.linalg.eigvalsh(self.S)[0])

    def in_manifold(self, tol: float = 1e-12) -> bool:
        """True when the represented matrix has full rank r."""
        w = np.linalg.eigvalsh(self.S)
        return bool(np.abs(w).min() > tol * max(1.0, np.abs(w).max()))


def target_blocks(point: FactoredPoint, gt: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    """Return (A, B) with A = U^T X U and B = (I - U U^T) X U.

    These two blocks drive every factored computation: gradient, descent
    step, flow right-hand sides, distance and gradient norms.
    """
    if point.n != gt.n:
        raise ValueError("dimension mismatch between point and target")
    C = gt.U.T @ point.U
    A = sym(C.T @ (gt.d[:, None] * C))
    B = gt.U @ (gt.d[:, None] * C) - point.U @ A
    return A, B


def distance_to_target(point: FactoredPoint, gt: GroundTruth) -> float:
    """Frobenius distance ||Z - X||_F computed from the factors."""
    A, _ = target_blocks(point, gt)
    d2 = float(np.sum(point.S * point.S) - 2.0 * np.sum(point.S * A) + np.sum(gt.d**2))
    return float(np.sqrt(max(d2, 0.0)))


def gradient_norm(point: FactoredPoint, gt: GroundTruth) -> float:
    """Frobenius norm of the projected gradient, from the factors."""
    A, B = target_blocks(point, gt)
    return float(np.sqrt(np.sum((point.S - A) ** 2) + 2.0 * np.sum(B * B)))


def tangent_project(point: FactoredPoint, Y: np.ndarray) -> np.ndarray:
    """Project an ambient symmetric matrix onto the tangent space at Z.

    Returns P_U Y + Y P_U - P_U Y P_U with P_U = U U^T.  The projection is
    idempotent and self-adjoint; the result is symmetric.
    """
    Y = sym(np.asarray(Y, dtype=float))
    if Y.shape != (point.n, point.n):
        raise ValueError("Y has wrong shape for this point")
    B = point.U.T @ Y                      # r x n
    C = B @ point.U                        # r x r
    out = point.U @ B + B.T @ point.U.T - point.U @ C @ point.U.T
    return sym(out)


class RetractionResult(NamedTuple):
    point: FactoredPoint
    rank_deficient: bool


def retract(W: np.ndarray, r: int, rank_tol: float = 1e-12) -> RetractionResult:
    """Best Frobenius rank-<=r SPSD approximation of a symmetric matrix.

    Eigendecomposes W, keeps the r algebraically largest eigenvalues and
    clamps them at zero from below.  The stored core of the result is
    diagonal.  ``rank_deficient`` reports whether fewer than r retained
    eigenvalues are positive (the minimizer then leaves the rank-r
    manifold; ties at zero are broken by the eigensolver's ordering).
    """
    W = sym(np.asarray(W, dtype=float))
    n = W.shape[0]
    if not 0 < r <= n:
        raise ValueError("rank out of range")
    w, V = np.linalg.eigh(W)
    idx = np.argsort(w)[::-1][:r]
    kept = np.clip(w[idx], 0.0, None)
    scale = max(1.0, float(np.abs(w).max()))
    deficient = bool(kept[-1] <= rank_tol * scale)
    return RetractionResult(FactoredPoint(V[:, idx], np.diag(kept)), deficient)


def riem_gradient(point: FactoredPoint, gt: GroundTruth) -> np.ndarray:
    """Projected gradient P_T(Z - X) of f(Z) = ||Z - X||_F^2 / 2, dense."""
    if point.n != gt.n:
        raise ValueError("dimension mismatch between point and target")
    return tangent_project(point, point.dense() - gt.dense())


@dataclass(frozen=True)
class EigenFrame:
    """Eigenbasis of a point: Z = U diag(sigma) U^T with sigma descending.

    ``U_perp`` is an orthonormal basis of the complement of col(U); tangent
    vectors are parameterized against this frame.
    """

    U: np.ndarray
    sigma: np.ndarray
    U_perp: np.ndarray

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]


def complement_basis(U: np.ndarray, leading: np.ndarray | None = None) -> np.ndarray:
    """Orthonormal basis of col(U)^perp, optionally with prescribed leading columns.

    ``leading`` must itself be orthonormal and orthogonal to U; it is placed
    first and completed deterministically.
    """
    n, r = U.shape
    cols = [U] if leading is None else [U, leading]
    M = np.hstack(cols)
    if orth_defect(M) > 1e-8:
        raise ValueError("leading columns must be orthonormal and orthogonal to U")
    Q = np.linalg.qr(M, mode="complete")[0]
    rest = Q[:, M.shape[1]:]
    return rest if leading is None else np.hstack([leading, rest])


def eigen_frame(point: FactoredPoint) -> EigenFrame:
    """Eigen-frame of a factored point (descending core eigenvalues)."""
    w, P = np.linalg.eigh(point.S)
    Uz = point.U @ P[:, ::-1]
    return EigenFrame(Uz, w[::-1].copy(), complement_basis(Uz))


@dataclass(frozen=True)
class TangentParam:
    """Tangent vector in (M, N) coordinates relative to an eigen-frame.

    The ambient form is xi = U M U^T + U N U_perp^T + U_perp N^T U^T, which
    is symmetric for symmetric M.  The coordinate count r(r+1)/2 + r(n-r)
    equals the manifold dimension.
    """

    M: np.ndarray
    N: np.ndarray
    frame: EigenFrame

    def __post_init__(self):
        r, n = self.frame.r, self.frame.n
        M = sym(np.array(self.M, dtype=float))
        N = np.array(self.N, dtype=float)
        if M.shape != (r, r) or N.shape != (r, n - r):
            raise ValueError("coordinate blocks have wrong shapes")
        object.__setattr__(self, "M", _freeze(M))
        object.__setattr__(self, "N", _freeze(N))

    def to_ambient(self) -> np.ndarray:
        U, Up = self.frame.U, self.frame.U_perp
        cross = U @ self.N @ Up.T
        return sym(U @ self.M @ U.T + cross + cross.T)

    @classmethod
    def from_ambient(cls, frame: EigenFrame, xi: np.ndarray) -> "TangentParam":
        """Tangent coordinates of an ambient symmetric matrix (projects)."""
        xi = sym(np.asarray(xi, dtype=float))
        M = sym(frame.U.T @ xi @ frame.U)
        N = frame.U.T @ xi @ frame.U_perp
        return cls(M, N, frame)


def riem_hessian_apply(point: FactoredPoint, gt: GroundTruth,
                       xi: "TangentParam | np.ndarray",
                       frame: EigenFrame | None = None) -> np.ndarray:
    """Action of the Riemannian Hessian of f(Z) = ||Z - X||_F^2 / 2.

    For a tangent vector xi = U M U^T + U N U_perp^T + U_perp N^T U^T in the
    point's eigen-frame (U, sigma, U_perp),

        Hess[xi] = xi + Pperp G U_perp N^T Sigma^-1 U^T
                      + U Sigma^-1 N U_perp^T G Pperp,

    with G = Z - X and Pperp = I - U U^T.  The returned matrix is symmetric
    and the map is linear and self-adjoint on the tangent space.  A singular
    core is rejected: the curvature term blows up on the manifold boundary.
    """
    if point.n != gt.n:
        raise ValueError("dimension mismatch between point and target")
    if frame is None:
        frame = eigen_frame(point)
    if isinstance(xi, np.ndarray):
        xi = TangentParam.from_ambient(frame, xi)
    elif frob(xi.frame.U - frame.U) > 1e-8:
        raise ValueError("tangent vector expressed in a different frame")
    sigma = frame.sigma
    if np.abs(sigma).min() <= 1e-12 * max(1.0, np.abs(sigma).max()):
        raise ValueError("singular core: Hessian is not defined on the manifold boundary")
    G = point.dense() - gt.dense()
    W = frame.U_perp @ (xi.N.T / sigma[None, :])   # U_perp N^T Sigma^-1, n x r
    GW = G @ W
    GW -= frame.U @ (frame.U.T @ GW)               # left-project onto the complement
    term = GW @ frame.U.T
    return sym(xi.to_ambient() + term + term.T)


def manifold_dim(m: int, n: int, r: int, field: str = "real",
                 hermitian: bool = False) -> int:
    """Local dimension of the set of m-by-n rank-r matrices.

    Real non-Hermitian: (m + n - r) r.  Complex non-Hermitian:
    (2m + 2n - r) r.  Real Hermitian (symmetric): (2m - r + 1) r / 2.
    Complex Hermitian: (4m - r + 1) r / 2.
    """
    if field not in ("real", "complex"):
        raise ValueError("field must be 'real' or 'complex'")
    if hermitian and m != n:
        raise ValueError("Hermitian case requires m == n")
    if not 0 <= r <= min(m, n):
        raise ValueError("invalid rank")
    if hermitian:
        return (2 * m - r + 1) * r // 2 if field == "real" else (4 * m - r + 1) * r // 2
    return (m + n - r) * r if field == "real" else (2 * m + 2 * n - r) * r
