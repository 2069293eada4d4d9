"""Gradient-flow systems on the fixed-rank SPSD manifold and their rescaling.

Two factored ODE systems for the least-squares loss are provided.  The
plain system

    dU/dt = (I - U U^T) X U S^-1,      dS/dt = -S + U^T X U

is an exact factored form of the projected gradient flow but has a singular
right-hand side where the core S loses rank.  Multiplying both equations by
the smallest eigenvalue of S gives a rescaled system that follows the same
curve and extends continuously (indeed differentiably) to rank-deficit-one
boundary points, where its Jacobian exposes a single positive escape
eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import (
    FactoredPoint,
    GroundTruth,
    TAU_ORTH,
    frob,
    orth_defect,
    sym,
    target_blocks,
)
from .spurious import SpuriousTuple


class SingularCoreError(RuntimeError):
    """The plain flow was evaluated at a numerically singular core."""


class ExtensionError(ValueError):
    """Continuous extension undefined (zero eigenvalue is not simple)."""


class EigenGapError(ValueError):
    """Eigenvalues too close for differentiable eigenvector calculus."""


class StepSizeError(RuntimeError):
    """Integrator step produced excessive orthonormality drift."""


@dataclass(frozen=True)
class FlowState:
    """A point on the manifold together with flow time."""

    point: FactoredPoint
    t: float = 0.0


@dataclass(frozen=True)
class FlowDerivative:
    """Factored velocity (dU, dS); U^T dU = 0 under the gauge constraint."""

    dU: np.ndarray
    dS: np.ndarray

    def gauge_defect(self, U: np.ndarray) -> float:
        return frob(U.T @ self.dU)


@dataclass
class StepControls:
    """Fixed-step RK4 controls.

    ``tau_conv`` <= 0 disables the gradient-norm stopping test.  The plain
    system halts at ``sigma_floor``: below it the core inverse can no longer
    be stepped through in finite precision.  Drift beyond ``max_drift``
    before re-orthonormalization rejects the step (dt too large).
    """

    dt: float = 1e-2
    tau_conv: float = 0.0
    sigma_floor: float = 1e-12
    max_drift: float = 1e-6


@dataclass
class FlowResult:
    states: list[FlowState]
    records: np.ndarray          # columns: t, dist, sigma_r, grad_norm
    status: str
    columns: tuple[str, ...] = ("t", "dist", "sigma_r", "grad_norm")


def scaled_inverse(S: np.ndarray, gap_tol: float = 1e-8,
                   singular_tol: float = 1e-12) -> np.ndarray:
    """The matrix S^-1 * sigma_min(S), extended continuously to singular S.

    In the eigenbasis the entries are sigma_min / sigma_i, which stay finite
    as sigma_min -> 0; at a singular S with simple zero eigenvalue the value
    is the rank-one projector onto the null direction.  The extension is
    undefined when the zero eigenvalue is not simple (rank deficit two or
    more), and the inverse does not exist when some other eigenvalue
    vanishes; both cases raise.
    """
    S = sym(np.asarray(S, dtype=float))
    w, P = np.linalg.eigh(S)               # ascending
    scale = max(1.0, float(np.abs(w).max()))
    smin = w[0]
    singular = abs(smin) <= singular_tol * scale
    if singular and (len(w) > 1 and abs(w[1]) <= gap_tol * scale):
        raise ExtensionError("zero eigenvalue is not simple; no continuous extension")
    if len(w) > 1 and np.abs(w[1:]).min() <= singular_tol * scale:
        raise ExtensionError("a non-minimal eigenvalue vanishes; inverse undefined")
    ratios = np.empty_like(w)
    ratios[0] = 1.0                        # sigma_min / sigma_min, exact
    ratios[1:] = smin / w[1:]
    return sym((P * ratios) @ P.T)


def scaled_inverse_gradient(S: np.ndarray, direction: np.ndarray,
                            gap_tol: float = 1e-8,
                            singular_tol: float = 1e-12) -> np.ndarray:
    """Directional derivative of :func:`scaled_inverse` along ``direction``.

    For nonsingular S this equals

        -S^-1 D S^-1 sigma_min(S) + S^-1 (p^T D p)

    with p the eigenvector of the smallest eigenvalue.  Written in the
    eigenbasis, the divergent parts cancel algebraically, so the same
    expression evaluates stably down to (and at) a singular S with simple
    zero eigenvalue, where it reproduces the boundary limits:

      * both basis indices away from the null slot      -> 0,
      * one index on the null slot (eigenvalue sigma_i) -> -1/sigma_i,
      * null slot twice -> the pseudo-inverse of S on its nonzero spectrum.

    Requires all eigenvalues pairwise separated by ``gap_tol`` (eigenvector
    differentiability); returns a general (possibly nonsymmetric) matrix for
    a general direction.
    """
    S = sym(np.asarray(S, dtype=float))
    D = np.asarray(direction, dtype=float)
    r = S.shape[0]
    if D.shape != (r, r):
        raise ValueError("direction has wrong shape")
    w, P = np.linalg.eigh(S)
    scale = max(1.0, float(np.abs(w).max()))
    if r > 1 and np.diff(w).min() <= gap_tol * scale:
        raise EigenGapError("eigenvalues are not well separated")
    if r > 1 and np.abs(w[1:]).min() <= singular_tol * scale:
        raise ExtensionError("a non-minimal eigenvalue vanishes; derivative undefined")
    C = P.T @ D @ P
    K = np.zeros((r, r))
    if r > 1:
        K[1:, 1:] = -w[0] / np.outer(w[1:], w[1:])
        K[0, 1:] = -1.0 / w[1:]
        K[1:, 0] = -1.0 / w[1:]
    out = P @ (K * C) @ P.T
    if r > 1:
        out += C[0, 0] * (P[:, 1:] * (1.0 / w[1:])) @ P[:, 1:].T
    return out


def _raw_plain(U: np.ndarray, S: np.ndarray, gt: GroundTruth,
               sigma_floor: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Plain right-hand side on raw factors (no state validation)."""
    XU = gt.apply(U)
    A = sym(U.T @ XU)
    B = XU - U @ A
    if np.linalg.eigvalsh(sym(S))[0] <= sigma_floor:
        raise SingularCoreError("core is numerically singular; switch to the rescaled system")
    dU = np.linalg.solve(sym(S), B.T).T
    return dU, A - sym(S)


def _raw_rescaled(U: np.ndarray, S: np.ndarray, gt: GroundTruth
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Rescaled right-hand side on raw factors; tolerates a singular core."""
    S = sym(S)
    XU = gt.apply(U)
    A = sym(U.T @ XU)
    B = XU - U @ A
    smin = float(np.linalg.eigvalsh(S)[0])
    return B @ scaled_inverse(S), (A - S) * smin


def dlra_rhs(state: FlowState, gt: GroundTruth) -> FlowDerivative:
    """Factored velocity of the projected gradient flow at an interior point.

    The reconstruction dU S U^T + U dS U^T + U S dU^T equals the negative
    projected gradient exactly.  Raises on a (numerically) singular core.
    """
    dU, dS = _raw_plain(state.point.U, state.point.S, gt)
    return FlowDerivative(dU, dS)


def rescaled_rhs(state: FlowState, gt: GroundTruth) -> FlowDerivative:
    """Velocity of the rescaled flow; defined up to rank-deficit-one boundary points.

    Equals the plain velocity times sigma_min(S) on the interior and
    vanishes at stationary boundary tuples.
    """
    dU, dS = _raw_rescaled(state.point.U, state.point.S, gt)
    return FlowDerivative(dU, dS)


_SYSTEMS = {"dlra": _raw_plain, "rescaled": _raw_rescaled}


def integrate(system: str, init: FactoredPoint, gt: GroundTruth, t_end: float,
              controls: StepControls | None = None) -> FlowResult:
    """Fixed-step classical RK4 integration of either flow system.

    The factor U is re-orthonormalized by QR (with the core transformed
    congruently, leaving Z unchanged) whenever its drift exceeds the stored
    tolerance.  Per-step records hold (t, ||Z - X||_F, sigma_r(Z),
    ||grad||_F), including the initial and final states.
    """
    if system not in _SYSTEMS:
        raise ValueError(f"unknown system {system!r}")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    rhs = _SYSTEMS[system]
    ctl = controls or StepControls()

    U = np.array(init.U)
    S = np.array(init.S)
    t = 0.0
    states = [FlowState(init, 0.0)]
    rows = []
    status = "t_end"

    def log_row(U, S, t):
        A, B = target_blocks(FactoredPoint(U, S), gt)
        dist = np.sqrt(max(np.sum(S * S) - 2 * np.sum(S * A) + np.sum(gt.d**2), 0.0))
        grad = np.sqrt(np.sum((S - A) ** 2) + 2 * np.sum(B * B))
        rows.append((t, float(dist), float(np.linalg.eigvalsh(S)[0]), float(grad)))
        return rows[-1]

    row = log_row(U, S, t)
    while t < t_end - 1e-12:
        if ctl.tau_conv > 0 and row[3] < ctl.tau_conv:
            status = "converged"
            break
        if system == "dlra" and row[2] < ctl.sigma_floor:
            status = "sigma_floor"
            break
        h = min(ctl.dt, t_end - t)
        kU1, kS1 = rhs(U, S, gt)
        kU2, kS2 = rhs(U + 0.5 * h * kU1, S + 0.5 * h * kS1, gt)
        kU3, kS3 = rhs(U + 0.5 * h * kU2, S + 0.5 * h * kS2, gt)
        kU4, kS4 = rhs(U + h * kU3, S + h * kS3, gt)
        U = U + (h / 6.0) * (kU1 + 2 * kU2 + 2 * kU3 + kU4)
        S = sym(S + (h / 6.0) * (kS1 + 2 * kS2 + 2 * kS3 + kS4))
        drift = orth_defect(U)
        if drift > ctl.max_drift:
            raise StepSizeError(f"orthonormality drift {drift:.2e} at t={t + h:.4g}; reduce dt")
        if drift > TAU_ORTH:
            U, R = np.linalg.qr(U)
            S = sym(R @ S @ R.T)
        t += h
        states.append(FlowState(FactoredPoint(U, S), t))
        row = log_row(U, S, t)

    return FlowResult(states, np.array(rows, dtype=float), status)


@dataclass
class SpectrumReport:
    """Eigenvalues of a boundary Jacobian plus the escape-pair diagnostics."""

    eigenvalues: np.ndarray
    escape_eigenvalue: float
    escape_residual: float
    n_positive: int
    positive_tol: float


class RescaledFlowJacobian:
    """Differential of the rescaled flow at a rank-deficit-one tuple.

    Assembled from the boundary limits of the derivatives: with p the null
    eigenvector of the tuple core,

        dF(xi_U, xi_S) = [ -(U xi_U^T + xi_U U^T) X U + Pperp X xi_U ] p p^T
        dH(xi_U, xi_S) = 0,

    acting on perturbations (xi_U, xi_S) of the factors.  Its only nonzero
    eigenvalue is the missing target eigenvalue, attained at
    xi_U = u_miss p^T, the escape direction.
    """

    def __init__(self, tup: SpuriousTuple, gt: GroundTruth):
        if tup.s != tup.r - 1:
            raise ValueError("the differentiable extension exists only at rank deficit one")
        self.tup = tup
        self.gt = gt
        self.n, self.r = tup.n, tup.r
        p = tup.null_vec
        self._pp = np.outer(p, p)
        self._XU = gt.apply(tup.U)

    def apply(self, xi_U: np.ndarray, xi_S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        U = self.tup.U
        Xxi = self.gt.apply(xi_U)
        core = -(U @ xi_U.T + xi_U @ U.T) @ self._XU + (Xxi - U @ (U.T @ Xxi))
        return core @ self._pp, np.zeros((self.r, self.r))

    def escape_direction(self) -> tuple[np.ndarray, np.ndarray]:
        u_miss = self.tup.point.U_miss[:, 0]
        return np.outer(u_miss, self.tup.null_vec), np.zeros((self.r, self.r))

    def matrix(self) -> np.ndarray:
        """Matrixization over the n*r U-block plus the symmetric S-block."""
        n, r = self.n, self.r
        sym_pairs = [(i, j) for i in range(r) for j in range(i, r)]
        dim = n * r + len(sym_pairs)
        out = np.zeros((dim, dim))
        for col in range(n * r):
            xi_U = np.zeros((n, r))
            xi_U[col // r, col % r] = 1.0
            dF, _ = self.apply(xi_U, np.zeros((r, r)))
            out[:n * r, col] = dF.ravel()
        # dF ignores xi_S and dH vanishes identically: remaining columns are zero.
        return out

    def spectrum(self, positive_tol: float = 1e-8) -> SpectrumReport:
        eig = np.linalg.eigvals(self.matrix())
        eig = eig[np.argsort(-eig.real)]
        xi_U, xi_S = self.escape_direction()
        dF, dH = self.apply(xi_U, xi_S)
        d_miss = float(self.tup.point.d_miss[0])
        resid = np.sqrt(frob(dF - d_miss * xi_U) ** 2 + frob(dH) ** 2)
        resid /= d_miss * np.sqrt(frob(xi_U) ** 2 + frob(xi_S) ** 2)
        return SpectrumReport(
            eigenvalues=eig,
            escape_eigenvalue=d_miss,
            escape_residual=float(resid),
            n_positive=int(np.sum(eig.real > positive_tol)),
            positive_tol=positive_tol,
        )


def rescaled_jacobian(tup: SpuriousTuple, gt: GroundTruth) -> RescaledFlowJacobian:
    """Boundary Jacobian of the rescaled flow at a rank-deficit-one tuple."""
    return RescaledFlowJacobian(tup, gt)
