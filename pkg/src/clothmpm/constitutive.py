"""Anisotropic codimensional strain energy in QR coordinates.

The deformation gradient ``F = d D^-1`` is factored as ``F = Q R`` with a
positive diagonal on ``R``. The energy only looks at ``R``:

* normal   ``R33``               -- resists compression, free expansion
* shear    ``R13, R23``          -- quadratic penalty on out-of-plane tilt
* in-plane ``R11, R12, R22``     -- fixed-corotated on the 2x2 block

The stress is obtained analytically through the differential of the QR
factorization: with ``K = dpsi/dR . R^T`` the first Piola-Kirchhoff stress is
``Q (triu(K) + triu(K, 1)^T) R^-T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np


class InvalidDeformation(ValueError):
    """Deformation gradient is singular or inverted."""


@dataclass(frozen=True)
class ElasticParams:
    E: float = 100.0
    nu: float = 0.3
    gamma: float = 500.0
    kappa: float = 500.0

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not 0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must be in [0, 0.5), got {self.nu}")
        if self.gamma < 0 or self.kappa < 0:
            raise ValueError("shear and normal stiffness must be non-negative")

    @property
    def mu(self):
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self):
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))


@dataclass(frozen=True)
class DeformationState:
    F: np.ndarray
    Q: np.ndarray
    R: np.ndarray


def deformation_gradient(d, D_inv):
    return np.asarray(d, dtype=np.float64) @ np.asarray(D_inv, dtype=np.float64)


def qr_decompose(F) -> DeformationState:
    """QR factorization with positive diagonal on R.

    Raises :class:`InvalidDeformation` if ``det F <= 0``.
    """
    F = np.asarray(F, dtype=np.float64)
    det = np.linalg.det(F)
    if not np.isfinite(det) or det <= 0.0:
        raise InvalidDeformation(f"deformation gradient has det F = {det:.6g} (must be > 0)")
    Q, R = np.linalg.qr(F)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    Q = Q * s[None, :]
    R = R * s[:, None]
    return DeformationState(F, Q, R)


# ---------------------------------------------------------------- energies

def psi_normal(R33, kappa):
    if R33 <= 1.0:
        return kappa / 3.0 * (1.0 - R33) ** 3
    return 0.0


def psi_shear(R13, R23, gamma):
    return 0.5 * gamma * (R13 * R13 + R23 * R23)


def psi_inplane(R11, R12, R22, E, nu):
    s1, s2 = np.linalg.svd(np.array([[R11, R12], [0.0, R22]]), compute_uv=False)
    mu = E / (2.0 * (1.0 + nu))
    half_lam = E * nu / (2.0 * (1.0 + nu) * (1.0 - 2.0 * nu))
    return mu * ((s1 - 1.0) ** 2 + (s2 - 1.0) ** 2) + half_lam * (s1 * s2 - 1.0) ** 2


def psi_total(state: DeformationState, p: ElasticParams) -> float:
    R = state.R
    return (psi_normal(R[2, 2], p.kappa)
            + psi_shear(R[0, 2], R[1, 2], p.gamma)
            + psi_inplane(R[0, 0], R[0, 1], R[1, 1], p.E, p.nu))


def psi(F, p: ElasticParams) -> float:
    return psi_total(qr_decompose(F), p)


def first_piola(state: DeformationState, p: ElasticParams) -> np.ndarray:
    return piola_from_qr(state.Q, state.R, p.E, p.nu, p.gamma, p.kappa)


def cauchy_stress(state: DeformationState, p: ElasticParams) -> np.ndarray:
    J = np.linalg.det(state.F)
    if J <= 0:
        raise InvalidDeformation(f"det F = {J:.6g} (must be > 0)")
    return first_piola(state, p) @ state.F.T / J


# ---------------------------------------------------------------- kernels

@nb.njit(cache=True)
def mm3_into(A, B, C):
    """C = A @ B for 3x3 blocks, written in place (no BLAS dispatch, no allocation)."""
    for i in range(3):
        for j in range(3):
            C[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]


@nb.njit(cache=True)
def mm3t_into(A, B, C):
    """C = A @ B.T for 3x3 blocks."""
    for i in range(3):
        for j in range(3):
            C[i, j] = A[i, 0] * B[j, 0] + A[i, 1] * B[j, 1] + A[i, 2] * B[j, 2]


@nb.njit(cache=True)
def mm3(A, B):
    C = np.empty((3, 3))
    mm3_into(A, B, C)
    return C


@nb.njit(cache=True)
def mm3t(A, B):
    C = np.empty((3, 3))
    mm3t_into(A, B, C)
    return C


@nb.njit(cache=True)
def qr_into(F, Q, R):
    """Modified Gram-Schmidt QR of a 3x3 matrix into ``Q, R``; diag(R) >= 0."""
    R[:] = 0.0
    for j in range(3):
        u0, u1, u2 = F[0, j], F[1, j], F[2, j]
        for i in range(j):
            r = Q[0, i] * u0 + Q[1, i] * u1 + Q[2, i] * u2
            R[i, j] = r
            u0 -= r * Q[0, i]
            u1 -= r * Q[1, i]
            u2 -= r * Q[2, i]
        n = math.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
        R[j, j] = n
        inv = 1.0 / n if n > 0.0 else 0.0
        Q[0, j], Q[1, j], Q[2, j] = u0 * inv, u1 * inv, u2 * inv


@nb.njit(cache=True)
def qr_gram_schmidt(F):
    """Modified Gram-Schmidt QR of a 3x3 matrix; diagonal of R non-negative."""
    Q = np.zeros((3, 3))
    R = np.zeros((3, 3))
    qr_into(F, Q, R)
    return Q, R


@nb.njit(cache=True)
def psi_hat(R, E, nu, gamma, kappa):
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    a, b, d = R[0, 0], R[0, 1], R[1, 1]
    J = a * d
    fro2 = a * a + b * b + d * d
    # sum of singular values of [[a, b], [0, d]] for J > 0
    ssum = math.sqrt(fro2 + 2.0 * abs(J))
    e_in = mu * (fro2 - 2.0 * ssum + 2.0) + 0.5 * lam * (J - 1.0) ** 2
    e_sh = 0.5 * gamma * (R[0, 2] ** 2 + R[1, 2] ** 2)
    r33 = R[2, 2]
    e_n = kappa / 3.0 * (1.0 - r33) ** 3 if r33 <= 1.0 else 0.0
    return e_in + e_sh + e_n


@nb.njit(cache=True)
def dpsi_dR_into(R, E, nu, gamma, kappa, G):
    """Gradient of the energy with respect to the upper-triangular entries of R."""
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    a, b, d = R[0, 0], R[0, 1], R[1, 1]
    J = a * d
    # polar rotation of the in-plane block
    cx, sx = a + d, -b
    h = math.sqrt(cx * cx + sx * sx)
    c, s = cx / h, sx / h
    G[:] = 0.0
    # 2 mu (R2 - Rot) + lam (J - 1) cof(R2), cof([[a, b], [0, d]]) = [[d, 0], [-b, a]]
    G[0, 0] = 2.0 * mu * (a - c) + lam * (J - 1.0) * d
    G[0, 1] = 2.0 * mu * (b + s)
    G[1, 1] = 2.0 * mu * (d - c) + lam * (J - 1.0) * a
    G[0, 2] = gamma * R[0, 2]
    G[1, 2] = gamma * R[1, 2]
    r33 = R[2, 2]
    G[2, 2] = -kappa * (1.0 - r33) ** 2 if r33 <= 1.0 else 0.0


@nb.njit(cache=True)
def dpsi_dR(R, E, nu, gamma, kappa):
    G = np.empty((3, 3))
    dpsi_dR_into(R, E, nu, gamma, kappa, G)
    return G


@nb.njit(cache=True)
def piola_into(Q, R, E, nu, gamma, kappa, work, out):
    """First Piola stress from a QR factorization; ``work`` is (3, 3, 3) scratch."""
    G, S, Rinv = work[0], work[1], work[2]
    dpsi_dR_into(R, E, nu, gamma, kappa, G)
    mm3t_into(G, R, S)  # K = dpsi/dR R^T, symmetrized from its upper triangle below
    for i in range(3):
        for j in range(i + 1, 3):
            S[j, i] = S[i, j]
    # P = Q S R^-T, solved column-wise against the triangular R^T
    Rinv[:] = 0.0
    for j in range(3):
        Rinv[j, j] = 1.0 / R[j, j]
        for i in range(j - 1, -1, -1):
            acc = 0.0
            for k in range(i + 1, j + 1):
                acc += R[i, k] * Rinv[k, j]
            Rinv[i, j] = -acc / R[i, i]
    mm3_into(Q, S, G)
    mm3t_into(G, Rinv, out)


@nb.njit(cache=True)
def piola_from_qr(Q, R, E, nu, gamma, kappa):
    out = np.empty((3, 3))
    piola_into(Q, R, E, nu, gamma, kappa, np.empty((3, 3, 3)), out)
    return out


@nb.njit(cache=True)
def piola_of_F(F, E, nu, gamma, kappa):
    Q, R = qr_gram_schmidt(F)
    return piola_from_qr(Q, R, E, nu, gamma, kappa)
