"""Macroscopic moments of f, the turning equilibrium and the activity closure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClosureError, ConfigError
from .grid import PhaseGrid, sound_speed_squared
from .kernels import KernelSet, ModelParams

RHO_FLOOR = 1e-14


@dataclass
class MomentSet:
    rho: np.ndarray  # (*space)
    rhoU: np.ndarray  # (*space, n)
    rhoW: np.ndarray  # (*space, 2)
    P: np.ndarray  # (*space, n, n), int (v-U) x (v-U) f
    Myv: np.ndarray  # (*space, 2, n), int y x v f

    @property
    def U(self) -> np.ndarray:
        safe = np.where(self.rho > RHO_FLOOR, self.rho, 1.0)
        return np.where((self.rho > RHO_FLOOR)[..., None], self.rhoU / safe[..., None], 0.0)

    @property
    def W(self) -> np.ndarray:
        """rhoW / rho; 0 in vacuum cells."""
        safe = np.where(self.rho > RHO_FLOOR, self.rho, 1.0)
        return np.where((self.rho > RHO_FLOOR)[..., None], self.rhoW / safe[..., None], 0.0)


def compute_moments(f, grid: PhaseGrid) -> MomentSet:
    q = grid.velocity
    act = grid.activity
    fv = np.einsum("...vy,y->...v", f, act.weights)  # int over y
    rho = fv @ q.weights
    rhoU = np.einsum("...v,v,vi->...i", fv, q.weights, q.nodes)
    fy = np.einsum("...vy,v->...y", f, q.weights)
    rhoW = np.einsum("...y,y,yk->...k", fy, act.weights, act.nodes)
    E = np.einsum("...v,v,vi,vk->...ik", fv, q.weights, q.nodes, q.nodes)
    Myv = np.einsum("...vy,v,y,yk,vi->...ki", f, q.weights, act.weights, act.nodes, q.nodes)
    m = MomentSet(rho, rhoU, rhoW, E, Myv)
    U = m.U
    m.P = E - rho[..., None, None] * np.einsum("...i,...k->...ik", U, U)
    return m


def equilibrium_ratio(grid: PhaseGrid) -> float:
    """beta/lambda = |V| / int v_1^2 dv on the quadrature."""
    q = grid.velocity
    return q.measure / q.second_moment[0, 0]


def equilibrium(rho, U, grid: PhaseGrid, kernels: KernelSet | None = None) -> np.ndarray:
    """M = rho / (|V| |Y|) (1 + (beta/lambda) v.U), constant in y."""
    q = grid.velocity
    ratio = kernels.beta_over_lam if kernels is not None else equilibrium_ratio(grid)
    rho = np.asarray(rho, dtype=float)
    U = np.asarray(U, dtype=float)
    vmax = float(q.speeds.max())
    umax = float(np.linalg.norm(U, axis=-1).max(initial=0.0))
    if umax * ratio * vmax > 1.0 + 1e-12:
        raise ConfigError(f"equilibrium negative: |U| = {umax:.6g} exceeds the admissible {1.0 / (ratio * vmax):.6g}")
    Y = grid.activity.weights.sum()
    prof = rho[..., None] / (q.measure * Y) * (1.0 + ratio * np.einsum("vi,...i->...v", q.nodes, U))
    return np.repeat(prof[..., None], grid.activity.size, axis=-1)


# -- closure ------------------------------------------------------------------


@dataclass(frozen=True)
class ReactionSystem:
    """A W = b, the steady state of the mass-action drift."""

    A: np.ndarray  # (..., 2, 2)
    b: np.ndarray  # (..., 2)

    @property
    def det(self) -> np.ndarray:
        return self.A[..., 0, 0] * self.A[..., 1, 1] - self.A[..., 0, 1] * self.A[..., 1, 0]

    def solve(self) -> np.ndarray:
        det = self.det
        if np.any(det == 0.0):
            raise ClosureError("reaction matrix is singular (no unbinding)")
        A, b = self.A, self.b
        w1 = (A[..., 1, 1] * b[..., 0] - A[..., 0, 1] * b[..., 1]) / det
        w2 = (A[..., 0, 0] * b[..., 1] - A[..., 1, 0] * b[..., 0]) / det
        return np.stack([w1, w2], axis=-1)


def reaction_matrix(qbar, L, params: ModelParams) -> ReactionSystem:
    qbar, L = np.broadcast_arrays(np.asarray(qbar, dtype=float), np.asarray(L, dtype=float))
    a = params.k1 * qbar
    c = params.k2 * L
    A = np.stack([np.stack([a + params.km1, a], -1), np.stack([c, c + params.km2], -1)], -2)
    return ReactionSystem(A, np.stack([a, c], -1))


def closure_W(qbar, L, params: ModelParams) -> np.ndarray:
    """W = (k1 k_-2 Qbar, k_-1 k2 L) / D with D = k1 k_-2 Qbar + k_-1 k2 L + k_-1 k_-2."""
    qbar, L = np.broadcast_arrays(np.asarray(qbar, dtype=float), np.asarray(L, dtype=float))
    w1 = params.k1 * params.km2 * qbar
    w2 = params.km1 * params.k2 * L
    D = w1 + w2 + params.km1 * params.km2
    if np.any(D <= 0.0):
        raise ClosureError("closure undefined: k1 k_-2 Qbar + k_-1 k2 L + k_-1 k_-2 = 0")
    return np.stack([w1 / D, w2 / D], axis=-1)


def pressure_equilibrium(rho, U, n: int, s: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    U = np.asarray(U, dtype=float)
    eye = np.eye(n)
    return sound_speed_squared(n, s) * rho[..., None, None] * eye - rho[..., None, None] * np.einsum(
        "...i,...k->...ik", U, U
    )


# -- macroscopic interaction operators ------------------------------------------


@dataclass
class KernelMoments:
    psi1: np.ndarray  # (nt, n)
    psi2: np.ndarray  # (nt, n, n)
    K1: np.ndarray  # (*space, n)
    K2: np.ndarray  # (*space, n, n)


def macro_kernel_moments(kernels: KernelSet, grid: PhaseGrid, gradL) -> KernelMoments:
    q = grid.velocity
    w, x = q.weights, q.nodes
    psi = kernels.psi_table()
    psi1 = np.einsum("v,w,vi,tvw->ti", w, w, x, psi)
    psi2 = np.einsum("v,w,vi,wk,tvw->tik", w, w, x, x, psi)
    # K[F](v, v') does not depend on v'
    K = kernels.chemo_table(gradL)
    K1 = np.einsum("v,vi,...v->...i", w, x, K) * q.measure
    K2 = np.einsum("v,vi,...v->...i", w, x, K)[..., :, None] * (w @ x)[None, :]
    return KernelMoments(psi1, psi2, K1, K2)


def macro_sources(rho, U, Q, L, params: ModelParams, grid: PhaseGrid, kernels: KernelSet, gradL=None):
    """Macroscopic haptotaxis and chemotaxis sources (H, C), both (*space, n).

    gradL defaults to centred differences of L on the grid.
    """
    from .kinetic import gradient

    rho = np.asarray(rho, dtype=float)
    U = np.asarray(U, dtype=float)
    V = grid.velocity.measure
    ratio = kernels.beta_over_lam
    wt = grid.theta.weights
    if gradL is None:
        gradL = gradient(L, grid)
    km = macro_kernel_moments(kernels, grid, gradL)
    qbar = Q @ wt
    hg = np.einsum("t,...t,ti->...i", wt, Q, km.psi1) + ratio * np.einsum("t,...t,tik,...k->...i", wt, Q, km.psi2, U)
    H = rho[..., None] / V * (hg - (qbar * V)[..., None] * U)
    C = rho[..., None] * params.alpha2 / V * (km.K1 + ratio * np.einsum("...ik,...k->...i", km.K2, U) - V * U)
    return H, C
