"""Interaction kernels, the mass-action drift G and kernel-condition checks."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError
from .grid import PhaseGrid, VelocityQuadrature


@dataclass(frozen=True)
class ModelParams:
    """Scaled model constants (R0 = 1, D_L = 1 after the standard scaling)."""

    k1: float = 1.0
    km1: float = 1.0
    k2: float = 1.0
    km2: float = 1.0
    kappa: float = 0.0
    r_L: float = 0.0
    D_L: float = 1.0
    alpha1: float = 0.8
    chi: float = 0.5
    eps: float = 1.0
    a: float = 0.5
    b: float = 1.0
    d: float = 1.0

    @property
    def alpha2(self) -> float:
        return 1.0 - self.alpha1

    def __post_init__(self):
        for name in ("k1", "km1", "k2", "km2", "kappa", "r_L", "D_L", "chi"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.alpha1 <= 1.0:
            raise ConfigError(f"alpha1 must lie in [0, 1], got {self.alpha1}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if not 0.0 < self.a < 1.0:
            raise ConfigError(f"scaling exponent a={self.a} violates 0 < a < 1")
        if self.b < 1.0 or self.d < 1.0:
            raise ConfigError(f"scaling exponents b={self.b}, d={self.d} violate b, d >= 1")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # weights of the scaled kinetic equation after division by eps
    @property
    def w_activity(self) -> float:
        return self.eps ** (self.a - 1.0)

    @property
    def w_turn(self) -> float:
        return 1.0 / self.eps

    @property
    def w_hapto(self) -> float:
        return self.eps ** (self.b - 1.0)

    @property
    def w_chemo(self) -> float:
        return self.eps ** (self.d - 1.0)


def eval_G(y, qbar, l, params: ModelParams) -> np.ndarray:
    """Mass-action drift in activity space; y has trailing axis of length 2."""
    y = np.asarray(y, dtype=float)
    free = 1.0 - y[..., 0] - y[..., 1]
    g1 = params.k1 * free * qbar - params.km1 * y[..., 0]
    g2 = params.k2 * free * l - params.km2 * y[..., 1]
    return np.stack(np.broadcast_arrays(g1, g2), axis=-1)


def relL_beta(lam: float, n: int, s: float) -> float:
    """beta paired with lam by lam = beta (1 - s^{n+2}) / ((1 - s^n)(n + 2))."""
    return lam * (1.0 - s**n) * (n + 2) / (1.0 - s ** (n + 2))


def relL_lambda(beta: float, n: int, s: float) -> float:
    return beta * (1.0 - s ** (n + 2)) / ((1.0 - s**n) * (n + 2))


@dataclass(frozen=True)
class KernelSet:
    """Discrete kernels on a velocity quadrature.

    ``lam`` and ``beta`` define T(v, v') = lam + beta v.v'. ``beta`` is
    fixed by the quadrature version of the pairing (lam |V| = beta m2,
    m2 = discrete int v_1^2 dv), which is what makes the momentum condition
    of the turning operator hold to round-off. ``Z`` is the per-direction
    normaliser of psi(v; theta) = (1 + v.theta) / Z(theta).
    """

    quad: VelocityQuadrature
    theta_nodes: np.ndarray
    lam: float
    beta: float
    chi: float
    Z: np.ndarray

    @property
    def beta_over_lam(self) -> float:
        return self.beta / self.lam

    @property
    def V(self) -> float:
        return self.quad.measure

    def turning(self, v, vp) -> np.ndarray:
        return self.lam + self.beta * np.einsum("...i,...i->...", np.asarray(v), np.asarray(vp))

    def turning_table(self) -> np.ndarray:
        """T(v_i, v_j) on the node set, shape (nv, nv)."""
        x = self.quad.nodes
        return self.lam + self.beta * (x @ x.T)

    def psi_table(self) -> np.ndarray:
        """psi(v_i; v'_j, theta_t), shape (nt, nv, nv'); independent of v'."""
        vt = self.quad.nodes @ self.theta_nodes.T  # (nv, nt)
        psi = (1.0 + vt.T) / self.Z[:, None]
        return np.repeat(psi[:, :, None], self.quad.size, axis=2)

    def haptotaxis(self, v, vp, theta) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        theta = np.asarray(theta, dtype=float)
        t_idx = np.argmin(np.linalg.norm(self.theta_nodes - theta, axis=-1))
        return (1.0 + v @ theta) / self.Z[t_idx]

    def chemo_table(self, F) -> np.ndarray:
        """K[F](v_i, .) for every node, shape F.shape[:-1] + (nv,); independent of v'."""
        F = np.asarray(F, dtype=float)
        bias = F / (1.0 + np.linalg.norm(F, axis=-1, keepdims=True))
        return 1.0 / self.V + self.chi * np.einsum("...i,vi->...v", bias, self.quad.nodes)

    def chemo(self, F, v, vp=None) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        bias = F / (1.0 + np.linalg.norm(F, axis=-1, keepdims=True))
        return 1.0 / self.V + self.chi * np.einsum("...i,...i->...", bias, np.asarray(v, dtype=float))


def build_kernels(grid: PhaseGrid, params: ModelParams) -> KernelSet:
    quad = grid.velocity
    V = quad.measure
    m2 = quad.second_moment[0, 0]
    lam = 1.0 / V
    beta = lam * V / m2
    vmax = float(quad.speeds.max())
    if params.chi * vmax >= 1.0 / V:
        raise ConfigError(
            f"chemotaxis kernel may turn negative: chi*max|v| = {params.chi * vmax:.6g} >= 1/|V| = {1.0 / V:.6g}"
        )
    Z = quad.weights @ (1.0 + quad.nodes @ grid.theta.nodes.T)
    return KernelSet(quad, grid.theta.nodes.copy(), lam, beta, params.chi, Z)


def eval_turning_kernel(v, vp, kernels: KernelSet) -> float:
    return float(kernels.turning(v, vp))


def eval_haptotaxis_kernel(v, vp, theta, kernels: KernelSet) -> float:
    return float(kernels.haptotaxis(v, vp, theta))


def eval_chemo_kernel(F, v, vp, kernels: KernelSet) -> float:
    F = np.asarray(F, dtype=float)
    nF = float(np.linalg.norm(F))
    vmax = float(kernels.quad.speeds.max())
    if kernels.chi * vmax * nF / (1.0 + nF) >= 1.0 / kernels.V:
        raise ConfigError("chemotaxis kernel negative for this gradient")
    return float(kernels.chemo(F, v, vp))


@dataclass
class ValidationReport:
    violations: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    def failures(self) -> list:
        return [k for k, v in self.violations.items() if v > self.tol]


def validate_kernels(kernels: KernelSet, grid: PhaseGrid, samples: int = 64, seed: int = 0) -> ValidationReport:
    """Measure how far the discrete kernels are from the normalisation,
    boundedness and Lipschitz conditions required of psi, T and K."""
    quad = grid.velocity
    w = quad.weights
    rep = ValidationReport()

    psi = kernels.psi_table()  # (nt, nv, nv')
    rep.violations["KerH_normalisation"] = float(np.abs(np.einsum("tvw,v->tw", psi, w) - 1.0).max())
    rep.violations["KerH_nonnegative"] = float(max(0.0, -psi.min()))
    bound_M = kernels.V * float(psi.max())
    rep.info["KerH_M"] = bound_M
    rep.violations["KerH_bound"] = float(max(0.0, np.einsum("tvw,w->tv", psi, w).max() - bound_M))

    T = kernels.turning_table()
    rep.violations["KerL_normalisation"] = float(np.abs(w @ T - 1.0).max())
    m2 = quad.second_moment
    rep.violations["KerL_relL"] = float(np.abs(kernels.lam * kernels.V * np.eye(quad.n) - kernels.beta * m2).max())
    rep.info["T_min"] = float(T.min())
    rep.info["relL_analytic_beta"] = relL_beta(kernels.lam, quad.n, quad.s)

    rng = np.random.default_rng(seed)
    F = rng.normal(scale=3.0, size=(samples, quad.n))
    G = rng.normal(scale=3.0, size=(samples, quad.n))
    KF = kernels.chemo_table(F)
    KG = kernels.chemo_table(G)
    rep.violations["KerC_normalisation"] = float(np.abs(KF @ w - 1.0).max())
    rep.violations["KerC_nonnegative"] = float(max(0.0, -KF.min()))
    lip = np.abs(KF - KG).max(axis=1) / np.linalg.norm(F - G, axis=1)
    rep.info["KerC_lipschitz"] = float(lip.max())
    rep.violations["KerC_lipschitz"] = float(max(0.0, lip.max() - 2.0 * kernels.chi))
    return rep
