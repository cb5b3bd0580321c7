"""Limiting hydrodynamic system, scaling map and the epsilon-sweep harness."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CFLError, ConfigError, RegimeError
from .grid import PhaseGrid, build_phase_grid, sound_speed_squared, sphere_measure
from .kernels import KernelSet, ModelParams, build_kernels
from .kinetic import KineticSolver, KineticState, heat_semigroup, initial_state
from .moments import closure_W, compute_moments, macro_sources, reaction_matrix

# -- scaling ----------------------------------------------------------------------


@dataclass(frozen=True)
class DimensionalParams:
    tau: float  # time unit
    R: float  # length unit
    s2: float  # speed unit
    R0: float  # receptor density unit
    fbar: float  # cell density unit
    p_l: float  # turning frequency
    p_h: float  # haptotaxis frequency
    p_c: float  # chemotaxis frequency
    Gbar: float  # mass-action rate unit
    kappa: float
    r_L: float
    D_L: float
    k1: float
    km1: float
    k2: float
    km2: float
    n: int = 1


@dataclass(frozen=True)
class ScaledParams:
    eps: float
    a: float
    b: float
    d: float
    kappa: float
    r_L: float
    k1: float
    km1: float
    k2: float
    km2: float
    residual_speed: float = 0.0  # s2 tau / R - 1
    residual_diffusion: float = 0.0  # tau D_L / R^2 - 1

    def to_model(self, alpha1: float = 0.8, chi: float = 0.5) -> ModelParams:
        return ModelParams(k1=self.k1, km1=self.km1, k2=self.k2, km2=self.km2, kappa=self.kappa, r_L=self.r_L,
                           D_L=1.0, alpha1=alpha1, chi=chi, eps=self.eps, a=self.a, b=self.b, d=self.d)


def nondimensionalize(p: DimensionalParams, tol: float = 1e-10) -> ScaledParams:
    res_speed = p.s2 * p.tau / p.R - 1.0
    res_diff = p.tau * p.D_L / p.R**2 - 1.0
    if abs(res_speed) > tol or abs(res_diff) > tol:
        raise ConfigError(
            f"normalisation needs R = s2 tau and D_L = R^2 / tau (residuals {res_speed:.3e}, {res_diff:.3e})"
        )
    eps = 1.0 / (p.tau * p.p_l)
    if not 0.0 < eps < 1.0:
        raise RegimeError(f"eps = 1/(tau p_l) = {eps:.6g} must lie in (0, 1)")
    log_eps = math.log(eps)
    a = math.log(p.Gbar / (p.R0 * p.p_l)) / log_eps
    b = math.log(p.p_h / p.p_l) / log_eps
    d = math.log(p.p_c / p.p_l) / log_eps
    if not 0.0 < a < 1.0 or b < 1.0 - 1e-12 or d < 1.0 - 1e-12:
        raise RegimeError(f"scaling exponents a={a:.6g}, b={b:.6g}, d={d:.6g} need 0 < a < 1 and b, d >= 1")
    c = p.tau * p.R0**2 * p.s2**p.n * p.fbar
    # snap round-off so that the regime test b == 1, d == 1 is exact
    b = 1.0 if abs(b - 1.0) < 1e-12 else b
    d = 1.0 if abs(d - 1.0) < 1e-12 else d
    return ScaledParams(eps, a, b, d,
                        c * p.kappa, p.tau * p.r_L, c * p.R0 * p.k1, c * p.km1, c * p.R0 * p.k2, c * p.km2,
                        res_speed, res_diff)


def dimensionalize(sp: ScaledParams, tau: float, s2: float, R0: float, fbar: float, n: int = 1) -> DimensionalParams:
    """Inverse of nondimensionalize for a chosen set of reference units."""
    p_l = 1.0 / (sp.eps * tau)
    R = s2 * tau
    c = tau * R0**2 * s2**n * fbar
    return DimensionalParams(
        tau=tau, R=R, s2=s2, R0=R0, fbar=fbar, p_l=p_l, p_h=sp.eps**sp.b * p_l, p_c=sp.eps**sp.d * p_l,
        Gbar=sp.eps**sp.a * p_l * R0, kappa=sp.kappa / c, r_L=sp.r_L / tau, D_L=R**2 / tau,
        k1=sp.k1 / (c * R0), km1=sp.km1 / c, k2=sp.k2 / (c * R0), km2=sp.km2 / c, n=n,
    )


# -- hydrodynamic solver ------------------------------------------------------------


@dataclass
class HydroState:
    rho: np.ndarray  # (*space)
    m: np.ndarray  # (*space, n)
    Q: np.ndarray  # (*space, nt)
    L: np.ndarray  # (*space)
    t: float = 0.0

    @property
    def U(self) -> np.ndarray:
        safe = np.where(self.rho > 1e-14, self.rho, 1.0)
        return np.where((self.rho > 1e-14)[..., None], self.m / safe[..., None], 0.0)

    def copy(self) -> "HydroState":
        return HydroState(self.rho.copy(), self.m.copy(), self.Q.copy(), self.L.copy(), self.t)


def g_theta(theta, quad) -> np.ndarray:
    """int_V (1 - |theta . v/|v||) dv for every theta node."""
    nodes = theta.nodes if hasattr(theta, "nodes") else np.asarray(theta, dtype=float)
    return (1.0 - np.abs(nodes @ quad.directions.T)) @ quad.weights


def source_flags(params: ModelParams) -> tuple:
    """(haptotaxis active, chemotaxis active): a source survives iff its exponent is 1."""
    return params.b == 1.0, params.d == 1.0


def limit_chemicals(Q, L, rho, U, dt, grid: PhaseGrid, params: ModelParams):
    """Advance the limiting fiber and chemical equations by dt.

    Q: -kappa (rho/|V|) g Q + (k1 k_-1 k_-2 rho / D)(-Q + Qbar/|S|)
    L: kappa (rho/|V|) int g Q - r_L L + D_L Lap L  (diffusion exact, Strang split)
    """
    V = grid.velocity.measure
    S = sphere_measure(grid.n)
    wt = grid.theta.weights
    g = g_theta(grid.theta, grid.velocity)
    rho = np.asarray(rho, dtype=float)

    def rates(Q, L):
        qbar = Q @ wt
        D = params.k1 * params.km2 * qbar + params.km1 * params.k2 * L + params.km1 * params.km2
        relax = np.where(D > 0, params.k1 * params.km1 * params.km2 * rho / np.where(D > 0, D, 1.0), 0.0)
        deg = params.kappa * (rho / V)[..., None] * g
        dQ = -deg * Q + relax[..., None] * (-Q + qbar[..., None] / S)
        dL = (deg * Q) @ wt - params.r_L * L
        return dQ, dL

    half = 0.5 * dt * params.D_L
    L = heat_semigroup(L, half, grid) if params.D_L else L
    q1, l1 = rates(Q, L)
    Q1, L1 = Q + dt * q1, L + dt * l1
    q2, l2 = rates(Q1, L1)
    Q = 0.5 * Q + 0.5 * (Q1 + dt * q2)
    L = 0.5 * L + 0.5 * (L1 + dt * l2)
    L = heat_semigroup(L, half, grid) if params.D_L else L
    return Q, L


class HydroSolver:
    """Local Lax-Friedrichs finite volumes for
    rho_t + div m = 0, m_t + c^2 grad rho = [b=1] H + [d=1] C,
    with SSP-RK2 in time and Strang-split limit chemistry."""

    def __init__(self, grid: PhaseGrid, params: ModelParams, kernels: KernelSet | None = None, c2: float | None = None,
                 sources: bool = True):
        self.grid = grid
        self.params = params
        self.kernels = kernels if kernels is not None else build_kernels(grid, params)
        self.c2 = sound_speed_squared(grid.n, grid.velocity.s) if c2 is None else float(c2)
        self.hapto, self.chemo = source_flags(params) if sources else (False, False)

    @property
    def c(self) -> float:
        return math.sqrt(self.c2)

    def max_dt(self, state: HydroState) -> float:
        speed = float(np.linalg.norm(state.U, axis=-1).max(initial=0.0)) + self.c
        return 0.5 * self.grid.space.dx / speed

    def _sources(self, rho, m, Q, L):
        out = np.zeros_like(m)
        if not (self.hapto or self.chemo):
            return out
        safe = np.where(rho > 1e-14, rho, 1.0)
        U = np.where((rho > 1e-14)[..., None], m / safe[..., None], 0.0)
        H, C = macro_sources(rho, U, Q, L, self.params, self.grid, self.kernels)
        if self.hapto:
            out += H
        if self.chemo:
            out += C
        return out

    def _rhs(self, rho, m, Q, L):
        c2 = self.c2
        safe = np.where(rho > 1e-14, rho, 1.0)
        speed = np.linalg.norm(np.where((rho > 1e-14)[..., None], m / safe[..., None], 0.0), axis=-1) + self.c
        drho = np.zeros_like(rho)
        dm = np.zeros_like(m)
        for ax, dx in enumerate(self.grid.space.dx_axes):
            rho_r = np.roll(rho, -1, axis=ax)
            m_r = np.roll(m, -1, axis=ax)
            alpha = np.maximum(speed, np.roll(speed, -1, axis=ax))
            f_rho = 0.5 * (m[..., ax] + m_r[..., ax]) - 0.5 * alpha * (rho_r - rho)
            f_m = -0.5 * alpha[..., None] * (m_r - m)
            f_m[..., ax] += 0.5 * c2 * (rho + rho_r)
            drho -= (f_rho - np.roll(f_rho, 1, axis=ax)) / dx
            dm -= (f_m - np.roll(f_m, 1, axis=ax)) / dx
        return drho, dm + self._sources(rho, m, Q, L)

    def hydro_step(self, state: HydroState, dt: float, check_cfl: bool = True) -> HydroState:
        if check_cfl and dt > self.max_dt(state) * (1.0 + 1e-12):
            raise CFLError(f"dt = {dt:.6g} exceeds 0.5 dx / max(|U| + c) = {self.max_dt(state):.6g}")
        Q, L = limit_chemicals(state.Q, state.L, state.rho, state.U, 0.5 * dt, self.grid, self.params)
        r1, m1 = state.rho, state.m
        a1, b1 = self._rhs(r1, m1, Q, L)
        r2, m2 = r1 + dt * a1, m1 + dt * b1
        a2, b2 = self._rhs(r2, m2, Q, L)
        rho = 0.5 * r1 + 0.5 * (r2 + dt * a2)
        m = 0.5 * m1 + 0.5 * (m2 + dt * b2)
        out = HydroState(rho, m, Q, L, state.t + dt)
        out.Q, out.L = limit_chemicals(Q, L, rho, out.U, 0.5 * dt, self.grid, self.params)
        return out

    def run(self, state: HydroState, t_final: float, dt: float | None = None, callback=None) -> HydroState:
        if dt is None:
            dt = self.max_dt(state)
        nsteps = max(1, int(math.ceil(t_final / dt - 1e-12)))
        dt = t_final / nsteps
        for _ in range(nsteps):
            state = self.hydro_step(state, dt, check_cfl=False)
            if callback is not None:
                callback(state)
        return state


def hydro_W(state: HydroState, grid: PhaseGrid, params: ModelParams) -> np.ndarray:
    return closure_W(state.Q @ grid.theta.weights, state.L, params)


def hydro_from_kinetic(state: KineticState, grid: PhaseGrid) -> HydroState:
    m = compute_moments(state.f, grid)
    return HydroState(m.rho, m.rhoU, state.Q.copy(), state.L.copy(), state.t)


def acoustic_speed(grid: PhaseGrid, params: ModelParams, amplitude: float = 1e-4, t_final: float | None = None) -> float:
    """Measured phase speed of a small sine perturbation of the source-free system.

    A standing wave rho = 1 + A sin(kx) evolves as 1 + A sin(kx) cos(ckt);
    the speed is recovered from the phase of the first Fourier mode.
    """
    solver = HydroSolver(grid, params, sources=False)
    x = grid.space.mesh()[..., 0]
    k = 2.0 * math.pi / grid.space.lengths[0]
    rho = 1.0 + amplitude * np.sin(k * x)
    state = HydroState(rho, np.zeros(rho.shape + (grid.n,)), np.zeros(grid.q_shape), np.zeros(grid.space.shape))
    if t_final is None:
        t_final = 0.2 / (k * solver.c)  # well inside the first quarter period
    state = solver.run(state, t_final)
    # rho mode amplitude ~ A e^{-damp t} cos(ckt), m mode ~ A c e^{-damp t} sin(ckt) (up to sign/phase)
    ar = 2.0 / rho.size * np.sum((state.rho - 1.0) * np.sin(k * x))
    am = 2.0 / rho.size * np.sum(state.m[..., 0] * np.cos(k * x))
    # m_t = -c^2 rho_x -> m mode = -c A sin(ckt) e^{..}; rho mode = A cos(ckt) e^{..}
    phase = math.atan2(-am / solver.c, ar)
    return phase / (k * t_final)


# -- epsilon sweep ----------------------------------------------------------------


@dataclass
class SweepConfig:
    """Kinetic-vs-hydro comparison on well-prepared data.

    The long box keeps the O(eps) kinetic viscosity from damping the profile
    at the largest eps, and t_final leaves several relaxation times for the
    activity variable at eps = 0.2.
    """

    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    a: float = 0.5
    b: float = 1.0
    d: float = 1.0
    t_final: float = 3.0
    x_cells: int = 64
    box: float = 8.0
    radial_count: int = 8
    activity_subdivision: int = 7
    n: int = 1
    s: float = 0.5
    profile: str = "sine"
    amplitude: float = 0.2
    velocity: float = 0.1
    fiber: float = 1.0
    fiber_bias: float = 0.2
    dt_factor: float = 0.125  # dt <= dt_factor * eps
    base: ModelParams = field(default_factory=ModelParams)
    threads: int = 1


@dataclass
class SweepEntry:
    eps: float
    rho_l1_diff: float
    closure_residual: float
    kinetic_eq_distance: float
    steps: int


@dataclass
class ConvergenceReport:
    entries: list
    slopes: dict
    monotone: dict

    @property
    def passed(self) -> bool:
        return all(self.monotone.values())

    def table(self) -> list:
        rows = [("epsilon", "rho_L1_diff", "closure_residual", "kinetic_eq_distance")]
        for e in self.entries:
            rows.append((e.eps, e.rho_l1_diff, e.closure_residual, e.kinetic_eq_distance))
        return rows


def estimate_rate(errors, epsilons) -> float:
    """Least-squares slope of log(error) against log(eps)."""
    e = np.asarray(errors, dtype=float)
    x = np.asarray(epsilons, dtype=float)
    if e.shape != x.shape or e.size < 3:
        raise ValueError("need at least three (error, eps) pairs of equal length")
    if np.any(e <= 0) or np.any(x <= 0):
        raise ValueError("errors and epsilons must be positive")
    slope, _ = np.polyfit(np.log(x), np.log(e), 1)
    return float(slope)


def equilibrium_distance(f, grid: PhaseGrid, kernels: KernelSet) -> float:
    """L1 distance from f to the null space of the turning operator: at every
    (x, y), the equilibrium rho(x, y)(1 + (beta/lam) v.U(x, y)) / |V| that
    carries the same density and momentum as f."""
    from .kinetic import turning_projection

    M = turning_projection(f, grid, kernels)
    wf = np.einsum("v,y->vy", grid.velocity.weights, grid.activity.weights)
    return float((np.abs(f - M) * wf).sum() * grid.space.cell_volume)


def closure_residual(f, Q, L, grid: PhaseGrid, params: ModelParams) -> float:
    """|| A W - b ||_1 over the box, with W the activity mean of f."""
    m = compute_moments(f, grid)
    sys = reaction_matrix(Q @ grid.theta.weights, L, params)
    r = np.einsum("...ij,...j->...i", sys.A, m.W) - sys.b
    return float(np.abs(r).sum() * grid.space.cell_volume)


def _run_single(eps: float, cfg: SweepConfig) -> SweepEntry:
    params = cfg.base.with_(eps=eps, a=cfg.a, b=cfg.b, d=cfg.d)
    grid = build_phase_grid(n=cfg.n, s=cfg.s, x_cells=cfg.x_cells, box=cfg.box, radial_count=cfg.radial_count,
                            activity_subdivision=cfg.activity_subdivision)
    kernels = build_kernels(grid, params)
    state = initial_state(grid, kernels, cfg.profile, amplitude=cfg.amplitude, velocity=cfg.velocity,
                          fiber=cfg.fiber, fiber_bias=cfg.fiber_bias)
    hydro = HydroSolver(grid, params, kernels, c2=grid.velocity.second_moment[0, 0] / grid.velocity.measure)
    hstate = hydro_from_kinetic(state, grid)

    kin = KineticSolver(grid, params, kernels, threads=cfg.threads)
    dt = min(kin.max_dt(state), cfg.dt_factor * eps, hydro.max_dt(hstate))
    nsteps = max(1, int(math.ceil(cfg.t_final / dt - 1e-12)))
    dt = cfg.t_final / nsteps
    for _ in range(nsteps):
        state, _ = kin.step(state, dt, check_cfl=False)
        hstate = hydro.hydro_step(hstate, dt, check_cfl=False)
    kin.close()
    rho_k = compute_moments(state.f, grid).rho
    diff = float(np.abs(rho_k - hstate.rho).sum() * grid.space.cell_volume)
    return SweepEntry(eps, diff, closure_residual(state.f, state.Q, state.L, grid, params),
                      equilibrium_distance(state.f, grid, kernels), nsteps)


def epsilon_sweep(config: SweepConfig | None = None, workers: int = 1) -> ConvergenceReport:
    cfg = config if config is not None else SweepConfig()
    eps = list(cfg.eps_list)
    if len(eps) < 3 or any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
        raise ConfigError("eps list must be strictly decreasing with at least three entries")
    if not 0.0 < cfg.a < 1.0:
        raise RegimeError(f"a = {cfg.a} must lie in (0, 1)")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(lambda e: _run_single(e, cfg), eps))
    else:
        entries = [_run_single(e, cfg) for e in eps]

    def mono(vals):
        return all(b < a for a, b in zip(vals, vals[1:]))

    cols = {
        "rho_l1_diff": [e.rho_l1_diff for e in entries],
        "closure_residual": [e.closure_residual for e in entries],
        "kinetic_eq_distance": [e.kinetic_eq_distance for e in entries],
    }
    slopes = {}
    for k, v in cols.items():
        try:
            slopes[k] = estimate_rate(v, eps)
        except ValueError:
            slopes[k] = float("nan")
    return ConvergenceReport(entries, slopes, {k: mono(v) for k, v in cols.items()})
