"""Numerical checks shared by the ``verify`` subcommand and the test suite.

Every check returns CheckResult records carrying the measured value and the
threshold it is compared with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import (annulus_second_moment, build_phase_grid, build_velocity_quadrature, quadrature_moment,
                   sound_speed_squared)
from .hydro import acoustic_speed, g_theta
from .kernels import ModelParams, build_kernels, eval_G, validate_kernels
from .kinetic import (KineticSolver, KineticState, apply_C, apply_H, apply_Lturn, exact_Q_solution, initial_state,
                      integrate_Q_frozen, picard_iterate, xnorm)
from .moments import closure_W, compute_moments, equilibrium, macro_sources, pressure_equilibrium, reaction_matrix


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    relation: str = "<="

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.6e} {self.relation} {self.threshold:.6e}"


def _le(name, value, threshold):
    return CheckResult(name, float(value), float(threshold), bool(value <= threshold), "<=")


def _ge(name, value, threshold):
    return CheckResult(name, float(value), float(threshold), bool(value >= threshold), ">=")


# -- 1. quadrature ---------------------------------------------------------------


def second_moment_error(n: int, s: float, radial_count: int, angular_count: int = 2) -> float:
    q = build_velocity_quadrature(n, s, radial_count, angular_count)
    exact = annulus_second_moment(n, s)
    return abs(q.second_moment[0, 0] - exact) / exact


def check_quadrature(n: int = 1, s: float = 0.5, radial_count: int = 8, angular_count: int = 2) -> list:
    q = build_velocity_quadrature(n, s, radial_count, angular_count)
    odd = max(abs(quadrature_moment(q, e)) for e in np.eye(n, dtype=int))
    exact = annulus_second_moment(n, s)
    off = 0.0 if n == 1 else abs(q.second_moment[0, 1]) / exact
    e1 = second_moment_error(n, s, radial_count, angular_count)
    e2 = second_moment_error(n, s, 2 * radial_count, angular_count)
    tag = f"quadrature[n={n}]"
    return [
        _le(f"{tag} int v dv", odd, 0.0),
        _le(f"{tag} int v_i v_k dv relative error", max(e1, off), 1e-3),
        # midpoint rule: the ratio is 4 up to round-off
        _ge(f"{tag} refinement ratio", e1 / e2, 4.0 - 1e-9),
    ]


# -- 2. solvability ---------------------------------------------------------------


def check_solvability(grid=None, params=None, samples: int = 50, seed: int = 0) -> list:
    grid = grid or build_phase_grid(x_cells=4)
    params = params or ModelParams()
    k = build_kernels(grid, params)
    rng = np.random.default_rng(seed)
    q = grid.velocity
    f = rng.uniform(0.0, 1.0, size=(samples, q.size, grid.activity.size))

    def moments(kern):
        out = apply_Lturn(f, grid, kern, params)
        mass = np.abs(np.einsum("svy,v->sy", out, q.weights)).max()
        mom = np.abs(np.einsum("svy,v,vi->siy", out, q.weights, q.nodes)).max()
        return mass, mom

    mass, mom = moments(k)
    _, mom_bad = moments(replace(k, beta=1.1 * k.beta))
    return [
        _le("solvability int L(f) dv", mass, 1e-12),
        _le("solvability int v L(f) dv", mom, 1e-12),
        _ge("solvability sensitivity (beta +10%)", mom_bad, 1e-4),
    ]


# -- 3. equilibrium ------------------------------------------------------------------


def admissible_speed(grid, kernels) -> float:
    return 1.0 / (kernels.beta_over_lam * float(grid.velocity.speeds.max()))


def check_equilibrium(grid=None, params=None, draws: int = 20, seed: int = 1) -> list:
    grid = grid or build_phase_grid(x_cells=4)
    params = params or ModelParams()
    k = build_kernels(grid, params)
    rng = np.random.default_rng(seed)
    n = grid.n
    rho = rng.uniform(0.0, 2.0, size=draws)
    direction = rng.normal(size=(draws, n))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    U = direction * rng.uniform(0.0, 1.0, size=(draws, 1)) * admissible_speed(grid, k)
    M = equilibrium(rho, U, grid, k)
    m = compute_moments(M, grid)
    return [
        _le("equilibrium |L(M)| pointwise", np.abs(apply_Lturn(M, grid, k, params)).max(), 1e-12),
        _le("equilibrium rho recovered", np.abs(m.rho - rho).max(), 1e-12),
        _le("equilibrium rho U recovered", np.abs(m.rhoU - rho[:, None] * U).max(), 1e-12),
    ]


# -- 4. closure ------------------------------------------------------------------------


def check_closure(draws: int = 1000, seed: int = 2) -> list:
    rng = np.random.default_rng(seed)
    worst_aw, worst_g = 0.0, 0.0
    for _ in range(draws):
        k1, km1, k2, km2 = 1.0 - rng.random(4)  # (0, 1]
        qbar, L = 2.0 * (1.0 - rng.random(2))  # (0, 2]
        p = ModelParams(k1=k1, km1=km1, k2=k2, km2=km2)
        W = closure_W(qbar, L, p)
        sys = reaction_matrix(qbar, L, p)
        worst_aw = max(worst_aw, float(np.abs(sys.A @ W - sys.b).max()))
        worst_g = max(worst_g, float(np.abs(eval_G(W, qbar, L, p)).max()))
    return [
        _le("closure ||A W - b||_inf", worst_aw, 1e-14),
        _le("closure |G(W, Qbar, L)|", worst_g, 1e-14),
    ]


# -- 5. micro-macro ----------------------------------------------------------------------


def check_micro_macro(grid=None, params=None, draws: int = 100, seed: int = 3) -> list:
    grid = grid or build_phase_grid(x_cells=8)
    params = params or ModelParams()
    k = build_kernels(grid, params)
    rng = np.random.default_rng(seed)
    q = grid.velocity
    shape = grid.space.shape
    umax = admissible_speed(grid, k)
    worst_h, worst_c = 0.0, 0.0
    for _ in range(draws):
        rho = rng.uniform(0.1, 2.0, size=shape)
        U = rng.uniform(-1.0, 1.0, size=shape + (grid.n,)) * umax / math.sqrt(grid.n)
        Q = rng.uniform(0.0, 2.0, size=grid.q_shape)
        L = rng.uniform(0.0, 2.0, size=shape)
        M = equilibrium(rho, U, grid, k)
        H, C = macro_sources(rho, U, Q, L, params, grid, k)
        Hm = np.einsum("...vy,v,y,vi->...i", apply_H(M, Q, grid, k), q.weights, grid.activity.weights, q.nodes)
        Cm = np.einsum("...vy,v,y,vi->...i", apply_C(M, L, grid, k, params), q.weights, grid.activity.weights,
                       q.nodes)
        worst_h = max(worst_h, float(np.abs(H - Hm).max()))
        worst_c = max(worst_c, float(np.abs(C - Cm).max()))
    return [
        _le("micro-macro haptotaxis source", worst_h, 1e-10),
        _le("micro-macro chemotaxis source", worst_c, 1e-10),
    ]


# -- 6. pressure --------------------------------------------------------------------------


def pressure_error(radial_count: int, coefficient=None, n: int = 1, s: float = 0.5, seed: int = 4) -> float:
    """Max relative gap between the quadrature pressure of M and
    coefficient * rho I - rho U x U (default coefficient: int v_1^2 dv / |V|)."""
    grid = build_phase_grid(n=n, s=s, x_cells=8, radial_count=radial_count,
                            angular_count=2 if n == 1 else 16)
    k = build_kernels(grid, ModelParams())
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.5, 2.0, size=grid.space.shape)
    U = rng.uniform(-1.0, 1.0, size=grid.space.shape + (n,)) * admissible_speed(grid, k) / math.sqrt(n)
    P = compute_moments(equilibrium(rho, U, grid, k), grid).P
    ref = pressure_equilibrium(rho, U, n, s)
    if coefficient is not None:
        ref = ref + (coefficient - sound_speed_squared(n, s)) * rho[..., None, None] * np.eye(n)
    # relative to the size of the isotropic part, c^2 rho
    scale = (coefficient if coefficient is not None else sound_speed_squared(n, s)) * rho[..., None, None]
    return float((np.abs(P - ref) / scale).max())


def check_pressure(n: int = 1, s: float = 0.5, radial_count: int = 8, coefficient=None, tag: str = "") -> list:
    e1 = pressure_error(radial_count, coefficient, n, s)
    e2 = pressure_error(2 * radial_count, coefficient, n, s)
    return [
        _le(f"pressure{tag} relative error", e1, 1e-3),
        _ge(f"pressure{tag} refinement ratio", e1 / e2 if e2 > 0 else math.inf, 4.0 - 1e-9),
    ]


# -- 7. conservation -------------------------------------------------------------------------


def check_conservation(steps: int = 100, grid=None) -> list:
    grid = grid or build_phase_grid()
    params = ModelParams(kappa=0.3, r_L=0.2)
    solver = KineticSolver(grid, params)
    state = initial_state(grid, solver.kernels, "gaussian", velocity=0.1, fiber_bias=0.2)
    m0 = solver.total_mass(state.f)
    dt = solver.max_dt(state)
    for _ in range(steps):
        state, _ = solver.step(state, dt)
    mass_drift = abs(solver.total_mass(state.f) - m0) / m0

    closed = ModelParams(kappa=0.0, r_L=0.0, D_L=0.0)
    solver = KineticSolver(grid, closed)
    state = initial_state(grid, solver.kernels, "gaussian", velocity=0.1, fiber_bias=0.2)
    c0 = np.array(solver.compound_totals(state))
    dt = solver.max_dt(state)
    worst = 0.0
    for _ in range(steps):
        state, _ = solver.step(state, dt)
        worst = max(worst, float((np.abs(np.array(solver.compound_totals(state)) - c0) / c0).max()))
    return [
        _le(f"cell mass drift over {steps} steps", mass_drift, 1e-10),
        _le("fiber + bound receptor total drift", worst, 1e-6),
    ]


# -- 8. fiber equation oracle ------------------------------------------------------------------


def check_q_oracle(levels=(250, 500, 1000), t: float = 1.0) -> list:
    grid = build_phase_grid()
    params = ModelParams(kappa=0.7, k1=1.3, km1=0.9)
    k = build_kernels(grid, params)
    state = initial_state(grid, k, "two_bump", velocity=0.2, fiber_bias=0.5)
    h = 0.05 * (1.0 + grid.theta.nodes[:, 0])
    exact = exact_Q_solution(state.f, state.Q, h, t, grid, params)
    errs, qmin = [], math.inf
    for nsteps in levels:
        Q, lo = integrate_Q_frozen(state.f, state.Q, h, t, nsteps, grid, params)
        errs.append(float(np.abs(Q - exact).max()))
        qmin = min(qmin, lo)
    order = np.polyfit(np.log([t / n for n in levels]), np.log(errs), 1)[0]
    return [
        _le("fiber oracle error at finest dt", errs[-1], 1e-8),
        _ge("fiber oracle order", order, 2.0),
        _ge("fiber oracle min Q", qmin, -1e-12),
    ]


# -- 9. Picard -----------------------------------------------------------------------------------


def check_picard(T0: float = 0.05, tol: float = 1e-10, max_iter: int = 50, grid=None) -> list:
    grid = grid or build_phase_grid()
    params = ModelParams(kappa=0.5, r_L=0.1)
    solver = KineticSolver(grid, params)
    init = initial_state(grid, solver.kernels, "gaussian", amplitude=0.1, velocity=0.05, fiber=0.5)
    res = picard_iterate(init.f, init.Q, T0, tol, max_iter, solver)
    nsteps = len(res.trajectory) - 1
    state = KineticState(init.f.copy(), init.Q.copy(), np.zeros(grid.space.shape))
    for _ in range(nsteps):
        state, _ = solver.step(state, T0 / nsteps)
    last = res.trajectory[-1]
    gap = xnorm(state.f - last.f, state.Q - last.Q, state.L - last.L, grid)
    return [
        _le("Picard max successive ratio", max(res.ratios), 1.0 - 1e-12),
        _le("Picard fixed point vs coupled solve", gap, 5.0 * tol),
    ]


# -- 11. acoustic speed ---------------------------------------------------------------------------


def check_acoustic(n: int = 1, s: float = 0.5, cells: int = 256, target=None, tag: str = "") -> list:
    grid = build_phase_grid(n=n, s=s, x_cells=cells, radial_count=8, angular_count=2 if n == 1 else 8)
    params = ModelParams(b=2.0, d=2.0)
    c = acoustic_speed(grid, params)
    target = math.sqrt(sound_speed_squared(n, s)) if target is None else target
    return [_le(f"acoustic speed{tag} relative error", abs(c - target) / target, 0.02)]


# -- misc ------------------------------------------------------------------------------------------


def check_kernels(grid=None) -> list:
    grid = grid or build_phase_grid(x_cells=4)
    rep = validate_kernels(build_kernels(grid, ModelParams()), grid)
    return [_le(f"kernel {name}", v, rep.tol) for name, v in rep.violations.items()]


def check_degradation_weight() -> list:
    g1 = build_phase_grid(x_cells=4)
    g2 = build_phase_grid(n=2, s=0.5, x_cells=4, radial_count=8, angular_count=512, theta_count=8)
    exact = 0.5 * (1.0 - 0.25) * (2.0 * math.pi - 4.0)
    return [
        _le("g(theta) vanishes for n=1", np.abs(g_theta(g1.theta, g1.velocity)).max(), 1e-15),
        _le("g(theta) for n=2, s=0.5 relative error", np.abs(g_theta(g2.theta, g2.velocity) / exact - 1.0).max(), 1e-3),
    ]


def run_all(grid=None, seed: int = 0) -> list:
    """The full invariant suite at default resolution (the limit sweep runs separately)."""
    out = []
    out += check_quadrature(1)
    out += check_quadrature(2, radial_count=12, angular_count=16)
    out += check_kernels()
    out += check_solvability(seed=seed)
    out += check_equilibrium(seed=seed + 1)
    out += check_closure(seed=seed + 2)
    out += check_micro_macro(seed=seed + 3)
    out += check_pressure()
    out += check_conservation()
    out += check_q_oracle()
    out += check_picard()
    out += check_acoustic()
    out += check_degradation_weight()
    return out
