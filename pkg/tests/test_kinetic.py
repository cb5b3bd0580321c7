import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellmig.errors import CFLError, ConfigError, FluxDirectionError, NonContractiveError
from cellmig.grid import build_phase_grid
from cellmig.kernels import ModelParams, build_kernels, eval_G
from cellmig.kinetic import (KineticSolver, KineticState, apply_C, apply_H, apply_Lturn, apply_transport,
                             apply_y_flux, apriori_monitors, degradation_weight, exact_Q_solution, gradient,
                             heat_semigroup, initial_state, integrate_Q_frozen, laplacian, picard_iterate)
from cellmig.moments import equilibrium

TOY = build_phase_grid(x_cells=5, radial_count=3, activity_subdivision=2)
TOY_K = build_kernels(TOY, ModelParams())


def rand_state(grid, seed=0, L=True):
    rng = np.random.default_rng(seed)
    f = rng.uniform(0.1, 1.0, grid.f_shape)
    Q = rng.uniform(0.1, 1.0, grid.q_shape)
    Lf = rng.uniform(0.0, 0.5, grid.space.shape) if L else np.zeros(grid.space.shape)
    return f, Q, Lf


# -- spatial helpers


def test_gradient_and_laplacian_of_mode():
    g = build_phase_grid(x_cells=64)
    x = g.space.mesh()[..., 0]
    L = np.sin(2 * np.pi * x)
    dx = g.space.dx
    k = 2 * np.pi
    assert np.allclose(gradient(L, g)[..., 0], np.sin(k * dx) / dx * np.cos(k * x), atol=1e-12)
    assert np.allclose(laplacian(L, g), -4 / dx**2 * np.sin(k * dx / 2) ** 2 * L, atol=1e-9)


def test_heat_semigroup_on_mode_and_mean():
    g = build_phase_grid(x_cells=32)
    x = g.space.mesh()[..., 0]
    dx = g.space.dx
    L = 2.0 + np.cos(4 * np.pi * x)
    tau = 0.01
    decay = math.exp(-tau * 4 / dx**2 * math.sin(2 * np.pi * dx) ** 2)
    assert np.allclose(heat_semigroup(L, tau, g), 2.0 + decay * np.cos(4 * np.pi * x), atol=1e-13)
    # semigroup property
    a = heat_semigroup(heat_semigroup(L, tau, g), tau, g)
    assert np.allclose(a, heat_semigroup(L, 2 * tau, g), atol=1e-13)


# -- velocity operators


def brute_H(f, Q, grid, k):
    q, th = grid.velocity, grid.theta
    psi = k.psi_table()
    out = np.zeros_like(f)
    for x in range(f.shape[0]):
        qbar = sum(th.weights[t] * Q[x, t] for t in range(th.size))
        for i in range(q.size):
            for y in range(f.shape[2]):
                gain = 0.0
                for j in range(q.size):
                    for t in range(th.size):
                        gain += th.weights[t] * q.weights[j] * psi[t, i, j] * f[x, j, y] * Q[x, t]
                out[x, i, y] = gain - f[x, i, y] * qbar
    return out


def test_apply_H_matches_hand_sum():
    f, Q, _ = rand_state(TOY)
    assert np.allclose(apply_H(f, Q, TOY, TOY_K), brute_H(f, Q, TOY, TOY_K), atol=1e-13)


def test_apply_H_trivial_and_conservative():
    f, Q, _ = rand_state(TOY, 1)
    assert np.all(apply_H(f, np.zeros_like(Q), TOY, TOY_K) == 0.0)
    out = apply_H(f, Q, TOY, TOY_K)
    assert np.abs(np.einsum("xvy,v->xy", out, TOY.velocity.weights)).max() < 1e-13


def test_apply_C_matches_hand_sum():
    p = ModelParams(chi=0.3)
    k = build_kernels(TOY, p)
    f, _, L = rand_state(TOY, 2)
    F = gradient(L, TOY)
    q = TOY.velocity
    ref = np.zeros_like(f)
    for x in range(f.shape[0]):
        Fx = F[x] / (1 + np.linalg.norm(F[x]))
        for i in range(q.size):
            K = 1 / q.measure + p.chi * float(Fx @ q.nodes[i])
            for y in range(f.shape[2]):
                ref[x, i, y] = p.alpha2 * (K * sum(q.weights[j] * f[x, j, y] for j in range(q.size)) - f[x, i, y])
    assert np.allclose(apply_C(f, L, TOY, k, p), ref, atol=1e-13)
    assert np.abs(np.einsum("xvy,v->xy", ref, q.weights)).max() < 1e-13


def test_apply_C_uniform_is_equilibrium():
    f = np.ones(TOY.f_shape)
    assert np.abs(apply_C(f, np.full(TOY.space.shape, 0.7), TOY, TOY_K, ModelParams())).max() < 1e-14


def test_apply_Lturn_delta_column():
    # f concentrated on one velocity node: L f = alpha1 (lam w0 + beta w0 v.v0 - lam |V| delta)
    q = TOY.velocity
    f = np.zeros(TOY.f_shape)
    f[:, 2, :] = 1.0
    out = apply_Lturn(f, TOY, TOY_K)
    ref = TOY_K.lam * q.weights[2] + TOY_K.beta * q.weights[2] * q.nodes[:, 0] * q.nodes[2, 0]
    ref = ref - TOY_K.lam * q.measure * (np.arange(q.size) == 2)
    assert np.allclose(out, ref[None, :, None], atol=1e-14)


# -- transport


def test_transport_uniform_and_conservative():
    g = build_phase_grid(x_cells=16)
    assert np.abs(apply_transport(np.ones(g.f_shape), g)).max() == 0.0
    f, _, _ = rand_state(g, 3)
    assert np.abs(apply_transport(f, g).sum(axis=0)).max() < 1e-11


def test_transport_phase_speed():
    g = build_phase_grid(x_cells=128)
    x = g.space.mesh()[..., 0]
    f = np.broadcast_to(np.sin(2 * np.pi * x)[:, None, None], g.f_shape).copy()
    dt, steps = 0.25 * g.space.dx, 200
    for _ in range(steps):
        f1 = f - dt * apply_transport(f, g)
        f = 0.5 * f + 0.5 * (f1 - dt * apply_transport(f1, g))
    t = dt * steps
    for i, v in enumerate(g.velocity.nodes[:, 0]):
        mode = np.fft.fft(f[:, i, 0])[1]
        shift = -np.angle(mode / np.fft.fft(np.sin(2 * np.pi * x))[1]) / (2 * np.pi)
        assert abs(shift / t - v) / abs(v) < 0.02


# -- activity drift


def test_y_flux_zero_and_mass():
    p = ModelParams(k1=0.7, km1=1.2, k2=0.4, km2=0.9)
    f, Q, L = rand_state(TOY, 4)
    qbar = Q @ TOY.theta.weights
    assert np.all(apply_y_flux(np.zeros(TOY.f_shape), qbar, L, TOY, p) == 0.0)
    out = apply_y_flux(f, qbar, L, TOY, p)
    assert np.abs(out @ TOY.activity.weights).max() < 1e-13


@pytest.mark.parametrize("m", [2, 4, 7])
def test_y_flux_first_moment_is_exact(m):
    g = build_phase_grid(x_cells=4, activity_subdivision=m)
    p = ModelParams(k1=0.7, km1=1.2, k2=0.4, km2=0.9)
    f, Q, L = rand_state(g, 5)
    qbar = Q @ g.theta.weights
    out = apply_y_flux(f, qbar, L, g, p)
    a = g.activity
    lhs = np.einsum("xvy,y,yk->xvk", out, a.weights, a.nodes)
    G = eval_G(a.nodes[None, :, :], qbar[:, None], L[:, None], p)
    rhs = -np.einsum("xvy,y,xyk->xvk", f, a.weights, G)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_y_flux_rejects_negative_concentrations():
    f, Q, L = rand_state(TOY, 6)
    with pytest.raises(FluxDirectionError):
        apply_y_flux(f, -Q @ TOY.theta.weights, L, TOY, ModelParams())


# -- fiber equation


def test_exact_Q_trivial_cases():
    g = build_phase_grid(x_cells=8)
    p = ModelParams(kappa=0.5)
    Q0 = np.random.default_rng(7).uniform(size=g.q_shape)
    f0 = np.zeros(g.f_shape)
    assert np.allclose(exact_Q_solution(f0, Q0, 0.0, 2.0, g, p), Q0)
    assert np.allclose(exact_Q_solution(f0, Q0, 0.3, 2.0, g, p), Q0 + 0.6)


def test_integrator_matches_exact_with_uniform_f():
    g = build_phase_grid(x_cells=8)
    p = ModelParams(kappa=0.5, k1=0.8)
    k = build_kernels(g, p)
    s = initial_state(g, k, "uniform")
    exact = exact_Q_solution(s.f, s.Q, 0.0, 1.0, g, p)
    errs = [float(np.abs(integrate_Q_frozen(s.f, s.Q, 0.0, 1.0, n, g, p)[0] - exact).max()) for n in (200, 400, 800)]
    assert errs[-1] < 1e-8
    assert math.log2(errs[0] / errs[1]) > 1.95 and math.log2(errs[1] / errs[2]) > 1.95


def test_degradation_weight_vanishes_in_1d():
    f, _, _ = rand_state(TOY, 8)
    assert np.all(degradation_weight(f, TOY) == 0.0)


# -- stepping


def test_global_equilibrium_is_stationary():
    g = build_phase_grid(x_cells=16)
    p = ModelParams(k1=0.0, km1=0.0, k2=0.0, km2=0.0)
    solver = KineticSolver(g, p)
    f = equilibrium(np.full(g.space.shape, 1.3), np.zeros(g.space.shape + (1,)), g, solver.kernels)
    state = KineticState(f, np.zeros(g.q_shape), np.zeros(g.space.shape))
    dt = solver.max_dt(state)
    for _ in range(10):
        new, _ = solver.step(state, dt)
        assert np.abs(new.f - state.f).max() < 1e-12
        state = new


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000), kappa=st.floats(0.0, 1.0), rL=st.floats(0.0, 1.0))
def test_mass_conserved_and_positive(seed, kappa, rL):
    g = build_phase_grid(x_cells=16)
    p = ModelParams(kappa=kappa, r_L=rL)
    solver = KineticSolver(g, p)
    f, Q, L = rand_state(g, seed)
    state = KineticState(f, Q, L)
    m0 = solver.total_mass(f)
    dt = 0.8 * solver.max_dt(state)
    for _ in range(20):
        state, _ = solver.step(state, dt)
        assert min(state.f.min(), state.Q.min(), state.L.min()) >= -1e-12
    assert abs(solver.total_mass(state.f) - m0) / m0 < 1e-10


def test_compound_totals_conserved_without_decay():
    g = build_phase_grid(x_cells=16)
    solver = KineticSolver(g, ModelParams(kappa=0.0, r_L=0.0, D_L=0.0, eps=0.5))
    f, Q, L = rand_state(g, 9)
    state = KineticState(f, Q, L)
    c0 = np.array(solver.compound_totals(state))
    dt = solver.max_dt(state)
    for _ in range(50):
        state, _ = solver.step(state, dt)
    assert np.abs(np.array(solver.compound_totals(state)) / c0 - 1).max() < 1e-8


def test_cfl_violation_raises():
    g = build_phase_grid(x_cells=16)
    solver = KineticSolver(g, ModelParams())
    state = initial_state(g, solver.kernels, "gaussian")
    with pytest.raises(CFLError):
        solver.step(state, 3 * solver.max_dt(state))


def test_threads_give_identical_bytes():
    g = build_phase_grid(x_cells=24)
    f, Q, L = rand_state(g, 10)
    out = []
    for threads in (1, 3):
        solver = KineticSolver(g, ModelParams(kappa=0.2), threads=threads)
        state = KineticState(f.copy(), Q.copy(), L.copy())
        dt = solver.max_dt(state)
        for _ in range(5):
            state, _ = solver.step(state, dt)
        solver.close()
        out.append(state.f.tobytes() + state.Q.tobytes() + state.L.tobytes())
    assert out[0] == out[1]


# -- Picard


def test_picard_zero_data_converges_at_once():
    g = build_phase_grid(x_cells=8)
    solver = KineticSolver(g, ModelParams())
    res = picard_iterate(np.zeros(g.f_shape), np.zeros(g.q_shape), 0.05, 1e-12, 5, solver, nsteps=4)
    assert res.converged and len(res.residuals) == 1 and res.residuals[0] == 0.0


def test_picard_contracts_and_reports_failure():
    g = build_phase_grid(x_cells=16)
    solver = KineticSolver(g, ModelParams(kappa=0.3))
    s = initial_state(g, solver.kernels, "gaussian", amplitude=0.1, fiber=0.5)
    res = picard_iterate(s.f, s.Q, 0.05, 1e-10, 50, solver)
    assert res.converged and max(res.ratios) < 1
    with pytest.raises(NonContractiveError):
        picard_iterate(s.f, s.Q, 0.05, 1e-10, 2, solver)
    with pytest.raises(ConfigError):
        picard_iterate(s.f, s.Q, 0.0, 1e-10, 2, solver)


# -- monitors and initial data


def test_monitors_zero_solution():
    g = build_phase_grid(x_cells=8)
    z = KineticState(np.zeros(g.f_shape), np.zeros(g.q_shape), np.zeros(g.space.shape))
    d = apriori_monitors([z, KineticState(z.f, z.Q, z.L, 0.1)], g, ModelParams())
    for name in ("f_L1", "Q_Linf", "L_L1", "mass"):
        assert np.all(d.norms[name] == 0.0)
    assert d.flags == []


def test_monitors_along_a_run():
    g = build_phase_grid(x_cells=16)
    p = ModelParams(kappa=0.5, r_L=0.1)
    solver = KineticSolver(g, p)
    state = initial_state(g, solver.kernels, "two_bump", velocity=0.1)
    hist = [state]
    solver.run(state, 0.2, callback=hist.append)
    d = apriori_monitors(hist, g, p)
    assert d.flags == []
    assert d.norms["min_Q"].min() >= -1e-12
    assert d.norms["desQ_margin_inf"].min() >= 0


def test_initial_profiles():
    g = build_phase_grid(x_cells=16)
    for kind in ("zero", "uniform", "gaussian", "two_bump", "sine", "random"):
        s = initial_state(g, build_kernels(g, ModelParams()), kind)
        assert s.f.shape == g.f_shape and s.f.min() >= 0
    k = build_kernels(g, ModelParams())
    a = initial_state(g, k, "random", seed=1).f
    assert np.array_equal(a, initial_state(g, k, "random", seed=1).f)
    assert not np.array_equal(a, initial_state(g, k, "random", seed=2).f)
    with pytest.raises(ConfigError):
        initial_state(g, k, "nope")
