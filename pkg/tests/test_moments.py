import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellmig.errors import ClosureError, ConfigError
from cellmig.grid import build_phase_grid
from cellmig.kernels import ModelParams, build_kernels, eval_G
from cellmig.kinetic import apply_C, apply_H, apply_Lturn
from cellmig.moments import (closure_W, compute_moments, equilibrium, macro_kernel_moments, macro_sources,
                             pressure_equilibrium, reaction_matrix)
from cellmig.verify import admissible_speed

GRID = build_phase_grid(x_cells=6)
KERN = build_kernels(GRID, ModelParams())
UMAX = admissible_speed(GRID, KERN)


def brute_moments(f, grid):
    """Naive loops over (v, y) nodes."""
    q, a = grid.velocity, grid.activity
    nx = f.shape[0]
    rho, rhoU, rhoW = np.zeros(nx), np.zeros((nx, grid.n)), np.zeros((nx, 2))
    for x in range(nx):
        for i in range(q.size):
            for j in range(a.size):
                w = q.weights[i] * a.weights[j] * f[x, i, j]
                rho[x] += w
                rhoU[x] += w * q.nodes[i]
                rhoW[x] += w * a.nodes[j]
    return rho, rhoU, rhoW


def test_moments_of_zero():
    m = compute_moments(np.zeros(GRID.f_shape), GRID)
    for arr in (m.rho, m.rhoU, m.rhoW, m.P, m.U, m.W):
        assert np.all(arr == 0.0)


def test_moments_match_brute_force():
    f = np.random.default_rng(0).uniform(size=GRID.f_shape)
    m = compute_moments(f, GRID)
    rho, rhoU, rhoW = brute_moments(f, GRID)
    assert np.allclose(m.rho, rho, rtol=1e-13)
    assert np.allclose(m.rhoU, rhoU, atol=1e-13)
    assert np.allclose(m.rhoW, rhoW, rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(rho=st.floats(0.01, 10.0), u=st.floats(-1.0, 1.0))
def test_equilibrium_moments_and_kernel(rho, u):
    U = np.full((GRID.space.shape[0], 1), u * UMAX)
    r = np.full(GRID.space.shape, rho)
    M = equilibrium(r, U, GRID, KERN)
    assert M.min() >= -1e-14
    m = compute_moments(M, GRID)
    assert np.allclose(m.rho, rho, rtol=1e-12)
    assert np.allclose(m.rhoU, rho * U, atol=1e-12 * rho)
    # uniform in y: W is the centroid of the triangle
    assert np.allclose(m.W, 1.0 / 3.0, atol=1e-13)
    assert np.abs(apply_Lturn(M, GRID, KERN)).max() <= 1e-12 * max(rho, 1.0)


def test_equilibrium_uniform_when_at_rest():
    M = equilibrium(np.full(GRID.space.shape, 2.0), np.zeros(GRID.space.shape + (1,)), GRID, KERN)
    assert np.allclose(M, 2.0 / (GRID.velocity.measure * 0.5))


def test_equilibrium_rejects_inadmissible_velocity():
    with pytest.raises(ConfigError, match="admissible"):
        equilibrium(np.ones(GRID.space.shape), np.full(GRID.space.shape + (1,), 1.01 * UMAX), GRID, KERN)


def test_closure_worked_example():
    p = ModelParams()
    assert np.allclose(closure_W(2.0, 3.0, p), [1 / 3, 1 / 2], atol=1e-15)
    sys = reaction_matrix(2.0, 3.0, p)
    assert np.allclose(sys.A, [[3, 2], [3, 4]])
    assert np.allclose(sys.b, [2, 3])
    assert np.allclose(sys.solve(), [1 / 3, 1 / 2], atol=1e-15)
    assert np.allclose(eval_G([1 / 3, 1 / 2], 2.0, 3.0, p), 0.0, atol=1e-15)


def test_closure_edge_cases():
    p = ModelParams(k1=0.7, km1=1.3, k2=2.0, km2=0.4)
    assert closure_W(1.5, 0.0, p)[1] == 0.0
    assert np.all(closure_W(0.0, 0.0, p) == 0.0)
    assert np.all(reaction_matrix(0.0, 0.0, p).solve() == 0.0)
    with pytest.raises(ClosureError):
        reaction_matrix(1.0, 1.0, ModelParams(km1=0.0, km2=0.0)).solve()


def test_closure_saturates_monotonically():
    p = ModelParams(k1=0.3, km1=2.0, k2=1.7, km2=0.5)
    ray = 10.0 ** np.arange(0, 7)
    total = closure_W(ray, ray, p).sum(-1)
    assert np.all(np.diff(total) > 0)
    assert np.all(total < 1.0)
    assert 1.0 - total[-1] < 1e-5


@settings(max_examples=100, deadline=None)
@given(k=st.tuples(*[st.floats(0.01, 5.0)] * 4), q=st.floats(0.0, 10.0), l=st.floats(0.0, 10.0))
def test_closure_is_the_reaction_steady_state(k, q, l):
    p = ModelParams(k1=k[0], km1=k[1], k2=k[2], km2=k[3])
    W = closure_W(q, l, p)
    assert np.all(W >= 0) and W.sum() <= 1.0
    sys = reaction_matrix(q, l, p)
    assert np.abs(sys.A @ W - sys.b).max() <= 1e-13 * (1 + np.abs(sys.b).max())
    assert np.abs(eval_G(W, q, l, p)).max() <= 1e-13 * (1 + max(q, l) * max(k))


def test_closure_matches_long_time_ode():
    # independent oracle: integrate dy/dt = G(y) to steady state with RK4
    p = ModelParams(k1=0.8, km1=1.1, k2=0.6, km2=0.9)
    q, l = 1.3, 0.7
    y = np.zeros(2)
    dt = 0.01
    for _ in range(5000):
        k1 = eval_G(y, q, l, p)
        k2 = eval_G(y + 0.5 * dt * k1, q, l, p)
        k3 = eval_G(y + 0.5 * dt * k2, q, l, p)
        k4 = eval_G(y + dt * k3, q, l, p)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.allclose(closure_W(q, l, p), y, atol=1e-12)


def quadrature_pressure(s, rho, U, radial=64):
    g = build_phase_grid(s=s, x_cells=3, radial_count=radial)
    k = build_kernels(g, ModelParams(chi=0.0))
    M = equilibrium(np.full(3, rho), np.full((3, 1), U), g, k)
    return compute_moments(M, g).P[0, 0, 0]


def test_pressure_at_rest_s0():
    # int_{-1}^{1} v^2 dv / 2 = 1/3
    assert pressure_equilibrium(1.0, [0.0], 1, 0.0)[0, 0] == pytest.approx(1 / 3)
    assert quadrature_pressure(0.0, 1.0, 0.0) == pytest.approx(1 / 3, rel=1e-3)


def test_pressure_at_rest_s_half():
    # 2 int_{1/2}^{1} v^2 dv / 1 = 7/12
    assert pressure_equilibrium(1.0, [0.0], 1, 0.5)[0, 0] == pytest.approx(7 / 12)
    assert quadrature_pressure(0.5, 1.0, 0.0) == pytest.approx(7 / 12, rel=1e-3)


def test_pressure_moving():
    rho, U = 1.7, 0.3
    ref = pressure_equilibrium(rho, [U], 1, 0.5)[0, 0]
    assert ref == pytest.approx(rho * 7 / 12 - rho * U * U)
    assert quadrature_pressure(0.5, rho, U) == pytest.approx(ref, rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(rho=st.floats(0.1, 5.0), u=st.tuples(st.floats(-1, 1), st.floats(-1, 1)), s=st.floats(0.0, 0.9))
def test_pressure_trace_identity(rho, u, s):
    U = np.array(u)
    P = pressure_equilibrium(rho, U, 2, s)
    c2 = (1 - s**4) / (4 * (1 - s**2))
    assert np.trace(P + rho * np.outer(U, U)) == pytest.approx(2 * c2 * rho, rel=1e-12)


def test_kernel_moments_against_double_loop():
    q = GRID.velocity
    F = np.zeros(GRID.space.shape + (1,))
    km = macro_kernel_moments(KERN, GRID, F)
    psi = KERN.psi_table()
    psi1 = np.zeros_like(km.psi1)
    for t in range(GRID.theta.size):
        for i in range(q.size):
            for j in range(q.size):
                psi1[t] += q.weights[i] * q.weights[j] * q.nodes[i] * psi[t, i, j]
    assert np.allclose(km.psi1, psi1, atol=1e-14)
    assert np.abs(km.psi2).max() < 1e-14
    assert np.abs(km.K1).max() < 1e-14 and np.abs(km.K2).max() < 1e-14


def test_macro_sources_trivial_cases():
    shape = GRID.space.shape
    rho = np.full(shape, 1.2)
    U = np.full(shape + (1,), 0.2 * UMAX)
    H, _ = macro_sources(rho, U, np.zeros(GRID.q_shape), np.ones(shape), ModelParams(), GRID, KERN)
    assert np.all(H == 0.0)
    _, C = macro_sources(rho, np.zeros(shape + (1,)), np.ones(GRID.q_shape), np.ones(shape), ModelParams(), GRID,
                         KERN)
    assert np.abs(C).max() < 1e-15


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_macro_sources_match_microscopic_moments(seed):
    rng = np.random.default_rng(seed)
    shape = GRID.space.shape
    q = GRID.velocity
    p = ModelParams()
    rho = rng.uniform(0.1, 2.0, shape)
    U = rng.uniform(-1, 1, shape + (1,)) * UMAX
    Q = rng.uniform(0, 2, GRID.q_shape)
    L = rng.uniform(0, 2, shape)
    M = equilibrium(rho, U, GRID, KERN)
    H, C = macro_sources(rho, U, Q, L, p, GRID, KERN)
    w = np.einsum("v,y,vi->vyi", q.weights, GRID.activity.weights, q.nodes)
    assert np.allclose(H, np.einsum("xvy,vyi->xi", apply_H(M, Q, GRID, KERN), w), atol=1e-10)
    assert np.allclose(C, np.einsum("xvy,vyi->xi", apply_C(M, L, GRID, KERN, p), w), atol=1e-10)
    assert math.isfinite(float(H.sum() + C.sum()))
