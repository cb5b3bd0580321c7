"""Scaled kinetic system: cell distribution f(x, v, y), fibers Q(x, theta),
chemoattractant L(x).

Layout: f has shape (*space, nv, ny), Q (*space, nt), L (*space).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CFLError, ConfigError, FluxDirectionError, NonContractiveError
from .grid import PhaseGrid, sphere_measure
from .kernels import KernelSet, ModelParams, build_kernels, eval_G


@dataclass
class KineticState:
    f: np.ndarray
    Q: np.ndarray
    L: np.ndarray
    t: float = 0.0

    def copy(self) -> "KineticState":
        return KineticState(self.f.copy(), self.Q.copy(), self.L.copy(), self.t)


# -- spatial helpers ---------------------------------------------------------


def gradient(L: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Centred periodic differences, shape (*space, n)."""
    parts = []
    for ax, dx in enumerate(grid.space.dx_axes):
        parts.append((np.roll(L, -1, axis=ax) - np.roll(L, 1, axis=ax)) / (2.0 * dx))
    return np.stack(parts, axis=-1)


def laplacian(L: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    out = np.zeros_like(L)
    for ax, dx in enumerate(grid.space.dx_axes):
        out += (np.roll(L, -1, axis=ax) - 2.0 * L + np.roll(L, 1, axis=ax)) / dx**2
    return out


def heat_semigroup(L: np.ndarray, tau: float, grid: PhaseGrid) -> np.ndarray:
    """exp(tau * Laplacian_h) L for the periodic 3-point Laplacian, via FFT."""
    if tau == 0.0:
        return L.copy()
    symbol = np.zeros(L.shape)
    for ax, (c, dx) in enumerate(zip(grid.space.cells, grid.space.dx_axes)):
        k = np.arange(c)
        lam = -4.0 / dx**2 * np.sin(np.pi * k / c) ** 2
        shape = [1] * L.ndim
        shape[ax] = c
        symbol = symbol + lam.reshape(shape)
    return np.real(np.fft.ifftn(np.fft.fftn(L) * np.exp(tau * symbol)))


# -- velocity-space operators -------------------------------------------------


def _rho_v(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("...vy,v->...y", f, w)


def _flux_v(f: np.ndarray, w: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    return np.einsum("...vy,v,vi->...iy", f, w, nodes)


def apply_H(f, Q, grid: PhaseGrid, kernels: KernelSet, psi: np.ndarray | None = None) -> np.ndarray:
    """Haptotaxis: int int psi(v; v', theta) f(v') Q(theta) - f Qbar."""
    w = grid.velocity.weights
    wt = grid.theta.weights
    if psi is None:
        psi = kernels.psi_table()
    qbar = Q @ wt
    B = np.einsum("...t,t,tvw->...vw", Q, wt, psi)
    gain = np.einsum("...vw,w,...wy->...vy", B, w, f)
    return gain - f * qbar[..., None, None]


def turning_projection(f, grid: PhaseGrid, kernels: KernelSet) -> np.ndarray:
    """lam int f dv' + beta v . int v' f dv' (the local equilibrium of f)."""
    q = grid.velocity
    rho = _rho_v(f, q.weights)
    j = _flux_v(f, q.weights, q.nodes)
    return kernels.lam * rho[..., None, :] + kernels.beta * np.einsum("vi,...iy->...vy", q.nodes, j)


def apply_Lturn(f, grid: PhaseGrid, kernels: KernelSet, params: ModelParams | None = None) -> np.ndarray:
    """alpha1 (lam int f dv' + beta v . int v' f dv' - lam |V| f), with lam |V| = 1."""
    alpha1 = 1.0 if params is None else params.alpha1
    proj = turning_projection(f, grid, kernels)
    return alpha1 * (proj - kernels.lam * kernels.V * f)


def apply_C(f, L, grid: PhaseGrid, kernels: KernelSet, params: ModelParams) -> np.ndarray:
    """Chemotaxis: alpha2 int K[grad L](v, v') f(v') dv' - alpha2 f."""
    K = kernels.chemo_table(gradient(L, grid))
    rho = _rho_v(f, grid.velocity.weights)
    return params.alpha2 * (K[..., :, None] * rho[..., None, :] - f)


def apply_transport(f, grid: PhaseGrid) -> np.ndarray:
    """Donor-cell discretisation of v . grad_x f on the periodic box."""
    nodes = grid.velocity.nodes
    out = np.zeros_like(f)
    for ax, dx in enumerate(grid.space.dx_axes):
        vp = np.maximum(nodes[:, ax], 0.0)[:, None]
        vm = np.minimum(nodes[:, ax], 0.0)[:, None]
        face = vp * f + vm * np.roll(f, -1, axis=ax)  # flux through the right face
        out += (face - np.roll(face, 1, axis=ax)) / dx
    return out


# -- activity space -----------------------------------------------------------


@dataclass(frozen=True)
class ActivityOperator:
    """Generators of the activity drift split by reaction.

    The drift is Qbar * (binding of fibers) + L * (binding of L) + unbinding.
    Each piece is a donor-cell transfer between cells (see ActivityGrid);
    ``moment_*`` give its effect on int y f dy per unit f.
    """

    J_q: np.ndarray
    J_l: np.ndarray
    J_u: np.ndarray
    moment_q: np.ndarray  # (ny, 2)
    moment_l: np.ndarray
    moment_u: np.ndarray
    out_q: np.ndarray  # outflow rates per cell
    out_l: np.ndarray
    out_u: np.ndarray


def build_activity_operator(grid: PhaseGrid, params: ModelParams) -> ActivityOperator:
    act = grid.activity
    y = act.nodes
    free = 1.0 - y[:, 0] - y[:, 1]
    R = act.transfer
    Rq = R["+e1"] * (params.k1 * free)[:, None]
    Rl = R["+e2"] * (params.k2 * free)[:, None]
    Ru = R["-e1"] * (params.km1 * y[:, 0])[:, None] + R["-e2"] * (params.km2 * y[:, 1])[:, None]
    Ay = act.weights[:, None] * y

    ratio = act.weights[:, None] / act.weights[None, :]

    # (f @ J)[k]: inflow r[c, k] f_c A_c / A_k minus outflow
    def gen(Rp):
        return Rp * ratio - np.diag(Rp.sum(axis=1))

    Jq, Jl, Ju = gen(Rq), gen(Rl), gen(Ru)
    return ActivityOperator(Jq, Jl, Ju, Jq @ Ay, Jl @ Ay, Ju @ Ay, Rq.sum(1), Rl.sum(1), Ru.sum(1))


def check_boundary_drift(qbar, L, grid: PhaseGrid, params: ModelParams, tol: float = 1e-12) -> None:
    """Raise if G points out of Y at a boundary lattice point (only possible
    for negative Qbar or L)."""
    act = grid.activity
    G = eval_G(act.boundary_points, np.asarray(qbar)[..., None], np.asarray(L)[..., None], params)
    gn = np.einsum("...bk,bk->...b", G, act.boundary_normals[:, 1:])
    if gn.max() > tol:
        raise FluxDirectionError(f"activity drift leaves Y through the boundary (G.n = {gn.max():.3e})")


def activity_rate(f, qbar, L, op: ActivityOperator) -> np.ndarray:
    """-div_y(G f) for the split donor-cell scheme."""
    return (
        qbar[..., None, None] * np.einsum("...vy,yk->...vk", f, op.J_q)
        + L[..., None, None] * np.einsum("...vy,yk->...vk", f, op.J_l)
        + np.einsum("...vy,yk->...vk", f, op.J_u)
    )


def apply_y_flux(f, qbar, L, grid: PhaseGrid, params: ModelParams, op: ActivityOperator | None = None) -> np.ndarray:
    """Discrete div_y(G(y, Qbar, L) f) with zero flux through the boundary of Y."""
    qbar = np.asarray(qbar, dtype=float)
    L = np.asarray(L, dtype=float)
    if np.any(qbar < 0) or np.any(L < 0):
        raise FluxDirectionError("negative Qbar or L makes the activity drift leave Y")
    check_boundary_drift(qbar, L, grid, params)
    if op is None:
        op = build_activity_operator(grid, params)
    return -activity_rate(f, qbar, L, op)


def activity_exchange(f, grid: PhaseGrid, op: ActivityOperator):
    """Per-x moments (mu_q, mu_l, mu_u), each (*space, 2), such that the rate of
    int int y f dv dy under the drift is Qbar mu_q + L mu_l + mu_u."""
    w = grid.velocity.weights
    return tuple(np.einsum("...vy,v,yk->...k", f, w, m) for m in (op.moment_q, op.moment_l, op.moment_u))


def degradation_factor(grid: PhaseGrid) -> np.ndarray:
    """(1 - |theta . v/|v||) on (theta, v) nodes."""
    q = grid.velocity
    return 1.0 - np.abs(grid.theta.nodes @ q.directions.T)


def degradation_weight(f, grid: PhaseGrid) -> np.ndarray:
    """int int (1 - |theta . v/|v||) f dv dy, shape (*space, nt)."""
    rho_v = np.einsum("...vy,y->...v", f, grid.activity.weights)
    return np.einsum("tv,v,...v->...t", degradation_factor(grid), grid.velocity.weights, rho_v)


# -- chemical rates -------------------------------------------------------------


def q_rate(Q, sink, source) -> np.ndarray:
    """dQ/dt = -sink * Q + source, source broadcast over theta."""
    return -sink * Q + np.asarray(source)[..., None]


def frozen_q_coefficients(f, grid: PhaseGrid, params: ModelParams, h=0.0):
    """Quadrature coefficients of the fiber equation for a given f:
    sink = kappa * int(1-|theta.v/|v||) f + k1 int (1-y1-y2) f,
    source = k_-1/|S| int y1 f + h."""
    y = grid.activity.nodes
    w = grid.velocity.weights
    A = grid.activity.weights
    free = np.einsum("...vy,v,y->...", f, w, A * (1.0 - y[:, 0] - y[:, 1]))
    y1 = np.einsum("...vy,v,y->...", f, w, A * y[:, 0])
    sink = params.kappa * degradation_weight(f, grid) + params.k1 * free[..., None]
    source = params.km1 / sphere_measure(grid.n) * y1
    return sink, source + h


def exact_Q_solution(f_frozen, Q0, h, t, grid: PhaseGrid, params: ModelParams) -> np.ndarray:
    """Closed form of the linear fiber equation with time-independent f and h:
    Q(t) = e^{Jt} Q0 + (e^{Jt} - 1)/J * source, J = -sink <= 0."""
    sink, source = frozen_q_coefficients(f_frozen, grid, params)
    source = np.asarray(source)[..., None] + np.asarray(h)
    J = -sink
    growth = np.exp(J * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(J == 0.0, t, np.expm1(J * t) / np.where(J == 0.0, 1.0, J))
    return growth * Q0 + factor * source


def integrate_Q_frozen(f_frozen, Q0, h, t, nsteps: int, grid: PhaseGrid, params: ModelParams) -> tuple:
    """Heun integration of the fiber equation with frozen f; returns (Q(t), min Q seen)."""
    sink, source = frozen_q_coefficients(f_frozen, grid, params)
    source = np.asarray(source)[..., None] + np.asarray(h)
    dt = t / nsteps
    Q = np.array(Q0, dtype=float)
    qmin = float(Q.min())

    def rate(q):
        return -sink * q + source

    for _ in range(nsteps):
        q1 = Q + dt * rate(Q)
        Q = 0.5 * Q + 0.5 * (q1 + dt * rate(q1))
        qmin = min(qmin, float(Q.min()))
    return Q, qmin


# -- time stepping ------------------------------------------------------------


@dataclass
class StepRecord:
    """Field values at which one step reads the *other* unknowns.

    Stage ``a``/``b`` are the two Heun stages of the activity/chemistry
    substep; ``Q_end``/``L_end`` feed the second velocity substep.
    """

    fa: np.ndarray
    Qa: np.ndarray
    La: np.ndarray
    fb: np.ndarray
    Qb: np.ndarray
    Lb: np.ndarray
    Q_end: np.ndarray
    L_end: np.ndarray

    @classmethod
    def zeros(cls, grid: PhaseGrid) -> "StepRecord":
        f = np.zeros(grid.f_shape)
        Q = np.zeros(grid.q_shape)
        L = np.zeros(grid.space.shape)
        return cls(f, Q, L, f, Q, L, Q, L)


class KineticSolver:
    """Strang-split stepper for the scaled kinetic system.

    One step of size dt: L-diffusion (dt/2, exact), transport (dt/2),
    velocity interactions (dt/2), activity drift + chemistry (dt, Heun),
    L-diffusion (dt/2), velocity interactions (dt/2), transport (dt/2).
    The turning part is integrated exactly: the operator is
    alpha1 (P - I) with P a projection, so exp(t alpha1 (P - I)) f =
    P f + exp(-alpha1 t) (f - P f).
    """

    def __init__(self, grid: PhaseGrid, params: ModelParams, kernels: KernelSet | None = None, threads: int = 1):
        self.grid = grid
        self.params = params
        self.kernels = kernels if kernels is not None else build_kernels(grid, params)
        self.threads = max(1, int(threads))
        self.op = build_activity_operator(grid, params)
        self.psi = self.kernels.psi_table()
        self.dfac = degradation_factor(grid)
        self.S = sphere_measure(grid.n)
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # parallel over the first space axis; every x-cell is computed independently
    def _pmap(self, func, *arrays):
        if self._pool is None or arrays[0].shape[0] < 2 * self.threads:
            return func(*arrays)
        bounds = np.linspace(0, arrays[0].shape[0], self.threads + 1).astype(int)
        chunks = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
        parts = list(self._pool.map(lambda c: func(*c), chunks))
        return np.concatenate(parts, axis=0)

    # -- totals

    def total_mass(self, f) -> float:
        return self.grid.integrate_x(self.grid.integrate_vy(f))

    def compound_totals(self, state: KineticState) -> tuple:
        """int (Qbar + eps^{1-a} rho W1) dx and int (L + eps^{1-a} rho W2) dx.

        Both are invariant when kappa = r_L = 0 (the binding/unbinding terms
        cancel between the fiber/chemical equations and the activity drift).
        """
        g = self.grid
        w1 = 1.0 / self.params.w_activity
        rhoW = np.einsum("...vy,v,y,yk->...k", state.f, g.velocity.weights, g.activity.weights, g.activity.nodes)
        qbar = state.Q @ g.theta.weights
        return (g.integrate_x(qbar + w1 * rhoW[..., 0]), g.integrate_x(state.L + w1 * rhoW[..., 1]))

    # -- stability

    def max_dt(self, state: KineticState) -> float:
        g, p = self.grid, self.params
        vmax = float(g.velocity.speeds.max())
        qbar = float((state.Q @ g.theta.weights).max(initial=0.0))
        lmax = float(state.L.max(initial=0.0))
        out = (qbar * self.op.out_q + lmax * self.op.out_l + self.op.out_u).max()
        limits = [g.space.dx / vmax]
        if out > 0:
            limits.append(1.0 / (p.w_activity * out))
        vel = p.w_hapto * qbar + p.w_chemo * p.alpha2
        if vel > 0:
            limits.append(1.0 / vel)
        mass = float(g.integrate_vy(state.f).max(initial=0.0))
        qsink = (p.kappa * float(self.dfac.max(initial=0.0) * g.velocity.measure) + p.k1) * mass
        if qsink > 0:
            limits.append(1.0 / qsink)
        lsink = p.r_L + p.k2 * mass
        if lsink > 0:
            limits.append(1.0 / lsink)
        return 0.5 * min(limits)

    # -- substeps

    def _transport(self, f, tau):
        f1 = f - tau * apply_transport(f, self.grid)
        return 0.5 * f + 0.5 * (f1 - tau * apply_transport(f1, self.grid))

    def _relax(self, f, tau):
        proj = turning_projection(f, self.grid, self.kernels)
        return proj + math.exp(-self.params.alpha1 * self.params.w_turn * tau) * (f - proj)

    def _hc_rate(self, f, Q, K):
        p = self.params
        out = np.zeros_like(f)
        if p.w_hapto != 0.0:
            out += p.w_hapto * apply_H(f, Q, self.grid, self.kernels, self.psi)
        if p.alpha2 > 0.0:
            rho = _rho_v(f, self.grid.velocity.weights)
            out += p.w_chemo * p.alpha2 * (K[..., :, None] * rho[..., None, :] - f)
        return out

    def _velocity(self, f, Q, L, tau, relax_first: bool):
        K = self.kernels.chemo_table(gradient(L, self.grid))

        def block(f, Q, K):
            if relax_first:
                f = self._relax(f, tau)
            f1 = f + tau * self._hc_rate(f, Q, K)
            f = 0.5 * f + 0.5 * (f1 + tau * self._hc_rate(f1, Q, K))
            if not relax_first:
                f = self._relax(f, tau)
            return f

        return self._pmap(block, f, Q, K)

    def _rate_f(self, f, Qs, Ls):
        qbar = Qs @ self.grid.theta.weights
        w = self.params.w_activity
        return self._pmap(lambda f, q, l: w * activity_rate(f, q, l, self.op), f, qbar, Ls)

    def _rate_Q(self, Q, fs, Ls):
        p = self.params
        mq, ml, mu = activity_exchange(fs, self.grid, self.op)
        sink = mq[..., 0:1] + (p.kappa * np.einsum("tv,...v->...t", self.dfac, self._rho_vx(fs)) if p.kappa else 0.0)
        source = -(mu[..., 0] + Ls * ml[..., 0]) / self.S
        return q_rate(Q, sink, source)

    def _rate_L(self, L, fs, Qs):
        p = self.params
        g = self.grid
        mq, ml, mu = activity_exchange(fs, g, self.op)
        qbar = Qs @ g.theta.weights
        out = -(qbar * mq[..., 1] + L * ml[..., 1] + mu[..., 1]) - p.r_L * L
        if p.kappa:
            deg = np.einsum("tv,...v->...t", self.dfac, self._rho_vx(fs))
            out = out + p.kappa * np.einsum("...t,...t,t->...", deg, Qs, g.theta.weights)
        return out

    def _rho_vx(self, f):
        return np.einsum("...vy,v,y->...v", f, self.grid.velocity.weights, self.grid.activity.weights)

    # -- one step

    def step(self, state: KineticState, dt: float, star: StepRecord | None = None, check_cfl: bool = True):
        """Advance by dt. With ``star`` the step is the uncoupled one: every
        coupling term reads the recorded fields instead of the current ones.
        Returns (new state, record of the fields this step produced)."""
        if check_cfl:
            limit = self.max_dt(state if star is None else KineticState(star.fa, star.Qa, star.La))
            if dt > limit * (1.0 + 1e-12):
                raise CFLError(f"dt = {dt:.6g} exceeds the stability bound {limit:.6g}")
        g = self.grid
        f, Q, L = state.f, state.Q, state.L
        half = 0.5 * dt

        if self.params.D_L:
            L = heat_semigroup(L, half * self.params.D_L, g)
        f = self._transport(f, half)
        f = self._velocity(f, Q if star is None else star.Qa, L if star is None else star.La, half, True)

        fa, Qa, La = f, Q, L
        sa = (fa, Qa, La) if star is None else (star.fa, star.Qa, star.La)
        check_boundary_drift(sa[1] @ g.theta.weights, sa[2], g, self.params)
        f1 = fa + dt * self._rate_f(fa, sa[1], sa[2])
        Q1 = Qa + dt * self._rate_Q(Qa, sa[0], sa[2])
        L1 = La + dt * self._rate_L(La, sa[0], sa[1])
        sb = (f1, Q1, L1) if star is None else (star.fb, star.Qb, star.Lb)
        f = 0.5 * fa + 0.5 * (f1 + dt * self._rate_f(f1, sb[1], sb[2]))
        Q = 0.5 * Qa + 0.5 * (Q1 + dt * self._rate_Q(Q1, sb[0], sb[2]))
        L = 0.5 * La + 0.5 * (L1 + dt * self._rate_L(L1, sb[0], sb[1]))
        if self.params.D_L:
            L = heat_semigroup(L, half * self.params.D_L, g)

        f = self._velocity(f, Q if star is None else star.Q_end, L if star is None else star.L_end, half, False)
        f = self._transport(f, half)
        record = StepRecord(fa, Qa, La, f1, Q1, L1, Q, L)
        return KineticState(f, Q, L, state.t + dt), record

    def run(self, state: KineticState, t_final: float, dt: float | None = None, callback=None):
        """Fixed-step run to t_final (dt from the CFL bound of the initial state if None)."""
        if dt is None:
            dt = self.max_dt(state)
        nsteps = max(1, int(math.ceil(t_final / dt - 1e-12)))
        dt = t_final / nsteps
        for _ in range(nsteps):
            state, _ = self.step(state, dt)
            if callback is not None:
                callback(state)
        return state


def step_coupled(state: KineticState, dt: float, solver: KineticSolver) -> KineticState:
    return solver.step(state, dt)[0]


# -- Picard iteration ---------------------------------------------------------


def xnorm(df, dQ, dL, grid: PhaseGrid) -> float:
    """Norm of (f, Q, L) in (L1 cap Linf) x (L1 cap Linf) x (W11 cap Linf)."""
    dv = grid.space.cell_volume
    wf = np.einsum("v,y->vy", grid.velocity.weights, grid.activity.weights)
    nf = float((np.abs(df) * wf).sum() * dv + np.abs(df).max(initial=0.0))
    nq = float((np.abs(dQ) @ grid.theta.weights).sum() * dv + np.abs(dQ).max(initial=0.0))
    gl = gradient(dL, grid)
    nl = float(np.abs(dL).sum() * dv + np.abs(gl).sum() * dv + np.abs(dL).max(initial=0.0))
    return nf + nq + nl


@dataclass
class PicardResult:
    trajectory: list  # KineticState at every time level
    residuals: list = field(default_factory=list)
    converged: bool = False

    @property
    def ratios(self) -> list:
        r = self.residuals
        return [r[i + 1] / r[i] for i in range(len(r) - 1) if r[i] > 0]


def picard_iterate(
    f0, Q0, T0: float, tol: float, max_iter: int, solver: KineticSolver, nsteps: int | None = None
) -> PicardResult:
    """Fixed-point iteration of the uncoupled solves over [0, T0].

    Iterate j solves the kinetic, fiber and chemical equations with every
    coupling term read from iterate j-1, starting from the zero triple, with
    initial data (f0, Q0, 0). The time grid is fixed so that the discrete
    fixed point is the coupled discrete solution.
    """
    if T0 <= 0:
        raise ConfigError("T0 must be positive")
    grid = solver.grid
    init = KineticState(np.array(f0, dtype=float), np.array(Q0, dtype=float), np.zeros(grid.space.shape), 0.0)
    if nsteps is None:
        nsteps = max(1, int(math.ceil(T0 / solver.max_dt(init))))
    dt = T0 / nsteps

    records = [StepRecord.zeros(grid)] * nsteps
    prev = [KineticState(np.zeros(grid.f_shape), np.zeros(grid.q_shape), np.zeros(grid.space.shape), k * dt)
            for k in range(nsteps + 1)]
    result = PicardResult(trajectory=prev)
    for _ in range(max_iter):
        state = init.copy()
        traj = [state]
        new_records = []
        for k in range(nsteps):
            state, rec = solver.step(state, dt, star=records[k], check_cfl=False)
            traj.append(state)
            new_records.append(rec)
        res = max(xnorm(a.f - b.f, a.Q - b.Q, a.L - b.L, grid) for a, b in zip(traj, prev))
        result.residuals.append(res)
        result.trajectory = traj
        records, prev = new_records, traj
        if res < tol:
            result.converged = True
            return result
    raise NonContractiveError(
        f"no convergence after {max_iter} iterations (last residuals {result.residuals[-3:]}); reduce T0"
    )


# -- diagnostics ----------------------------------------------------------------


@dataclass
class Diagnostics:
    t: np.ndarray
    norms: dict  # name -> array over time
    flags: list

    def row(self, k: int) -> dict:
        return {"t": self.t[k], **{name: v[k] for name, v in self.norms.items()}}


def apriori_monitors(history: list, grid: PhaseGrid, params: ModelParams) -> Diagnostics:
    """Norms along a trajectory and checks against the qualitative a priori
    bounds: fiber growth bounded by ||Q0|| + k_-1/|S| int ||rho||, positivity,
    and no faster-than-exponential growth of f."""
    dv = grid.space.cell_volume
    wf = np.einsum("v,y->vy", grid.velocity.weights, grid.activity.weights)
    wt = grid.theta.weights
    names = ["f_L1", "f_Linf", "Q_L1", "Q_Linf", "L_L1", "L_Linf", "gradL_L1", "mass", "rho_L1", "rho_Linf",
             "min_f", "min_Q", "min_L"]
    norms = {k: [] for k in names}
    ts = []
    for s in history:
        ts.append(s.t)
        rho = grid.integrate_vy(s.f)
        norms["f_L1"].append(float((np.abs(s.f) * wf).sum() * dv))
        norms["f_Linf"].append(float(np.abs(s.f).max()))
        norms["Q_L1"].append(float((np.abs(s.Q) @ wt).sum() * dv))
        norms["Q_Linf"].append(float(np.abs(s.Q).max()))
        norms["L_L1"].append(float(np.abs(s.L).sum() * dv))
        norms["L_Linf"].append(float(np.abs(s.L).max()))
        norms["gradL_L1"].append(float(np.abs(gradient(s.L, grid)).sum() * dv))
        norms["mass"].append(float(rho.sum() * dv))
        norms["rho_L1"].append(float(np.abs(rho).sum() * dv))
        norms["rho_Linf"].append(float(np.abs(rho).max()))
        norms["min_f"].append(float(s.f.min()))
        norms["min_Q"].append(float(s.Q.min()))
        norms["min_L"].append(float(s.L.min()))
    t = np.array(ts)
    norms = {k: np.array(v) for k, v in norms.items()}

    flags = []
    C = params.km1 / sphere_measure(grid.n)  # R0 = 1
    # running trapezoid of ||rho||
    for p, qn, rn in (("1", "Q_L1", "rho_L1"), ("inf", "Q_Linf", "rho_Linf")):
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (norms[rn][1:] + norms[rn][:-1]) * np.diff(t))])
        bound = norms[qn][0] + C * integral * (grid.theta.measure if p == "1" else 1.0)
        norms[f"desQ_margin_{p}"] = bound - norms[qn]
        if np.any(norms[f"desQ_margin_{p}"] < -1e-10 * max(1.0, bound.max())):
            flags.append(f"fiber bound violated in L{p}")
    for name in ("min_f", "min_Q", "min_L"):
        if norms[name].min() < -1e-12:
            flags.append(f"positivity lost: {name} = {norms[name].min():.3e}")
    f1 = norms["f_L1"]
    if len(t) > 2 and f1[0] > 0:
        growth = np.log(np.maximum(f1, 1e-300) / f1[0])
        rate = np.max(np.diff(growth) / np.maximum(np.diff(t), 1e-300))
        norms["f_growth_rate"] = np.full(len(t), rate)
        if not np.isfinite(rate):
            flags.append("f norm blew up")
    return Diagnostics(t, norms, flags)


# -- initial data ----------------------------------------------------------------


def initial_state(grid: PhaseGrid, kernels: KernelSet, kind: str = "gaussian", amplitude: float = 0.2,
                  velocity: float = 0.0, fiber: float = 1.0, fiber_bias: float = 0.0, seed: int = 0) -> KineticState:
    """Built-in profiles: f = M_{rho0, U0} (uniform in y), isotropic-plus-bias
    fibers, L = 0. 'random' perturbs rho cell-wise with a seeded generator."""
    from .moments import equilibrium

    x = grid.space.mesh()
    lengths = np.array(grid.space.lengths)
    phase = 2.0 * np.pi * x / lengths
    if kind == "zero":
        rho = np.zeros(grid.space.shape)
    elif kind == "uniform":
        rho = np.ones(grid.space.shape)
    elif kind == "gaussian":
        r2 = (((x - 0.5 * lengths) / (0.15 * lengths)) ** 2).sum(-1)
        rho = 1.0 + amplitude * np.exp(-r2)
    elif kind == "two_bump":
        r2a = (((x - 0.3 * lengths) / (0.1 * lengths)) ** 2).sum(-1)
        r2b = (((x - 0.7 * lengths) / (0.1 * lengths)) ** 2).sum(-1)
        rho = 1.0 + amplitude * (np.exp(-r2a) + np.exp(-r2b))
    elif kind == "sine":
        rho = 1.0 + amplitude * np.sin(phase[..., 0])
    elif kind == "random":
        rho = 1.0 + amplitude * np.random.default_rng(seed).uniform(-1.0, 1.0, grid.space.shape)
    else:
        raise ConfigError(f"unknown initial profile {kind!r}")
    U = np.zeros(grid.space.shape + (grid.n,))
    U[..., 0] = velocity * np.cos(phase[..., 0])
    f = equilibrium(rho, U, grid, kernels)
    S = sphere_measure(grid.n)
    qbar = 0.0 if kind == "zero" else fiber * (1.0 + 0.5 * np.sin(phase[..., 0]))
    Q = np.broadcast_to(np.asarray(qbar)[..., None] / S, grid.q_shape).copy()
    Q *= 1.0 + fiber_bias * grid.theta.nodes[:, 0]
    return KineticState(f, Q, np.zeros(grid.space.shape), 0.0)
