"""Linear (Lyapunov-type) equations and closed-loop moment computations.

These are the workhorses behind the quadratic-cost calculus: the cost of a
fixed feedback law solves a backward linear matrix ODE, the zero-feedback
cost gives an a-priori upper bound, an explicit transition-matrix formula
gives a lower bound, and the closed-loop state's first two moments solve a
forward linear system. Equations run through the shared RK4 core with
coefficients pre-sampled on the half grid, with one exception: a backward
cost solve whose closed-loop rates are too fast for the grid switches to an
exponential one-step map (see ``_lyapunov_exponential``). A linear matrix
ODE cannot escape to infinity in finite time, so an explicit-integrator
overflow there is always an artifact of step-size stability, never a fact
about the problem; vanishing-penalty feedback gains (of size 1/eps on a
fixed grid) hit that regime long before the regularization ladders of
interest bottom out.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log2

import numpy as np

from .errors import NonFiniteValue, SingularFundamentalMatrix
from .linalg import spectral_norm_batched, sym
from .ode import (
    BLOWUP_NORM_DEFAULT,
    OdeTrajectory,
    integrate_matrix_ode,
    interleave_half_grid,
)
from .problem import MatrixPath, ProblemData, TimeGrid

COND_LIMIT = 1e12

# h times the fastest closed-loop rate above which the RK4 sweep is replaced
# by the exponential map. Classical RK4 is stable on the negative real axis
# only up to |z| ~ 2.785; staying under 2 also keeps its accuracy reasonable.
STIFF_GAUGE_LIMIT = 2.0

_EXP_SEED_BOUND = 0.25   # spectral-radius contract for the Taylor seed
_EXP_SEED_ORDER = 6


def stiffness_gauge(grid: TimeGrid, M: np.ndarray, L: np.ndarray) -> float:
    """Step size times a bound on the Lyapunov flow's fastest local rate.

    The flow P |-> P M + M' P + L' P L has operator norm at most
    2 ||M|| + ||L||^2 at each stage; the maximum over the sampled stages,
    scaled by h, is the dimensionless step-stability gauge.
    """
    rate = 2.0 * spectral_norm_batched(M) + spectral_norm_batched(L) ** 2
    return float(grid.h * rate.max())


def half_index_map(grid: TimeGrid):
    """Map a stage time to its half-grid index (nodes and midpoints)."""
    t0 = grid.t0
    inv = 2.0 / grid.h

    def index(s: float) -> int:
        return int(round((s - t0) * inv))

    return index


def solve_feedback_lyapunov(
    p: ProblemData,
    theta: MatrixPath | None,
    *,
    terminal: np.ndarray | None = None,
    with_half_values: bool = False,
) -> OdeTrajectory:
    """Cost operator of the constant-in-feedback policy u = theta(s) X.

    Solves, backward from G (or the given terminal),

        P' + P M + M' P + L' P L + Q + S' theta + theta' S + theta' R theta = 0,

    with M = A + B theta and L = C + D theta. theta=None means zero feedback.
    """
    half = p.grid.half_times()
    A = p.A.sample(half)
    C = p.C.sample(half)
    Q = p.Q.sample(half)
    if theta is None:
        M, L, W = A, C, Q
    else:
        if (theta.rows, theta.cols) != (p.m, p.n):
            raise ValueError(
                f"feedback must be {p.m}x{p.n}, got {theta.rows}x{theta.cols}"
            )
        Th = theta.sample(half)
        M = A + p.B.sample(half) @ Th
        L = C + p.D.sample(half) @ Th
        ThT = Th.transpose(0, 2, 1)
        TS = ThT @ p.S.sample(half)
        W = Q + TS + TS.transpose(0, 2, 1) + ThT @ p.R.sample(half) @ Th
    return _lyapunov_backward(
        p.grid,
        M,
        L,
        W,
        p.G if terminal is None else terminal,
        with_half_values=with_half_values,
    )


def _lyapunov_backward(
    grid: TimeGrid,
    M: np.ndarray,
    L: np.ndarray,
    W: np.ndarray,
    terminal: np.ndarray,
    *,
    with_half_values: bool = False,
) -> OdeTrajectory:
    """Backward solve of P' = -(P M + M' P + L' P L + W) with stage arrays.

    Routes through RK4 while the stiffness gauge allows it, otherwise through
    the unconditionally stable exponential sweep.
    """
    if stiffness_gauge(grid, M, L) > STIFF_GAUGE_LIMIT:
        return _lyapunov_exponential(
            grid, M, L, W, terminal, with_half_values=with_half_values
        )
    index = half_index_map(grid)

    def rhs(s: float, P: np.ndarray) -> np.ndarray:
        j = index(s)
        PM = P @ M[j]
        Lj = L[j]
        return -(PM + PM.T + Lj.T @ (P @ Lj) + W[j])

    return integrate_matrix_ode(
        rhs,
        terminal,
        grid,
        direction="backward",
        symmetrize=True,
        with_half_values=with_half_values,
    )


def _kron_pair(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Batched Kronecker product: out[k] = kron(A[k], B[k]).

    With row-major vectorization, kron(A, B) @ vec(V) = vec(A V B').
    """
    k, n, _ = A.shape
    return np.einsum("kab,kcd->kacbd", A, B).reshape(k, n * n, n * n)


def _exp_step_banks(N: np.ndarray, h: float):
    """Transition and source operators of dV/ds = N V + V N' per step.

    Returns (Phi, S, PhiH, SH): Phi[k] = exp(h N[k]); S[k] maps a row-major
    vectorized V to the integral of exp(s N[k]) V exp(s N[k])' over one step,
    and the H pair is the same at the half step. Built from a Taylor seed at
    s0 = h / 2^q with s0 ||N|| <= 0.25, then doubled q times through

        Phi(2s) = Phi(s) Phi(s),
        I(2s)(V) = I(s)(V) + Phi(s) I(s)(V) Phi(s)',

    a composition of congruences and positive additions: stable for
    arbitrarily stiff N and positivity preserving at every scale.
    """
    k, n, _ = N.shape
    nn = n * n
    nmax = float(spectral_norm_batched(N).max())
    q = max(1, ceil(log2(max(h * nmax / _EXP_SEED_BOUND, 1.0))))
    s0 = h / 2.0**q

    powers = [np.broadcast_to(np.eye(n), N.shape)]
    for _ in range(_EXP_SEED_ORDER):
        powers.append(powers[-1] @ N)

    fact = [1.0]
    for j in range(1, _EXP_SEED_ORDER + 2):
        fact.append(fact[-1] * j)

    Phi = np.zeros_like(N)
    for j in range(_EXP_SEED_ORDER + 1):
        Phi = Phi + (s0**j / fact[j]) * powers[j]

    S = np.zeros((k, nn, nn))
    for a in range(_EXP_SEED_ORDER + 1):
        for b in range(_EXP_SEED_ORDER + 1 - a):
            j = a + b
            coeff = s0 ** (j + 1) / ((j + 1) * fact[a] * fact[b])
            S = S + coeff * _kron_pair(powers[a], powers[b])

    PhiH = SH = None
    for i in range(q):
        if i == q - 1:
            PhiH, SH = Phi, S
        S = S + _kron_pair(Phi, Phi) @ S
        Phi = Phi @ Phi
    return Phi, S, PhiH, SH


def _lyapunov_exponential(
    grid: TimeGrid,
    M: np.ndarray,
    L: np.ndarray,
    W: np.ndarray,
    terminal: np.ndarray,
    *,
    with_half_values: bool = False,
    blowup_norm: float = BLOWUP_NORM_DEFAULT,
) -> OdeTrajectory:
    """Backward cost sweep by per-step frozen-coefficient exponential maps.

    Each step applies the exact flow of the equation with M, L, W frozen at
    the step midpoint:

        P_left = e^{h M'} P_right e^{h M} + int_0^h e^{s M'} V e^{s M} ds,
        V = W + L' P_mid L,

    where P_mid comes from a half-step predictor (noise term frozen on the
    right) and is then corrected once. Second order in the coefficients'
    variation but stable for any step size; inside an unresolved boundary
    layer every map above is a congruence plus a positive term, so the sweep
    lands on the local quasi-static balance instead of exploding. Used only
    when RK4's stability bound fails, where its accuracy beats RK4's by
    default.
    """
    P = sym(np.asarray(terminal, dtype=float))
    n = P.shape[0]
    Nb = M[1::2].transpose(0, 2, 1)
    Lm = L[1::2]
    Wm = W[1::2]
    Phi, S, PhiH, SH = _exp_step_banks(Nb, grid.h)
    l_active = bool(np.any(Lm))

    times = grid.times()
    n_steps = grid.n_steps
    values = np.empty((n_steps + 1, n, n))
    mid_values = np.empty((n_steps, n, n))
    values[-1] = P
    blew_up = False
    blowup_time: float | None = None
    last = n_steps
    if float(np.linalg.norm(P)) > blowup_norm:
        blew_up = True
        blowup_time = times[-1]
    else:
        for k in range(n_steps - 1, -1, -1):
            if l_active:
                Lk = Lm[k]
                V = Wm[k] + Lk.T @ P @ Lk
                pred = PhiH[k] @ P @ PhiH[k].T + (SH[k] @ V.reshape(-1)).reshape(n, n)
                V = Wm[k] + Lk.T @ sym(pred) @ Lk
            else:
                V = Wm[k]
            vecV = V.reshape(-1)
            mid_values[k] = sym(
                PhiH[k] @ P @ PhiH[k].T + (SH[k] @ vecV).reshape(n, n)
            )
            P = sym(Phi[k] @ P @ Phi[k].T + (S[k] @ vecV).reshape(n, n))
            if not np.isfinite(P).all():
                raise NonFiniteValue(
                    f"non-finite value stepping from t={times[k + 1]:.6g}"
                )
            values[k] = P
            last = k
            if float(np.linalg.norm(P)) > blowup_norm:
                blew_up = True
                blowup_time = times[k]
                break

    covered = slice(last, n_steps + 1)
    half_values = None
    if with_half_values and not blew_up:
        half_values = interleave_half_grid(values, mid_values)
    return OdeTrajectory(
        grid=grid,
        times=times[covered],
        values=values[covered],
        blew_up=blew_up,
        blowup_time=blowup_time,
        half_values=half_values,
    )


def solve_M0(p: ProblemData, *, with_half_values: bool = False) -> OdeTrajectory:
    """Zero-feedback cost operator: the u = 0 special case, an upper bound
    for every regularized value curvature."""
    return solve_feedback_lyapunov(p, None, with_half_values=with_half_values)


@dataclass
class MomentTrajectory:
    """First and second moments of the closed-loop state from (t, x)."""

    grid: TimeGrid
    times: np.ndarray
    mean: np.ndarray    # (nodes, n, 1)
    second: np.ndarray  # (nodes, n, n), symmetric PSD up to roundoff


def _subgrid_from(p: ProblemData, t: float) -> TimeGrid:
    k0 = p.grid.nearest_node(t)
    remaining = p.grid.n_steps - k0
    if remaining < 2:
        raise ValueError(
            f"start time {t} leaves {remaining} grid steps before the horizon; need >= 2"
        )
    return TimeGrid(float(p.grid.times()[k0]), p.grid.T, remaining)


def second_moment(p: ProblemData, law, t: float, x: np.ndarray) -> MomentTrajectory:
    """Mean and second moment of X under the affine policy u = theta X + v.

    law needs MatrixPath attributes ``theta`` (m, n) and ``v`` (m, 1). The
    joint linear system for (E X, E X X') integrates forward from
    (x, x x') as one (n, n+1) block [second | mean] through the RK4 core.
    """
    x = np.asarray(x, dtype=float).reshape(p.n, 1)
    grid = _subgrid_from(p, t)
    half = grid.half_times()
    n = p.n

    Th = law.theta.sample(half)
    v = law.v.sample(half)
    M = p.A.sample(half) + p.B.sample(half) @ Th
    L = p.C.sample(half) + p.D.sample(half) @ Th
    w = p.B.sample(half) @ v + p.b.sample(half)
    z = p.D.sample(half) @ v + p.sigma.sample(half)
    index = half_index_map(grid)

    def rhs(s: float, state: np.ndarray) -> np.ndarray:
        j = index(s)
        Y = state[:, :n]
        Y = (Y + Y.T) / 2.0
        mu = state[:, n:]
        Mj, Lj, wj, zj = M[j], L[j], w[j], z[j]
        mu_dot = Mj @ mu + wj
        MY = Mj @ Y
        Lmu_z = (Lj @ mu) @ zj.T
        w_mu = wj @ mu.T
        Y_dot = MY + MY.T + Lj @ Y @ Lj.T + w_mu + w_mu.T + Lmu_z + Lmu_z.T + zj @ zj.T
        return np.hstack([Y_dot, mu_dot])

    start = np.hstack([x @ x.T, x])
    traj = integrate_matrix_ode(rhs, start, grid, direction="forward")
    second = sym(traj.values[:, :, :n])
    mean = traj.values[:, :, n:]
    return MomentTrajectory(grid=grid, times=traj.times, mean=mean, second=second)


def control_l2_norm(p: ProblemData, law, t: float, x: np.ndarray) -> float:
    """E of the integrated squared control along u = theta X + v from (t, x).

    Expands E|u|^2 = tr(theta' theta Y) + 2 v' theta mu + |v|^2 against the
    moment trajectory and integrates by the trapezoid rule.
    """
    moments = second_moment(p, law, t, x)
    nodes = moments.times
    Th = law.theta.sample(nodes)
    v = law.v.sample(nodes)
    ThT_Th = Th.transpose(0, 2, 1) @ Th
    quad = np.einsum("kij,kji->k", ThT_Th, moments.second)
    cross = 2.0 * np.einsum("kao,kab,kbo->k", v, Th, moments.mean)
    const = np.einsum("kij,kij->k", v, v)
    return float(np.trapezoid(quad + cross + const, nodes))


def lower_bound_N(p: ProblemData, P0: np.ndarray) -> OdeTrajectory:
    """A-priori lower bound trajectory pinned to the value P0 at t0.

    N(t) = Phi(t)^{-T} [ P0 - integral_{t0}^{t} Phi' (C' M0 C + Q) Phi ds ] Phi(t)^{-1}

    with Phi the state transition matrix of A (Phi(t0) = I) and M0 the
    zero-feedback cost operator. Equivalently, N solves the forward linear
    equation N' + N A + A' N + C' M0 C + Q = 0, N(t0) = P0.
    """
    P0 = np.asarray(P0, dtype=float)
    half = p.grid.half_times()
    A = p.A.sample(half)
    index = half_index_map(p.grid)

    def phi_rhs(s: float, Phi: np.ndarray) -> np.ndarray:
        return A[index(s)] @ Phi

    phi = integrate_matrix_ode(phi_rhs, np.eye(p.n), p.grid, direction="forward")
    svals = np.linalg.svd(phi.values, compute_uv=False)
    conds = svals[:, 0] / np.maximum(svals[:, -1], np.finfo(float).tiny)
    bad = np.nonzero(conds > COND_LIMIT)[0]
    if len(bad):
        raise SingularFundamentalMatrix(
            f"transition matrix condition {conds[bad[0]]:.3e} at t={phi.times[bad[0]]:.6g}"
        )

    nodes = p.grid.times()
    M0 = solve_M0(p)
    C = p.C.sample(nodes)
    Q = p.Q.sample(nodes)
    H = phi.values.transpose(0, 2, 1) @ (
        C.transpose(0, 2, 1) @ M0.values @ C + Q
    ) @ phi.values
    h = p.grid.h
    integral = np.concatenate(
        [np.zeros((1, p.n, p.n)), np.cumsum((H[:-1] + H[1:]) * (h / 2.0), axis=0)]
    )

    phi_T = phi.values.transpose(0, 2, 1)
    inner = P0 - integral
    left = np.linalg.solve(phi_T, inner)                     # Phi^{-T} (P0 - I)
    N = np.linalg.solve(phi_T, left.transpose(0, 2, 1)).transpose(0, 2, 1)
    return OdeTrajectory(grid=p.grid, times=nodes, values=sym(N))
