"""Monte Carlo validation: cost simulation and a convexity probe.

Paths follow Euler-Maruyama on the problem grid (optionally refined by an
integer factor), driven by the single scalar Brownian increment stream.
Draws are made path-major from one Philox stream per seed, so results are
bit-identical for a fixed seed no matter how paths are chunked. Common
random numbers across control variants come from reusing the seed.

The convexity probe evaluates the homogeneous cost from a zero initial
state on a bank of random deterministic controls simultaneously (one shared
increment tensor), which is what makes hundreds of controls at a hundred
thousand paths each affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import MatrixPath, ProblemData, TimeGrid

# Target element count per increment chunk; keeps peak memory near 32 MB.
CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 100_000
    seed: int = 0
    grid_refine: int = 1

    def __post_init__(self) -> None:
        if self.n_paths < 100:
            raise ValueError(f"need at least 100 paths, got {self.n_paths}")
        if int(self.grid_refine) != self.grid_refine or self.grid_refine < 1:
            raise ValueError(f"grid_refine must be a positive integer, got {self.grid_refine}")


@dataclass
class CostEstimate:
    mean: float
    std_error: float
    n_paths: int


def _sim_grid(p: ProblemData, t: float, refine: int) -> TimeGrid:
    k0 = p.grid.nearest_node(t)
    remaining = p.grid.n_steps - k0
    if remaining < 2:
        raise ValueError(f"start time {t} too close to the horizon")
    base = TimeGrid(float(p.grid.times()[k0]), p.grid.T, remaining)
    return base.refined(refine)


def _control_arrays(control, grid: TimeGrid, n: int, m: int):
    """Normalize the control argument to (theta, v) node arrays.

    control may be a feedback-law object (``theta``/``v`` MatrixPath
    attributes), an open-loop (m, 1) MatrixPath, or None for u = 0.
    Returns (Th, v) with Th None for open-loop/zero controls.
    """
    nodes = grid.times()
    if control is None:
        return None, np.zeros((len(nodes), m, 1))
    if isinstance(control, MatrixPath):
        if (control.rows, control.cols) != (m, 1):
            raise ValueError(
                f"open-loop control must be {m}x1, got {control.rows}x{control.cols}"
            )
        return None, control.sample(nodes)
    return control.theta.sample(nodes), control.v.sample(nodes)


def simulate_cost(
    p: ProblemData,
    control,
    t: float,
    x: np.ndarray,
    config: SimulationConfig | None = None,
) -> CostEstimate:
    """Estimate the expected cost of a control from (t, x) by simulation.

    The running cost is accumulated with trapezoid weights at the simulation
    nodes and the terminal cost is added exactly at the horizon. Per-path
    costs are kept so the standard error is the empirical one.
    """
    config = config or SimulationConfig()
    grid = _sim_grid(p, t, config.grid_refine)
    nodes = grid.times()
    h = grid.h
    n, m = p.n, p.m
    x = np.asarray(x, dtype=float).reshape(n)

    A = p.A.sample(nodes)
    B = p.B.sample(nodes)
    C = p.C.sample(nodes)
    D = p.D.sample(nodes)
    b = p.b.sample(nodes)[:, :, 0]
    sigma = p.sigma.sample(nodes)[:, :, 0]
    Q = p.Q.sample(nodes)
    S = p.S.sample(nodes)
    R = p.R.sample(nodes)
    q = p.q.sample(nodes)[:, :, 0]
    rho = p.rho.sample(nodes)[:, :, 0]
    Th, v = _control_arrays(control, grid, n, m)
    v = v[:, :, 0]

    steps = grid.n_steps
    sqrt_h = np.sqrt(h)
    weights = np.full(steps + 1, h)
    weights[0] = weights[-1] = h / 2.0

    rng = np.random.Generator(np.random.Philox(key=config.seed))
    chunk = max(1, CHUNK_ELEMENTS // steps)
    costs = np.empty(config.n_paths)
    done = 0
    while done < config.n_paths:
        take = min(chunk, config.n_paths - done)
        dW = rng.standard_normal((take, steps)) * sqrt_h
        X = np.tile(x, (take, 1))
        run = np.zeros(take)
        for k in range(steps + 1):
            if Th is None:
                u = np.broadcast_to(v[k], (take, m))
            else:
                u = X @ Th[k].T + v[k]
            run += weights[k] * (
                np.einsum("pi,ij,pj->p", X, Q[k], X)
                + 2.0 * np.einsum("pi,ij,pj->p", u, S[k], X)
                + np.einsum("pi,ij,pj->p", u, R[k], u)
                + 2.0 * X @ q[k]
                + 2.0 * u @ rho[k]
            )
            if k == steps:
                break
            drift = X @ A[k].T + u @ B[k].T + b[k]
            diff = X @ C[k].T + u @ D[k].T + sigma[k]
            X = X + h * drift + diff * dW[:, k][:, None]
        term = np.einsum("pi,ij,pj->p", X, p.G, X) + 2.0 * X @ p.g[:, 0]
        costs[done : done + take] = run + term
        done += take
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / np.sqrt(config.n_paths)) if config.n_paths > 1 else 0.0
    return CostEstimate(mean=mean, std_error=se, n_paths=config.n_paths)


@dataclass
class ProbeReport:
    """Outcome of the randomized convexity probe (one-sided evidence).

    A violation (some probe control's homogeneous cost from the zero state
    falling below -5 standard errors) disproves nonnegativity of the
    homogeneous cost; finding none proves nothing, since the probe only
    sees its own finite bank of controls.
    """

    violation_found: bool
    min_mean: float
    min_index: int
    means: np.ndarray
    std_errors: np.ndarray
    n_controls: int
    n_paths: int
    violating_control: np.ndarray | None = None
    note: str = (
        "one-sided probe: absence of a violation among randomly drawn "
        "controls is not a convexity proof"
    )

    @property
    def lambda_floor(self) -> float:
        """Smallest cost-to-control-energy ratio seen by the probe.

        Probe controls are normalized to unit integrated square, so the
        ratio is the cost itself; any convexity modulus is at most this.
        """
        return self.min_mean


def convexity_probe(
    p: ProblemData,
    n_controls: int = 200,
    config: SimulationConfig | None = None,
    pieces: int = 12,
) -> ProbeReport:
    """Hunt for a control making the homogeneous cost negative from x = 0.

    Controls are piecewise constant with standard-normal levels, normalized
    to unit integrated square. All controls share one increment tensor
    (common random numbers), and the state bank for every control advances
    in lockstep inside one vectorized step loop.
    """
    config = config or SimulationConfig()
    ph = p.homogeneous_part()
    grid = _sim_grid(ph, ph.grid.t0, config.grid_refine)
    nodes = grid.times()
    h = grid.h
    n, m = p.n, p.m
    steps = grid.n_steps
    span = grid.T - grid.t0

    rng = np.random.Generator(np.random.Philox(key=[config.seed, 0x9E3779B9]))
    levels = rng.standard_normal((n_controls, pieces, m))
    piece_len = span / pieces
    norms = np.sqrt(np.sum(levels**2, axis=(1, 2)) * piece_len)
    levels /= np.maximum(norms, 1e-300)[:, None, None]
    piece_of_node = np.minimum(
        ((nodes - grid.t0) / piece_len).astype(int), pieces - 1
    )
    u_all = levels[:, piece_of_node, :]          # (nc, nodes, m)

    A = ph.A.sample(nodes)
    B = ph.B.sample(nodes)
    C = ph.C.sample(nodes)
    D = ph.D.sample(nodes)
    Q = ph.Q.sample(nodes)
    S = ph.S.sample(nodes)
    R = ph.R.sample(nodes)
    hot_Q = bool(np.any(Q))
    hot_S = bool(np.any(S))

    weights = np.full(steps + 1, h)
    weights[0] = weights[-1] = h / 2.0
    # control-only running cost has no path dependence: do it analytically
    uRu = np.einsum("cki,kij,ckj->ck", u_all, R, u_all)
    base_runs = (uRu * weights[None, :]).sum(axis=1)  # (nc,)

    rng_paths = np.random.Generator(np.random.Philox(key=config.seed))
    if hot_Q or hot_S:
        sums, sq_sums = _probe_paths_direct(
            ph, grid, config, rng_paths, u_all, weights, A, B, C, D, Q, S
        )
    else:
        # no state cost along the way: the cost is a quadratic in X(T),
        # which superposes exactly from one state per (piece, channel)
        sums, sq_sums = _probe_paths_terminal(
            ph, grid, config, rng_paths, levels, piece_of_node, A, B, C, D
        )

    N = config.n_paths
    means = sums / N + base_runs
    variances = np.maximum(sq_sums / N - (sums / N) ** 2, 0.0) * N / max(N - 1, 1)
    std_errors = np.sqrt(variances / N)
    scores = means + 5.0 * std_errors
    idx = int(np.argmin(means))
    violation = bool(np.any(scores < 0.0))
    witness = levels[int(np.argmin(scores))].copy() if violation else None
    return ProbeReport(
        violation_found=violation,
        min_mean=float(means[idx]),
        min_index=idx,
        means=means,
        std_errors=std_errors,
        n_controls=n_controls,
        n_paths=N,
        violating_control=witness,
    )


def _probe_paths_direct(ph, grid, config, rng_paths, u_all, weights, A, B, C, D, Q, S):
    """March the full (control x path) state bank; handles running state costs.

    Returns per-control sums and squared sums over paths of the
    path-dependent cost (running state cost plus terminal quadratic).
    """
    n = ph.n
    steps = grid.n_steps
    h = grid.h
    sqrt_h = np.sqrt(h)
    n_controls = u_all.shape[0]
    hot_A = bool(np.any(A))
    hot_C = bool(np.any(C))
    hot_Q = bool(np.any(Q))
    hot_S = bool(np.any(S))
    drift_u = np.einsum("kij,ckj->cki", B, u_all)    # (nc, nodes, n)
    diff_u = np.einsum("kij,ckj->cki", D, u_all)
    hA = h * A
    h_drift_u = h * drift_u

    # chunk so the state bank (n_controls x paths x n) and the increment
    # slab (paths x steps) both stay within the memory target
    chunk = max(1, min(CHUNK_ELEMENTS // max(1, n_controls * n),
                       CHUNK_ELEMENTS // steps))
    sums = np.zeros(n_controls)
    sq_sums = np.zeros(n_controls)
    done = 0
    while done < config.n_paths:
        take = min(chunk, config.n_paths - done)
        dW = rng_paths.standard_normal((take, steps)) * sqrt_h
        X = np.zeros((n_controls, take, n))
        run = np.zeros((n_controls, take))
        # scratch reused across steps; the bank is the hot allocation
        diff = np.empty_like(X)
        drift = np.empty_like(X) if hot_A else None
        for k in range(steps + 1):
            if hot_Q or hot_S:
                w = weights[k]
                if hot_Q:
                    run += w * np.einsum("cpi,ij,cpj->cp", X, Q[k], X)
                if hot_S:
                    run += w * 2.0 * np.einsum(
                        "ci,ij,cpj->cp", u_all[:, k], S[k], X
                    )
            if k == steps:
                break
            # Euler step, in place: both terms read the pre-step state, so
            # the diffusion and the A-drift products come first
            if hot_C:
                np.matmul(X, C[k].T, out=diff)
                diff += diff_u[:, k][:, None, :]
            else:
                diff[...] = diff_u[:, k][:, None, :]
            diff *= dW[None, :, k, None]
            if hot_A:
                np.matmul(X, hA[k].T, out=drift)
                X += drift
            X += h_drift_u[:, k][:, None, :]
            X += diff
        term = np.einsum("cpi,ij,cpj->cp", X, ph.G, X)
        total = run + term
        sums += total.sum(axis=1)
        sq_sums += (total**2).sum(axis=1)
        done += take
    return sums, sq_sums


def _probe_paths_terminal(ph, grid, config, rng_paths, levels, piece_of_node, A, B, C, D):
    """March one state per (piece, channel) and superpose at the horizon.

    The Euler map is jointly linear in state and control, so with shared
    increments the terminal state of any piecewise-constant control is an
    exact linear combination of these basis states. With no running state
    cost the whole path-dependent cost is the terminal quadratic, so the
    bank shrinks from n_controls states per path to pieces * m.
    """
    n = ph.n
    steps = grid.n_steps
    h = grid.h
    sqrt_h = np.sqrt(h)
    n_controls, pieces, m = levels.shape
    n_basis = pieces * m
    lev2 = levels.reshape(n_controls, n_basis)
    hot_A = bool(np.any(A))
    hot_C = bool(np.any(C))
    hA = h * A
    hBt = h * np.swapaxes(B, 1, 2)                   # (nodes, m, n)
    Dt = np.swapaxes(D, 1, 2)

    chunk = max(1, min(CHUNK_ELEMENTS // max(1, n_controls * n),
                       CHUNK_ELEMENTS // steps))
    sums = np.zeros(n_controls)
    sq_sums = np.zeros(n_controls)
    done = 0
    while done < config.n_paths:
        take = min(chunk, config.n_paths - done)
        dW = rng_paths.standard_normal((take, steps)) * sqrt_h
        Y = np.zeros((n_basis, take, n))
        diff = np.empty_like(Y)
        drift = np.empty_like(Y) if hot_A else None
        for k in range(steps):
            b0 = piece_of_node[k] * m
            if hot_C:
                np.matmul(Y, C[k].T, out=diff)
            else:
                diff[...] = 0.0
            diff[b0:b0 + m] += Dt[k][:, None, :]
            diff *= dW[None, :, k, None]
            if hot_A:
                np.matmul(Y, hA[k].T, out=drift)
                Y += drift
            Y[b0:b0 + m] += hBt[k][:, None, :]
            Y += diff
        X = np.tensordot(lev2, Y, axes=([1], [0]))   # (nc, take, n)
        total = np.einsum("cpi,ij,cpj->cp", X, ph.G, X)
        sums += total.sum(axis=1)
        sq_sums += (total**2).sum(axis=1)
        done += take
    return sums, sq_sums
