"""Fixed-step RK4 integration of matrix-valued ODEs on a uniform grid.

The integrator only ever evaluates the right-hand side at grid nodes and
interval midpoints (the "half grid"), so coefficient paths can be
pre-sampled there once and looked up by index inside rhs closures.

Blow-up is a result, not an error: integration stops once the Frobenius norm
passes the threshold and the trajectory keeps the nodes covered so far, with
the offending node included. Non-finite rhs output, by contrast, signals bad
data and raises :class:`NonFiniteValue`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteValue
from .linalg import sym
from .problem import TimeGrid

BLOWUP_NORM_DEFAULT = 1e12


@dataclass
class OdeTrajectory:
    """Node values of a matrix ODE solution, possibly truncated by blow-up.

    times are ascending and always a contiguous suffix (backward integration)
    or prefix (forward) of the grid nodes. derivs, when present, hold the rhs
    at each stored node; half_values, when present, hold values on the full
    half grid (nodes and midpoints) obtained by Hermite interpolation.
    """

    grid: TimeGrid
    times: np.ndarray
    values: np.ndarray
    blew_up: bool = False
    blowup_time: float | None = None
    derivs: np.ndarray | None = None
    half_values: np.ndarray | None = None

    @property
    def full(self) -> bool:
        return len(self.times) == self.grid.n_steps + 1

    @property
    def initial_value(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal_value(self) -> np.ndarray:
        return self.values[-1]

    def value_at(self, t: float) -> np.ndarray:
        return self.sample(np.asarray([t]))[0]

    def sample(self, query: np.ndarray) -> np.ndarray:
        """Linear interpolation at query times (clamped to the covered range)."""
        query = np.asarray(query, dtype=float)
        r, c = self.values.shape[1:]
        out = np.empty((len(query), r, c))
        for i in range(r):
            for j in range(c):
                out[:, i, j] = np.interp(query, self.times, self.values[:, i, j])
        return out

    def node_index(self, t: float) -> int:
        """Index into times of the stored node nearest to t."""
        k = int(round((t - self.times[0]) / self.grid.h))
        return min(max(k, 0), len(self.times) - 1)


def hermite_midpoints(values: np.ndarray, derivs: np.ndarray, h: float) -> np.ndarray:
    """Interval midpoints reconstructed from node values and derivatives.

    Uses quintic Hermite interpolation over two adjacent intervals (three
    nodes with derivatives). The cubic two-point variant is also O(h^4) but
    its constant is large enough to dominate the RK4 flow error inside steep
    boundary layers when a solved trajectory feeds the next equation's
    coefficients; the quintic keeps reconstruction error negligible. With a
    single interval the cubic is the only option.
    """
    n_intervals = len(values) - 1
    if n_intervals < 2:
        return (values[:-1] + values[1:]) / 2.0 + (h / 8.0) * (derivs[:-1] - derivs[1:])
    mids = np.empty((n_intervals,) + values.shape[1:], dtype=float)
    y0, y1, y2 = values[:-2], values[1:-1], values[2:]
    d0, d1, d2 = derivs[:-2], derivs[1:-1], derivs[2:]
    # window (k-1, k, k+1) evaluated at the midpoint of its second interval
    mids[1:] = (11.0 * y0 + 72.0 * y1 + 45.0 * y2) / 128.0 \
        + (h / 128.0) * (3.0 * d0 + 36.0 * d1 - 9.0 * d2)
    # first interval: window (0, 1, 2) evaluated at the midpoint of its first
    mids[0] = (45.0 * values[0] + 72.0 * values[1] + 11.0 * values[2]) / 128.0 \
        + (h / 128.0) * (9.0 * derivs[0] - 36.0 * derivs[1] - 3.0 * derivs[2])
    return mids


def interleave_half_grid(values: np.ndarray, mids: np.ndarray) -> np.ndarray:
    """Stack node values and midpoints in time order: v0, m0, v1, m1, ..., vN."""
    k = len(values)
    out = np.empty((2 * k - 1,) + values.shape[1:], dtype=values.dtype)
    out[0::2] = values
    out[1::2] = mids
    return out


def integrate_matrix_ode(
    rhs,
    boundary_value: np.ndarray,
    grid: TimeGrid,
    direction: str = "backward",
    blowup_norm: float = BLOWUP_NORM_DEFAULT,
    symmetrize: bool = False,
    with_derivatives: bool = False,
    with_half_values: bool = False,
) -> OdeTrajectory:
    """Integrate dP/ds = rhs(s, P) across the grid with classical RK4.

    direction "backward" starts from P(T) = boundary_value and fills nodes
    right to left; "forward" starts from P(t0). Stage times fall exactly on
    grid nodes and midpoints. With symmetrize=True every accepted step is
    replaced by its symmetric part (for flows that preserve symmetry).
    """
    if direction not in ("backward", "forward"):
        raise ValueError(f"direction must be 'backward' or 'forward', got {direction!r}")
    backward = direction == "backward"
    if with_half_values:
        with_derivatives = True

    times = grid.times()
    n_nodes = grid.n_steps + 1
    start = np.asarray(boundary_value, dtype=float)
    if not np.isfinite(start).all():
        raise NonFiniteValue("boundary value is not finite")
    shape = start.shape

    values = np.empty((n_nodes,) + shape)
    derivs = np.empty((n_nodes,) + shape) if with_derivatives else None
    step = -grid.h if backward else grid.h
    order = range(n_nodes - 1, 0, -1) if backward else range(0, n_nodes - 1)
    first = n_nodes - 1 if backward else 0
    values[first] = sym(start) if symmetrize else start

    blew_up = False
    blowup_time: float | None = None
    last = first
    if float(np.linalg.norm(start)) > blowup_norm:
        blew_up = True
        blowup_time = times[first]
    else:
        for k in order:
            t = times[k]
            P = values[k]
            k1 = rhs(t, P)
            if with_derivatives:
                derivs[k] = k1
            k2 = rhs(t + step / 2.0, P + (step / 2.0) * k1)
            k3 = rhs(t + step / 2.0, P + (step / 2.0) * k2)
            k4 = rhs(t + step, P + step * k3)
            P_new = P + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(P_new).all():
                raise NonFiniteValue(f"non-finite value stepping from t={t:.6g}")
            if symmetrize:
                P_new = sym(P_new)
            target = k - 1 if backward else k + 1
            values[target] = P_new
            last = target
            if float(np.linalg.norm(P_new)) > blowup_norm:
                blew_up = True
                blowup_time = times[target]
                break

    if backward:
        covered = slice(last, n_nodes)
    else:
        covered = slice(0, last + 1)
    out_values = values[covered]
    out_times = times[covered]
    out_derivs = None
    if with_derivatives:
        # The loop fills the derivative at each node it steps FROM; the final
        # node reached still needs one. After a blow-up the rhs there may
        # overflow, and the value is never used downstream, so zero it.
        if blew_up:
            derivs[last] = 0.0
        else:
            derivs[last] = rhs(times[last], values[last])
        out_derivs = derivs[covered]

    half_values = None
    if with_half_values and not blew_up:
        mids = hermite_midpoints(out_values, out_derivs, grid.h)
        half_values = interleave_half_grid(out_values, mids)

    return OdeTrajectory(
        grid=grid,
        times=out_times,
        values=out_values,
        blew_up=blew_up,
        blowup_time=blowup_time,
        derivs=out_derivs,
        half_values=half_values,
    )
