"""Shared fixture problems and random instance generators.

The four named fixtures below have closed-form solutions used as oracles
throughout the suite:

twin_control      one state, two control channels entering the drift
                  identically and the noise with opposite signs; R = 0.
                  Shifted solution eps/(eps+2-2t); the unshifted problem is
                  open-loop but not closed-loop solvable.
vanishing_weight  scalar problem with R(s) = s^2 degenerating at s = 0;
                  P(t) = t solves the equation but its gain 1/s is not
                  square integrable.
negative_terminal scalar problem with negative terminal weight and noisy
                  state; the value escapes to minus infinity although the
                  homogeneous cost from x = 0 stays nonnegative.
scalar_tanh       textbook well-posed scalar problem, P(t) = tanh(T - t).
"""

import numpy as np

from slq.problem import MatrixPath, ProblemData, TimeGrid


def base_problem(n, m, grid, **kw):
    fields = dict(
        A=MatrixPath.zeros(n, n),
        B=MatrixPath.zeros(n, m),
        C=MatrixPath.zeros(n, n),
        D=MatrixPath.zeros(n, m),
        b=MatrixPath.zeros(n, 1),
        sigma=MatrixPath.zeros(n, 1),
        G=np.zeros((n, n)),
        Q=MatrixPath.zeros(n, n, symmetric=True),
        S=MatrixPath.zeros(m, n),
        R=MatrixPath.zeros(m, m, symmetric=True),
        g=np.zeros((n, 1)),
        q=MatrixPath.zeros(n, 1),
        rho=MatrixPath.zeros(m, 1),
    )
    fields.update(kw)
    return ProblemData(grid=grid, n=n, m=m, **fields)


def twin_control(n_steps=2000):
    grid = TimeGrid(0.0, 1.0, n_steps)
    return base_problem(
        1, 2, grid,
        B=MatrixPath.const([[1.0, 1.0]]),
        D=MatrixPath.const([[1.0, -1.0]]),
        G=np.array([[1.0]]),
    )


def twin_shifted_P(eps, t):
    """Shifted-weight solution of the twin-control problem."""
    return eps / (eps + 2.0 - 2.0 * t)


def vanishing_weight(n_steps=2000):
    grid = TimeGrid(0.0, 1.0, n_steps)
    return base_problem(
        1, 1, grid,
        B=MatrixPath.const([[1.0]]),
        G=np.array([[1.0]]),
        R=MatrixPath.poly([[[0.0, 0.0, 1.0]]], symmetric=True),
    )


def negative_terminal(n_steps=2000):
    grid = TimeGrid(0.0, 1.0, n_steps)
    s = grid.half_times()
    return base_problem(
        1, 1, grid,
        B=MatrixPath.const([[1.0]]),
        C=MatrixPath.const([[1.0]]),
        G=np.array([[-1.0]]),
        R=MatrixPath.sampled(s, np.exp(1.0 - s)[:, None, None], symmetric=True),
    )


def scalar_tanh(n_steps=2000):
    grid = TimeGrid(0.0, 1.0, n_steps)
    return base_problem(
        1, 1, grid,
        B=MatrixPath.const([[1.0]]),
        Q=MatrixPath.const([[1.0]], symmetric=True),
        R=MatrixPath.const([[1.0]], symmetric=True),
    )


# ---------------------------------------------------------------------------
# random instance generators (shared by unit tests and the acceptance suite)

def rand_sym(rng, n, lo, hi):
    """Symmetric matrix with eigenvalues drawn uniformly from [lo, hi]."""
    lam = rng.uniform(lo, hi, n)
    F, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (F * lam) @ F.T


def rand_const(rng, rows, cols, scale):
    return MatrixPath.const(rng.uniform(-scale, scale, (rows, cols)))


def random_homogeneous(rng, n_steps):
    """Small dense instance with mixed-sign G and Q, uniformly positive R."""
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    grid = TimeGrid(0.0, 1.0, n_steps)
    return base_problem(
        n, m, grid,
        A=rand_const(rng, n, n, 0.7), B=rand_const(rng, n, m, 0.7),
        C=rand_const(rng, n, n, 0.7), D=rand_const(rng, n, m, 0.7),
        G=rand_sym(rng, n, -0.6, 0.8),
        Q=MatrixPath.const(rand_sym(rng, n, -0.5, 0.7), symmetric=True),
        S=rand_const(rng, m, n, 0.2),
        R=MatrixPath.const(rand_sym(rng, m, 0.4, 1.2), symmetric=True),
    )


def random_indefinite_d0(rng, n_steps):
    """Noise-free-control instance; G and Q forced genuinely indefinite."""
    n = int(rng.integers(2, 4))
    m = int(rng.integers(1, 3))
    grid = TimeGrid(0.0, 1.0, n_steps)
    lamG = rng.uniform(-0.8, 0.8, n)
    lamG[0] = rng.uniform(0.1, 0.8)
    lamG[1] = -rng.uniform(0.1, 0.8)
    lamQ = rng.uniform(-0.8, 0.8, n)
    lamQ[0] = rng.uniform(0.1, 0.8)
    lamQ[1] = -rng.uniform(0.1, 0.8)
    FG, _ = np.linalg.qr(rng.standard_normal((n, n)))
    FQ, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return base_problem(
        n, m, grid,
        A=rand_const(rng, n, n, 0.8), B=rand_const(rng, n, m, 0.8),
        C=rand_const(rng, n, n, 0.8),
        G=(FG * lamG) @ FG.T,
        Q=MatrixPath.const((FQ * lamQ) @ FQ.T, symmetric=True),
        S=rand_const(rng, m, n, 0.3),
        R=MatrixPath.const(rand_sym(rng, m, 0.5, 1.3), symmetric=True),
    )


def random_feedback_triple(rng, n_steps):
    """(problem, constant feedback gain, unit initial state) for cost
    cross-checks between the moment oracle and simulation."""
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    grid = TimeGrid(0.0, 1.0, n_steps)
    p = base_problem(
        n, m, grid,
        A=rand_const(rng, n, n, 0.6), B=rand_const(rng, n, m, 0.6),
        C=rand_const(rng, n, n, 0.8), D=rand_const(rng, n, m, 0.6),
        G=rand_sym(rng, n, -0.4, 0.8),
        Q=MatrixPath.const(rand_sym(rng, n, -0.3, 0.7), symmetric=True),
        S=rand_const(rng, m, n, 0.2),
        R=MatrixPath.const(rand_sym(rng, m, 0.4, 1.2), symmetric=True),
    )
    theta = MatrixPath.const(rng.uniform(-0.6, 0.6, (m, n)))
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    return p, theta, x
