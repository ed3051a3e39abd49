import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slq.linalg import (
    min_eig_batched,
    pseudo_inverse,
    pseudo_inverse_batched,
    psd_report,
    range_included,
    range_residual,
    schur_psd_test,
    spectral_norm_batched,
    sym,
)

dims = st.integers(min_value=1, max_value=5)
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_symmetric(rng, n, rank=None):
    """Symmetric matrix with controlled rank (None = full)."""
    lam = rng.uniform(-2.0, 2.0, n)
    if rank is not None:
        lam[rank:] = 0.0
    F, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (F * lam) @ F.T


def test_sym_basic():
    M = np.array([[1.0, 2.0], [0.0, 3.0]])
    S = sym(M)
    assert np.array_equal(S, S.T)
    assert np.allclose(S, [[1.0, 1.0], [1.0, 3.0]])


@given(dims, seeds, st.integers(min_value=0, max_value=5))
@settings(max_examples=80, deadline=None)
def test_pseudo_inverse_penrose_identities(n, seed, rank_drop):
    rng = np.random.default_rng(seed)
    rank = max(0, n - rank_drop)
    M = random_symmetric(rng, n, rank)
    Mp = pseudo_inverse(M)
    scale = max(np.linalg.norm(M), 1.0)
    assert np.allclose(M @ Mp @ M, M, atol=1e-9 * scale)
    assert np.allclose(Mp @ M @ Mp, Mp, atol=1e-9 * max(np.linalg.norm(Mp), 1.0))
    assert np.allclose(M @ Mp, (M @ Mp).T, atol=1e-9)
    assert np.allclose(Mp @ M, (Mp @ M).T, atol=1e-9)


def test_pseudo_inverse_of_zero():
    assert np.array_equal(pseudo_inverse(np.zeros((3, 3))), np.zeros((3, 3)))


def test_pseudo_inverse_relative_cutoff():
    # eigenvalue 1e-15 relative to 1 is treated as zero, not inverted
    M = np.diag([1.0, 1e-15])
    Mp = pseudo_inverse(M)
    assert Mp[1, 1] == 0.0
    assert Mp[0, 0] == pytest.approx(1.0)


@given(dims, seeds)
@settings(max_examples=40, deadline=None)
def test_pseudo_inverse_batched_matches_loop(n, seed):
    rng = np.random.default_rng(seed)
    stack = np.stack([random_symmetric(rng, n, rng.integers(0, n + 1))
                      for _ in range(4)])
    batched = pseudo_inverse_batched(stack)
    for k in range(4):
        assert np.allclose(batched[k], pseudo_inverse(stack[k]), atol=1e-10)


@given(dims, dims, seeds)
@settings(max_examples=60, deadline=None)
def test_range_included_accepts_true_members(n, m, seed):
    rng = np.random.default_rng(seed)
    R = random_symmetric(rng, m, max(1, m - 1))
    X = rng.standard_normal((m, n))
    S = R @ X                       # columns lie in range(R) by construction
    assert range_included(S, R)
    assert range_residual(S, R) <= 1e-8 * (1.0 + np.linalg.norm(S))


def test_range_included_rejects_outside_vector():
    R = np.diag([1.0, 0.0])
    S = np.array([[0.0], [1.0]])    # second coordinate is not reachable
    assert not range_included(S, R)
    assert range_residual(S, R) == pytest.approx(1.0)


@given(dims, dims, seeds)
@settings(max_examples=80, deadline=None)
def test_schur_test_matches_block_eigenvalues(n, m, seed):
    rng = np.random.default_rng(seed)
    Q = random_symmetric(rng, n)
    R = random_symmetric(rng, m, rng.integers(0, m + 1))
    S = rng.standard_normal((m, n))
    block = np.block([[Q, S.T], [S, R]])
    direct = bool(np.linalg.eigvalsh(sym(block)).min() >= -1e-9)
    assert schur_psd_test(Q, S, R) == direct


def test_schur_test_known_cases():
    Q = np.array([[2.0]])
    R = np.array([[2.0]])
    assert schur_psd_test(Q, np.array([[1.0]]), R)
    assert not schur_psd_test(Q, np.array([[3.0]]), R)
    # rank-deficient R with a cross term outside its range
    assert not schur_psd_test(Q, np.array([[1.0]]), np.array([[0.0]]))
    assert schur_psd_test(Q, np.array([[0.0]]), np.array([[0.0]]))


def test_psd_report_fields():
    rep = psd_report(np.diag([2.0, -0.5]))
    assert not rep.is_psd
    assert rep.min_eigenvalue == pytest.approx(-0.5)
    assert rep.is_uniformly_pd_delta == 0.0
    rep_ok = psd_report(np.eye(2))
    assert rep_ok.is_psd and rep_ok.is_uniformly_pd_delta == pytest.approx(1.0)


@given(dims, seeds)
@settings(max_examples=40, deadline=None)
def test_batched_spectral_helpers(n, seed):
    rng = np.random.default_rng(seed)
    stack = np.stack([random_symmetric(rng, n) for _ in range(5)])
    assert np.allclose(
        min_eig_batched(stack),
        [np.linalg.eigvalsh(M).min() for M in stack],
    )
    assert np.allclose(
        spectral_norm_batched(stack),
        [np.linalg.norm(M, 2) for M in stack],
    )
