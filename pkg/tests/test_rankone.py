import itertools

import numpy as np
import pytest

from nobacktrack.dynsys import RecurrentNetwork, SparseParamRow
from nobacktrack.errors import ConfigError
from nobacktrack.oracles import exhaustive_reduction_mean, exhaustive_variance, random_decomposition
from nobacktrack.rankone import (
    DELTA,
    DiagonalForm,
    InverseForm,
    NormPair,
    RankOneDecomposition,
    average_dense,
    balanced_scaling,
    enumerate_signs,
    optimal_scalings,
    pair_and_row_scalings,
    reduce,
    reduce_rank_k,
    variance_hs,
)


def test_single_term_is_reproduced_exactly(rng):
    d = random_decomposition(rng, 1, 3, 4)
    for s in (1.0, -1.0):
        np.testing.assert_allclose(reduce(d, None, np.array([s])).to_dense(), d.matrix(), atol=1e-14)


def test_two_basis_terms_example():
    d = RankOneDecomposition(np.eye(2), np.eye(2))
    outcomes = [reduce(d, None, s).to_dense() for s in enumerate_signs(2)]
    np.testing.assert_allclose(outcomes[0], np.ones((2, 2)))
    np.testing.assert_allclose(outcomes[1], [[1.0, -1.0], [-1.0, 1.0]])
    np.testing.assert_allclose(average_dense([reduce(d, None, s) for s in enumerate_signs(2)]), np.eye(2))


@pytest.mark.parametrize("k", range(1, 13))
def test_exhaustive_mean_is_exact(rng, k):
    d = random_decomposition(rng, k, 3, 5)
    np.testing.assert_allclose(exhaustive_reduction_mean(d), d.matrix(), atol=1e-12, rtol=0)


def test_any_scaling_preserves_expectation(rng):
    d = random_decomposition(rng, 5, 4, 3)
    rho = rng.uniform(0.01, 100.0, size=5)
    np.testing.assert_allclose(exhaustive_reduction_mean(d, rho), d.matrix(), atol=1e-10, rtol=0)


def test_variance_formulas_match_enumeration(rng):
    for _ in range(100):
        d = random_decomposition(rng, int(rng.integers(3, 7)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        scaled, unscaled = exhaustive_variance(d, True), exhaustive_variance(d, False)
        assert scaled == pytest.approx(variance_hs(d, True), rel=1e-10, abs=1e-10)
        assert unscaled == pytest.approx(variance_hs(d, False), rel=1e-10, abs=1e-10)
        assert scaled <= unscaled * (1 + 1e-12) + 1e-12


def test_orthogonal_terms_match_closed_form_variance():
    # v_i = e_i, w_i = c_i e_i: cross terms vanish
    c = np.array([1.0, 4.0, 9.0])
    d = RankOneDecomposition(np.eye(3), np.diag(c))
    assert variance_hs(d, True) == pytest.approx(np.sum(c) ** 2 - np.sum(c ** 2))
    assert exhaustive_variance(d, True) == pytest.approx(variance_hs(d, True))


def test_optimal_scalings_balance_norms():
    d = RankOneDecomposition(np.array([[2.0, 0.0], [0.0, 0.5]]), np.array([[8.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
    rho = optimal_scalings(d)
    np.testing.assert_allclose(rho, [2.0, 2.0], rtol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(d.vs, axis=1) * rho, np.linalg.norm(d.ws, axis=1) / rho, rtol=1e-10)


def test_zero_norms_are_regularized():
    assert balanced_scaling(0.0, 0.0) == pytest.approx(1.0)
    assert np.isfinite(balanced_scaling(1.0, 0.0))
    assert balanced_scaling(0.0, 1.0) == pytest.approx(np.sqrt(DELTA / (1.0 + DELTA)))


def test_non_euclidean_norm_changes_scalings():
    d = RankOneDecomposition(np.eye(2), np.eye(2))
    norms = NormPair(DiagonalForm(np.array([4.0, 1.0])), DiagonalForm(np.ones(2)))
    np.testing.assert_allclose(optimal_scalings(d, norms), [np.sqrt(0.5), 1.0], rtol=1e-10)


def test_rank_k_average_is_unbiased(rng):
    d = random_decomposition(rng, 4, 3, 3)
    estimates = reduce_rank_k(d, None, 20000, rng)
    assert len(estimates) == 20000
    spread = np.std([e.to_dense() for e in estimates], axis=0) / np.sqrt(len(estimates))
    assert np.all(np.abs(average_dense(estimates) - d.matrix()) <= 5 * spread + 1e-12)


def test_sparse_rows_are_densified():
    row = SparseParamRow(np.array([1, 3]), np.array([2.0, -1.0]))
    d = RankOneDecomposition.from_terms([(np.array([1.0, 0.0]), row)], m=4)
    np.testing.assert_array_equal(d.ws, [[0.0, 2.0, 0.0, -1.0]])
    with pytest.raises(ConfigError):
        RankOneDecomposition.from_terms([(np.array([1.0, 0.0]), row)])


def test_invalid_inputs_raise(rng):
    d = random_decomposition(rng, 3, 2, 2)
    with pytest.raises(ConfigError):
        reduce(d, None, np.ones(2))
    with pytest.raises(ConfigError):
        reduce_rank_k(d, None, 0, rng)
    with pytest.raises(ConfigError):
        RankOneDecomposition(np.ones((2, 3)), np.ones((3, 3)))


def test_enumerate_signs_covers_all_vectors():
    signs = enumerate_signs(3)
    assert signs.shape == (8, 3)
    assert len({tuple(s) for s in signs}) == 8
    np.testing.assert_array_equal(signs.sum(axis=0), np.zeros(3))


@pytest.mark.parametrize("factor", [1.1, 1 / 1.1])
def test_perturbing_one_scaling_never_lowers_variance(rng, factor):
    for _ in range(20):
        d = random_decomposition(rng, int(rng.integers(2, 7)), 3, 4)
        rho = optimal_scalings(d)
        best = exhaustive_variance(d, rho=rho)
        for i in range(d.k):
            bumped = rho.copy()
            bumped[i] *= factor
            assert exhaustive_variance(d, rho=bumped) >= best * (1 - 1e-12) - 1e-12


@pytest.mark.parametrize("K", [2, 3])
def test_rank_k_average_divides_variance_by_k(rng, K):
    d = random_decomposition(rng, 3, 3, 4)
    A = d.matrix()
    outcomes = [reduce(d, None, s).to_dense() for s in enumerate_signs(d.k)]
    # every K-tuple of sign vectors is equally likely
    errors = [np.sum((sum(combo) / K - A) ** 2) for combo in itertools.product(outcomes, repeat=K)]
    assert np.mean(errors) == pytest.approx(variance_hs(d) / K, rel=1e-10)


def test_inverse_form_solves_through_its_backend(rng):
    M = np.diag(rng.uniform(0.5, 3.0, size=4))

    class DenseBackend:
        def solve(self, x):
            return np.linalg.solve(M, x.T).T

    x = rng.normal(size=(2, 4))
    np.testing.assert_allclose(InverseForm(DenseBackend()).quad(x), np.sum(x ** 2 / np.diag(M), axis=1), rtol=1e-12)


def test_packed_row_scalings_match_dense_decomposition(rng):
    system = RecurrentNetwork(3, 2)
    rows = system.param_rows(rng.normal(size=3), rng.normal(size=2), system.init_params(rng))
    vbar, wbar = rng.normal(size=(1, 3)), rng.normal(size=(1, system.param_dim))
    norms = NormPair(DiagonalForm(rng.uniform(0.5, 2.0, size=3)), DiagonalForm(rng.uniform(0.5, 2.0, size=system.param_dim)))
    rho_bar, rho_rows = pair_and_row_scalings(vbar, wbar, rows, norms)
    d = RankOneDecomposition(np.vstack([vbar, np.eye(3)]), np.vstack([wbar, rows.to_dense()]))
    np.testing.assert_allclose(np.concatenate([rho_bar, rho_rows]), optimal_scalings(d, norms), rtol=1e-12)
    _, unit = pair_and_row_scalings(vbar, wbar, None, norms)
    np.testing.assert_array_equal(unit, np.ones(3))
