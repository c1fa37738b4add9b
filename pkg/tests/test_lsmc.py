import numpy as np
import pytest
from sklearn.base import clone

from krigrmc import ContractSpec, GbmModel, LSMCPricer, Problem, TimeGrid
from krigrmc.lsmc import BasisSpec, BW11Regressor, PolynomialRegressor, RankDeficientWarning, bw11_fit, ols_fit
from oracles import black_scholes


def monomials(X, degree):
    """All monomials of total degree <= degree, built by brute force."""
    n, d = X.shape
    cols = []

    def rec(start, powers):
        cols.append(np.prod([X[:, j] ** p for j, p in enumerate(powers)], axis=0) if any(powers)
                    else np.ones(n))
        if sum(powers) == degree:
            return
        for j in range(start, d):
            nxt = list(powers)
            nxt[j] += 1
            rec(j, nxt)

    rec(0, [0] * d)
    return np.column_stack(cols)


def test_constant_basis_predicts_mean():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(40, 2)), rng.normal(size=40)
    np.testing.assert_allclose(PolynomialRegressor(0).fit(X, y).predict(X[:5]), np.full(5, y.mean()), rtol=1e-12)


def test_exact_linear_fit():
    rng = np.random.default_rng(1)
    X = rng.uniform(20, 60, (100, 3))
    y = 2.0 - X @ np.array([0.5, 1.5, -3.0])
    for p in (1, 2, 3):
        np.testing.assert_allclose(PolynomialRegressor(p).fit(X, y).predict(X), y, atol=1e-10)


@pytest.mark.parametrize("seed,d,p", [(0, 1, 3), (1, 2, 3), (2, 3, 2), (3, 2, 1)])
def test_fitted_values_match_normal_equations(seed, d, p):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (300, d))
    y = np.sin(3 * X).sum(axis=1) + 0.1 * rng.normal(size=300)
    B = monomials(X, p)
    beta = np.linalg.solve(B.T @ B, B.T @ y)
    Xs = rng.uniform(-1, 1, (50, d))
    np.testing.assert_allclose(PolynomialRegressor(p).fit(X, y).predict(Xs), monomials(Xs, p) @ beta, atol=1e-8)


def test_rank_deficient_warns_and_falls_back():
    X = np.column_stack([np.linspace(0, 1, 30), np.linspace(0, 1, 30)])
    with pytest.warns(RankDeficientWarning):
        m = PolynomialRegressor(2).fit(X, X[:, 0] ** 2)
    assert np.all(np.isfinite(m.predict(X)))
    with pytest.raises(ValueError):
        PolynomialRegressor(3).fit(X[:5], np.zeros(5))


def test_affine_equivariance():
    rng = np.random.default_rng(4)
    X = rng.uniform(30, 50, (200, 2))
    y = np.maximum(40 - X.mean(axis=1), 0) + rng.normal(size=200)
    shift = np.array([-123.0, 77.0])
    a = PolynomialRegressor(3).fit(X, y).predict(X[:20])
    b = PolynomialRegressor(3).fit(X + shift, y).predict(X[:20] + shift)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_ols_itm_filter():
    put = ContractSpec("put", 40.0, 0.06)
    x = np.linspace(30, 50, 101)[:, None]
    y = np.where(x[:, 0] < 40, 1.0, 100.0)
    m = ols_fit(x, y, 1, itm_only=True, contract=put, t=0.5)
    np.testing.assert_allclose(m.predict(x[:10]), 1.0, atol=1e-10)


def test_bw11_single_cell_is_global_linear_fit():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 2))
    y = X @ [1.0, -2.0] + rng.normal(size=100)
    A = np.column_stack([np.ones(100), X])
    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(bw11_fit(X, y, 1).predict(X), A @ beta, atol=1e-10)


@pytest.mark.parametrize("n,d,r", [(1000, 2, 10), (1003, 2, 10), (375, 3, 5), (2048, 5, 4)])
def test_bw11_partition(n, d, r):
    rng = np.random.default_rng(n)
    X = rng.lognormal(size=(n, d))
    m = BW11Regressor(r).fit(X, rng.normal(size=n))
    cells = m.cells(X)
    # training points route to the cell they were fitted in, and every point has exactly one cell
    np.testing.assert_array_equal(cells, m.cell_index_)
    assert m.counts_.sum() == n and m.counts_.size == r ** d
    if n % r ** d == 0:
        assert m.counts_.max() - m.counts_.min() <= 1
    assert np.all((cells >= 0) & (cells < r ** d))


def test_bw11_sparse_cell_uses_mean():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    m = BW11Regressor(4).fit(X, np.array([5.0, 6.0, 7.0, 8.0]))
    np.testing.assert_allclose(m.predict(X), [5.0, 6.0, 7.0, 8.0])


def test_basis_spec_validation():
    with pytest.raises(ValueError):
        BasisSpec("spline")
    with pytest.raises(ValueError):
        BasisSpec("bw11", cells=0)


def test_single_date_is_european():
    put = ContractSpec("put", 40.0, 0.06)
    model = GbmModel(0.06, 0.0, (0.2,), (40.0,))
    est = LSMCPricer("poly", n_paths=1000).fit(Problem(model, put, TimeGrid(1.0, 1)))
    v, se = est.value(n_out=100_000)
    assert abs(v - black_scholes(40.0, 40.0, 0.06, 0.2, 1.0)) < 3 * se


def test_sklearn_protocol_and_determinism():
    est = LSMCPricer("bw11", cells=4, n_paths=4000, seed=3)
    assert clone(est).get_params() == est.get_params()
    call = ContractSpec("max-call", 100.0, 0.05)
    prob = Problem(GbmModel(0.05, 0.1, (0.2, 0.2), (90.0, 90.0)), call, TimeGrid(3.0, 9))
    a = clone(est).fit(prob).value(n_out=5000)
    b = clone(est).fit(prob).value(n_out=5000)
    assert a == b
    assert clone(est).fit(prob).n_sims_ == 4000 * 9


@pytest.mark.slow
def test_bw11_basket_put_value():
    put = ContractSpec("basket-put", 40.0, 0.06)
    prob = Problem(GbmModel(0.06, 0.0, (0.2, 0.2), (40.0, 40.0)), put, TimeGrid(1.0, 25))
    v, se = LSMCPricer("bw11", cells=10, n_paths=50_000).fit(prob).value(n_out=100_000)
    assert abs(v - 1.452) < 3 * se


@pytest.mark.slow
def test_bw11_max_call_3d_value():
    call = ContractSpec("max-call", 100.0, 0.05)
    prob = Problem(GbmModel(0.05, 0.1, (0.2,) * 3, (90.0,) * 3), call, TimeGrid(3.0, 9))
    v, se = LSMCPricer("bw11", cells=5, n_paths=300_000).fit(prob).value(n_out=100_000)
    assert abs(v - 11.12) < 3 * se
