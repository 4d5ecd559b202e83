import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkmpc.edmd import Dataset, LiftedModel, identify
from rkmpc.geometry import Zonotope
from rkmpc.lifting import build_dictionary
from rkmpc.uncertainty import (
    MIN_HALF_WIDTH,
    ResidualSet,
    ValidationCapError,
    estimate_sets,
    hoeffding_epsilon,
    max_nearest_neighbor_gap,
    outside_fraction,
    residuals,
    scale_bounds,
    validate_sets,
)


def eps_oracle(L, delta):
    mpmath.mp.dps = 40
    return float(mpmath.sqrt(-mpmath.log(mpmath.mpf(delta) / 2) / (2 * L)))


def state_dict():
    return build_dictionary("polynomial", None, 2, includes_state=False, degree=1)


def test_hoeffding_value():
    eps = hoeffding_epsilon(10_000, 0.01)
    assert eps == pytest.approx(eps_oracle(10_000, 0.01), rel=1e-14)
    assert abs(eps - 0.0162762) < 1e-6


def test_hoeffding_quadruple_halves():
    assert hoeffding_epsilon(40_000, 0.01) == pytest.approx(hoeffding_epsilon(10_000, 0.01) / 2, rel=1e-14)


@pytest.mark.parametrize("L,delta", [(0, 0.1), (10, 2.0), (10, 0.0), (10, 1.0)])
def test_hoeffding_domain(L, delta):
    with pytest.raises(ValueError):
        hoeffding_epsilon(L, delta)


@settings(max_examples=50)
@given(st.integers(1, 10**7), st.floats(1e-6, 0.99))
def test_hoeffding_monotone(L, delta):
    assert hoeffding_epsilon(L + 1, delta) < hoeffding_epsilon(L, delta)
    assert hoeffding_epsilon(L, delta * 0.5) > hoeffding_epsilon(L, delta)


def exact_model(A, B, C):
    d = state_dict()
    return LiftedModel(np.asarray(A, float), np.asarray(B, float), np.asarray(C, float),
                       np.zeros((2, 2)), d)


def test_residuals_exact_linear_zero():
    rng = np.random.default_rng(0)
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    x = rng.uniform(-1, 1, size=(50, 2))
    u = rng.uniform(-1, 1, size=(50, 1))
    ds = Dataset(x, u, np.zeros((50, 2)), x @ A.T + u @ B.T, split="validate")
    r = residuals(exact_model(A, B, np.eye(2)), ds)
    assert np.max(np.abs(r.w_bar)) < 1e-15 and np.max(np.abs(r.v)) == 0


def test_residuals_single_tuple_hand():
    A = [[1.0, 2.0], [0.0, 1.0]]
    B = [[1.0], [0.5]]
    C = [[2.0, 0.0], [0.0, 1.0]]
    ds = Dataset([[1.0, -1.0]], [[2.0]], [[0.0, 0.0]], [[0.5, 0.25]], split="validate")
    r = residuals(exact_model(A, B, C), ds)
    # A x + B u = (1-2+2, -1+1) = (1, 0)
    np.testing.assert_array_equal(r.w_bar, [[-0.5, 0.25]])
    # x - C x = (1-2, -1+1)
    np.testing.assert_array_equal(r.v, [[-1.0, 0.0]])


def test_residuals_refuse_fit_split():
    ds = Dataset([[1.0, 0.0]], [[0.0]], [[0.0, 0.0]], [[1.0, 0.0]], split="fit")
    with pytest.raises(ValueError):
        residuals(exact_model(np.eye(2), np.zeros((2, 1)), np.eye(2)), ds)


def test_residuals_dimension_mismatch():
    ds = Dataset([[1.0, 0.0, 0.0]], [[0.0]], [[0.0] * 3], [[0.0] * 3], split="validate")
    with pytest.raises(ValueError):
        residuals(exact_model(np.eye(2), np.zeros((2, 1)), np.eye(2)), ds)


def test_residual_norm_shrinks_with_alpha():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(300, 2))
    u = rng.uniform(-1, 1, size=(300, 1))
    xp = np.column_stack([x[:, 0] + 0.1 * x[:, 1], 0.9 * x[:, 1] - 0.2 * x[:, 0] ** 3 + u[:, 0]])
    ds = Dataset(x, u, np.zeros_like(x), xp)
    d = build_dictionary("thinplate", [(0.381, -0.341), (0.267, -0.889)], 2)
    norms = []
    for a in [1e2, 1e0, 1e-2, 1e-6]:
        m = identify(ds, d, alpha=a)
        norms.append(np.linalg.norm(residuals(m, ds, allow_fit_split=True).w_bar))
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_validate_all_inside_passes():
    rng = np.random.default_rng(0)
    res = ResidualSet(rng.uniform(-0.5, 0.5, size=(10_000, 3)), rng.uniform(-0.5, 0.5, size=(10_000, 2)))
    rep = validate_sets(Zonotope.box([1] * 3), Zonotope.box([1] * 2), res, 0.05, 0.05, 0.01)
    assert rep.empirical_risk_w == 0 and rep.empirical_risk_v == 0
    assert rep.epsilon == pytest.approx(0.0163, abs=1e-4)
    assert rep.passed


def test_validate_point_sets_fail():
    rng = np.random.default_rng(0)
    res = ResidualSet(rng.normal(size=(100, 2)), rng.normal(size=(100, 2)))
    rep = validate_sets(Zonotope.point([0, 0]), Zonotope.point([0, 0]), res, 0.05, 0.05, 0.01)
    assert rep.empirical_risk_w == 1.0 and not rep.passed


def test_validate_boundary_inclusive():
    L, delta = 10_000, 0.01
    eps = hoeffding_epsilon(L, delta)
    w = np.zeros((L, 1))
    w[:100] = 5.0                               # 1% outside
    res = ResidualSet(w, np.zeros((L, 1)))
    G_hat = 0.01
    rep = validate_sets(Zonotope.box([1.0]), Zonotope.box([1.0]), res, G_hat + eps, 1.0, delta)
    assert rep.empirical_risk_w == G_hat
    assert rep.passed_w


def test_estimate_uniform_quantile():
    rng = np.random.default_rng(1)
    res = ResidualSet(rng.uniform(-1, 1, size=(50_000, 2)), rng.uniform(-1, 1, size=(50_000, 1)))
    W, V, rep = estimate_sets(res, G_bar=0.05)
    hw = W.interval_hull()[1]
    assert np.all(hw >= 0.95 * 1.1) and np.all(hw <= 1.1 * 1.1 * 1.01)
    assert rep.passed and rep.gamma_w == 1.1


def test_estimate_zero_residuals_floor():
    res = ResidualSet(np.zeros((200, 3)), np.zeros((200, 2)))
    W, V, rep = estimate_sets(res, G_bar=0.5)
    assert rep.iterations == 0
    np.testing.assert_allclose(W.interval_hull()[1], 1.1 * MIN_HALF_WIDTH)


def test_estimate_cap():
    rng = np.random.default_rng(2)
    res = ResidualSet(rng.standard_cauchy(size=(50, 1)), np.zeros((50, 1)))
    with pytest.raises(ValidationCapError):
        estimate_sets(res, G_bar=0.05, max_iter=2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_estimate_always_validated(seed):
    rng = np.random.default_rng(seed)
    res = ResidualSet(rng.normal(size=(2000, 2)) * rng.uniform(0.1, 3, 2), rng.laplace(size=(2000, 2)))
    W, V, rep = estimate_sets(res)
    assert rep.passed
    lo_w = Zonotope.box(W.interval_hull()[1] / 1.1)
    lo_v = Zonotope.box(V.interval_hull()[1] / 1.1)
    assert validate_sets(lo_w, lo_v, res, 0.05, 0.05, 0.01).passed


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 3.0))
def test_enlarging_never_increases_risk(seed, k):
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=(500, 2))
    Z = Zonotope.box(rng.uniform(0.1, 2, 2))
    assert outside_fraction(Z.scale(k), samples) <= outside_fraction(Z, samples)


def test_fresh_data_outside_fraction():
    rng = np.random.default_rng(11)
    draw = lambda M: ResidualSet(rng.normal(size=(M, 2)), rng.normal(size=(M, 1)))
    W, V, rep = estimate_sets(draw(20_000))
    fresh = draw(20_000)
    assert outside_fraction(W, fresh.w_bar) <= 0.05 + 2 * rep.epsilon
    assert outside_fraction(V, fresh.v) <= 0.05 + 2 * rep.epsilon


def test_scale_bounds():
    dW, dV = scale_bounds(0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 3, 2)
    assert np.all(dW.interval_hull()[1] == 0) and np.all(dV.interval_hull()[1] == 0)
    dW, _ = scale_bounds(1, 0, 0, 0, 2, 0, 0.1, 0, 0, 0, 3, 2)
    np.testing.assert_allclose(dW.interval_hull()[1], 0.2)
    with pytest.raises(ValueError):
        scale_bounds(-1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1)


def test_nearest_neighbor_gap_bruteforce():
    P = np.random.default_rng(4).uniform(size=(1000, 3))
    D = np.linalg.norm(P[:, None] - P[None], axis=2)
    np.fill_diagonal(D, np.inf)
    assert max_nearest_neighbor_gap(P, block=128) == pytest.approx(D.min(axis=1).max(), rel=1e-9)


def test_report_table():
    res = ResidualSet(np.zeros((40, 1)), np.zeros((40, 1)))
    _, _, rep = estimate_sets(res, G_bar=0.5)
    text = rep.table()
    assert "W_bar" in text and "epsilon" in text
    assert rep.to_dict()["L"] == 40
