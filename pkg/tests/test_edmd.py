import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkmpc.edmd import (
    Dataset,
    LiftedModel,
    RankDeficientError,
    check_model,
    fit_koopman,
    fit_lipschitz_regularized,
    fit_output_map,
    identify,
    lipschitz_lp,
    lipschitz_violation,
    ridge_solve,
)
from rkmpc.lifting import build_dictionary


def state_dict(n=2):
    """Dictionary whose lift is exactly the state."""
    return build_dictionary("polynomial", None, n, includes_state=False, degree=1)


def linear_data(seed, M=400, n=2, m=1, noise=0.0):
    rng = np.random.default_rng(seed)
    A0 = rng.normal(size=(n, n))
    A0 *= 0.9 / max(np.abs(np.linalg.eigvals(A0)))
    B0 = rng.normal(size=(n, m))
    D0 = rng.normal(size=(n, n))
    x = rng.uniform(-1, 1, size=(M, n))
    u = rng.uniform(-1, 1, size=(M, m))
    w = rng.uniform(-0.1, 0.1, size=(M, n))
    xp = x @ A0.T + u @ B0.T + w @ D0.T + noise * rng.normal(size=(M, n))
    return Dataset(x, u, w, xp, seed=seed), (A0, B0, D0)


def test_exact_recovery():
    ds, (A0, B0, D0) = linear_data(0)
    A, B, D = fit_koopman(ds, state_dict(), 1e-10)
    assert np.linalg.norm(A - A0) <= 1e-6
    assert np.linalg.norm(B - B0) <= 1e-6
    assert np.linalg.norm(D - D0) <= 1e-6


def test_exact_recovery_heldout_prediction():
    ds, (A0, B0, D0) = linear_data(1)
    A, B, D = fit_koopman(ds, state_dict(), 1e-10)
    test, _ = linear_data(1, M=50)
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, size=(50, 2))
    u = rng.uniform(-1, 1, size=(50, 1))
    w = rng.uniform(-0.1, 0.1, size=(50, 2))
    ref = x @ A0.T + u @ B0.T + w @ D0.T
    assert np.max(np.abs(x @ A.T + u @ B.T + w @ D.T - ref)) <= 1e-6


def test_zero_target_gives_zero_matrices():
    ds, _ = linear_data(2)
    ds = Dataset(ds.x, ds.u, ds.w, np.zeros_like(ds.xp))
    A, B, D = fit_koopman(ds, state_dict(), 1e-3)
    assert np.all(A == 0) and np.all(B == 0) and np.all(D == 0)


def test_ridge_limit_monotone():
    ds, _ = linear_data(3)
    norms = []
    for a in [1e-3, 1e0, 1e2, 1e4, 1e6, 1e8]:
        A, B, D = fit_koopman(ds, state_dict(), a)
        norms.append(np.linalg.norm(np.hstack([A, B, D])))
    assert all(x > y for x, y in zip(norms, norms[1:]))
    assert norms[-1] < 1e-3


def test_output_map_with_state():
    ds, _ = linear_data(4)
    d = build_dictionary("gaussian", [(0.5, 0.5), (-0.4, 0.2)], 2)
    C = fit_output_map(ds, d, 1e-10)
    np.testing.assert_allclose(C, np.hstack([np.eye(2), np.zeros((2, 2))]), atol=1e-6)


def test_output_map_zero_states():
    d = build_dictionary("gaussian", [(0.5, 0.5)], 2, includes_state=False)
    ds = Dataset(np.zeros((5, 2)), np.zeros((5, 1)), np.zeros((5, 2)), np.zeros((5, 2)))
    assert np.all(fit_output_map(ds, d, 1e-3) == 0)


def test_unregularized_rank_deficient_raises():
    d = state_dict()
    x = np.column_stack([np.linspace(-1, 1, 10)] * 2)   # collinear states
    ds = Dataset(x, np.zeros((10, 1)), np.zeros((10, 2)), x)
    with pytest.raises(RankDeficientError) as exc:
        fit_output_map(ds, d, 0.0)
    assert exc.value.rank == 1 and exc.value.size == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-8, 1e2))
def test_normal_equation_residual(seed, alpha):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(60, 5))
    Y = rng.normal(size=(60, 3))
    T = ridge_solve(G, Y, alpha)
    lhs = (G.T @ G + alpha * np.eye(5)) @ T - G.T @ Y
    assert np.linalg.norm(lhs) <= 1e-8 * np.linalg.norm(G.T @ Y)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_invariance(seed):
    ds, _ = linear_data(seed % 1000, M=100, noise=0.05)
    perm = np.random.default_rng(seed).permutation(len(ds))
    ds2 = Dataset(ds.x[perm], ds.u[perm], ds.w[perm], ds.xp[perm])
    d = build_dictionary("gaussian", [(0.2, 0.1)], 2)
    for a, b in zip(fit_koopman(ds, d, 1e-6), fit_koopman(ds2, d, 1e-6)):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-10)


def test_lipschitz_exact_linear_data():
    ds, _ = linear_data(5, M=200)
    fit = fit_lipschitz_regularized(ds, state_dict(), 1e-10, 1.0, 1.0, 1.0, pair_budget=500)
    assert fit.L_s == pytest.approx(0, abs=1e-6)
    assert fit.L_u == pytest.approx(0, abs=1e-6)
    assert fit.L_w == pytest.approx(0, abs=1e-6)


def test_lipschitz_single_pair_lp():
    L, lam = lipschitz_lp(np.array([2.0]), np.array([[1.0, 0.0, 0.0]]), [1e-3, 1.0, 1.0])
    np.testing.assert_allclose(L, [2.0, 0.0, 0.0], atol=1e-12)
    assert lam[0] > 0


def test_lipschitz_replay_certifies_pairs():
    ds, _ = linear_data(6, M=300, noise=0.05)
    d = build_dictionary("gaussian", [(0.2, 0.1), (-0.5, 0.4)], 2)
    fit = fit_lipschitz_regularized(ds, d, 1e-6, 1.0, 0.5, 0.5, pair_budget=800)
    assert len(fit.pairs) <= 800
    assert lipschitz_violation(fit, ds, d) <= 1e-8
    assert min(fit.L_s, fit.L_u, fit.L_w) >= 0


def test_lipschitz_penalty_does_not_increase_constants():
    ds, _ = linear_data(7, M=300, noise=0.05)
    d = build_dictionary("gaussian", [(0.2, 0.1)], 2)
    weak = fit_lipschitz_regularized(ds, d, 1e-6, 1e-6, 1e-6, 1e-6, pair_budget=500)
    strong = fit_lipschitz_regularized(ds, d, 1e-6, 10.0, 10.0, 10.0, pair_budget=500)
    w = np.array([10.0, 10.0, 10.0])
    assert w @ [strong.L_s, strong.L_u, strong.L_w] <= w @ [weak.L_s, weak.L_u, weak.L_w] + 1e-9


def test_check_model_counterexample():
    rep = check_model(np.diag([1.01, 1.0]), [[0.0], [1.0]], [[0.0, 1.0]])
    assert not rep.stabilizable
    assert not rep.observable


def test_check_model_trivial_pass():
    rep = check_model(0.5 * np.eye(3), np.eye(3), np.eye(3))
    assert rep.passed and rep.spectral_radius == pytest.approx(0.5)


def test_check_model_random_observable():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    A *= 0.8 / max(abs(np.linalg.eigvals(A)))
    C = rng.normal(size=(1, 4))
    O = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(4)])
    assert np.linalg.matrix_rank(O) == 4
    rep = check_model(A, rng.normal(size=(4, 1)), C)
    assert rep.observable and rep.stabilizable


def test_identify_and_model_roundtrip(tmp_path):
    ds, _ = linear_data(8, noise=0.01)
    d = build_dictionary("thinplate", [(0.381, -0.341), (0.267, -0.889)], 2)
    model = identify(ds, d)
    assert model.meta["M"] == len(ds)
    doc = model.to_dict()
    assert {"A", "B", "C", "D", "lipschitz", "dictionary"} <= set(doc)
    m2 = LiftedModel.from_dict(doc)
    np.testing.assert_array_equal(m2.A, model.A)
    np.testing.assert_array_equal(m2.D, model.D)


def test_dataset_csv_roundtrip(tmp_path):
    ds, _ = linear_data(9, M=20)
    p = tmp_path / "d.csv"
    ds.to_csv(p)
    assert p.read_text().splitlines()[0] == "x_1,x_2,u_1,w_1,w_2,xp_1,xp_2"
    ds2 = Dataset.from_csv(p)
    np.testing.assert_array_equal(ds2.xp, ds.xp)
    np.testing.assert_array_equal(ds2.u, ds.u)
