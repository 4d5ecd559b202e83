import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkmpc.lifting import (
    KINDS,
    Dictionary,
    build_dictionary,
    finite_difference_jacobian,
    grid_lipschitz,
    jacobian,
    lift,
    rank_check,
    sample_centers,
)

VDP_CENTERS = [(0.381, -0.341), (0.267, -0.889)]


def kernel_oracle(kind, r):
    """High-precision reference values for the radial kernels."""
    r = mpmath.mpf(r)
    if kind == "thinplate":
        return 0 if r == 0 else r**2 * mpmath.log(r)
    if kind == "polyharmonic":
        return 0 if r == 0 else r * mpmath.log(r)
    if kind == "gaussian":
        return mpmath.exp(-r**2)
    if kind == "inverse_quadratic":
        return 1 / (1 + r**2)
    raise ValueError(kind)


def all_kind_dicts():
    cs = [(1.0, 0.5), (-0.3, 0.8), (0.2, -0.6)]
    out = [build_dictionary(k, cs, 2) for k in KINDS if k != "polynomial"]
    out.append(build_dictionary("polynomial", None, 2, degree=3))
    out.append(build_dictionary("gaussian", cs, 2, includes_state=False))
    return out


def test_gaussian_reset_value():
    d = build_dictionary("gaussian", [(1.0, 0.0)], 2, includes_state=False)
    assert d.raw_features(np.array([[1.0, 0.0]]))[0, 0] == 1.0
    assert lift(d, [1.0, 0.0])[0] == pytest.approx(1 - math.exp(-1), abs=1e-15)


@pytest.mark.parametrize("d", all_kind_dicts(), ids=lambda d: f"{d.kind}-{d.includes_state}")
def test_lift_origin_is_zero(d):
    np.testing.assert_array_equal(lift(d, np.zeros(2)), np.zeros(d.lifted_dim))


def test_thinplate_unit_distance_is_zero():
    d = build_dictionary("thinplate", [(0.5, 0.5)], 2, includes_state=False)
    assert d.raw_features(np.array([[1.5, 0.5]]))[0, 0] == 0.0


def test_vdp_dictionary_values():
    d = build_dictionary("thinplate", VDP_CENTERS, 2)
    x = np.array([1.5, -1.5])
    s = lift(d, x)
    assert d.lifted_dim == 4
    np.testing.assert_array_equal(s[:2], x)
    for i, c in enumerate(VDP_CENTERS):
        ref = kernel_oracle("thinplate", mpmath.norm(mpmath.matrix(x - c))) - kernel_oracle(
            "thinplate", mpmath.norm(mpmath.matrix(np.array(c))))
        assert s[2 + i] == pytest.approx(float(ref), rel=1e-13)


@pytest.mark.parametrize("kind", [k for k in KINDS if k != "polynomial"])
def test_kernels_match_oracle(kind):
    rng = np.random.default_rng(1)
    c = np.array([0.3, -0.2])
    d = build_dictionary(kind, [c], 2, includes_state=False)
    for x in rng.uniform(-2, 2, size=(20, 2)):
        r = float(np.linalg.norm(x - c))
        assert d.raw_features(x[None])[0, 0] == pytest.approx(float(kernel_oracle(kind, r)), rel=1e-12, abs=1e-15)


def test_kernel_value_at_center_is_zero():
    for kind in ("thinplate", "polyharmonic"):
        d = build_dictionary(kind, [(0.3, 0.3)], 2)
        assert d.raw_features(np.array([[0.3, 0.3]]))[0, 0] == 0.0


def test_build_errors():
    with pytest.raises(ValueError):
        build_dictionary("gaussian", [(1, 0), (1, 0)], 2)
    with pytest.raises(ValueError):
        build_dictionary("thinplate", [(0, 0)], 2)
    with pytest.raises(ValueError):
        build_dictionary("gaussian", [(1, 0, 0)], 2)
    with pytest.raises(ValueError):
        build_dictionary("cubic", [(1, 0)], 2)
    with pytest.raises(ValueError):
        build_dictionary("gaussian", [], 2)


def test_lift_rejects_bad_input():
    d = build_dictionary("gaussian", [(1, 0)], 2)
    with pytest.raises(ValueError):
        lift(d, [np.nan, 0])
    with pytest.raises(ValueError):
        lift(d, [0, 0, 0])


def test_lift_batch_matches_single():
    d = build_dictionary("thinplate", VDP_CENTERS, 2)
    X = np.random.default_rng(0).uniform(-2, 2, size=(10, 2))
    np.testing.assert_allclose(lift(d, X), np.array([lift(d, x) for x in X]), rtol=0, atol=0)


@pytest.mark.parametrize("d", all_kind_dicts(), ids=lambda d: f"{d.kind}-{d.includes_state}")
def test_jacobian_matches_finite_differences(d):
    rng = np.random.default_rng(2)
    for x in rng.uniform(-2, 2, size=(100, 2)):
        J = jacobian(d, x)
        Jfd = finite_difference_jacobian(d, x)
        scale = np.maximum(np.abs(J), 1.0)
        assert np.all(np.abs(J - Jfd) <= 1e-6 * scale)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([k for k in KINDS if k != "polynomial"]),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_kernel_symmetry(kind, dx, dy):
    c = np.array([0.4, -0.7])
    d = build_dictionary(kind, [c], 2, includes_state=False)
    delta = np.array([dx, dy])
    a = d.raw_features((c + delta)[None])[0, 0]
    b = d.raw_features((c - delta)[None])[0, 0]
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_lipschitz_spot_check():
    d = build_dictionary("thinplate", VDP_CENTERS, 2)
    L = grid_lipschitz(d, [-2.5, -2.5], [2.5, 2.5], 40)
    rng = np.random.default_rng(5)
    X1 = rng.uniform(-2.5, 2.5, size=(500, 2))
    X2 = X1 + rng.normal(scale=0.05, size=X1.shape)
    X2 = np.clip(X2, -2.5, 2.5)
    lhs = np.linalg.norm(lift(d, X1) - lift(d, X2), axis=1)
    rhs = L * np.linalg.norm(X1 - X2, axis=1)
    # grid estimate may undershoot slightly between grid points
    assert np.all(lhs <= 1.05 * rhs + 1e-12)


def test_rank_gaussian_affinely_independent():
    d = build_dictionary("gaussian", [(1, 0), (0, 1), (-1, -1)], 2, includes_state=False)
    rep = rank_check(d, np.random.default_rng(0).uniform(-2, 2, size=(50, 2)))
    assert rep.passed and rep.min_rank == 2


def test_rank_collinear_centers_deficient():
    cs = [(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]
    d = build_dictionary("gaussian", cs, 2, includes_state=False)
    rep = rank_check(d, np.array(cs))
    assert not rep.passed
    assert rep.min_rank < 2


def test_rank_singular_kernel_reported_not_fatal():
    d = build_dictionary("polyharmonic", [(0.5, 0.5)], 2, includes_state=False)
    rep = rank_check(d, [[0.5, 0.5], [1.0, 0.0]])
    assert len(rep.undefined_samples) == 1


def test_rank_with_state_is_trivial():
    d = build_dictionary("thinplate", VDP_CENTERS, 2)
    assert rank_check(d, np.random.default_rng(0).uniform(-2, 2, size=(20, 2))).passed


def test_sample_centers_deterministic_and_separated():
    a = sample_centers([-1, -1], [1, 1], 10, seed=3)
    b = sample_centers([-1, -1], [1, 1], 10, seed=3)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= 1)
    D = np.linalg.norm(a[:, None] - a[None], axis=2) + np.eye(10)
    assert D.min() >= 1e-3 * np.sqrt(8)


def test_dictionary_roundtrip():
    d = build_dictionary("gaussian", VDP_CENTERS, 2, seed=4)
    d2 = Dictionary.from_dict(d.to_dict())
    np.testing.assert_array_equal(d2.offsets, d.offsets)
    assert d2.seed == 4
