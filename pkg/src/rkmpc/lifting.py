"""Observable dictionaries with origin resetting.

A dictionary maps a state ``x`` to ``Psi(x) = (x, psi_1(x), ...) - Psi'(0)``
so that ``Psi(0) = 0`` holds exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

KINDS = ("thinplate", "gaussian", "polyharmonic", "inverse_quadratic", "polynomial")
# kernels whose derivatives blow up at their own center
_SINGULAR_AT_CENTER = ("thinplate", "polyharmonic")


def _radial(kind: str, r: np.ndarray) -> np.ndarray:
    if kind == "gaussian":
        return np.exp(-r**2)
    if kind == "inverse_quadratic":
        return 1.0 / (1.0 + r**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.log(r)
        if kind == "thinplate":
            out = r**2 * logr
        elif kind == "polyharmonic":
            out = r * logr
        else:
            raise ValueError(f"not a radial kernel: {kind}")
    # continuous extension at r = 0
    return np.where(r > 0, out, 0.0)


def _radial_grad_factor(kind: str, r: np.ndarray) -> np.ndarray:
    """g(r) such that grad_x phi(|x - c|) = g(r) (x - c)."""
    if kind == "gaussian":
        return -2.0 * np.exp(-r**2)
    if kind == "inverse_quadratic":
        return -2.0 / (1.0 + r**2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "thinplate":
            out = 2.0 * np.log(r) + 1.0
            return np.where(r > 0, out, 0.0)
        if kind == "polyharmonic":
            out = (np.log(r) + 1.0) / r
            return np.where(r > 0, out, np.nan)
    raise ValueError(f"not a radial kernel: {kind}")


def monomial_exponents(state_dim: int, degree: int, skip_linear: bool) -> np.ndarray:
    exps = []
    lo = 2 if skip_linear else 1
    for deg in range(lo, degree + 1):
        for combo in itertools.combinations_with_replacement(range(state_dim), deg):
            e = np.zeros(state_dim, dtype=int)
            for i in combo:
                e[i] += 1
            exps.append(e)
    return np.array(exps, dtype=int).reshape(-1, state_dim)


@dataclass(frozen=True, eq=False)
class Dictionary:
    kind: str
    centers: np.ndarray
    state_dim: int
    includes_state: bool = True
    offsets: np.ndarray = field(default=None)
    degree: int = 0
    seed: int | None = None

    @property
    def n_features(self) -> int:
        if self.kind == "polynomial":
            return len(monomial_exponents(self.state_dim, self.degree, self.includes_state))
        return len(self.centers)

    @property
    def lifted_dim(self) -> int:
        return (self.state_dim if self.includes_state else 0) + self.n_features

    def raw_features(self, X: np.ndarray) -> np.ndarray:
        """Un-reset features ``psi'_i(x)`` for a ``(M, n)`` batch."""
        if self.kind == "polynomial":
            E = monomial_exponents(self.state_dim, self.degree, self.includes_state)
            return np.prod(X[:, None, :] ** E[None, :, :], axis=2)
        r = np.linalg.norm(X[:, None, :] - self.centers[None, :, :], axis=2)
        return _radial(self.kind, r)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "centers": self.centers.tolist(),
            "state_dim": self.state_dim,
            "includes_state": self.includes_state,
            "offsets": self.offsets.tolist(),
            "degree": self.degree,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Dictionary":
        d = build_dictionary(
            doc["kind"], doc["centers"], doc["state_dim"], doc["includes_state"],
            degree=doc.get("degree", 0), seed=doc.get("seed"),
        )
        if not np.allclose(d.offsets, doc["offsets"], rtol=0, atol=1e-12):
            raise ValueError("stored offsets disagree with recomputed ones")
        return d


def build_dictionary(kind: str, centers, state_dim: int, includes_state: bool = True,
                     degree: int = 0, seed: int | None = None) -> Dictionary:
    """Create a dictionary and cache ``psi'_i(0)`` for resetting.

    Raises ``ValueError`` on duplicate centers, on a center at the origin for
    kernels that are singular at their center, and on malformed inputs.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dictionary kind {kind!r}")
    if kind == "polynomial":
        if degree < 1:
            raise ValueError("polynomial dictionaries need degree >= 1")
        C = np.zeros((0, state_dim))
    else:
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        if C.size == 0:
            raise ValueError("kernel dictionaries need at least one center")
        if C.shape[1] != state_dim:
            raise ValueError(f"centers have dimension {C.shape[1]}, expected {state_dim}")
        diffs = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2)
        np.fill_diagonal(diffs, np.inf)
        if np.any(diffs == 0.0):
            raise ValueError("duplicate centers make the features linearly dependent")
        if kind in _SINGULAR_AT_CENTER and np.any(np.all(C == 0.0, axis=1)):
            raise ValueError(f"{kind} kernel centered at the origin is not differentiable there")
    d = Dictionary(kind, C, int(state_dim), bool(includes_state), None, int(degree), seed)
    offsets = d.raw_features(np.zeros((1, state_dim)))[0]
    object.__setattr__(d, "offsets", offsets)
    return d


def sample_centers(lower, upper, count: int, seed: int, min_dist_frac: float = 1e-3,
                   max_tries: int = 10000) -> np.ndarray:
    """Uniform random centers in a box with a minimum pairwise-distance rule."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    rng = np.random.default_rng(seed)
    min_dist = min_dist_frac * np.linalg.norm(hi - lo)
    out: list[np.ndarray] = []
    for _ in range(max_tries):
        c = rng.uniform(lo, hi)
        if all(np.linalg.norm(c - o) >= min_dist for o in out) and np.linalg.norm(c) >= min_dist:
            out.append(c)
            if len(out) == count:
                return np.array(out)
    raise RuntimeError("could not place centers with the requested separation")


def lift(d: Dictionary, x) -> np.ndarray:
    """Evaluate ``Psi``; accepts a single state or a ``(M, n)`` batch."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != d.state_dim:
        raise ValueError(f"state has dimension {X.shape[1]}, expected {d.state_dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite state")
    feats = d.raw_features(X) - d.offsets
    S = np.hstack([X, feats]) if d.includes_state else feats
    return S[0] if single else S


def jacobian(d: Dictionary, x) -> np.ndarray:
    """Analytic ``dPsi/dx`` with shape ``(n_psi, n)``; NaN where undefined."""
    x = np.asarray(x, dtype=float).ravel()
    n = d.state_dim
    if d.kind == "polynomial":
        E = monomial_exponents(n, d.degree, d.includes_state)
        J = np.zeros((len(E), n))
        for j in range(n):
            Ej = E.copy()
            coef = Ej[:, j].astype(float)
            Ej[:, j] = np.maximum(Ej[:, j] - 1, 0)
            J[:, j] = coef * np.prod(x ** Ej, axis=1)
    else:
        diff = x[None, :] - d.centers
        r = np.linalg.norm(diff, axis=1)
        J = _radial_grad_factor(d.kind, r)[:, None] * diff
    if d.includes_state:
        J = np.vstack([np.eye(n), J])
    return J


def finite_difference_jacobian(d: Dictionary, x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    cols = []
    for j in range(d.state_dim):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((lift(d, x + e) - lift(d, x - e)) / (2 * h))
    return np.column_stack(cols)


@dataclass
class RankReport:
    passed: bool
    min_rank: int
    worst_condition: float
    worst_sample: np.ndarray | None
    undefined_samples: list = field(default_factory=list)
    rank_deficient_samples: list = field(default_factory=list)


def rank_check(d: Dictionary, samples, tol: float = 1e-9) -> RankReport:
    """Check that the Jacobian of ``Psi`` has full column rank ``n`` at every sample."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(X) == 0:
        raise ValueError("rank_check needs at least one sample")
    n = d.state_dim
    min_rank = n
    worst_cond, worst_x = 0.0, None
    undefined, deficient = [], []
    for x in X:
        J = jacobian(d, x)
        if not np.all(np.isfinite(J)):
            undefined.append(x.copy())
            continue
        s = np.linalg.svd(J, compute_uv=False)
        rank = int(np.sum(s > tol * max(1.0, s[0])))
        cond = s[0] / s[-1] if s[-1] > 0 else np.inf
        if rank < n:
            deficient.append(x.copy())
        min_rank = min(min_rank, rank)
        if cond > worst_cond:
            worst_cond, worst_x = cond, x.copy()
    return RankReport(min_rank == n and not deficient, min_rank, worst_cond, worst_x, undefined, deficient)


def grid_lipschitz(d: Dictionary, lower, upper, points_per_axis: int = 30) -> float:
    """Lipschitz estimate of ``Psi`` from Jacobian spectral norms on a grid."""
    axes = [np.linspace(l, u, points_per_axis) for l, u in zip(lower, upper)]
    grid = np.array(np.meshgrid(*axes)).reshape(len(axes), -1).T
    best = 0.0
    for x in grid:
        J = jacobian(d, x)
        if np.all(np.isfinite(J)):
            best = max(best, float(np.linalg.norm(J, 2)))
    return best
