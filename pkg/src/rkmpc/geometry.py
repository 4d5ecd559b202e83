"""Convex-set calculus on zonotopes and H-polytopes.

Zonotopes carry disturbance and tube sets (closed under Minkowski sums and
linear maps); H-polytopes carry constraint sets (closed under intersection
and Pontryagin difference).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

# Facet enumeration visits C(g, d-1) generator subsets; refuse beyond this.
MAX_FACET_CANDIDATES = 5000
MAX_HREP_DIM = 8
_TOL = 1e-9


class DimensionError(ValueError):
    pass


class SizeBoundError(ValueError):
    """Exact H-representation requested for a zonotope that is too large."""


class ConvergenceError(RuntimeError):
    pass


class DegenerateSetWarning(UserWarning):
    """Zonotope generators do not span the ambient space (flat set)."""


@dataclass(frozen=True, eq=False)
class Zonotope:
    """The set ``{center + G @ theta : |theta|_inf <= 1}``.

    ``generators`` is stored column-wise with shape ``(dim, g)``; ``g = 0``
    denotes a single point.
    """

    center: np.ndarray
    generators: np.ndarray = field(default=None)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float)).ravel()
        if self.generators is None:
            G = np.zeros((c.size, 0))
        else:
            G = np.asarray(self.generators, dtype=float)
            if G.ndim == 1:
                G = G.reshape(c.size, -1) if G.size else np.zeros((c.size, 0))
        if G.shape[0] != c.size:
            raise DimensionError(f"generators have dimension {G.shape[0]}, center has {c.size}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def n_generators(self) -> int:
        return self.generators.shape[1]

    @classmethod
    def box(cls, half_widths, center=None) -> "Zonotope":
        h = np.atleast_1d(np.asarray(half_widths, dtype=float))
        c = np.zeros(h.size) if center is None else center
        return cls(c, np.diag(h))

    @classmethod
    def point(cls, x) -> "Zonotope":
        return cls(x)

    def interval_hull(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.abs(self.generators).sum(axis=1)
        return self.center - r, self.center + r

    def scale(self, factor: float) -> "Zonotope":
        """Scale about the origin."""
        return Zonotope(factor * self.center, factor * self.generators)

    def compact(self, tol: float = 0.0) -> "Zonotope":
        """Drop generators with norm <= tol (exact for tol=0)."""
        keep = np.linalg.norm(self.generators, axis=0) > tol
        return Zonotope(self.center, self.generators[:, keep])

    def to_dict(self) -> dict:
        return {
            "kind": "zonotope",
            "center": self.center.tolist(),
            "generators": self.generators.T.tolist(),
        }


@dataclass(frozen=True, eq=False)
class HPolytope:
    """The set ``{x : A x <= b}``. May be empty or unbounded."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).ravel()
        if A.shape[0] != b.size:
            raise DimensionError(f"{A.shape[0]} normals but {b.size} offsets")
        if A.size and np.any(np.all(A == 0.0, axis=1)):
            raise ValueError("HPolytope rows must have nonzero normals")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    @classmethod
    def box(cls, lower, upper) -> "HPolytope":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        eye = np.eye(lo.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    def intersect(self, other: "HPolytope") -> "HPolytope":
        _check_dims(self.dim, other.dim)
        return HPolytope(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]))

    def preimage(self, M) -> "HPolytope":
        """``{x : M x in self}``; rows whose mapped normal vanishes are dropped
        when they are trivially satisfied (offset >= 0)."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        _check_dims(self.dim, M.shape[0])
        A = self.A @ M
        keep = np.linalg.norm(A, axis=1) > 1e-14
        if np.any(~keep & (self.b < 0)):
            # 0 <= b_i fails: the preimage is empty
            return HPolytope(np.vstack([np.eye(M.shape[1])[:1], -np.eye(M.shape[1])[:1]]), [-1.0, -1.0])
        return HPolytope(A[keep], self.b[keep])

    def chebyshev(self) -> tuple[np.ndarray | None, float]:
        """Center and radius of the largest inscribed ball; radius ``-inf`` if empty,
        ``inf`` if unbounded in every sense that matters for the LP."""
        norms = np.linalg.norm(self.A, axis=1)
        n = self.dim
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, norms[:, None]])
        bounds = [(None, None)] * n + [(None, 1e6)]
        res = linprog(c, A_ub=A_ub, b_ub=self.b, bounds=bounds, method="highs")
        if res.status == 2:
            return None, -math.inf
        if res.status != 0:
            return None, -math.inf
        return res.x[:n], float(res.x[-1])

    def is_empty(self, tol: float = 0.0) -> bool:
        """True when no point satisfies all inequalities with margin > tol."""
        _, r = self.chebyshev()
        return not r > tol

    def remove_redundant(self, tol: float = 1e-9) -> "HPolytope":
        A, b = _normalize_rows(self.A, self.b)
        A, b = _dedupe_rows(A, b)
        keep = np.ones(len(b), dtype=bool)
        for i in range(len(b)):
            keep[i] = False
            val = _lp_max(A[i], A[keep], b[keep])
            if val is None or val > b[i] + tol:
                keep[i] = True
        return HPolytope(A[keep], b[keep])

    def to_dict(self) -> dict:
        return {"kind": "hpolytope", "A": self.A.tolist(), "b": self.b.tolist()}


def set_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "zonotope":
        gens = np.asarray(doc["generators"], dtype=float)
        c = np.asarray(doc["center"], dtype=float)
        G = gens.T if gens.size else np.zeros((c.size, 0))
        return Zonotope(c, G)
    if kind == "hpolytope":
        A = np.asarray(doc["A"], dtype=float)
        return HPolytope(A.reshape(len(doc["b"]), -1), doc["b"])
    raise ValueError(f"unknown set kind {kind!r}")


def _check_dims(d1: int, d2: int):
    if d1 != d2:
        raise DimensionError(f"dimension mismatch: {d1} vs {d2}")


def _normalize_rows(A, b):
    norms = np.linalg.norm(A, axis=1)
    return A / norms[:, None], b / norms


def _dedupe_rows(A, b, decimals: int = 10):
    """Keep the tightest offset among (numerically) identical normals."""
    keys = np.round(A, decimals)
    order = np.lexsort(np.vstack([b, keys.T[::-1]]))
    out_idx = []
    last = None
    for i in order:
        k = keys[i].tobytes()
        if k != last:
            out_idx.append(i)
            last = k
    out_idx = np.array(sorted(out_idx), dtype=int)
    return A[out_idx], b[out_idx]


def _lp_max(c, A, b) -> float | None:
    """max c.x s.t. A x <= b; None if unbounded, -inf if infeasible."""
    if A.shape[0] == 0:
        return None
    res = linprog(-c, A_ub=A, b_ub=b, bounds=[(None, None)] * A.shape[1], method="highs")
    if res.status == 3:
        return None
    if res.status == 2:
        return -math.inf
    if res.status != 0:
        return None
    return float(-res.fun)


def support(Z: Zonotope, direction) -> float | np.ndarray:
    """Support function ``h_Z(d) = d.c + sum_i |d.g_i|``.

    ``direction`` may be a single vector or a ``(k, dim)`` stack of directions.
    """
    d = np.asarray(direction, dtype=float)
    if d.shape[-1] != Z.dim:
        raise DimensionError(f"direction has dimension {d.shape[-1]}, set has {Z.dim}")
    return d @ Z.center + np.abs(d @ Z.generators).sum(axis=-1)


def hpoly_support(P: HPolytope, direction) -> float | None:
    d = np.asarray(direction, dtype=float)
    _check_dims(P.dim, d.size)
    return _lp_max(d, P.A, P.b)


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    _check_dims(Z1.dim, Z2.dim)
    return Zonotope(Z1.center + Z2.center, np.hstack([Z1.generators, Z2.generators]))


def linear_map(M, Z: Zonotope) -> Zonotope:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != Z.dim:
        raise DimensionError(f"matrix has {M.shape[1]} columns, set has dimension {Z.dim}")
    return Zonotope(M @ Z.center, M @ Z.generators)


def pontryagin_diff(P: HPolytope, Z: Zonotope) -> HPolytope:
    """``P ⊖ Z``: each offset shrinks by the support of ``Z`` along its normal.

    The result may be empty; that is not an error here.
    """
    _check_dims(P.dim, Z.dim)
    return HPolytope(P.A, P.b - support(Z, P.A))


def _zonotope_contains_lp(Z: Zonotope, x, tol: float) -> bool:
    r = x - Z.center
    g = Z.n_generators
    if g == 0:
        return bool(np.all(np.abs(r) <= tol))
    # minimize t s.t. G theta = r, |theta_i| <= t
    c = np.zeros(g + 1)
    c[-1] = 1.0
    A_eq = np.hstack([Z.generators, np.zeros((Z.dim, 1))])
    eye = np.eye(g)
    A_ub = np.vstack([np.hstack([eye, -np.ones((g, 1))]), np.hstack([-eye, -np.ones((g, 1))])])
    res = linprog(
        c, A_ub=A_ub, b_ub=np.zeros(2 * g), A_eq=A_eq, b_eq=r,
        bounds=[(None, None)] * g + [(0, None)], method="highs",
    )
    if res.status != 0:
        return False
    return bool(res.x[-1] <= 1.0 + tol)


def contains(S: Zonotope | HPolytope, x, tol: float = _TOL) -> bool:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_dims(S.dim, x.size)
    if isinstance(S, HPolytope):
        return bool(np.all(S.A @ x <= S.b + tol))
    return _zonotope_contains_lp(S, x, tol)


def _nullvector(M) -> np.ndarray | None:
    """Unit vector orthogonal to the d-1 columns of M, or None if they are dependent."""
    d = M.shape[0]
    u, s, _ = np.linalg.svd(M, full_matrices=True)
    if s.size < d - 1 or s[-1] <= 1e-12 * max(1.0, s[0]):
        return None
    return u[:, -1]


def _facets_full_rank(center, G) -> tuple[np.ndarray, np.ndarray]:
    d, g = G.shape
    if d == 1:
        r = np.abs(G).sum()
        return np.array([[1.0], [-1.0]]), np.array([center[0] + r, -center[0] + r])
    normals = []
    for idx in itertools.combinations(range(g), d - 1):
        n = _nullvector(G[:, idx])
        if n is not None:
            normals.append(n)
    N = np.array(normals)
    N = np.vstack([N, -N])
    b = N @ center + np.abs(N @ G).sum(axis=1)
    return _dedupe_rows(N, b)


def zonotope_to_hrep(Z: Zonotope) -> HPolytope:
    """Exact H-representation by facet enumeration over generator subsets.

    Flat zonotopes are handled inside their affine hull (with equality
    constraints written as inequality pairs) and raise a
    ``DegenerateSetWarning``.
    """
    Zc = Z.compact()
    d, g = Zc.dim, Zc.n_generators
    if d > MAX_HREP_DIM:
        raise SizeBoundError(f"dimension {d} exceeds {MAX_HREP_DIM}; use an outer/inner box instead")
    G = Zc.generators
    rank = np.linalg.matrix_rank(G) if g else 0
    if rank and math.comb(g, rank - 1) > MAX_FACET_CANDIDATES:
        raise SizeBoundError(f"{g} generators in dimension {rank} exceed the facet enumeration bound")
    if rank == d:
        N, b = _facets_full_rank(Zc.center, G)
        return HPolytope(N, b)
    warnings.warn(f"zonotope spans {rank} of {d} dimensions", DegenerateSetWarning, stacklevel=2)
    u, _, _ = np.linalg.svd(G if g else np.zeros((d, 1)), full_matrices=True)
    basis, ortho = u[:, :rank], u[:, rank:]
    rows, offs = [], []
    if rank:
        Nr, br = _facets_full_rank(np.zeros(rank), basis.T @ G)
        rows.append(Nr @ basis.T)
        offs.append(br + Nr @ basis.T @ Zc.center)
    rows += [ortho.T, -ortho.T]
    offs += [ortho.T @ Zc.center, -ortho.T @ Zc.center]
    return HPolytope(np.vstack(rows), np.concatenate(offs))


def is_degenerate(Z: Zonotope) -> bool:
    return Z.n_generators == 0 or np.linalg.matrix_rank(Z.generators) < Z.dim


def direction_grid(dim: int, count: int = 1000, seed: int = 0) -> np.ndarray:
    """Unit directions: uniform angles in 2-D, seeded Gaussian samples otherwise."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = np.linspace(0.0, 2 * np.pi, 360, endpoint=False)
        return np.column_stack([np.cos(th), np.sin(th)])
    D = np.random.default_rng(seed).standard_normal((count, dim))
    D = np.vstack([D, np.eye(dim), -np.eye(dim)])
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def zonotope_in_zonotope(inner: Zonotope, outer: Zonotope, directions=None, tol: float = 1e-9) -> bool:
    """Containment checked on a direction grid (sound up to the grid)."""
    _check_dims(inner.dim, outer.dim)
    D = direction_grid(inner.dim) if directions is None else directions
    hi, ho = support(inner, D), support(outer, D)
    return bool(np.all(hi - ho <= tol * (1.0 + np.abs(ho))))


def spectral_radius(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def _scaling_factor(Fk_W: Zonotope, W_normals, W_offsets) -> float:
    """Smallest alpha with Fk_W ⊆ alpha * W (W contains the origin in its interior)."""
    return float(np.max(support(Fk_W, W_normals) / W_offsets))


def rpi_set(F, W: Zonotope, alpha_max: float = 0.05, k_max: int = 200) -> Zonotope:
    """Outer approximation of the minimal robust positively invariant set.

    Finds the smallest ``k`` with ``F^k W ⊆ alpha W`` and ``alpha <= alpha_max``
    and returns ``(1 - alpha)^-1 (W ⊕ F W ⊕ ... ⊕ F^(k-1) W)``, which satisfies
    ``F Z ⊕ W ⊆ Z``.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    _check_dims(F.shape[0], W.dim)
    if not 0.0 < alpha_max < 1.0:
        raise ValueError("alpha_max must lie in (0, 1)")
    if spectral_radius(F) >= 1.0:
        raise ValueError(f"F is not Schur stable (spectral radius {spectral_radius(F):.6g})")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSetWarning)
            H = zonotope_to_hrep(Zonotope(np.zeros(W.dim), W.generators))
        normals, offsets = H.A, H.b
    except SizeBoundError:
        normals = direction_grid(W.dim)
        offsets = support(Zonotope(np.zeros(W.dim), W.generators), normals)
    if np.any(offsets <= 0):
        raise ValueError("W must contain the origin in its interior")
    # centers propagate like generators; fold them in via the homogeneous form
    terms_c = [W.center]
    terms_G = [W.generators]
    Fk = np.eye(W.dim)
    for k in range(1, k_max + 1):
        Fk = F @ Fk
        FkW = Zonotope(np.zeros(W.dim), Fk @ W.generators)
        alpha = _scaling_factor(FkW, normals, offsets)
        if alpha <= alpha_max:
            scale = 1.0 / (1.0 - alpha)
            c = np.sum(terms_c, axis=0)
            G = np.hstack(terms_G)
            return Zonotope(scale * c, scale * G).compact()
        terms_c.append(Fk @ W.center)
        terms_G.append(Fk @ W.generators)
    raise ConvergenceError(f"no k <= {k_max} gives F^k W inside {alpha_max} W")


def rpi_violation(F, W: Zonotope, Z: Zonotope, directions=None) -> float:
    """Largest relative violation of ``F Z ⊕ W ⊆ Z`` over a direction grid."""
    D = direction_grid(Z.dim) if directions is None else directions
    lhs = support(minkowski_sum(linear_map(F, Z), W), D)
    hz = support(Z, D)
    return float(np.max((lhs - hz) / (1.0 + np.abs(hz))))


def max_invariant_set(A_cl, C_con: HPolytope, max_iter: int = 500, tol: float = 1e-9) -> HPolytope:
    """Maximal constraint-admissible positively invariant set (Gilbert–Tan).

    Adds the rows of ``{x : A_cl^t x in C_con}`` until a whole batch is
    redundant. The result satisfies ``A_cl Ω ⊆ Ω`` and ``Ω ⊆ C_con``.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    _check_dims(A_cl.shape[0], C_con.dim)
    H0, h0 = _normalize_rows(C_con.A, C_con.b)
    if np.any(h0 <= 0):
        raise ValueError("constraint set must contain the origin in its interior")
    A_rows, b_rows = H0.copy(), h0.copy()
    At = np.eye(A_cl.shape[0])
    for _ in range(max_iter):
        At = A_cl @ At
        cand = H0 @ At
        added = False
        for row, off in zip(cand, h0):
            nrm = np.linalg.norm(row)
            if nrm <= 1e-14:
                continue  # 0 <= off always holds
            row, off = row / nrm, off / nrm
            val = _lp_max(row, A_rows, b_rows)
            if val is None or val > off + tol:
                A_rows = np.vstack([A_rows, row])
                b_rows = np.append(b_rows, off)
                added = True
        if not added:
            return HPolytope(A_rows, b_rows).remove_redundant(tol)
    raise ConvergenceError(f"invariant set iteration did not converge in {max_iter} steps")


def inscribed_box(Z: Zonotope, max_generators: int = 400) -> Zonotope:
    """Largest axis-aligned box, proportional to Z's interval hull, inside Z.

    Uses the sufficient containment condition ``diag(t h) = G Gamma`` with
    ``|Gamma|_inf <= 1`` (row-sum norm), solved as a sparse LP in (t, Gamma).
    Only the ``max_generators`` longest generators enter the LP; dropping
    generators shrinks the zonotope, so the box stays inside ``Z``.
    """
    G = Z.generators
    if G.shape[1] > max_generators:
        order = np.argsort(-np.linalg.norm(G, axis=0), kind="stable")
        G = G[:, np.sort(order[:max_generators])]
        Z = Zonotope(Z.center, G)
    d, g = Z.dim, Z.n_generators
    h = np.abs(G).sum(axis=1)
    if g == 0 or np.any(h == 0):
        return Zonotope(Z.center, np.zeros((d, d)))
    # variables: Gamma[:, j] stacked by column j, then |Gamma| bounds P, then t
    nG = g * d
    nv = 2 * nG + 1
    c = np.zeros(nv)
    c[-1] = -1.0
    # column j of G Gamma equals t h_j e_j
    eq_rows, eq_cols, eq_vals = [], [], []
    for j in range(d):
        for i in range(d):
            r = j * d + i
            eq_rows.append(np.full(g, r))
            eq_cols.append(j * g + np.arange(g))
            eq_vals.append(G[i])
            if i == j:
                eq_rows.append(np.array([r]))
                eq_cols.append(np.array([nv - 1]))
                eq_vals.append(np.array([-h[j]]))
    A_eq = sp.csr_matrix((np.concatenate(eq_vals), (np.concatenate(eq_rows), np.concatenate(eq_cols))),
                         shape=(d * d, nv))
    b_eq = np.zeros(d * d)
    I = sp.identity(nG, format="csr")
    Zc = sp.csr_matrix((nG, 1))
    # row sums of |Gamma| over the d columns, one row per generator
    rowsum = sp.hstack([sp.csr_matrix((g, nG)), sp.hstack([sp.identity(g)] * d), sp.csr_matrix((g, 1))])
    A_ub = sp.vstack([sp.hstack([I, -I, Zc]), sp.hstack([-I, -I, Zc]), rowsum], format="csr")
    b_ub = np.concatenate([np.zeros(2 * nG), np.ones(g)])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * nG + [(0, None)] * nG + [(0, 1)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"inscribed box LP failed: {res.message}")
    t = float(res.x[-1])
    return Zonotope(Z.center, np.diag(t * h))


def box_to_hpolytope(Z: Zonotope) -> HPolytope:
    """Exact H-form of an axis-aligned box zonotope (diagonal generators)."""
    lo, hi = Z.interval_hull()
    return HPolytope.box(lo, hi)


def sample_hpolytope(P: HPolytope, count: int, rng, box_bound: float = 1e3, max_tries: int = 200) -> np.ndarray:
    """Rejection samples from a bounded H-polytope (via its bounding box)."""
    lo = np.empty(P.dim)
    hi = np.empty(P.dim)
    for i in range(P.dim):
        e = np.zeros(P.dim)
        e[i] = 1.0
        up = _lp_max(e, P.A, P.b)
        dn = _lp_max(-e, P.A, P.b)
        hi[i] = box_bound if up is None else up
        lo[i] = -box_bound if dn is None else -dn
    out = []
    n = 0
    for _ in range(max_tries):
        X = rng.uniform(lo, hi, size=(max(count, 64) * 4, P.dim))
        X = X[np.all(X @ P.A.T <= P.b, axis=1)]
        out.append(X)
        n += len(X)
        if n >= count:
            break
    return np.vstack(out)[:count]


def sample_zonotope(Z: Zonotope, count: int, rng) -> np.ndarray:
    theta = rng.uniform(-1.0, 1.0, size=(count, Z.n_generators))
    return Z.center + theta @ Z.generators.T
