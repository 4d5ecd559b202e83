"""Data-driven identification of the lifted linear predictor.

Fits ``s+ ≈ A s + B u + D w_hat`` and ``x ≈ C s`` by ridge regression, the
Lipschitz-regularized variant, and the stabilizability / observability
diagnostics the controller design relies on.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .lifting import Dictionary, lift

log = logging.getLogger(__name__)


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, msg, rank=None, size=None):
        super().__init__(msg)
        self.rank = rank
        self.size = size


@dataclass
class Dataset:
    """Tuples ``(x_i, u_i, w_hat_i, x_i+)`` stored row-wise."""

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    xp: np.ndarray
    split: str = "fit"
    seed: int | None = None
    _lift_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        M = self.x.shape[0]
        self.u = np.asarray(self.u, dtype=float).reshape(M, -1)
        self.w = np.asarray(self.w, dtype=float).reshape(M, -1)
        self.xp = np.asarray(self.xp, dtype=float).reshape(M, -1)
        n = self.x.shape[1]
        if self.w.shape[1] != n or self.xp.shape[1] != n:
            raise ValueError("w and x+ must have the state dimension")

    def __len__(self):
        return self.x.shape[0]

    @property
    def state_dim(self) -> int:
        return self.x.shape[1]

    @property
    def input_dim(self) -> int:
        return self.u.shape[1]

    def lifted(self, d: Dictionary) -> tuple[np.ndarray, np.ndarray]:
        key = id(d)
        if key not in self._lift_cache:
            self._lift_cache.clear()
            self._lift_cache[key] = (d, lift(d, self.x), lift(d, self.xp))
        _, S, Sp = self._lift_cache[key]
        return S, Sp

    def header(self) -> list[str]:
        n, m = self.state_dim, self.input_dim
        return ([f"x_{i+1}" for i in range(n)] + [f"u_{i+1}" for i in range(m)]
                + [f"w_{i+1}" for i in range(n)] + [f"xp_{i+1}" for i in range(n)])

    def to_csv(self, path) -> None:
        data = np.hstack([self.x, self.u, self.w, self.xp])
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.header())
            for row in data:
                wr.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, split: str = "fit", seed: int | None = None) -> "Dataset":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            rows = np.array([[float(v) for v in r] for r in rd], dtype=float)
        n = sum(h.startswith("x_") for h in header)
        m = sum(h.startswith("u_") for h in header)
        rows = rows.reshape(-1, len(header))
        return cls(rows[:, :n], rows[:, n:n + m], rows[:, n + m:2 * n + m], rows[:, 2 * n + m:],
                   split=split, seed=seed)


@dataclass
class LiftedModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dictionary: Dictionary
    lipschitz: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_psi(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    def predict(self, s, u) -> np.ndarray:
        return self.A @ s + self.B @ np.atleast_1d(u)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(), "D": self.D.tolist(),
            "lipschitz": self.lipschitz,
            "dictionary": self.dictionary.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LiftedModel":
        d = Dictionary.from_dict(doc["dictionary"])
        arr = lambda k: np.atleast_2d(np.asarray(doc[k], dtype=float))
        B = np.asarray(doc["B"], dtype=float).reshape(len(doc["A"]), -1)
        D = np.asarray(doc["D"], dtype=float).reshape(len(doc["A"]), -1)
        return cls(arr("A"), B, arr("C"), D, d, doc.get("lipschitz"), doc.get("meta", {}))


def ridge_solve(G: np.ndarray, Y: np.ndarray, reg: float, weights: np.ndarray | None = None):
    """Solve ``min ||G Theta - Y||^2 + reg ||Theta||_F^2`` by a Cholesky solve
    of the normal equations; returns ``Theta`` with shape ``(cols(G), cols(Y))``."""
    if reg < 0:
        raise ValueError("regularization must be >= 0")
    if weights is not None:
        Gw = G * weights[:, None]
        N = G.T @ Gw
        rhs = Gw.T @ Y
    else:
        N = G.T @ G
        rhs = G.T @ Y
    N = N + reg * np.eye(N.shape[0])
    try:
        cf = sla.cho_factor(N, lower=False, check_finite=True)
    except np.linalg.LinAlgError:
        rank = np.linalg.matrix_rank(G)
        raise RankDeficientError(
            f"normal matrix singular (rank {rank} of {G.shape[1]}); use a positive regularization",
            rank, G.shape[1]) from None
    if reg == 0.0:
        s = np.linalg.svd(N, compute_uv=False)
        if s[-1] <= 1e-13 * s[0]:
            rank = np.linalg.matrix_rank(G)
            raise RankDeficientError(
                f"normal matrix numerically singular (rank {rank} of {G.shape[1]})", rank, G.shape[1])
    return sla.cho_solve(cf, rhs)


def _regressors(ds: Dataset, d: Dictionary) -> tuple[np.ndarray, np.ndarray]:
    S, Sp = ds.lifted(d)
    return np.hstack([S, ds.u, ds.w]), Sp


def _split_theta(theta_T: np.ndarray, n_psi: int, m: int):
    K = theta_T.T
    return K[:, :n_psi], K[:, n_psi:n_psi + m], K[:, n_psi + m:]


def fit_koopman(ds: Dataset, d: Dictionary, alpha: float):
    """Ridge fit of ``[A B D]``; returns the three blocks."""
    if len(ds) < d.lifted_dim + ds.input_dim + ds.state_dim:
        log.warning("dataset has fewer tuples (%d) than regressors", len(ds))
    G, Y = _regressors(ds, d)
    theta = ridge_solve(G, Y, alpha)
    return _split_theta(theta, d.lifted_dim, ds.input_dim)


def fit_output_map(ds: Dataset, d: Dictionary, beta: float) -> np.ndarray:
    S, _ = ds.lifted(d)
    return ridge_solve(S, ds.x, beta).T


def nearest_neighbor_pairs(Z: np.ndarray, budget: int, seed: int = 0, k: int = 4) -> np.ndarray:
    """Pairs (i, j), i < j, mostly nearest neighbours in ``Z`` plus random pairs."""
    M = len(Z)
    if M < 2:
        return np.zeros((0, 2), dtype=int)
    rng = np.random.default_rng(seed)
    k = min(k, M - 1)
    _, idx = cKDTree(Z).query(Z, k=k + 1)
    nn = np.column_stack([np.repeat(np.arange(M), k), idx[:, 1:].ravel()])
    n_rand = max(budget // 4, 1)
    rnd = rng.integers(0, M, size=(n_rand, 2))
    pairs = np.vstack([nn, rnd])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0)
    if len(pairs) > budget:
        pairs = pairs[rng.choice(len(pairs), size=budget, replace=False)]
        pairs = pairs[np.lexsort(pairs.T[::-1])]
    return pairs


def lipschitz_lp(r: np.ndarray, gaps: np.ndarray, weights) -> tuple[np.ndarray, np.ndarray]:
    """Tightest weighted Lipschitz constants: ``min w.L`` s.t. ``gaps @ L >= r``, ``L >= 0``.

    Returns the constants and the constraint multipliers.
    """
    weights = np.asarray(weights, dtype=float)
    res = linprog(weights, A_ub=-gaps, b_ub=-r, bounds=[(0, None)] * gaps.shape[1], method="highs")
    if res.status != 0:
        raise RuntimeError(f"Lipschitz LP failed: {res.message}")
    duals = -res.ineqlin.marginals if res.ineqlin is not None else np.zeros(len(r))
    return res.x, np.maximum(duals, 0.0)


@dataclass
class LipschitzFit:
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    L_s: float
    L_u: float
    L_w: float
    converged: bool
    iterations: int
    objective: float
    pairs: np.ndarray = field(repr=False)


def fit_lipschitz_regularized(ds: Dataset, d: Dictionary, alpha: float, alpha_s: float,
                              alpha_u: float, alpha_w: float, pair_budget: int = 50_000,
                              max_iter: int = 50, tol: float = 1e-8, seed: int = 0) -> LipschitzFit:
    """Ridge fit penalized by weighted residual-Lipschitz constants.

    Alternates a majorize-minimize weighted least-squares step on the pairs
    that bind the Lipschitz LP with an exact LP update of ``(L_s, L_u, L_w)``.
    Only ``pair_budget`` pairs (nearest neighbours first) are constrained.
    """
    if pair_budget < 1:
        raise ValueError("pair_budget must be >= 1")
    G, Y = _regressors(ds, d)
    S, _ = ds.lifted(d)
    n_psi, m = d.lifted_dim, ds.input_dim
    pairs = nearest_neighbor_pairs(G, pair_budget, seed=seed)
    i, j = pairs[:, 0], pairs[:, 1]
    gaps = np.column_stack([
        np.linalg.norm(S[i] - S[j], axis=1),
        np.linalg.norm(ds.u[i] - ds.u[j], axis=1),
        np.linalg.norm(ds.w[i] - ds.w[j], axis=1),
    ])
    wts = np.array([alpha_s, alpha_u, alpha_w])

    def evaluate(theta):
        R = G @ theta - Y
        r = np.linalg.norm(R[i] - R[j], axis=1)
        L, lam = lipschitz_lp(r, gaps, wts)
        V = float(np.sum(R**2) + alpha * np.sum(theta**2))
        return V + float(wts @ L), L, lam, r

    theta = ridge_solve(G, Y, alpha)
    obj, L, lam, r = evaluate(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        act = lam > 0
        if not np.any(act):
            converged = True
            break
        # r_ij <= (r_ij^2 + r0^2) / (2 r0): quadratic majorizer of lam_ij r_ij
        r0 = np.maximum(r[act], 1e-12)
        cw = lam[act] / (2.0 * r0)
        dG = G[i[act]] - G[j[act]]
        dY = Y[i[act]] - Y[j[act]]
        N = G.T @ G + alpha * np.eye(G.shape[1]) + dG.T @ (dG * cw[:, None])
        rhs = G.T @ Y + dG.T @ (dY * cw[:, None])
        cand = sla.solve(N, rhs, assume_a="pos")
        new_obj, L_new, lam_new, r_new = evaluate(cand)
        if new_obj > obj - tol:
            converged = True
            break
        theta, obj, L, lam, r = cand, new_obj, L_new, lam_new, r_new
    A, B, D = _split_theta(theta, n_psi, m)
    if not converged:
        log.warning("Lipschitz-regularized fit hit the iteration cap (%d)", max_iter)
    return LipschitzFit(A, B, D, float(L[0]), float(L[1]), float(L[2]), converged, it, obj, pairs)


def lipschitz_violation(fit: LipschitzFit, ds: Dataset, d: Dictionary) -> float:
    """Largest violation of the pairwise constraints by the returned constants."""
    G, Y = _regressors(ds, d)
    S, _ = ds.lifted(d)
    theta = np.hstack([fit.A, fit.B, fit.D]).T
    R = G @ theta - Y
    i, j = fit.pairs[:, 0], fit.pairs[:, 1]
    lhs = np.linalg.norm(R[i] - R[j], axis=1)
    rhs = (fit.L_s * np.linalg.norm(S[i] - S[j], axis=1) + fit.L_u * np.linalg.norm(ds.u[i] - ds.u[j], axis=1)
           + fit.L_w * np.linalg.norm(ds.w[i] - ds.w[j], axis=1))
    return float(np.max(lhs - rhs)) if len(lhs) else 0.0


def identify(ds: Dataset, d: Dictionary, alpha: float = 1e-6, beta: float = 1e-6) -> LiftedModel:
    A, B, D = fit_koopman(ds, d, alpha)
    C = fit_output_map(ds, d, beta)
    S, Sp = ds.lifted(d)
    res_s = Sp - (S @ A.T + ds.u @ B.T + ds.w @ D.T)
    res_x = ds.x - S @ C.T
    meta = {"alpha": alpha, "beta": beta, "M": len(ds),
            "residual_norm_s": float(np.linalg.norm(res_s)), "residual_norm_x": float(np.linalg.norm(res_x))}
    return LiftedModel(A, B, C, D, d, None, meta)


def _rank(M, tol=1e-9) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0]))) if s.size else 0


@dataclass
class ModelReport:
    stabilizable: bool
    observable: bool
    spectral_radius: float
    unstable_modes: list
    observability_rank: int
    psi_origin_norm: float
    equilibrium_ok: bool

    @property
    def passed(self) -> bool:
        return self.stabilizable and self.observable and self.equilibrium_ok

    def to_dict(self) -> dict:
        return {
            "stabilizable": self.stabilizable, "observable": self.observable,
            "spectral_radius": self.spectral_radius,
            "unstable_modes": [[float(np.real(l)), float(np.imag(l))] for l in self.unstable_modes],
            "observability_rank": self.observability_rank,
            "psi_origin_norm": self.psi_origin_norm, "equilibrium_ok": self.equilibrium_ok,
            "passed": self.passed,
        }


def check_model(A, B, C, dictionary: Dictionary | None = None, tol: float = 1e-9,
                pbh_tol: float = 1e-6) -> ModelReport:
    """PBH stabilizability, observability rank and the origin-equilibrium check.

    ``pbh_tol`` is looser than ``tol`` because a ridge fit leaves couplings of
    order ``alpha`` into modes the input cannot actually move.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    eig = np.linalg.eigvals(A)
    unstable = [l for l in eig if abs(l) >= 1.0]
    stab = all(_rank(np.hstack([l * np.eye(n) - A, B]), pbh_tol) == n for l in unstable)
    O = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
    obs_rank = _rank(O, tol)
    psi0 = 0.0
    if dictionary is not None:
        psi0 = float(np.linalg.norm(lift(dictionary, np.zeros(dictionary.state_dim))))
    return ModelReport(stab, obs_rank == n, float(np.max(np.abs(eig))), unstable, obs_rank,
                       psi0, psi0 <= 1e-12)


def check_lifted_model(model: LiftedModel) -> ModelReport:
    return check_model(model.A, model.B, model.C, model.dictionary)
