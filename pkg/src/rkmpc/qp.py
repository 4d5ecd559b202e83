"""Dense convex QP: ``min 1/2 z'Hz + f'z  s.t.  A_in z <= b_in``.

The solver is an operator-splitting (ADMM) iteration on the slack form with
a fixed penalty, diagonal row preconditioning and a cached factorization.
Iterates are periodically polished: the active set suggested by the dual
iterate is solved exactly from the KKT system and accepted only if every
KKT residual meets the tolerance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import HPolytope

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass(eq=False)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        H = 0.5 * (H + H.T)
        n = H.shape[0]
        f = np.asarray(self.f, dtype=float).ravel()
        A = np.asarray(self.A_in, dtype=float).reshape(-1, n)
        b = np.asarray(self.b_in, dtype=float).ravel()
        if f.size != n or A.shape[0] != b.size:
            raise ValueError("inconsistent QP dimensions")
        lam_min = np.linalg.eigvalsh(H)[0] if n else 0.0
        if lam_min < -1e-10 * max(1.0, np.abs(H).max()):
            raise ValueError(f"H is not positive semidefinite (min eigenvalue {lam_min:.3g})")
        if lam_min < 0:
            H = H - lam_min * np.eye(n)
        self.H, self.f, self.A_in, self.b_in = H, f, A, b

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "f": self.f.tolist(), "A_in": self.A_in.tolist(), "b_in": self.b_in.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "QpProblem":
        n = len(doc["f"])
        return cls(np.asarray(doc["H"], dtype=float).reshape(n, n), doc["f"],
                   np.asarray(doc["A_in"], dtype=float).reshape(-1, n), doc["b_in"])

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "QpProblem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    status: str
    kkt_residuals: tuple[float, float, float]
    iterations: int
    multipliers: np.ndarray = field(repr=False, default=None)
    y_scaled: np.ndarray = field(repr=False, default=None)
    slack: np.ndarray = field(repr=False, default=None)


def kkt_residuals(H, f, A, b, z, lam) -> tuple[float, float, float, float]:
    """(stationarity, primal violation, complementarity, dual violation)."""
    stat = float(np.max(np.abs(H @ z + f + A.T @ lam))) if z.size else 0.0
    g = A @ z - b
    prim = float(max(0.0, g.max())) if g.size else 0.0
    comp = float(abs(lam @ g)) if g.size else 0.0
    dual = float(max(0.0, -lam.min())) if lam.size else 0.0
    return stat, prim, comp, dual


class AdmmSolver:
    """Reusable solver for a fixed ``(H, A_in)`` with varying ``(f, b_in)``."""

    def __init__(self, H, A_in, rho: float = 1.0, sigma: float = 1e-6, relax: float = 1.6,
                 tol: float = 1e-8, max_iter: int = 200_000, check_every: int = 10):
        self.H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
        n = self.H.shape[0]
        self.A = np.asarray(A_in, dtype=float).reshape(-1, n)
        norms = np.linalg.norm(self.A, axis=1)
        norms[norms == 0] = 1.0
        self.d = 1.0 / norms
        self.As = self.A * self.d[:, None]
        self.rho, self.sigma, self.relax = rho, sigma, relax
        self.tol, self.max_iter, self.check_every = tol, max_iter, check_every
        K = self.H + sigma * np.eye(n) + rho * self.As.T @ self.As
        self.Kinv = np.linalg.inv(K)
        self.Kinv = 0.5 * (self.Kinv + self.Kinv.T)

    def _residuals(self, f, b, z, lam):
        return kkt_residuals(self.H, f, self.A, b, z, lam)

    def _accept(self, res) -> bool:
        return max(res) <= self.tol

    def _polish(self, f, b, active: np.ndarray, max_fix: int = 25):
        """Equality-constrained solve on a guessed active set with bounded
        add/drop corrections. Returns ``(z, lam)`` or ``None``."""
        n, m = self.H.shape[0], self.A.shape[0]
        act = active.copy()
        seen = set()
        for _ in range(max_fix):
            key = act.tobytes()
            if key in seen:
                return None
            seen.add(key)
            idx = np.flatnonzero(act)
            Aa = self.A[idx]
            k = len(idx)
            KKT = np.zeros((n + k, n + k))
            KKT[:n, :n] = self.H
            KKT[:n, n:] = Aa.T
            KKT[n:, :n] = Aa
            rhs = np.concatenate([-f, b[idx]])
            try:
                sol = np.linalg.solve(KKT, rhs)
                if not np.all(np.isfinite(sol)):
                    raise np.linalg.LinAlgError
                # one refinement step
                sol += np.linalg.solve(KKT, rhs - KKT @ sol)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
            z = sol[:n]
            lam = np.zeros(m)
            lam[idx] = sol[n:]
            g = self.A @ z - b
            viol = np.flatnonzero((g > self.tol) & ~act)
            neg = idx[lam[idx] < -self.tol]
            if viol.size == 0 and neg.size == 0:
                return z, np.maximum(lam, 0.0)
            if neg.size:
                act[neg[np.argmin(lam[neg])]] = False
            if viol.size:
                act[viol[np.argmax(g[viol])]] = True
        return None

    def solve(self, f, b, warm: dict | None = None) -> QpSolution:
        f = np.asarray(f, dtype=float)
        b = np.asarray(b, dtype=float)
        n, m = self.H.shape[0], self.A.shape[0]
        bs = b * self.d
        rho, sigma, a = self.rho, self.sigma, self.relax
        if warm is not None:
            x = np.asarray(warm["z"], dtype=float).copy()
            y = np.asarray(warm.get("y", np.zeros(m)), dtype=float).copy()
            zc = np.minimum(self.As @ x, bs)
        else:
            x = np.zeros(n)
            y = np.zeros(m)
            zc = np.minimum(self.As @ x, bs)

        def finish(z, lam, status, it):
            res = self._residuals(f, b, z, lam)
            return QpSolution(z, float(0.5 * z @ self.H @ z + f @ z), status,
                              (res[0], res[1], max(res[2], res[3])), it, lam, lam / self.d, None)

        if m == 0:
            z = np.linalg.lstsq(self.H, -f, rcond=None)[0]
            return finish(z, np.zeros(0), OPTIMAL, 0)

        if warm is not None:
            guess = (y > 0) | (self.As @ x >= bs - 1e-9)
            pol = self._polish(f, b, guess)
            if pol is not None and self._accept(self._residuals(f, b, *pol)):
                return finish(pol[0], pol[1], OPTIMAL, 0)

        best = None
        y_prev = y.copy()
        for it in range(1, self.max_iter + 1):
            xt = self.Kinv @ (sigma * x - f + self.As.T @ (rho * zc - y))
            zt = self.As @ xt
            x = a * xt + (1.0 - a) * x
            zr = a * zt + (1.0 - a) * zc
            zc = np.minimum(zr + y / rho, bs)
            y = y + rho * (zr - zc)
            if it % self.check_every:
                continue
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                # the cached factorization is too ill-conditioned to iterate on
                log.warning("ADMM iterates became non-finite at iteration %d", it)
                break
            lam = y * self.d
            res = self._residuals(f, b, x, lam)
            if self._accept(res):
                return finish(x, lam, OPTIMAL, it)
            score = max(res)
            if best is None or score < best[0]:
                best = (score, x.copy(), lam.copy())
            guess = (y > 0) | (self.As @ x >= bs - 1e-9)
            pol = self._polish(f, b, guess)
            if pol is not None and self._accept(self._residuals(f, b, *pol)):
                return finish(pol[0], pol[1], OPTIMAL, it)
            dy = y - y_prev
            y_prev = y.copy()
            ndy = np.max(np.abs(dy))
            if ndy > 0 and np.all(dy >= -1e-12 * ndy):
                if (np.max(np.abs(self.As.T @ dy)) <= 1e-6 * ndy and bs @ dy < -1e-6 * ndy):
                    return finish(x, lam, INFEASIBLE, it)
        if best is None:
            return finish(np.zeros(n), np.zeros(m), MAX_ITER, it)
        _, z, lam = best
        return finish(z, lam, MAX_ITER, it)


def solve(p: QpProblem, tol: float = 1e-8, max_iter: int = 200_000, warm: dict | None = None) -> QpSolution:
    return AdmmSolver(p.H, p.A_in, tol=tol, max_iter=max_iter).solve(p.f, p.b_in, warm)


@dataclass
class CondensedMpc:
    """Dense MPC QP whose data depend affinely on the measured lifted state.

    Decision vector ``z = (s_hat_0, u_0, ..., u_{N-1})`` when the initial
    nominal state is free, else ``z = (u_0, ..., u_{N-1})``. Predicted states
    are ``s_hat_i = Phi[i] z + Phi0[i] s``.
    """

    H: np.ndarray
    A_in: np.ndarray
    b_const: np.ndarray
    b_lin: np.ndarray
    f_lin: np.ndarray
    c_quad: np.ndarray
    Phi: np.ndarray
    Phi0: np.ndarray
    n_psi: int
    m: int
    N: int
    free_initial: bool

    def problem(self, s) -> QpProblem:
        return QpProblem(self.H, self.f_lin @ s, self.A_in, self.b_const + self.b_lin @ s)

    def rhs(self, s) -> tuple[np.ndarray, np.ndarray]:
        return self.f_lin @ s, self.b_const + self.b_lin @ s

    def cost_constant(self, s) -> float:
        return float(s @ self.c_quad @ s)

    def trajectory(self, z, s) -> np.ndarray:
        return np.einsum("ijk,k->ij", self.Phi, z) + np.einsum("ijk,k->ij", self.Phi0, s)

    def inputs(self, z) -> np.ndarray:
        off = self.n_psi if self.free_initial else 0
        return z[off:].reshape(self.N, self.m)


def _check_pd(M, name, strict=True):
    M = np.atleast_2d(M)
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    if (strict and ev[0] <= 0) or (not strict and ev[0] < -1e-12):
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")


def condense(A, B, N: int, Q_stage, R, P, stage_set: HPolytope | None = None,
             input_set: HPolytope | None = None, terminal_set: HPolytope | None = None,
             tube_set: HPolytope | None = None, free_initial: bool = True,
             stage_indices=None) -> CondensedMpc:
    """Eliminate the predicted states of ``s+ = A s + B u`` over ``N`` steps.

    Cost ``sum_{i<N} s_i'Q s_i + u_i'R u_i + s_N'P s_N``. ``stage_set`` applies
    to ``s_i`` for ``stage_indices`` (default ``0..N-1``), ``input_set`` to each
    ``u_i``, ``terminal_set`` to ``s_N`` and ``tube_set`` to ``s - s_hat_0``
    (free-initial form only).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    if N < 1:
        raise ValueError("horizon must be >= 1")
    Q_stage = np.atleast_2d(np.asarray(Q_stage, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if Q_stage.shape != (n, n) or R.shape != (m, m) or P.shape != (n, n):
        raise ValueError("weight dimensions do not match the dynamics")
    _check_pd(R, "R")
    _check_pd(Q_stage, "stage weight", strict=False)
    _check_pd(P, "terminal weight", strict=False)
    if tube_set is not None and not free_initial:
        raise ValueError("tube constraint needs a free initial nominal state")

    off = n if free_initial else 0
    nz = off + N * m
    Phi = np.zeros((N + 1, n, nz))
    Phi0 = np.zeros((N + 1, n, n))
    if free_initial:
        Phi[0, :, :n] = np.eye(n)
    else:
        Phi0[0] = np.eye(n)
    for i in range(N):
        Phi[i + 1] = A @ Phi[i]
        Phi[i + 1, :, off + i * m: off + (i + 1) * m] += B
        Phi0[i + 1] = A @ Phi0[i]

    H = np.zeros((nz, nz))
    f_lin = np.zeros((nz, n))
    c_quad = np.zeros((n, n))
    for i in range(N + 1):
        W = P if i == N else Q_stage
        H += 2.0 * Phi[i].T @ W @ Phi[i]
        f_lin += 2.0 * Phi[i].T @ W @ Phi0[i]
        c_quad += Phi0[i].T @ W @ Phi0[i]
    for i in range(N):
        sl = slice(off + i * m, off + (i + 1) * m)
        H[sl, sl] += 2.0 * R

    rows, consts, lins = [], [], []

    def add(Arow, bconst, blin):
        rows.append(Arow)
        consts.append(bconst)
        lins.append(blin)

    if stage_set is not None:
        idxs = range(N) if stage_indices is None else stage_indices
        for i in idxs:
            add(stage_set.A @ Phi[i], stage_set.b, -stage_set.A @ Phi0[i])
    if input_set is not None:
        for i in range(N):
            E = np.zeros((m, nz))
            E[:, off + i * m: off + (i + 1) * m] = np.eye(m)
            add(input_set.A @ E, input_set.b, np.zeros((input_set.n_constraints, n)))
    if terminal_set is not None:
        add(terminal_set.A @ Phi[N], terminal_set.b, -terminal_set.A @ Phi0[N])
    if tube_set is not None:
        # H_Z (s - s_hat_0) <= h_Z
        add(-tube_set.A @ Phi[0], tube_set.b, -tube_set.A)
    if rows:
        A_in = np.vstack(rows)
        b_const = np.concatenate(consts)
        b_lin = np.vstack(lins)
    else:
        A_in = np.zeros((0, nz))
        b_const = np.zeros(0)
        b_lin = np.zeros((0, n))
    # drop rows that do not involve the decision vector (kept feasible upstream)
    keep = np.linalg.norm(A_in, axis=1) > 1e-14
    return CondensedMpc(0.5 * (H + H.T), A_in[keep], b_const[keep], b_lin[keep], f_lin, c_quad,
                        Phi, Phi0, n, m, N, free_initial)
