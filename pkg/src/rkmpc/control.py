"""Tube MPC on the lifted predictor and the plain lifted-MPC baseline.

The nominal lifted system is steered by a condensed QP over the initial
nominal state and the nominal inputs; the applied control adds the error
feedback ``K (s - s_hat)``. Tightened constraints come from a robust
positively invariant error set.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .edmd import LiftedModel, check_model
from .geometry import (
    DegenerateSetWarning,
    HPolytope,
    SizeBoundError,
    Zonotope,
    box_to_hpolytope,
    contains,
    inscribed_box,
    linear_map,
    max_invariant_set,
    minkowski_sum,
    pontryagin_diff,
    rpi_set,
    set_from_dict,
    spectral_radius,
    zonotope_to_hrep,
)
from .lifting import lift
from .qp import OPTIMAL, AdmmSolver, QpProblem, condense

log = logging.getLogger(__name__)


class DesignError(RuntimeError):
    """Controller ingredients could not be computed."""


class AssumptionError(DesignError):
    """A tightened set is empty or does not contain the origin."""


class InfeasibleError(RuntimeError):
    def __init__(self, msg, step=None, status=None):
        super().__init__(msg)
        self.step = step
        self.status = status


class RegionOfAttractionError(InfeasibleError):
    """The first QP is infeasible: the initial state is outside the feasible region."""


class RecursiveFeasibilityError(InfeasibleError):
    """A QP became infeasible after a feasible start."""


def riccati(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000):
    """Fixed-point iteration of the discrete Riccati map; returns ``(K, P)``
    with the convention ``u = K x``."""
    A = np.atleast_2d(A)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    P = np.array(Q, dtype=float)
    for _ in range(max_iter):
        BtP = B.T @ P
        G = R + BtP @ B
        Pn = Q + A.T @ P @ A - (BtP @ A).T @ np.linalg.solve(G, BtP @ A)
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            break
        if np.linalg.norm(Pn - P) <= tol * max(1.0, np.linalg.norm(Pn)):
            P = Pn
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return K, P
        P = Pn
    raise DesignError("Riccati iteration did not converge")


def design_gain(A, B, Q_stage, R, ridge: float = 1e-9) -> np.ndarray:
    """Infinite-horizon LQR gain ``K`` (``u = K e``) with ``A + B K`` Schur."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    rep = check_model(A, B, np.eye(A.shape[0]))
    if not rep.stabilizable:
        raise DesignError("(A, B) is not stabilizable")
    Q = np.atleast_2d(np.asarray(Q_stage, dtype=float)) + ridge * np.eye(A.shape[0])
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K, _ = riccati(A, B, Q, R)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise DesignError(f"LQR gain is not stabilizing (spectral radius {rho:.6g})")
    return K


def solve_terminal_cost(F, rhs) -> np.ndarray:
    """Solve ``F' P F - P = -rhs`` through the Kronecker-vectorized system."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    n = F.shape[0]
    if spectral_radius(F) >= 1.0:
        raise DesignError("F is not Schur stable; the Lyapunov equation has no PSD solution")
    M = np.eye(n * n) - np.kron(F.T, F.T)
    P = np.linalg.solve(M, rhs.reshape(-1, order="F")).reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    res = lyapunov_residual(F, P, rhs)
    if res > 1e-8:
        # one refinement step on the vectorized system
        corr = np.linalg.solve(M, (-(F.T @ P @ F - P + rhs)).reshape(-1, order="F")).reshape(n, n, order="F")
        P = P + 0.5 * (corr + corr.T)
    return P


def lyapunov_residual(F, P, rhs) -> float:
    return float(np.linalg.norm(F.T @ P @ F - P + rhs))


def stability_gate(F, K, L_s: float, L_u: float) -> float:
    """Spectral radius of ``(L_s I + L_u K'K) |(I - F)^-1|``."""
    n = F.shape[0]
    nrm = np.linalg.norm(np.linalg.inv(np.eye(n) - F), 2)
    E = (L_s * np.eye(n) + L_u * K.T @ K) * nrm
    return spectral_radius(E)


@dataclass
class DesignedSets:
    Zs: Zonotope
    Zx: Zonotope
    S: HPolytope
    U_hat: HPolytope
    S_f: HPolytope
    tube: HPolytope
    tube_exact: bool
    Zx_hrep: HPolytope | None = None

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).to_dict() for k in ("Zs", "Zx", "S", "U_hat", "S_f", "tube")}
        out["tube_exact"] = self.tube_exact
        out["Zx_hrep"] = None if self.Zx_hrep is None else self.Zx_hrep.to_dict()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignedSets":
        return cls(*(set_from_dict(doc[k]) for k in ("Zs", "Zx", "S", "U_hat", "S_f", "tube")),
                   doc["tube_exact"], None if doc.get("Zx_hrep") is None else set_from_dict(doc["Zx_hrep"]))


def _zero_like(Z: Zonotope) -> bool:
    return Z.n_generators == 0 or not np.any(Z.generators)


def _hrep_or_none(Z: Zonotope) -> HPolytope | None:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSetWarning)
            return zonotope_to_hrep(Z)
    except SizeBoundError:
        return None


def _check_contains_origin(P: HPolytope, name: str):
    if np.any(P.b <= 0.0):
        raise AssumptionError(
            f"{name} is empty or does not contain the origin in its interior; collect more data "
            "or choose a richer observable dictionary so the uncertainty sets shrink")


def design_sets(model: LiftedModel, K, W_bar: Zonotope, V: Zonotope, X: HPolytope, U: HPolytope,
                alpha_max: float = 0.05, k_max: int = 200) -> DesignedSets:
    """Error tube, tightened constraints and terminal set."""
    A, B, C = model.A, model.B, model.C
    K = np.atleast_2d(K)
    F = A + B @ K
    n_psi = A.shape[0]
    if _zero_like(W_bar):
        Zs = Zonotope(np.zeros(n_psi), np.zeros((n_psi, 0)))
    else:
        Zs = rpi_set(F, W_bar, alpha_max, k_max)
    Zx = minkowski_sum(linear_map(C, Zs), V).compact()
    Xt = pontryagin_diff(X, Zx)
    _check_contains_origin(Xt, "the tightened state set")
    S = Xt.preimage(C)
    U_hat = pontryagin_diff(U, linear_map(K, Zs))
    _check_contains_origin(U_hat, "the tightened input set")
    con = S.intersect(U_hat.preimage(K))
    S_f = max_invariant_set(F, con)
    if np.any(S_f.b <= 0.0):
        raise AssumptionError("the terminal set does not contain the origin in its interior")
    if Zs.n_generators == 0:
        tube = HPolytope(np.vstack([np.eye(n_psi), -np.eye(n_psi)]), np.zeros(2 * n_psi))
        exact = True
    else:
        tube = _hrep_or_none(Zs)
        exact = tube is not None
        if tube is None:
            tube = box_to_hpolytope(inscribed_box(Zs))
            log.info("tube constraint uses an inscribed box (%d generators)", Zs.n_generators)
    return DesignedSets(Zs, Zx, S, U_hat, S_f, tube, exact, _hrep_or_none(Zx))


@dataclass
class StepResult:
    u: np.ndarray
    u_hat: np.ndarray
    s: np.ndarray
    s_hat: np.ndarray
    x_hat: np.ndarray
    predicted: np.ndarray
    inputs: np.ndarray
    qp_status: str
    value: float
    nominal_stage_cost: float
    tube_ok: bool
    iterations: int = 0


class _MpcBase:
    def _new_solver(self):
        self.cmpc = self._condense()
        self.solver = AdmmSolver(self.cmpc.H, self.cmpc.A_in)
        self.last = None
        self.dump_dir = None

    def reset(self):
        self.last = None

    def _dump(self, s, k):
        if self.dump_dir is None:
            return
        import os
        os.makedirs(self.dump_dir, exist_ok=True)
        self.cmpc.problem(s).dump(os.path.join(self.dump_dir, f"qp_step{k}.json"))

    def qp_problem(self, x) -> QpProblem:
        return self.cmpc.problem(lift(self.model.dictionary, x))


class TubeController(_MpcBase):
    """Online tube MPC with cached condensed QP and warm starts.

    ``penalty="lifted"`` uses ``s' Q_tilde s``; ``penalty="output"`` uses
    ``(C s)' Q (C s)``.
    """

    def __init__(self, model: LiftedModel, K, P, sets: DesignedSets, N: int, Q_stage, R,
                 penalty: str = "lifted", Q_out=None, gate: float | None = None):
        self.model = model
        self.K = np.atleast_2d(K)
        self.P = np.atleast_2d(P)
        self.sets = sets
        self.N = int(N)
        self.Q_stage = np.atleast_2d(Q_stage)
        self.R = np.atleast_2d(R)
        self.penalty = penalty
        self.Q_out = None if Q_out is None else np.atleast_2d(Q_out)
        self.gate = gate
        self._new_solver()

    @property
    def F(self):
        return self.model.A + self.model.B @ self.K

    def _condense(self):
        return condense(self.model.A, self.model.B, self.N, self.Q_stage, self.R, self.P,
                        stage_set=self.sets.S, input_set=self.sets.U_hat, terminal_set=self.sets.S_f,
                        tube_set=self.sets.tube, free_initial=True)

    @classmethod
    def design(cls, model: LiftedModel, W_bar: Zonotope, V: Zonotope, X: HPolytope, U: HPolytope, N: int,
               R, Q_tilde=None, Q=None, penalty: str = "lifted", alpha_max: float = 0.05,
               k_max: int = 200) -> "TubeController":
        if penalty == "lifted":
            if Q_tilde is None:
                raise ValueError("lifted penalty needs Q_tilde")
            Q_stage = np.atleast_2d(np.asarray(Q_tilde, dtype=float))
        elif penalty == "output":
            if Q is None:
                raise ValueError("output penalty needs Q")
            Q_stage = model.C.T @ np.atleast_2d(Q) @ model.C
        else:
            raise ValueError(f"unknown penalty mode {penalty!r}")
        R = np.atleast_2d(np.asarray(R, dtype=float))
        K = design_gain(model.A, model.B, Q_stage, R)
        F = model.A + model.B @ K
        P = solve_terminal_cost(F, Q_stage + K.T @ R @ K)
        sets = design_sets(model, K, W_bar, V, X, U, alpha_max, k_max)
        gate = None
        if model.lipschitz:
            gate = stability_gate(F, K, model.lipschitz["L_s"], model.lipschitz["L_u"])
        return cls(model, K, P, sets, N, Q_stage, R, penalty, Q, gate)

    def lyapunov_residual(self) -> float:
        return lyapunov_residual(self.F, self.P, self.Q_stage + self.K.T @ self.R @ self.K)

    def _warm(self):
        if self.last is None:
            return None
        z, y = self.last
        n, m, N = self.model.n_psi, self.model.n_inputs, self.N
        traj = self.cmpc.trajectory(z, np.zeros(n))
        ins = z[n:].reshape(N, m)
        zs = np.concatenate([traj[1], ins[1:].ravel(), self.K @ traj[N]])
        return {"z": zs, "y": y}

    def step(self, x, k: int | None = None) -> StepResult:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite measurement")
        s = lift(self.model.dictionary, x)
        f, b = self.cmpc.rhs(s)
        sol = self.solver.solve(f, b, self._warm())
        first = self.last is None if k is None else k == 0
        if sol.status != OPTIMAL:
            self._dump(s, k)
            cls = RegionOfAttractionError if first else RecursiveFeasibilityError
            raise cls(f"QP {sol.status} at step {k}", k, sol.status)
        self.last = (sol.z, sol.y_scaled)
        n = self.model.n_psi
        traj = self.cmpc.trajectory(sol.z, s)
        ins = self.cmpc.inputs(sol.z)
        s_hat, u_hat = traj[0], ins[0]
        u = u_hat + self.K @ (s - s_hat)
        x_hat = self.model.C @ s_hat
        ell = float(s_hat @ self.Q_stage @ s_hat + u_hat @ self.R @ u_hat)
        return StepResult(u, u_hat, s, s_hat, x_hat, traj, ins, sol.status, sol.objective,
                          ell, self.tube_contains(x - x_hat), sol.iterations)

    def tube_contains(self, dx, tol: float = 1e-7) -> bool:
        Zx = self.sets.Zx
        if self.sets.Zx_hrep is not None:
            return contains(self.sets.Zx_hrep, dx, tol)
        return contains(Zx, dx, tol)

    def to_dict(self) -> dict:
        return {
            "kind": "tube_mpc", "model": self.model.to_dict(), "K": self.K.tolist(), "P": self.P.tolist(),
            "sets": self.sets.to_dict(), "N": self.N, "Q_stage": self.Q_stage.tolist(), "R": self.R.tolist(),
            "penalty": self.penalty, "Q_out": None if self.Q_out is None else self.Q_out.tolist(),
            "gate": self.gate,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TubeController":
        return cls(LiftedModel.from_dict(doc["model"]), np.array(doc["K"]), np.array(doc["P"]),
                   DesignedSets.from_dict(doc["sets"]), doc["N"], np.array(doc["Q_stage"]), np.array(doc["R"]),
                   doc["penalty"], doc.get("Q_out"), doc.get("gate"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


class KmpcController(_MpcBase):
    """Lifted MPC without tube or tightening: ``s_hat_0 = Psi(x)``, cost on
    ``C s_hat``, constraints ``C s_hat_i in X`` (i = 1..N) and ``u_i in U``.
    An infeasible QP yields zero control."""

    def __init__(self, model: LiftedModel, N: int, Q, R, X: HPolytope, U: HPolytope, Q_N=None):
        self.model = model
        self.N = int(N)
        self.Q = np.atleast_2d(Q)
        self.R = np.atleast_2d(R)
        self.Q_N = self.Q if Q_N is None else np.atleast_2d(Q_N)
        self.X, self.U = X, U
        self.infeasible_steps: list = []
        self._new_solver()

    def _condense(self):
        C = self.model.C
        return condense(self.model.A, self.model.B, self.N, C.T @ self.Q @ C, self.R, C.T @ self.Q_N @ C,
                        stage_set=self.X.preimage(C), input_set=self.U, free_initial=False,
                        stage_indices=range(1, self.N + 1))

    def _warm(self):
        if self.last is None:
            return None
        z, y = self.last
        m = self.model.n_inputs
        return {"z": np.concatenate([z[m:], z[-m:]]), "y": y}

    def step(self, x, k: int | None = None) -> StepResult:
        x = np.asarray(x, dtype=float)
        s = lift(self.model.dictionary, x)
        f, b = self.cmpc.rhs(s)
        sol = self.solver.solve(f, b, self._warm())
        m = self.model.n_inputs
        if sol.status != OPTIMAL:
            self._dump(s, k)
            self.infeasible_steps.append(k)
            self.last = None
            zero = np.zeros(m)
            return StepResult(zero, zero, s, s, self.model.C @ s, np.tile(s, (self.N + 1, 1)),
                              np.zeros((self.N, m)), sol.status, float("nan"), 0.0, True, sol.iterations)
        self.last = (sol.z, sol.y_scaled)
        traj = self.cmpc.trajectory(sol.z, s)
        ins = self.cmpc.inputs(sol.z)
        value = sol.objective + self.cmpc.cost_constant(s)
        xh = self.model.C @ s
        ell = float(xh @ self.Q @ xh + ins[0] @ self.R @ ins[0])
        return StepResult(ins[0].copy(), ins[0].copy(), s, s, xh, traj, ins, sol.status, value, ell, True,
                          sol.iterations)


def kmpc_step(model: LiftedModel, x, N: int, Q, R, Q_N, X: HPolytope, U: HPolytope) -> np.ndarray:
    """One-shot baseline control (builds a fresh controller)."""
    return KmpcController(model, N, Q, R, X, U, Q_N).step(x, 0).u


def load_controller(doc: dict):
    if doc.get("kind") != "tube_mpc":
        raise ValueError("not a tube MPC design file")
    return TubeController.from_dict(doc)
