"""Empirical uncertainty sets for the lifted predictor.

Residuals of the nominal one-step prediction are collected on held-out data,
candidate boxes are grown until the Hoeffding validation inequality holds,
and the validated boxes are inflated by ``gamma``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .edmd import Dataset, LiftedModel
from .geometry import Zonotope

log = logging.getLogger(__name__)

MIN_HALF_WIDTH = 1e-9


class ValidationCapError(RuntimeError):
    """The grow-and-validate loop ran out of iterations."""


@dataclass
class ResidualSet:
    """Stacked residual samples: ``w_bar`` rows (n_psi) and ``v`` rows (n)."""

    w_bar: np.ndarray
    v: np.ndarray

    def __len__(self):
        return len(self.w_bar)


def residuals(model: LiftedModel, ds: Dataset, allow_fit_split: bool = False) -> ResidualSet:
    """``w_bar = Psi(x+) - (A Psi(x) + B u)`` and ``v = x - C Psi(x)`` per tuple.

    The disturbance term ``D w_hat`` is left out of the prediction, so it is
    absorbed into ``w_bar``. Datasets tagged ``split="fit"`` are refused unless
    ``allow_fit_split`` is set.
    """
    if ds.split == "fit" and not allow_fit_split:
        raise ValueError("validation residuals must come from a dataset disjoint from the fitting data")
    d = model.dictionary
    if ds.state_dim != d.state_dim:
        raise ValueError("dataset and model dictionary disagree on the state dimension")
    S, Sp = ds.lifted(d)
    w_bar = Sp - S @ model.A.T - ds.u @ model.B.T
    v = ds.x - S @ model.C.T
    return ResidualSet(w_bar, v)


def hoeffding_epsilon(L: int, delta_r: float) -> float:
    """``sqrt(-log(delta_r / 2) / (2 L))`` (natural log)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if not 0.0 < delta_r < 1.0:
        raise ValueError("delta_r must lie in (0, 1)")
    return math.sqrt(-math.log(0.5 * delta_r) / (2.0 * L))


def outside_fraction(Z: Zonotope, samples: np.ndarray, tol: float = 0.0) -> float:
    """Fraction of samples outside an axis-aligned box zonotope."""
    lo, hi = Z.interval_hull()
    inside = np.all((samples >= lo - tol) & (samples <= hi + tol), axis=1)
    return float(np.count_nonzero(~inside) / len(samples)) if len(samples) else 0.0


@dataclass
class ValidationReport:
    empirical_risk_w: float
    empirical_risk_v: float
    epsilon: float
    passed_w: bool
    passed_v: bool
    L: int
    delta_r: float
    G_bar_w: float
    G_bar_v: float
    gamma_w: float = 1.0
    gamma_v: float = 1.0
    iterations: int = 0

    @property
    def passed(self) -> bool:
        return self.passed_w and self.passed_v

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("set", "risk", "bound", "epsilon", "passed", "gamma"),
            ("W_bar", f"{self.empirical_risk_w:.6f}", f"{self.G_bar_w:.4f}", f"{self.epsilon:.6f}",
             str(self.passed_w), f"{self.gamma_w:.3f}"),
            ("V", f"{self.empirical_risk_v:.6f}", f"{self.G_bar_v:.4f}", f"{self.epsilon:.6f}",
             str(self.passed_v), f"{self.gamma_v:.3f}"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.append(f"L = {self.L}, delta_r = {self.delta_r}, iterations = {self.iterations}")
        return "\n".join(lines)


def validate_sets(W_cand: Zonotope, V_cand: Zonotope, res: ResidualSet, G_bar_w: float,
                  G_bar_v: float, delta_r: float) -> ValidationReport:
    """Check ``G_bar >= G_hat + epsilon`` where ``G_hat`` is the outside fraction."""
    L = len(res)
    if L < 30:
        log.warning("only %d residuals; the Hoeffding margin is vacuous", L)
    eps = hoeffding_epsilon(L, delta_r)
    gw = outside_fraction(W_cand, res.w_bar)
    gv = outside_fraction(V_cand, res.v)
    return ValidationReport(gw, gv, eps, G_bar_w >= gw + eps, G_bar_v >= gv + eps, L, delta_r,
                            G_bar_w, G_bar_v)


def _initial_box(samples: np.ndarray, G_bar: float) -> np.ndarray:
    """Per-coordinate symmetric half-widths from the (1 - G_bar) quantile of |r|."""
    hw = np.quantile(np.abs(samples), 1.0 - G_bar, axis=0)
    return np.maximum(hw, MIN_HALF_WIDTH)


def estimate_sets(res: ResidualSet, G_bar: float = 0.05, delta_r: float = 0.01, gamma_w: float = 1.1,
                  gamma_v: float = 1.1, growth: float = 1.1, max_iter: int = 100):
    """Grow candidate boxes until validated, then inflate by ``gamma``.

    Returns ``(W_bar, V, report)``; the report describes the validated
    (pre-inflation) candidates.
    """
    if len(res) == 0:
        raise ValueError("no residuals")
    if growth <= 1.0:
        raise ValueError("growth must exceed 1")
    if gamma_w < 1.0 or gamma_v < 1.0:
        raise ValueError("gamma factors must be >= 1")
    hw_w = _initial_box(res.w_bar, G_bar)
    hw_v = _initial_box(res.v, G_bar)
    for it in range(max_iter + 1):
        Wc, Vc = Zonotope.box(hw_w), Zonotope.box(hw_v)
        rep = validate_sets(Wc, Vc, res, G_bar, G_bar, delta_r)
        if rep.passed:
            rep.gamma_w, rep.gamma_v, rep.iterations = gamma_w, gamma_v, it
            return Zonotope.box(gamma_w * hw_w), Zonotope.box(gamma_v * hw_v), rep
        if not rep.passed_w:
            hw_w = hw_w * growth
        if not rep.passed_v:
            hw_v = hw_v * growth
    raise ValidationCapError(
        f"sets not validated after {max_iter} enlargements; the data do not match the model")


def scale_bounds(L_s, L_u, L_dw, L_w, L_psi, L_v, d_x, d_u, d_dw, d_w, n_psi: int, n: int):
    """Analytic inflation boxes circumscribing the balls of radius
    ``L_s L_psi d_x + L_u d_u + L_dw d_dw + L_w d_w`` (lifted) and ``L_v d_x``."""
    vals = (L_s, L_u, L_dw, L_w, L_psi, L_v, d_x, d_u, d_dw, d_w)
    if any(v < 0 for v in vals):
        raise ValueError("all constants must be nonnegative")
    rw = L_s * L_psi * d_x + L_u * d_u + L_dw * d_dw + L_w * d_w
    rv = L_v * d_x
    return Zonotope.box(np.full(n_psi, rw)), Zonotope.box(np.full(n, rv))


def max_nearest_neighbor_gap(points, block: int = 1024) -> float:
    """``max_i min_{j != i} ||p_i - p_j||`` by an exact blocked scan."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    M = len(P)
    if M < 2:
        return 0.0
    sq = np.sum(P**2, axis=1)
    best = 0.0
    for start in range(0, M, block):
        blk = P[start:start + block]
        d2 = sq[start:start + block, None] + sq[None, :] - 2.0 * blk @ P.T
        rows = np.arange(len(blk))
        d2[rows, start + rows] = np.inf
        nn = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
        best = max(best, float(nn.max()))
    return best
