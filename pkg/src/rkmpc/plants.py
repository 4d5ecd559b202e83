"""Benchmark plants, disturbance generators, data collection and closed-loop runs.

Continuous dynamics are integrated with classical RK4 over one sampling
period with the input held constant. The additive disturbance enters the
continuous right-hand side and is broadcast to every state component.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .edmd import Dataset
from .geometry import HPolytope

log = logging.getLogger(__name__)

DISTURBANCE_KINDS = ("none", "sinusoidal", "udr", "stepwise")


class DivergenceError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class Plant:
    """``x' = f_c(x, u) + w`` on a box state space with box inputs.

    ``f_c`` takes batches ``x (M, n)``, ``u (M, m)`` and returns ``(M, n)``.
    """

    name: str
    state_dim: int
    input_dim: int
    f_c: Callable[[np.ndarray, np.ndarray], np.ndarray]
    x_lower: tuple
    x_upper: tuple
    u_lower: tuple
    u_upper: tuple
    T: float

    @property
    def X(self) -> HPolytope:
        return HPolytope.box(self.x_lower, self.x_upper)

    @property
    def U(self) -> HPolytope:
        return HPolytope.box(self.u_lower, self.u_upper)

    def rhs(self, x, u, w=0.0) -> np.ndarray:
        X = np.atleast_2d(x)
        Uin = np.asarray(u, dtype=float).reshape(X.shape[0], -1)
        out = self.f_c(X, Uin) + np.asarray(w, dtype=float).reshape(-1, 1) * np.ones(self.state_dim)
        return out if np.ndim(x) == 2 else out[0]


def rk4_step(plant: Plant, x, u, w_fn: Callable[[float], object] | None = None, t: float = 0.0):
    """One zero-order-hold RK4 step over ``[t, t + T]``.

    ``w_fn(t)`` gives the disturbance at stage times (scalar or one value per
    batch row). Returns ``(x_next, w_hat)`` where ``w_hat`` is the integrated
    disturbance increment per state component.
    """
    T = plant.T
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(u)):
        raise DivergenceError("non-finite state or input")
    if w_fn is None:
        w0 = wm = w1 = 0.0
    else:
        w0, wm, w1 = w_fn(t), w_fn(t + 0.5 * T), w_fn(t + T)
    k1 = plant.rhs(x, u, w0)
    k2 = plant.rhs(x + 0.5 * T * k1, u, wm)
    k3 = plant.rhs(x + 0.5 * T * k2, u, wm)
    k4 = plant.rhs(x + T * k3, u, w1)
    xn = x + (T / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    w_int = (T / 6.0) * (np.asarray(w0, dtype=float) + 4.0 * np.asarray(wm, dtype=float)
                         + np.asarray(w1, dtype=float))
    w_hat = np.multiply.outer(w_int, np.ones(plant.state_dim)) if np.ndim(w_int) else np.full(plant.state_dim, float(w_int))
    if not np.all(np.isfinite(xn)):
        raise DivergenceError("integration produced a non-finite state")
    return xn, w_hat


@dataclass(frozen=True)
class DisturbanceSpec:
    """Additive disturbance with ``|w(t)| <= amplitude``.

    ``sinusoidal``: ``amplitude sin(2 pi frequency t + phase)`` with a phase
    drawn from ``seed`` (zero when ``seed`` is None). ``udr``: a uniform level
    per sampling step. ``stepwise``: uniform levels held for ``dwell`` steps.
    """

    kind: str = "none"
    amplitude: float = 0.0
    frequency: float = 5.0
    seed: int | None = None
    dwell: int = 50

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        if self.kind == "stepwise" and self.dwell < 1:
            raise ValueError("dwell must be >= 1")

    def with_seed(self, seed) -> "DisturbanceSpec":
        return DisturbanceSpec(self.kind, self.amplitude, self.frequency, seed, self.dwell)

    def realize(self, steps: int, T: float) -> Callable[[int, float], float]:
        """Return ``w(k, t)`` for sampling step ``k`` and absolute time ``t``."""
        a = self.amplitude
        if self.kind == "none" or a == 0.0:
            return lambda k, t: 0.0
        rng = np.random.default_rng(self.seed)
        if self.kind == "sinusoidal":
            phase = 0.0 if self.seed is None else float(rng.uniform(0.0, 2 * np.pi))
            om = 2 * np.pi * self.frequency
            return lambda k, t: a * np.sin(om * t + phase)
        if self.kind == "udr":
            levels = rng.uniform(-a, a, size=max(steps, 1))
        else:
            levels = np.repeat(rng.uniform(-a, a, size=steps // self.dwell + 1), self.dwell)[:max(steps, 1)]
        return lambda k, t: float(levels[min(k, len(levels) - 1)])


def collect_data(plant: Plant, M: int, seed: int, disturbance: DisturbanceSpec | None = None,
                 policy: str = "udr", split: str = "fit") -> Dataset:
    """i.i.d. one-step tuples: ``x`` uniform in X, ``u`` uniform in U.

    With a disturbance, each tuple sees an independent realization: a random
    phase for sinusoids, a random constant level otherwise.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if policy != "udr":
        raise ValueError(f"unknown excitation policy {policy!r}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(plant.x_lower, plant.x_upper, size=(M, plant.state_dim))
    u = rng.uniform(plant.u_lower, plant.u_upper, size=(M, plant.input_dim))
    dist = disturbance or DisturbanceSpec()
    a = dist.amplitude
    if dist.kind == "none" or a == 0.0:
        w_fn = None
    elif dist.kind == "sinusoidal":
        phase = rng.uniform(0.0, 2 * np.pi, size=M)
        om = 2 * np.pi * dist.frequency
        w_fn = lambda t: a * np.sin(om * t + phase)
    else:
        lev = rng.uniform(-a, a, size=M)
        w_fn = lambda t: lev
    xp, w_hat = rk4_step(plant, x, u, w_fn, 0.0)
    if w_hat.ndim == 1:
        w_hat = np.broadcast_to(w_hat, (M, plant.state_dim)).copy()
    return Dataset(x, u, w_hat, xp, split=split, seed=seed)


# --- benchmark systems -------------------------------------------------------

def _vdp(x, u):
    x1, x2 = x[:, 0], x[:, 1]
    return np.column_stack([x2, 2 * x2 - 10 * x1**2 * x2 - 0.8 * x1 - u[:, 0]])


GRAVITY = 9.81


def _pendulum(x, u):
    x1, x2 = x[:, 0], x[:, 1]
    return np.column_stack([x2, 4 * GRAVITY * np.sin(x1) - 3 * u[:, 0] * np.cos(x1)])


def _nonaffine(x, u):
    x1, x2 = x[:, 0], x[:, 1]
    v = u[:, 0]
    return np.column_stack([x2, x1**2 + 0.15 * v**3 + 0.1 * (1 + x2**2) * v + np.sin(0.1 * v)])


def _oscillator(x, u):
    # lightly damped linear oscillator; exactly representable with Psi(x) = x
    return np.column_stack([x[:, 1], -2.0 * x[:, 0] - 0.3 * x[:, 1] + u[:, 0]])


@dataclass(frozen=True)
class Benchmark:
    """A plant bundled with its default dictionary, weights and test conditions."""

    plant: Plant
    kernel: str
    centers: tuple | None
    n_centers: int
    Q_tilde: tuple
    R: float
    N: int
    x0: tuple
    amplitude: float
    frequency: float = 5.0
    center_seed: int = 0
    penalty: str = "lifted"
    degree: int = 0


VAN_DER_POL = Benchmark(
    Plant("van_der_pol", 2, 1, _vdp, (-2.5, -2.5), (2.5, 2.5), (-10.0,), (10.0,), 0.01),
    "thinplate", ((0.381, -0.341), (0.267, -0.889)), 2, (1.0, 1.0, 0.1, 0.1), 0.1, 10, (1.5, -1.5), 0.4,
)
PENDULUM = Benchmark(
    Plant("pendulum", 2, 1, _pendulum, (-1.0, -2.0), (1.0, 2.0), (-20.0,), (20.0,), 0.005),
    "gaussian", ((-0.644, -1.09), (-0.99, 0.76), (-0.26, -1.48)), 3, (1.0,) * 5, 0.1, 10, (0.2, 1.0), 2.0,
)
NON_AFFINE = Benchmark(
    Plant("non_affine", 2, 1, _nonaffine, (-2.5, -2.5), (2.5, 2.5), (-25.0,), (25.0,), 0.005),
    "polyharmonic", None, 3, (1.0,) * 5, 0.1, 30, (0.6, -1.2), 1.0,
)
OSCILLATOR = Benchmark(
    Plant("oscillator", 2, 1, _oscillator, (-3.0, -3.0), (3.0, 3.0), (-5.0,), (5.0,), 0.05),
    "polynomial", None, 0, (1.0, 1.0), 0.1, 10, (2.0, -1.5), 0.3, degree=1,
)
BENCHMARKS = {b.plant.name: b for b in (VAN_DER_POL, PENDULUM, NON_AFFINE, OSCILLATOR)}
NONLINEAR_BENCHMARKS = ("van_der_pol", "pendulum", "non_affine")


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown plant {name!r}; choose from {sorted(BENCHMARKS)}") from None


# --- closed loop -------------------------------------------------------------

TRACE_COLUMNS = ("k", "t", "x", "s", "x_hat", "s_hat", "u", "u_hat", "w", "stage_cost", "qp_status", "tube_ok")


@dataclass
class SimulationTrace:
    Q: np.ndarray
    R: np.ndarray
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    s: list = field(default_factory=list)
    x_hat: list = field(default_factory=list)
    s_hat: list = field(default_factory=list)
    u: list = field(default_factory=list)
    u_hat: list = field(default_factory=list)
    w: list = field(default_factory=list)
    stage_cost: list = field(default_factory=list)
    qp_status: list = field(default_factory=list)
    tube_ok: list = field(default_factory=list)
    value: list = field(default_factory=list)
    x_final: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    @property
    def J(self) -> float:
        return float(np.sum(self.stage_cost)) if self.stage_cost else 0.0

    @property
    def tube_fraction(self) -> float:
        return float(np.mean(self.tube_ok)) if self.tube_ok else 1.0

    def record(self, t, x, res, w):
        u = np.atleast_1d(res.u)
        self.t.append(t)
        self.x.append(np.array(x))
        self.s.append(np.array(res.s))
        self.x_hat.append(np.array(res.x_hat))
        self.s_hat.append(np.array(res.s_hat))
        self.u.append(u)
        self.u_hat.append(np.atleast_1d(res.u_hat))
        self.w.append(float(w))
        self.stage_cost.append(float(x @ self.Q @ x + u @ self.R @ u))
        self.qp_status.append(res.qp_status)
        self.tube_ok.append(bool(res.tube_ok))
        self.value.append(float(res.value))

    def header(self) -> list[str]:
        if not self.t:
            return list(TRACE_COLUMNS)
        cols = ["k", "t"]
        for name in ("x", "s", "x_hat", "s_hat", "u", "u_hat"):
            cols += [f"{name}_{i+1}" for i in range(len(getattr(self, name)[0]))]
        return cols + ["w", "stage_cost", "value", "qp_status", "tube_ok"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.header())
            for k in range(len(self)):
                row = [k, repr(self.t[k])]
                for name in ("x", "s", "x_hat", "s_hat", "u", "u_hat"):
                    row += [repr(float(v)) for v in getattr(self, name)[k]]
                row += [repr(self.w[k]), repr(self.stage_cost[k]), repr(self.value[k]),
                        self.qp_status[k], int(self.tube_ok[k])]
                wr.writerow(row)


def simulate_closed_loop(plant: Plant, controller, x0, steps: int, disturbance: DisturbanceSpec | None = None,
                         Q=None, R=None) -> SimulationTrace:
    """Run ``steps`` control steps from ``x0``.

    ``controller.step(x, k)`` must return an object with ``u``, ``u_hat``,
    ``s``, ``s_hat``, ``x_hat``, ``qp_status``, ``tube_ok`` and ``value``.
    ``J`` sums ``|x_k|_Q^2 + |u_k|_R^2`` over the recorded steps.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(plant.X.A @ x <= plant.X.b + 1e-12):
        raise ValueError("initial state outside the state constraints")
    Q = np.eye(plant.state_dim) if Q is None else np.atleast_2d(Q)
    R = np.eye(plant.input_dim) if R is None else np.atleast_2d(R)
    trace = SimulationTrace(Q, R)
    dist = (disturbance or DisturbanceSpec()).realize(steps, plant.T)
    for k in range(steps):
        t = k * plant.T
        res = controller.step(x, k)
        u = np.atleast_1d(res.u)
        try:
            x_next, _ = rk4_step(plant, x, u, lambda tt, k=k: dist(k, tt), t)
        except DivergenceError as err:
            trace.record(t, x, res, dist(k, t))
            raise DivergenceError(str(err), trace) from None
        trace.record(t, x, res, dist(k, t))
        x = x_next
    trace.x_final = x
    return trace
