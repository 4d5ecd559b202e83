"""Independent reference implementations shared by the test modules."""

import itertools

import numpy as np

from rkmpc.edmd import LiftedModel
from rkmpc.geometry import Zonotope
from rkmpc.lifting import build_dictionary
from rkmpc.plants import Plant, rk4_step


def brute_force_qp(H, f, A, b, tol=1e-9):
    """Enumerate active sets, solve each equality-constrained KKT system and
    keep the best primal-dual feasible point."""
    n, m = H.shape[0], len(b)
    best_z, best_val = None, np.inf
    for k in range(0, min(m, n) + 1):
        for act in itertools.combinations(range(m), k):
            act = list(act)
            Aa = A[act]
            K = np.block([[H, Aa.T], [Aa, np.zeros((k, k))]])
            rhs = np.concatenate([-f, b[act]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:n], sol[n:]
            if m and np.max(A @ z - b) > tol:
                continue
            if k and np.min(lam) < -tol:
                continue
            val = 0.5 * z @ H @ z + f @ z
            if val < best_val:
                best_z, best_val = z, val
    return best_z, best_val


def random_qp(rng, n_max=6, m_max=10):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    b = A @ z0 + rng.uniform(0.0, 1.0, size=m)
    return H, f, A, b


def identity_dictionary(n=2):
    return build_dictionary("polynomial", None, n, includes_state=False, degree=1)


# --- a linear test plant on which every design assumption holds ------------------

A_C = np.array([[0.0, 1.0], [-2.0, -0.3]])
B_C = np.array([[0.0], [1.0]])


def linear_plant(T=0.05, box=3.0, u_max=5.0):
    f = lambda x, u: x @ A_C.T + u @ B_C.T
    return Plant("linear", 2, 1, f, (-box, -box), (box, box), (-u_max,), (u_max,), T)


def exact_linear_model(plant):
    """Discrete ``(A, B)`` that the RK4 step realizes exactly, plus a box that
    bounds the one-step effect of any disturbance with ``|w| <= 1``."""
    I = np.eye(2)
    A = np.column_stack([rk4_step(plant, e, [0.0])[0] for e in I])
    B = rk4_step(plant, np.zeros(2), [1.0])[0][:, None]
    T = plant.T
    stage = [0.0, 0.5 * T, T]
    bound = np.zeros(2)
    for ts in stage:
        eff = rk4_step(plant, np.zeros(2), [0.0], lambda t, ts=ts: float(np.isclose(t, ts)), 0.0)[0]
        bound += np.abs(eff)
    d = identity_dictionary()
    model = LiftedModel(A, B, np.eye(2), np.zeros((2, 2)), d)
    return model, bound


def linear_setup(amplitude=0.3):
    plant = linear_plant()
    model, bound = exact_linear_model(plant)
    W = Zonotope.box(amplitude * bound * 1.0001)
    V = Zonotope.box([1e-9, 1e-9])
    return plant, model, W, V
