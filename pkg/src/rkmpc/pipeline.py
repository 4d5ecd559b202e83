"""In-process pipeline stages driven by a ``PipelineConfig``.

Each stage is a pure function of the config and its upstream products, so
the CLI, the experiment scripts and the tests share one code path.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import PipelineConfig
from .control import KmpcController, TubeController
from .edmd import Dataset, LiftedModel, check_lifted_model, fit_lipschitz_regularized, identify
from .geometry import Zonotope
from .lifting import build_dictionary, sample_centers
from .plants import Benchmark, DisturbanceSpec, Plant, collect_data, get_benchmark, simulate_closed_loop
from .uncertainty import estimate_sets, residuals


def resolve_benchmark(cfg: PipelineConfig) -> Benchmark:
    b = get_benchmark(cfg.plant.name)
    pc = cfg.plant
    over = {k: tuple(v) if isinstance(v, list) else v
            for k, v in (("T", pc.T), ("x_lower", pc.x_lower), ("x_upper", pc.x_upper),
                         ("u_lower", pc.u_lower), ("u_upper", pc.u_upper)) if v is not None}
    if over:
        b = replace(b, plant=replace(b.plant, **over))
    return b


def make_dictionary(cfg: PipelineConfig):
    b = resolve_benchmark(cfg)
    dc = cfg.dictionary
    n = b.plant.state_dim
    kind = dc.kind or b.kernel
    if kind == "polynomial":
        return build_dictionary(kind, None, n, dc.includes_state, degree=dc.degree or b.degree, seed=dc.seed)
    if dc.centers is not None:
        centers = dc.centers
    else:
        n_centers = b.n_centers if dc.n_psi is None else dc.n_psi - (n if dc.includes_state else 0)
        if kind == b.kernel and b.centers is not None and n_centers == len(b.centers):
            centers = b.centers
        else:
            centers = sample_centers(b.plant.x_lower, b.plant.x_upper, n_centers, dc.seed)
    return build_dictionary(kind, centers, n, dc.includes_state, seed=dc.seed)


def data_disturbance(cfg: PipelineConfig) -> DisturbanceSpec:
    b = resolve_benchmark(cfg)
    amp = b.amplitude if cfg.data.amplitude is None else cfg.data.amplitude
    return DisturbanceSpec(cfg.data.disturbance, amp if cfg.data.disturbance != "none" else 0.0,
                           cfg.simulation.frequency)


def collect(cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    """Disjoint fitting and validation datasets."""
    p = resolve_benchmark(cfg).plant
    if cfg.data.seed_fit == cfg.data.seed_validate:
        raise ValueError("fitting and validation seeds must differ")
    dist = data_disturbance(cfg)
    fit = collect_data(p, cfg.data.M, cfg.data.seed_fit, dist, split="fit")
    val = collect_data(p, cfg.data.M_validate, cfg.data.seed_validate, dist, split="validate")
    return fit, val


def fit_model(cfg: PipelineConfig, ds: Dataset) -> LiftedModel:
    d = make_dictionary(cfg)
    fc = cfg.fit
    model = identify(ds, d, fc.alpha, fc.beta)
    if fc.lipschitz:
        lf = fit_lipschitz_regularized(ds, d, fc.alpha, fc.alpha_s, fc.alpha_u, fc.alpha_w,
                                       pair_budget=fc.pair_budget, seed=cfg.dictionary.seed)
        model.A, model.B, model.D = lf.A, lf.B, lf.D
        model.lipschitz = {"L_s": lf.L_s, "L_u": lf.L_u, "L_w": lf.L_w, "converged": lf.converged,
                           "iterations": lf.iterations}
    model.meta["check"] = check_lifted_model(model).to_dict()
    return model


def estimate(cfg: PipelineConfig, model: LiftedModel, ds_val: Dataset):
    uc = cfg.uncertainty
    return estimate_sets(residuals(model, ds_val), uc.G_bar, uc.delta_r, uc.gamma_w, uc.gamma_v,
                         uc.growth, uc.max_iter)


def weights(cfg: PipelineConfig, model: LiftedModel | None = None):
    """``(Q_tilde or None, Q, R, N)`` with benchmark defaults; ``Q`` is the
    state weight used for the cumulative cost."""
    b = resolve_benchmark(cfg)
    dc = cfg.design
    R = np.atleast_2d(b.R if dc.R is None else dc.R).astype(float)
    N = b.N if dc.N is None else dc.N
    n = b.plant.state_dim
    if dc.penalty == "lifted":
        if dc.Q_tilde is not None:
            Qt = np.asarray(dc.Q_tilde, dtype=float)
            Qt = np.diag(Qt) if Qt.ndim == 1 else Qt
        else:
            n_psi = model.n_psi if model is not None else len(b.Q_tilde)
            if n_psi != len(b.Q_tilde):
                raise ValueError("lifted dimension differs from the benchmark; give design.Q_tilde")
            Qt = np.diag(b.Q_tilde)
        Q = Qt[:n, :n] if dc.Q is None else np.atleast_2d(dc.Q)
        return Qt, Q, R, N
    Q = np.diag(b.Q_tilde[:n]) if dc.Q is None else np.atleast_2d(dc.Q)
    return None, Q, R, N


def design(cfg: PipelineConfig, model: LiftedModel, W_bar: Zonotope, V: Zonotope) -> TubeController:
    b = resolve_benchmark(cfg)
    Qt, Q, R, N = weights(cfg, model)
    return TubeController.design(model, W_bar, V, b.plant.X, b.plant.U, N, R, Q_tilde=Qt, Q=Q,
                                 penalty=cfg.design.penalty, alpha_max=cfg.design.alpha_max,
                                 k_max=cfg.design.k_max)


def baseline(cfg: PipelineConfig, model: LiftedModel) -> KmpcController:
    b = resolve_benchmark(cfg)
    _, Q, R, N = weights(cfg, model)
    return KmpcController(model, N, Q, R, b.plant.X, b.plant.U)


def simulation_disturbance(cfg: PipelineConfig, kind: str, seed: int | None) -> DisturbanceSpec:
    b = resolve_benchmark(cfg)
    sc = cfg.simulation
    amp = b.amplitude if sc.amplitude is None else sc.amplitude
    if kind == "none":
        return DisturbanceSpec()
    return DisturbanceSpec(kind, amp, sc.frequency, seed, sc.dwell)


def run(cfg: PipelineConfig, controller, kind: str, seed: int | None):
    b = resolve_benchmark(cfg)
    _, Q, R, _ = weights(cfg, getattr(controller, "model", None))
    x0 = b.x0 if cfg.simulation.x0 is None else cfg.simulation.x0
    controller.reset()
    return simulate_closed_loop(b.plant, controller, x0, cfg.simulation.steps,
                                simulation_disturbance(cfg, kind, seed), Q, R)


def plant_of(cfg: PipelineConfig) -> Plant:
    return resolve_benchmark(cfg).plant
