"""Compare the robust tube of each benchmark design with its constraint sets.

For every plant the script identifies the lifted model and the validated
disturbance set under the default configuration, then computes the RPI tube
with a raised iteration cap and prints its projection onto the state and
input spaces next to the state and input bounds. A tube wider than the
bounds means the tightened constraints are empty.

    python3 scripts/tube_size_diagnostics.py [--k-max 5000]
"""

import argparse

import numpy as np

from rkmpc import pipeline
from rkmpc.config import PipelineConfig
from rkmpc.control import design_gain
from rkmpc.geometry import ConvergenceError, linear_map, rpi_set, spectral_radius
from rkmpc.plants import NONLINEAR_BENCHMARKS


def half_widths(Z):
    return np.abs(Z.generators).sum(axis=1)


def diagnose(name, k_max):
    cfg = PipelineConfig()
    cfg.plant.name = name
    fit, val = pipeline.collect(cfg)
    model = pipeline.fit_model(cfg, fit)
    W, _, _ = pipeline.estimate(cfg, model, val)
    Qt, _, R, _ = pipeline.weights(cfg, model)
    K = design_gain(model.A, model.B, Qt, R)
    F = model.A + model.B @ K
    plant = pipeline.plant_of(cfg)
    print(f"{name}: rho(A)={spectral_radius(model.A):.4f} rho(A+BK)={spectral_radius(F):.5f}")
    print(f"  W half-widths {np.round(half_widths(W), 4)}")
    try:
        Z = rpi_set(F, W, cfg.design.alpha_max, k_max)
    except ConvergenceError as err:
        print(f"  {err}")
        return
    print(f"  tube generators {Z.n_generators}")
    print(f"  state tube half-widths {np.round(half_widths(linear_map(model.C, Z)), 3)}"
          f"  vs X upper {plant.X.b[:plant.state_dim]}")
    print(f"  input tube half-widths {np.round(half_widths(linear_map(K, Z)), 3)}"
          f"  vs U upper {plant.U.b[:plant.input_dim]}")


def cli():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k-max", type=int, default=5000)
    ap.add_argument("--plants", nargs="*", default=list(NONLINEAR_BENCHMARKS))
    args = ap.parse_args()
    for name in args.plants:
        diagnose(name, args.k_max)


if __name__ == "__main__":
    cli()
