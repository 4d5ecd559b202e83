"""Command-line driver: collect, identify, validate, design, simulate, report.

Every stage reads and writes files in ``--out-dir``. JSON artifacts embed the
config hash and the SHA-256 of their upstream artifacts; nothing depends on
wall-clock time, so repeated runs produce byte-identical files.

Exit codes: 0 success, 2 validation or assumption failure, 3 infeasibility
during simulation, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import pipeline
from .config import PipelineConfig
from .control import AssumptionError, DesignError, InfeasibleError, TubeController, load_controller
from .edmd import Dataset, LiftedModel, RankDeficientError
from .geometry import ConvergenceError, set_from_dict
from .plants import DivergenceError
from .uncertainty import ValidationCapError

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("rkmpc")


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _meta_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".meta.json"


def _provenance(cfg: PipelineConfig, **upstream) -> dict:
    return {"config_hash": cfg.hash(), "upstream": upstream}


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed_override is not None:
        s = int(args.seed_override)
        cfg.data.seed_fit, cfg.data.seed_validate = s, s + 1
        cfg.simulation.seeds = [s]
    return cfg


def _out(args, name) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _load_dataset(path, expect_split):
    meta = _read_json(_meta_path(path))
    if meta.get("split") != expect_split:
        raise CliError(f"{path} is tagged split={meta.get('split')!r}, expected {expect_split!r}",
                       EXIT_VALIDATION)
    ds = Dataset.from_csv(path, split=meta["split"], seed=meta.get("seed"))
    return ds, meta


# --- subcommands -------------------------------------------------------------

def cmd_collect(cfg: PipelineConfig, args) -> int:
    if cfg.data.M < 1 or cfg.data.M_validate < 1:
        raise CliError("dataset sizes must be >= 1", EXIT_VALIDATION)
    fit, val = pipeline.collect(cfg)
    for ds, name in ((fit, "dataset_fit.csv"), (val, "dataset_validate.csv")):
        path = _out(args, name)
        ds.to_csv(path)
        meta = {"split": ds.split, "seed": ds.seed, "M": len(ds), "plant": cfg.plant.name,
                "disturbance": pipeline.data_disturbance(cfg).kind, "sha256": sha256_file(path),
                "provenance": _provenance(cfg)}
        _write_json(_meta_path(path), meta)
        print(f"wrote {path} ({len(ds)} tuples, split={ds.split})")
    return EXIT_OK


def cmd_identify(cfg: PipelineConfig, args) -> int:
    path = args.dataset or os.path.join(args.out_dir, "dataset_fit.csv")
    ds, meta = _load_dataset(path, "fit")
    try:
        model = pipeline.fit_model(cfg, ds)
    except RankDeficientError as err:
        raise CliError(f"identification failed: {err}", EXIT_VALIDATION) from None
    check = model.meta["check"]
    if not check["passed"] and not args.force:
        raise CliError("identified model fails the stabilizability/observability check "
                       f"({json.dumps(check)}); rerun with --force to keep it", EXIT_VALIDATION)
    model.meta["forced"] = bool(args.force and not check["passed"])
    doc = model.to_dict()
    doc["provenance"] = _provenance(cfg, dataset=sha256_file(path))
    out = _out(args, "model.json")
    _write_json(out, doc)
    print(f"wrote {out}; check passed={check['passed']}, spectral radius={check['spectral_radius']:.6f}")
    return EXIT_OK


def cmd_validate(cfg: PipelineConfig, args) -> int:
    mpath = args.model or os.path.join(args.out_dir, "model.json")
    dpath = args.dataset or os.path.join(args.out_dir, "dataset_validate.csv")
    mdoc = _read_json(mpath)
    model = LiftedModel.from_dict(mdoc)
    ds, meta = _load_dataset(dpath, "validate")
    if meta["sha256"] == mdoc.get("provenance", {}).get("upstream", {}).get("dataset"):
        raise CliError("validation data must differ from the fitting data", EXIT_VALIDATION)
    try:
        W, V, rep = pipeline.estimate(cfg, model, ds)
    except ValidationCapError as err:
        raise CliError(str(err), EXIT_VALIDATION) from None
    print(rep.table())
    out = _out(args, "sets.json")
    _write_json(out, {"W_bar": W.to_dict(), "V": V.to_dict(), "report": rep.to_dict(),
                      "provenance": _provenance(cfg, model=sha256_file(mpath), dataset=sha256_file(dpath))})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_design(cfg: PipelineConfig, args) -> int:
    mpath = args.model or os.path.join(args.out_dir, "model.json")
    spath = args.sets or os.path.join(args.out_dir, "sets.json")
    model = LiftedModel.from_dict(_read_json(mpath))
    sdoc = _read_json(spath)
    W, V = set_from_dict(sdoc["W_bar"]), set_from_dict(sdoc["V"])
    try:
        ctrl = pipeline.design(cfg, model, W, V)
    except AssumptionError as err:
        raise CliError(f"design failed: {err}", EXIT_VALIDATION) from None
    except (DesignError, ConvergenceError) as err:
        raise CliError(f"design failed: {err}", EXIT_VALIDATION) from None
    doc = ctrl.to_dict()
    doc["lyapunov_residual"] = ctrl.lyapunov_residual()
    doc["closed_loop_poles"] = [[float(l.real), float(l.imag)] for l in np.linalg.eigvals(ctrl.F)]
    doc["provenance"] = _provenance(cfg, model=sha256_file(mpath), sets=sha256_file(spath))
    out = _out(args, "controller.json")
    _write_json(out, doc)
    gate = "n/a (no Lipschitz constants)" if ctrl.gate is None else f"{ctrl.gate:.6g}"
    print(f"K = {np.array2string(ctrl.K.ravel(), precision=4)}")
    print(f"|poles| = {np.array2string(np.sort(np.abs(np.linalg.eigvals(ctrl.F))), precision=4)}")
    print(f"stability gate rho(E) = {gate}")
    print(f"tube constraint exact: {ctrl.sets.tube_exact}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(cfg: PipelineConfig, args) -> int:
    cpath = args.controller or os.path.join(args.out_dir, "controller.json")
    cdoc = _read_json(cpath)
    ctrl = load_controller(cdoc)
    controllers = [("rkmpc", ctrl)]
    if args.baseline == "kmpc":
        controllers.append(("kmpc", pipeline.baseline(cfg, ctrl.model)))
    tdir = _out(args, "traces")
    os.makedirs(tdir, exist_ok=True)
    runs, failed = [], False
    for label, c in controllers:
        if args.dump_qp:
            c.dump_dir = os.path.join(args.out_dir, "qp_dumps", label)
        for kind in cfg.simulation.disturbances:
            seeds = [None] if kind == "none" else cfg.simulation.seeds
            for seed in seeds:
                tag = f"{label}_{kind}" + ("" if seed is None else f"_s{seed}")
                rec = {"controller": label, "plant": cfg.plant.name, "disturbance": kind, "seed": seed}
                try:
                    tr = pipeline.run(cfg, c, kind, seed)
                except (InfeasibleError, DivergenceError) as err:
                    rec.update({"status": "infeasible" if isinstance(err, InfeasibleError) else "diverged",
                                "error": str(err)})
                    failed = True
                    runs.append(rec)
                    continue
                path = os.path.join(tdir, tag + ".csv")
                tr.to_csv(path)
                rec.update({"status": "ok", "J": tr.J, "steps": len(tr), "tube_ok_fraction": tr.tube_fraction,
                            "final_state_norm": float(np.linalg.norm(tr.x_final)),
                            "qp_failures": int(sum(s != "optimal" for s in tr.qp_status)),
                            "trace": os.path.relpath(path, args.out_dir), "trace_sha256": sha256_file(path)})
                runs.append(rec)
    summary = {"runs": runs, "provenance": _provenance(cfg, controller=sha256_file(cpath))}
    out = _out(args, "summary.json")
    _write_json(out, summary)
    for r in runs:
        if r["status"] == "ok":
            print(f"{r['controller']:6s} {r['disturbance']:10s} seed={r['seed']}: J={r['J']:.3f} "
                  f"tube_ok={100 * r['tube_ok_fraction']:.1f}%")
        else:
            print(f"{r['controller']:6s} {r['disturbance']:10s} seed={r['seed']}: {r['status']} ({r['error']})")
    print(f"wrote {out}")
    rk_failed = any(r["status"] != "ok" for r in runs if r["controller"] == "rkmpc")
    return EXIT_INFEASIBLE if (failed and rk_failed) else EXIT_OK


def _trace_cost(path) -> float:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return float(sum(float(row["stage_cost"]) for row in rd))


def build_report(summary_paths) -> tuple[list[dict], str]:
    """Aggregate runs into rows keyed by (plant, disturbance, controller).

    J is re-summed from the trace files; the table is sorted by key.
    """
    cells: dict = {}
    for sp in summary_paths:
        doc = _read_json(sp)
        base = os.path.dirname(os.path.abspath(sp))
        for r in doc.get("runs", []):
            if r.get("status") != "ok":
                continue
            J = _trace_cost(os.path.join(base, r["trace"]))
            key = (r["plant"], r["disturbance"], r["controller"])
            c = cells.setdefault(key, {"J_total": 0.0, "runs": 0, "tube_ok": 0.0})
            c["J_total"] += J
            c["runs"] += 1
            c["tube_ok"] += r["tube_ok_fraction"]
    rows = []
    for key in sorted(cells):
        c = cells[key]
        rows.append({"plant": key[0], "disturbance": key[1], "controller": key[2], "runs": c["runs"],
                     "J_total": c["J_total"], "J_mean": c["J_total"] / c["runs"],
                     "tube_ok_pct": 100.0 * c["tube_ok"] / c["runs"]})
    lines = ["| plant | disturbance | controller | runs | mean J | total J | tube ok % |",
             "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['plant']} | {r['disturbance']} | {r['controller']} | {r['runs']} | "
                     f"{r['J_mean']:.3f} | {r['J_total']:.3f} | {r['tube_ok_pct']:.1f} |")
    return rows, "\n".join(lines) + "\n"


def cmd_report(cfg: PipelineConfig, args) -> int:
    rows, md = build_report(args.summaries)
    with open(_out(args, "report.md"), "w") as fh:
        fh.write(md)
    with open(_out(args, "report.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["plant", "disturbance", "controller", "runs", "J_mean", "J_total", "tube_ok_pct"])
        for r in rows:
            wr.writerow([r["plant"], r["disturbance"], r["controller"], r["runs"], repr(r["J_mean"]),
                         repr(r["J_total"]), repr(r["tube_ok_pct"])])
    print(md, end="")
    return EXIT_OK


COMMANDS = {"collect": cmd_collect, "identify": cmd_identify, "validate": cmd_validate,
            "design": cmd_design, "simulate": cmd_simulate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (JSON); defaults apply when omitted")
    common.add_argument("--out-dir", default=".", help="artifact directory")
    common.add_argument("--seed-override", type=int, default=None,
                        help="replace data seeds (s, s+1) and simulation seeds ([s])")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="rkmpc", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="generate fitting and validation data")
    s = sub.add_parser("identify", parents=[common], help="fit the lifted predictor")
    s.add_argument("--dataset")
    s.add_argument("--force", action="store_true", help="keep a model that fails the checks")
    s = sub.add_parser("validate", parents=[common], help="estimate validated uncertainty sets")
    s.add_argument("--model")
    s.add_argument("--dataset")
    s = sub.add_parser("design", parents=[common], help="compute K, P, tube and tightened sets")
    s.add_argument("--model")
    s.add_argument("--sets")
    s = sub.add_parser("simulate", parents=[common], help="closed-loop runs over the simulation matrix")
    s.add_argument("--controller")
    s.add_argument("--baseline", choices=["kmpc"], default=None)
    s.add_argument("--dump-qp", action="store_true", help="write failing QPs as JSON")
    s = sub.add_parser("report", parents=[common], help="aggregate simulation summaries")
    s.add_argument("summaries", nargs="*")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg, args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except (OSError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
