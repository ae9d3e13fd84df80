"""``thavolt`` command line.

Commands share one JSON config with a section per concern::

    {
      "seed": 0,
      "system": {"p": 6, "M": 2, "d": 2, "l": 2},
      "solver": {"max_rank": 4, "tol": 1e-8, "max_sweeps": 20},
      "tha": {"K": 4, "k": 3, "strategy": "uniform-random"},
      "generator": {"sizes": {"train": 2000, "val": 500, "test": 500},
                    "ranks": [2], "input_model": "iid-gaussian", "snr_db": 20},
      "data": {"train": "train.csv", "val": "val.csv"},
      "models": {"full": "full_model.json", "ensemble": "ensemble.json"},
      "diagnose": {"dataset": "train"},
      "probe": {"head": 0, "n_perm": 20},
      "cost": {"rho": 4, "s": 5, "N": 10000, "K": 16, "k": 8}
    }

Relative data/model paths are resolved against ``--out``. Flags beat the
file, the file beats built-in defaults. ``--seed`` replaces every seed in
the file. Exit codes: 0 success, 1 invariant violation or solver failure,
2 usage or I/O error.
"""
import argparse
import math
import os
import sys

import numpy as np

from . import io as tio
from .diagnostics import baking_probe, cost_model, diagnose
from .ensemble import Ensemble, head_predictions, optimize_weights, select_subsets, train_heads
from .exceptions import ConvergenceError
from .features import SystemConfig, regressor_matrix
from .mvmals import SolverConfig, fit
from .synth import empirical_snr_db, generate
from .tt import tt_predict_batch

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "seed": 0,
    "system": {"p": 6, "M": 2, "d": 2, "l": 2},
    "solver": {},
    "tha": {"K": 4, "k": 3, "strategy": "uniform-random"},
    "generator": {
        "sizes": {"train": 2000, "val": 500, "test": 500},
        "ranks": [2],
        "input_model": "iid-gaussian",
        "snr_db": 20.0,
        "phi": 0.0,
        "gamma": 0.0,
        "groups": None,
    },
    "data": {"train": "train.csv", "val": "val.csv"},
    "split": {"train": 0.8, "val": 0.2},
    "models": {"full": "full_model.json", "ensemble": "ensemble.json",
               "truth": "truth_model.json"},
    "diagnose": {"dataset": "train"},
    "probe": {"head": 0, "n_perm": 20},
    "cost": {"rho": 4, "s": 5, "N": 10000, "K": 16, "k": 8, "rho_max": None,
             "s_max": None, "head_width": "kM",
             "system": {"p": 64, "M": 2, "d": 3, "l": 1}},
}


class UsageError(Exception):
    pass


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(args):
    cfg = DEFAULTS
    if args.config:
        try:
            file_cfg = tio.read_json(args.config)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        if not isinstance(file_cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        cfg = _merge(cfg, file_cfg)
    else:
        cfg = _merge(cfg, {})
    if args.seed is not None:
        cfg["seed"] = args.seed
        for section in ("solver", "tha", "generator"):
            cfg[section] = dict(cfg[section], seed=args.seed)
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    cfg["out"] = args.out if args.out is not None else cfg.get("out", ".")
    return cfg


def _seed(cfg, section):
    return int(cfg[section].get("seed", cfg["seed"]))


def system_config(cfg):
    try:
        return SystemConfig(**cfg["system"])
    except TypeError as exc:
        raise UsageError(f"bad system section: {exc}")


def solver_config(cfg):
    kw = dict(cfg["solver"])
    kw.setdefault("seed", cfg["seed"])
    try:
        return SolverConfig(**kw)
    except TypeError as exc:
        raise UsageError(f"bad solver section: {exc}")


def _path(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg["out"], p)


def _load_split(cfg, name):
    path = cfg["data"].get(name)
    if path is None:
        return None
    path = _path(cfg, path)
    if not os.path.exists(path):
        return path
    return tio.read_dataset(path)


def load_train_val(cfg, need_val):
    """Train (and validation) data; a missing validation file means a time split."""
    train = _load_split(cfg, "train")
    if train is None or isinstance(train, str):
        raise FileNotFoundError(train or "no training data configured")
    val = _load_split(cfg, "val") if need_val else None
    if need_val and (val is None or isinstance(val, str)):
        if cfg["data"].get("val") and "val" in cfg.get("_explicit_data", ()):
            raise FileNotFoundError(val)
        ft = float(cfg["split"]["train"])
        fv = float(cfg["split"]["val"])
        if not (0 < ft < 1 and 0 < fv < 1 and ft + fv <= 1 + 1e-12):
            raise UsageError("split fractions must lie in (0, 1) and sum to at most 1")
        n_tr = int(round(ft * train.N))
        n_va = int(round(fv * train.N))
        train, val = train.rows(0, n_tr), train.rows(n_tr, n_tr + n_va)
    return train, val


def _model_path(cfg, key):
    return _path(cfg, cfg["models"][key])


def _load_full(cfg):
    B, cfg_sys = tio.load_model(_model_path(cfg, "full"))
    return B, cfg_sys or system_config(cfg)


# --- commands ------------------------------------------------------------------


def cmd_gen(cfg):
    sysc = system_config(cfg)
    g = cfg["generator"]
    snr = float(g["snr_db"]) if g["snr_db"] is not None else math.inf
    groups = [tuple(G) for G in g["groups"]] if g.get("groups") else None
    bm = generate(sysc, {k: int(v) for k, v in g["sizes"].items()}, ranks=tuple(g["ranks"]),
                  input_model=g["input_model"], snr_db=snr, seed=_seed(cfg, "generator"),
                  phi=float(g.get("phi", 0.0)), gamma=float(g.get("gamma", 0.0)),
                  groups=groups)
    summary = {"system": sysc.to_dict(), "generator": g, "seed": _seed(cfg, "generator"),
               "splits": {}}
    for name, data in bm.splits.items():
        tio.write_dataset(_path(cfg, f"{name}.csv"), data)
        est = empirical_snr_db(bm.clean[name], data.outputs) if math.isfinite(snr) else None
        summary["splits"][name] = {
            "N": data.N,
            "snr_db": [float(x) for x in est] if est is not None else None,
        }
    tio.save_model(_model_path(cfg, "truth"), bm.truth, sysc)
    tio.write_json(_path(cfg, "gen_summary.json"), summary)
    return EXIT_OK


def cmd_train_full(cfg):
    sysc = system_config(cfg)
    train, _ = load_train_val(cfg, need_val=False)
    B, trace = fit(train, sysc, solver_config(cfg))
    tio.save_model(_model_path(cfg, "full"), B, sysc)
    tio.write_text(_path(cfg, "full_trace.csv"), trace.to_csv())
    return EXIT_OK


def cmd_train_tha(cfg):
    sysc = system_config(cfg)
    t = cfg["tha"]
    train, val = load_train_val(cfg, need_val=True)
    plan = select_subsets(sysc.p, int(t.get("K", 1)), int(t.get("k", sysc.p)),
                          t.get("strategy", "uniform-random"), _seed(cfg, "tha"),
                          t.get("subsets"))
    heads = train_heads(train, plan, sysc, solver_config(cfg), jobs=int(cfg.get("jobs", 1)))
    info = optimize_weights(head_predictions(heads, val, sysc), val.outputs, return_info=True)
    kept = type(plan)(tuple(h.subset for h in heads), plan.strategy, plan.seed)
    ens = Ensemble(heads, info.weights, kept)
    tio.save_ensemble(_model_path(cfg, "ensemble"), ens, sysc, {
        "objective": info.objective, "kkt_residual": info.kkt_residual,
        "iterations": info.iterations,
    })
    lines = ["head,sweep,loss,max_rank,accepted"]
    for k, h in enumerate(heads):
        for row in h.trace.to_csv().splitlines()[1:]:
            lines.append(f"{k},{row}")
    tio.write_text(_path(cfg, "tha_traces.csv"), "\n".join(lines) + "\n")
    return EXIT_OK


def _eval_data(cfg, name):
    data = _load_split(cfg, name)
    if data is None or isinstance(data, str):
        if name == "val":
            return load_train_val(cfg, need_val=True)[1]
        raise FileNotFoundError(data or f"no {name} data configured")
    return data


def cmd_diagnose(cfg):
    B, sysc = _load_full(cfg)
    ens, _ = tio.load_ensemble(_model_path(cfg, "ensemble"))
    name = cfg["diagnose"].get("dataset", "train")
    data = _eval_data(cfg, name)
    rep = diagnose(B, ens, data, sysc, dataset=name)
    tio.write_text(_path(cfg, "diagnostics.json"), rep.to_json())
    tio.write_text(_path(cfg, "diagnostics.csv"), rep.to_csv())
    for v in rep.violations:
        print(f"invariant violated: {v}", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_INVARIANT


def cmd_probe(cfg):
    B, sysc = _load_full(cfg)
    pr = cfg["probe"]
    name = cfg["diagnose"].get("dataset", "train")
    data = _eval_data(cfg, name)
    ens_path = _model_path(cfg, "ensemble")
    if "subsets" in cfg["tha"] or not os.path.exists(ens_path):
        t = cfg["tha"]
        plan = select_subsets(sysc.p, int(t.get("K", 1)), int(t.get("k", sysc.p)),
                              t.get("strategy", "uniform-random"), _seed(cfg, "tha"),
                              t.get("subsets"))
    else:
        plan = tio.load_ensemble(ens_path)[0].plan
    noise = None
    truth_path = _model_path(cfg, "truth")
    if os.path.exists(truth_path):
        truth, _ = tio.load_model(truth_path)
        noise = data.outputs - tt_predict_batch(truth, regressor_matrix(data, sysc))
    rep = baking_probe(B, int(pr.get("head", 0)), plan, data, sysc, solver_config(cfg),
                       n_perm=int(pr.get("n_perm", 20)), seed=_seed(cfg, "tha"),
                       true_noise=noise)
    out = rep.to_dict()
    out["incentive"] = rep.incentive
    out["dataset"] = name
    tio.write_json(_path(cfg, "probe.json"), out)
    tio.write_text(_path(cfg, "probe.csv"), rep.to_csv())
    bad = rep.incentive and rep.baked_loss > rep.proj_loss + 1e-12
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_cost(cfg):
    c = cfg["cost"]
    sysc = SystemConfig(**c["system"])
    est = cost_model(sysc, c["rho"], c["s"], c["N"], c["K"], c["k"], c.get("rho_max"),
                     c.get("s_max"), c.get("head_width", "kM"))
    tio.write_text(_path(cfg, "cost.json"), est.to_json())
    tio.write_text(_path(cfg, "cost.csv"), est.to_csv())
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train-full": cmd_train_full,
    "train-tha": cmd_train_tha,
    "diagnose": cmd_diagnose,
    "probe": cmd_probe,
    "cost": cmd_cost,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="thavolt", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help="output (and relative input) directory")
    ap.add_argument("--seed", type=int, help="root seed; overrides every seed in the config")
    ap.add_argument("--jobs", type=int, help="parallel head trainings")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        cfg = load_config(args)
        if args.config:
            raw = tio.read_json(args.config)
            cfg["_explicit_data"] = tuple((raw.get("data") or {}).keys())
        os.makedirs(cfg["out"], exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (UsageError, tio.FormatError) as exc:
        print(f"thavolt: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"thavolt: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"thavolt: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, np.linalg.LinAlgError, RuntimeError) as exc:
        out = getattr(args, "out", None) or "."
        tio.write_json(os.path.join(out, "error.json"),
                       {"command": args.command, "error": type(exc).__name__,
                        "message": str(exc)})
        print(f"thavolt: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"thavolt: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
