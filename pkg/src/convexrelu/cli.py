"""Command-line experiment harness.

Subcommands: gen, enumerate, solve, recover, compare, lowrank, boundary.
Configs are JSON documents mirroring ExperimentConfig; results JSON embeds
the resolved config so any run can be replayed.  The CONVEXRELU_THREADS
environment variable caps baseline fan-out parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .arrangements import ArrangementSet, enumerate_first_layer, enumerate_second_layer
from .convex_program import ConvexVariables, build
from .arrangements import SignPattern
from .datasets import load_csv
from .experiments import (DatasetSpec, ExperimentConfig, StageError,
                          emit_boundary_grid, gen_dataset, run_experiment)
from .network import net_from_json, net_to_json
from .recovery import recover_network


def _write_dataset_csv(path: str, X: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(X.shape[1])] + ["label"])
        for xi, yi in zip(X, y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def _cmd_gen(args) -> int:
    spec = DatasetSpec(kind=args.kind, n=args.n, d=args.d, r=args.r, K=args.K,
                       m1=args.m1, m2=args.m2, noise=args.noise, seed=args.seed)
    X, y, _ = gen_dataset(spec)
    _write_dataset_csv(args.out, X, y)
    print(f"wrote {X.shape[0]} x {X.shape[1]} dataset to {args.out}")
    return 0


def _load_xy(args):
    return load_csv(args.data, args.label_column)


def _cmd_enumerate(args) -> int:
    X, _ = _load_xy(args)
    first = enumerate_first_layer(X, mode=args.mode, count=args.count,
                                  seed=args.seed)
    if args.layer == 1:
        out = first
    else:
        out = enumerate_second_layer(X, first, args.m1, mode=args.mode,
                                     count=args.count, seed=args.seed)
    with open(args.out, "w") as fh:
        fh.write(out.to_json())
    print(f"{len(out)} patterns -> {args.out}")
    return 0


def _strip_private(results: dict) -> dict:
    return {k: v for k, v in results.items() if not k.startswith("_")}


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _run_config(args, require=None) -> int:
    with open(args.config) as fh:
        config = ExperimentConfig.from_dict(json.load(fh))
    if require == "lowrank" and config.dataset.kind != "lowrank":
        print("lowrank subcommand needs a lowrank dataset config", file=sys.stderr)
        return 2
    try:
        results = run_experiment(config)
    except StageError as err:
        print(f"stage {err.stage!r} failed: {err.cause}", file=sys.stderr)
        return 3
    net = results.pop("_net")
    if args.session:
        _save_session(args.session, config, results, net)
    if getattr(args, "net_out", None):
        with open(args.net_out, "w") as fh:
            fh.write(net_to_json(net))
    with open(args.out, "w") as fh:
        json.dump(_strip_private(results), fh, indent=2, default=_json_default)
    print(f"ok={results['ok']} objective={results['convex']['objective']:.6g} "
          f"-> {args.out}")
    return 0 if results["ok"] else 1


def _save_session(session: str, config: ExperimentConfig, results: dict, net) -> None:
    """Persist enough to rebuild the program and recover weights later."""
    os.makedirs(session, exist_ok=True)
    X, y, _ = gen_dataset(config.dataset)
    from .experiments import solve_pipeline  # rebuild to capture program+vars

    prog, vars, _, _, _ = solve_pipeline(X, y, config.model,
                                         config.arrangements, config.solver)
    doc = {
        "X": X.tolist(), "y": y.tolist(),
        "m1": prog.m1, "m2": prog.m2, "beta": prog.beta, "loss": prog.loss,
        "first": json.loads(prog.first.to_json()),
        "second": json.loads(prog.second.to_json()),
        "signs": [list(sp.signs) for sp in prog.signs],
        "tuples": [list(t) for t in prog.tuples],
    }
    with open(os.path.join(session, "program.json"), "w") as fh:
        json.dump(doc, fh)
    np.save(os.path.join(session, "vars.npy"), vars.to_flat())
    with open(os.path.join(session, "net.json"), "w") as fh:
        fh.write(net_to_json(net))


def _load_session(session: str):
    with open(os.path.join(session, "program.json")) as fh:
        doc = json.load(fh)
    first = ArrangementSet.from_json(json.dumps(doc["first"]))
    second = ArrangementSet.from_json(json.dumps(doc["second"]))
    signs = tuple(SignPattern(tuple(s)) for s in doc["signs"])
    prog = build(np.asarray(doc["X"]), np.asarray(doc["y"]), first, second,
                 signs, doc["m1"], doc["m2"], doc["beta"], loss=doc["loss"],
                 tuples=doc.get("tuples"))
    flat = np.load(os.path.join(session, "vars.npy"))
    return prog, ConvexVariables.from_flat(flat, prog)


def _cmd_recover(args) -> int:
    prog, vars = _load_session(args.session)
    net = recover_network(prog, vars, prune_zero=args.prune_zero,
                          feas_tol=args.feas_tol)
    with open(args.out, "w") as fh:
        fh.write(net_to_json(net))
    print(f"recovered {net.K} sub-networks -> {args.out}")
    return 0


def _cmd_boundary(args) -> int:
    with open(args.net) as fh:
        net = net_from_json(fh.read())
    rows = emit_boundary_grid(net, tuple(args.bounds), args.resolution)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "score"])
        for r in rows:
            writer.writerow([repr(float(v)) for v in r])
    print(f"{rows.shape[0]} grid rows -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convexrelu")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset CSV")
    g.add_argument("--kind", required=True,
                   choices=["spiral", "teacher", "lowrank"])
    g.add_argument("--n", type=int, default=30)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--r", type=int, default=1)
    g.add_argument("--K", type=int, default=5)
    g.add_argument("--m1", type=int, default=1)
    g.add_argument("--m2", type=int, default=1)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    e = sub.add_parser("enumerate", help="enumerate arrangement patterns")
    e.add_argument("--data", required=True)
    e.add_argument("--label-column", default=-1, type=_label_col)
    e.add_argument("--mode", default="sampled", choices=["exact", "sampled"])
    e.add_argument("--count", type=int, default=30)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--layer", type=int, default=1, choices=[1, 2])
    e.add_argument("--m1", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_enumerate)

    for name, require in (("solve", None), ("compare", None), ("lowrank", "lowrank")):
        s = sub.add_parser(name, help=f"run the {name} pipeline from a config")
        s.add_argument("--config", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--session", default=None,
                       help="directory to persist program + variables")
        s.add_argument("--net-out", default=None, dest="net_out")
        s.set_defaults(func=lambda a, _r=require: _run_config(a, require=_r))

    r = sub.add_parser("recover", help="recover a network from a session")
    r.add_argument("--session", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--prune-zero", action="store_true")
    r.add_argument("--feas-tol", type=float, default=1e-6)
    r.set_defaults(func=_cmd_recover)

    b = sub.add_parser("boundary", help="evaluate a net on a planar grid")
    b.add_argument("--net", required=True)
    b.add_argument("--bounds", type=float, nargs=4, required=True,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    b.add_argument("--resolution", type=int, default=50)
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_boundary)
    return p


def _label_col(s: str):
    try:
        return int(s)
    except ValueError:
        return s


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as err:
        print(f"stage {err.stage!r} failed: {err.cause}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
