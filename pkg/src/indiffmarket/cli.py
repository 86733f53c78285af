"""Command line harness: simulate, verify, bachelier, pareto, dump-tree.

Exit status: 0 on success, 1 when a verification suite fails, 2 on
configuration errors.  All CSV output is deterministic for a fixed
config and seed; run metadata (scheme, tolerances, versions, timing)
goes to a separate JSON file so the CSV bytes stay reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .engine import execute_simple, simulate_sde
from .engine import indifference_cash, simulate_sde_paths
from .field import FieldEvaluator
from .representative import PrimalPoint, representative_utility
from .utilities import exponential, panel as make_panel
from .verify import DEFAULT_PROBES, SUITE_NAMES, run_suite

_CSV_VERSION = "v1"


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return format(float(x), ".17g")


def _write_csv(path: Path, header_cols, rows):
    lines = [f"# indiffmarket {_CSV_VERSION}", ",".join(header_cols)]
    for row in rows:
        lines.append(",".join(
            str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n")


def _write_metadata(out: Path, command: str, cfg_seed: int, extra=None):
    meta = {
        "command": command,
        "seed": cfg_seed,
        "scheme": "euler",
        "versions": {"indiffmarket": __version__, "numpy": np.__version__},
        "wall_time_s": extra.pop("wall_time_s") if extra and
        "wall_time_s" in extra else None,
    }
    if extra:
        meta.update(extra)
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")


def _simulate(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    t0 = time.time()
    panel = cfg.build_panel()
    tree = cfg.build_tree(steps_override=args.steps)
    if tree.implicit is False:
        raise ConfigError("simulate needs tree kind 'tree'")
    strategy = cfg.build_strategy(tree)
    mode = cfg.engine.get("mode", "execute")
    ev = FieldEvaluator(panel, tree, cache=False)
    M, J = panel.size, tree.n_assets

    if mode == "execute":
        want_v = bool(cfg.engine.get("want_v", True))
        res = execute_simple(ev, strategy, lam0=cfg.engine.get("lam0"),
                             want_interior_V=want_v,
                             tol_scale=float(cfg.engine.get("tol_scale",
                                                            1e-13)))
        U, W, X, V, Q = res.U, res.W, res.X, res.V, res.Q
        exploded = [np.zeros(tree.n_nodes(k), dtype=bool)
                    for k in range(tree.steps + 1)]
    elif mode == "sde":
        lam0 = cfg.engine.get("lam0")
        lam0 = (np.full(M, 1.0 / M) if lam0 is None
                else np.asarray(lam0, float) / np.sum(lam0))
        u0 = cfg.engine.get("u0")
        if u0 is None:
            u0 = ev.field(PrimalPoint(v=lam0, x=0.0, q=np.zeros(J))).dv
        q_levels = _positions_by_level(strategy, tree)
        res = simulate_sde(
            ev, q_levels, u0,
            eps_scale=float(cfg.engine.get("eps_explode_scale", 1e-10)))
        U, W, X, V = res.U, res.W, res.X, res.V
        # the last interval's position, expanded to the terminal nodes
        owner = tree.ancestor_index(tree.steps,
                                    np.arange(tree.n_nodes(tree.steps)),
                                    tree.steps - 1)
        q_last = np.atleast_2d(res.Q[-1])
        if q_last.shape[0] == tree.n_nodes(tree.steps - 1):
            q_last = q_last[owner]
        Q = res.Q + [q_last]
        exploded = res.exploded
    else:
        raise ConfigError(f"engine: unknown mode '{mode}'")

    out = Path(args.out or cfg.output.get("directory", "out"))
    out.mkdir(parents=True, exist_ok=True)
    cols = (["node_id", "t"] + [f"U_{m + 1}" for m in range(M)]
            + [f"W_{m + 1}" for m in range(M)] + ["X", "V"]
            + [f"Q_{j + 1}" for j in range(J)] + ["exploded"])
    rows = []
    node_id = 0
    for k in range(tree.steps + 1):
        qk = Q[k] if k < len(Q) and Q[k] is not None else np.zeros(
            (tree.n_nodes(k), J))
        qk = np.broadcast_to(np.atleast_2d(qk), (tree.n_nodes(k), J))
        for i in range(tree.n_nodes(k)):
            row = [node_id, tree.times[k]]
            row += list(U[k][i])
            row += list(W[k][i]) if W[k] is not None else [None] * M
            row += [X[k][i] if X[k] is not None else None,
                    V[k][i] if V[k] is not None else None]
            row += list(qk[i])
            row += [int(bool(exploded[k][i]))]
            rows.append(row)
            node_id += 1
    _write_csv(out / "paths.csv", cols, rows)
    _write_metadata(out, "simulate", seed, {
        "mode": mode, "steps": tree.steps, "wall_time_s": time.time() - t0,
        "tolerances": {"saddle": float(cfg.engine.get("tol_scale", 1e-13)),
                       "eps_explode_scale":
                           float(cfg.engine.get("eps_explode_scale", 1e-10))},
    })
    return 0


def _positions_by_level(strategy, tree):
    q_levels = []
    current = np.zeros(tree.n_assets)
    trades = dict(zip(strategy.levels,
                      range(len(strategy.levels))))
    for k in range(tree.steps):
        if k in trades:
            pos = np.asarray(strategy.positions[trades[k]], float)
            if pos.ndim > 1:
                raise ConfigError(
                    "sde mode needs deterministic strategy positions")
            current = np.broadcast_to(np.atleast_1d(pos),
                                      (tree.n_assets,)).copy()
        q_levels.append(current.copy())
    return q_levels


def _verify(args) -> int:
    seed = args.seed if args.seed is not None else 0
    names = SUITE_NAMES if args.suite in (None, "all") else tuple(
        s.strip() for s in args.suite.split(","))
    results = []
    for name in names:
        try:
            results.append(run_suite(name, seed=seed, probes=args.probes))
        except KeyError as exc:
            print(str(exc), file=sys.stderr)
            return 2
    for r in results:
        print(r.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "verify.csv",
                   ["suite", "probes", "max_deviation", "threshold",
                    "verdict"],
                   [[r.name, r.probes, r.max_deviation, r.threshold,
                     "pass" if r.passed else "fail"] for r in results])
        _write_metadata(out, "verify", seed)
    return 0 if all(r.passed for r in results) else 1


def _bachelier(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig(
        bachelier={"sigma": 0.2, "gamma": 1.0, "mu": 0.1, "s": 10.0,
                   "horizon": 1.0})
    par = cfg.build_bachelier()
    seed = args.seed if args.seed is not None else cfg.seed
    steps = args.steps or int(cfg.bachelier.get("steps", 512))
    n_paths = args.paths or int(cfg.bachelier.get("paths", 10_000))
    q = float(cfg.bachelier.get("q", 1.0))
    t0 = time.time()
    panel = par.panel()
    lat = par.lattice(steps)
    pb = simulate_sde_paths(panel, lat, q, float(par.N0(0.0)), n_paths,
                            seed=seed)
    v_true = par.gain(q, pb.db, pb.times)[:, -1]
    u_true = par.indirect_utility(q, pb.db, pb.times)[:, -1]
    xi = indifference_cash(panel, lat, q)
    xi_closed = float(par.indifference_price(q))

    out = Path(args.out or cfg.output.get("directory", "out"))
    out.mkdir(parents=True, exist_ok=True)
    rows = [[i, pb.V[i, -1], v_true[i], abs(pb.V[i, -1] - v_true[i]),
             pb.U[i, -1], u_true[i], int(bool(pb.exploded[i]))]
            for i in range(n_paths)]
    _write_csv(out / "bachelier_paths.csv",
               ["path_id", "V_T_engine", "V_T_closed", "abs_err",
                "U_T_engine", "U_T_closed", "exploded"], rows)
    err = np.abs(pb.V[:, -1] - v_true)
    _write_csv(out / "bachelier_summary.csv",
               ["metric", "value"],
               [["mean_abs_vT_error", float(err.mean())],
                ["max_abs_vT_error", float(err.max())],
                ["impact_scale", 0.5 * par.gamma * par.sigma ** 2
                 * par.horizon],
                ["xi_engine", xi],
                ["xi_closed", xi_closed],
                ["xi_rel_error", abs(xi / xi_closed - 1.0)
                 if xi_closed else abs(xi)]])
    _write_metadata(out, "bachelier", seed, {
        "steps": steps, "paths": n_paths, "q": q,
        "wall_time_s": time.time() - t0})
    return 0


def _pareto(args) -> int:
    gammas = [float(g) for g in args.gammas.split(",")]
    panel = make_panel(*[exponential(g) for g in gammas])
    v = (np.ones(panel.size) if args.weights is None
         else np.asarray([float(w) for w in args.weights.split(",")]))
    if v.shape != (panel.size,) or np.any(v <= 0):
        raise ConfigError("pareto: weights must be positive, one per maker")
    r, split, y = representative_utility(panel, v, float(args.total))
    print(f"r = {_fmt(r)}")
    print(f"y = {_fmt(y)}")
    print("split = " + ",".join(_fmt(s) for s in split))
    if args.u:
        u = np.asarray([float(s) for s in args.u.split(",")])
        if u.shape != (panel.size,) or np.any(u >= 0):
            raise ConfigError("pareto: utilities must be negative, one "
                              "per maker")
        pi = np.array([spec.inverse_value(u[m])
                       for m, spec in enumerate(panel.makers)])
        print(f"G = {_fmt(pi.sum())}")
    return 0


def _dump_tree(args) -> int:
    cfg = load_config(args.config)
    tree = cfg.build_tree(steps_override=args.steps)
    out = Path(args.out or cfg.output.get("directory", "out"))
    out.mkdir(parents=True, exist_ok=True)
    d, J = tree.dim, tree.n_assets
    cols = (["node_id", "parent_id", "t", "prob"]
            + [f"dB_{i + 1}" for i in range(d)] + ["sigma0"]
            + [f"psi_{j + 1}" for j in range(J)])
    _write_csv(out / "tree.csv", cols, list(tree.node_rows()))
    _write_metadata(out, "dump-tree", cfg.seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="indiffmarket",
        description="Trading at market indifference prices: simulation "
                    "and verification harness")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the configured engine")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out")
    sim.add_argument("--steps", type=int)
    sim.set_defaults(func=_simulate)

    ver = sub.add_parser("verify", help="run verification suites")
    ver.add_argument("--config")
    ver.add_argument("--suite", help="suite name, comma list, or 'all'")
    ver.add_argument("--seed", type=int)
    ver.add_argument("--probes", type=int)
    ver.add_argument("--out")
    ver.set_defaults(func=_verify)

    bac = sub.add_parser("bachelier", help="engine vs closed-form "
                                           "comparison")
    bac.add_argument("--config")
    bac.add_argument("--seed", type=int)
    bac.add_argument("--paths", type=int)
    bac.add_argument("--steps", type=int)
    bac.add_argument("--out")
    bac.set_defaults(func=_bachelier)

    par = sub.add_parser("pareto", help="one-shot representative-agent "
                                        "evaluation")
    par.add_argument("--gammas", required=True,
                     help="comma list of exponential risk aversions")
    par.add_argument("--weights", help="comma list of Pareto weights")
    par.add_argument("--total", type=float, default=0.0)
    par.add_argument("--u", help="comma list of utility targets for G")
    par.set_defaults(func=_pareto)

    dmp = sub.add_parser("dump-tree", help="write the scenario tree as CSV")
    dmp.add_argument("--config", required=True)
    dmp.add_argument("--steps", type=int)
    dmp.add_argument("--out")
    dmp.set_defaults(func=_dump_tree)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
