"""Command-line front end: ``mesodiff <subcommand> --config FILE [--seed N] [--out DIR]``.

Every run writes ``run.meta`` (the effective config as JSON) into the output
directory.  Errors print one ``ERROR category=... message=...`` line on
stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, abm, experiments as ex, netstruct as ns, reach, shds, signals
from .rng import stream


class CLIError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# --------------------------------------------------------------------------
# config plumbing

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise CLIError("config", f"cannot set {dotted!r}: {k!r} is not a mapping")
    node[keys[-1]] = value


def effective_config(defaults: dict, args) -> dict:
    """defaults < config file < flags."""
    cfg = copy.deepcopy(defaults)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise CLIError("input", f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise CLIError("config", f"{args.config}: invalid JSON ({e})") from None
        if not isinstance(loaded, dict):
            raise CLIError("config", "config file must hold a JSON object")
        cfg.update(loaded)
        cfg["_config_dir"] = str(Path(args.config).resolve().parent)
    for item in args.set or []:
        if "=" not in item:
            raise CLIError("config", f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(cfg, k, _parse_value(v))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.runs:
        cfg["runs"] = args.runs if len(args.runs) > 1 else args.runs[0]
    if args.dt:
        cfg["dt"] = args.dt if len(args.dt) > 1 else args.dt[0]
    if args.tau:
        cfg["taus"] = args.tau
    cfg.setdefault("seed", 0)
    return cfg


def _path(cfg, value) -> Path:
    p = Path(value)
    if not p.is_absolute() and "_config_dir" in cfg:
        q = Path(cfg["_config_dir"]) / p
        if q.exists() or not p.exists():
            return q
    return p


def _require(cfg, key):
    if key not in cfg or cfg[key] is None:
        raise CLIError("config", f"missing required config key {key!r}")
    return cfg[key]


def _dataclass_config(cls, cfg: dict, skip=()):
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in cfg.items():
        if k in names and k not in skip:
            default = getattr(cls(), k)
            kw[k] = tuple(v) if isinstance(default, tuple) and isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise CLIError("config", str(e)) from None


def _write_meta(out: Path, sub: str, cfg: dict) -> None:
    meta = {"subcommand": sub, "version": __version__, "seed": cfg.get("seed"),
            "config": {k: v for k, v in cfg.items() if not k.startswith("_")}}
    with open(out / "run.meta", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _graph(cfg, key="graph") -> ns.Graph:
    g = ns.read_edge_list(_path(cfg, _require(cfg, key)))
    if cfg.get("labels"):
        g = g.with_labels(ns.read_vertex_labels(_path(cfg, cfg["labels"]), g.vertex_count))
    return g


def _model(cfg):
    """SHDSModel or HybridSystem described by ``model`` / ``system``."""
    if cfg.get("system") is not None:
        s = cfg["system"]
        if s.get("kind") != "pure_diffusion":
            raise CLIError("config", f"unknown system kind {s.get('kind')!r}")
        return reach.pure_diffusion(float(s["sigma"]), float(s.get("lower", 0.0)), float(s.get("upper", 1.0)))
    m = _require(cfg, "model")
    if isinstance(m, str):
        return shds.load_model(_path(cfg, m))
    return shds.model_from_config(m)


def _start(model, start: dict):
    if isinstance(model, shds.SHDSModel):
        if "seeds" in start:
            return model.initial({int(j): float(e) for j, e in start["seeds"].items()})
        x = np.asarray(start["x"], dtype=np.float64).reshape(model.K, model.d)
        return x, shds.DiscreteState.from_bits(start["q"])
    return np.asarray(start["x"], dtype=np.float64), int(start.get("q", 0))


def _region(cfg, key) -> reach.StateRegion:
    r = _require(cfg, key)
    if isinstance(r, str):
        with open(_path(cfg, r)) as fh:
            r = json.load(fh)
    return reach.StateRegion.from_config(r)


def _certificate(cfg) -> reach.AltitudeCertificate:
    c = _require(cfg, "certificate")
    if isinstance(c, str):
        return reach.load_certificate(_path(cfg, c))
    return reach.AltitudeCertificate.from_config(c)


def _horizon(cfg):
    h = cfg.get("horizon")
    return None if h in (None, "infinite") else float(h)


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_graph(cfg, out: Path):
    kind = cfg.get("kind", "planted")
    seed = int(cfg["seed"])
    if kind == "planted":
        g = ns.generate_planted_partition(int(_require(cfg, "n")), float(_require(cfg, "p_i")),
                                          float(_require(cfg, "p_e")), seed)
    elif kind == "block":
        g = ns.generate_block_graph([int(s) for s in _require(cfg, "sizes")], float(_require(cfg, "p_in")),
                                    float(_require(cfg, "p_out")), seed)
    elif kind == "community":
        cg = ns.generate_community_graph(int(_require(cfg, "K")), float(_require(cfg, "edge_prob")),
                                         float(_require(cfg, "size_exponent")), int(_require(cfg, "min_size")),
                                         seed)
        with open(out / "community_graph.json", "w") as fh:
            json.dump({"sizes": list(cg.sizes), "edges": [list(e) for e in cg.meta_edges]}, fh,
                      indent=2, sort_keys=True)
        _rows_csv(out / "community_sizes.csv", ["community", "size"], enumerate(cg.sizes))
        return f"community graph: K={cg.community_count} population={cg.population} edges={len(cg.meta_edges)}"
    else:
        raise CLIError("config", f"unknown graph kind {kind!r}")
    ns.write_edge_list(g, out / "graph.tsv")
    _rows_csv(out / "edges.csv", ["u", "v"], g.edges)
    return f"graph: n={g.vertex_count} m={g.edge_count}"


def cmd_partition(cfg, out: Path):
    g = _graph(cfg)
    p = ns.partition_communities(g, float(cfg.get("min_gain", 1e-6)))
    ns.write_partition_csv(p, out / "partition.csv")
    return f"communities={p.community_count} modularity={p.modularity_value!r}"


def cmd_kshell(cfg, out: Path):
    g = _graph(cfg)
    s = ns.k_shell_decomposition(g)
    ns.write_shells_csv(s, out / "shells.csv")
    return f"k_max={s.k_max} core_size={len(s.core())}"


def cmd_sim_abm(cfg, out: Path):
    if cfg.get("graph"):
        g = _graph(cfg)
    else:
        g = ns.generate_planted_partition(int(cfg.get("n", 500)), float(cfg.get("p_i", 0.1)),
                                          float(cfg.get("p_e", 0.0)), int(cfg["seed"]))
    p = cfg.get("params", {})
    params = abm.ABMParams(float(p.get("beta_p", 0.5)), float(p.get("delta1_p", 0.01)),
                           float(p.get("delta2_p", 0.1)))
    seeds = cfg.get("seed_vertices", [0])
    steps = int(cfg.get("steps", 100))
    runs = int(cfg.get("runs", 1))
    rows = []
    for r in range(runs):
        counts = abm.simulate_abm(g, params, seeds, steps, seed=int(stream(int(cfg["seed"]), r).integers(2**62)))
        rows.extend((r, k, *c) for k, c in enumerate(counts.tolist()))
    _rows_csv(out / "abm_counts.csv", ["run", "step", "P", "M", "E"], rows)
    return f"runs={runs} steps={steps}"


def cmd_sim_shds(cfg, out: Path):
    model = _model(cfg)
    if not isinstance(model, shds.SHDSModel):
        raise CLIError("config", "sim-shds needs an S-HDS model")
    x0, q0 = _start(model, _require(cfg, "start"))
    horizon = float(cfg.get("horizon", 10.0))
    dt = float(cfg.get("dt", shds.DEFAULT_DT))
    runs = int(cfg.get("runs", 1))
    for r in range(runs):
        traj = shds.simulate(model, x0, q0, horizon, dt, seed=int(stream(int(cfg["seed"]), r).integers(2**62)),
                             record_stride=int(cfg.get("record_stride", 1)))
        name = "trajectory.csv" if runs == 1 else f"trajectory_{r:03d}.csv"
        shds.write_trajectory_csv(traj, out / name)
        _rows_csv(out / name.replace("trajectory", "jumps"), ["t", "community", "source"], traj.jumps)
    return f"runs={runs} horizon={horizon!r} dt={dt!r}"


def cmd_reach_mc(cfg, out: Path):
    model = _model(cfg)
    start = _start(model, _require(cfg, "start"))
    target = _region(cfg, "target")
    runs_list = cfg.get("runs", 1000)
    runs_list = runs_list if isinstance(runs_list, list) else [runs_list]
    dts = cfg.get("dt")
    dts = dts if isinstance(dts, list) else [dts]
    rows = []
    for R in runs_list:
        for dt in dts:
            e = reach.mc_reach(model, start, target, _horizon(cfg), None if dt is None else float(dt),
                               int(R), int(cfg["seed"]), float(cfg.get("z", 1.96)))
            rows.append(e.row() | {"dt": "" if dt is None else repr(float(dt))})
    with open(out / "reach.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return "; ".join(f"runs={r['runs']} p_hat={r['value']} ci={r['half_width']}" for r in rows)


def cmd_reach_check(cfg, out: Path):
    model = _model(cfg)
    cert = _certificate(cfg)
    plan_cfg = cfg.get("plan", {})
    plan = reach.SamplePlan(**{k: plan_cfg[k] for k in plan_cfg})
    X = _region(cfg, "X") if cfg.get("X") is not None else None
    rep = reach.check_certificate(cert, model, _region(cfg, "X0"), _region(cfg, "Xs"), X, plan, _horizon(cfg))
    rep.write_csv(out / "check.csv")
    text = rep.summary()
    (out / "check.txt").write_text(text + "\n")
    return text


def cmd_warn_region(cfg, out: Path):
    model = _model(cfg)
    target = _region(cfg, "target")
    grid = _require(cfg, "grid")
    if "cells" in grid and isinstance(grid["cells"], list):
        cells = [_start(model, c) for c in grid["cells"]]
    else:
        cells = reach.grid_cells(float(grid["lower"]), float(grid["upper"]), int(grid["cells"]), int(grid.get("q", 0)))
    runs = cfg.get("runs", 200)
    dt = cfg.get("dt")
    wr = reach.warning_region(model, target, float(_require(cfg, "alpha")), cells, int(runs), int(cfg["seed"]),
                              horizon=_horizon(cfg), dt=None if dt is None else float(dt))
    wr.write_csv(out / "warning.csv")
    return f"flagged={int(wr.flagged.sum())}/{len(cells)} alpha={wr.alpha!r}"


def _curve_rows(curve):
    return [(c.ratio, c.probability_estimate, c.standard_error, c.runs) for c in curve]


def cmd_fig6(cfg, out: Path):
    fc = _dataclass_config(ex.Fig6Config, cfg)
    if "ratios" in cfg:
        fc = dataclasses.replace(fc, ratios=tuple(math.inf if r in ("inf", None) else float(r) for r in cfg["ratios"]))
    res = ex.run_fig6(fc)
    header = ["ratio", "p_hat", "stderr", "runs"]
    _rows_csv(out / "abm_curve.csv", header, _curve_rows(res.abm_curve))
    _rows_csv(out / "shds_curve.csv", header, _curve_rows(res.shds_curve))
    summary = res.summary()
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
    return (f"offset={res.offset!r} overlapping CIs {res.overlap_count}/{res.scored} "
            f"monotone abm={summary['abm_monotone']} shds={summary['shds_monotone']}")


def cmd_fig7(cfg, out: Path):
    fc = _dataclass_config(ex.Fig7Config, cfg)
    rows, extra = [], []
    for sw in ex.lambda_sweep(fc, shds.SIGMA_H):
        for R, lam, e in sw.rows():
            rows.append((R, lam, e.value, e.half_width, e.runs, "grid"))
        if sw.at_10x is not None:
            rows.append((sw.R, 10 * sw.lambda0, sw.at_10x.value, sw.at_10x.half_width, sw.at_10x.runs, "10x_lambda0"))
        extra.append(f"R={sw.R!r} lambda0={sw.lambda0!r}")
    _rows_csv(out / "lambda_sweep.csv", ["R", "lambda", "p_hat", "ci_half_width", "runs", "point"], rows)
    for kind, name in ((shds.SIGMA_H, "seed_dispersion_h.csv"), (shds.SIGMA_B, "seed_dispersion_b.csv")):
        ds = ex.dispersion_sweep(fc, kind)
        _rows_csv(out / name, ["communities_seeded", "p_hat", "ci_half_width", "runs"],
                  [(k, e.value, e.half_width, e.runs) for k, e in zip(ds.counts, ds.estimates)])
        extra.append(f"{kind}: spearman={ds.spearman():.3f} r2={ds.linear_r2():.3f}")
    return "; ".join(extra)


def _load_events(cfg):
    paths = []
    for p in cfg.get("events", []):
        p = _path(cfg, p)
        paths.extend(sorted(p.glob("*.events")) if p.is_dir() else [p])
    if not paths:
        raise CLIError("config", "no event files given")
    events = []
    for p in paths:
        events.extend(signals.parse_event_file(p, allow_empty=True))
    return events


def cmd_ew(cfg, out: Path):
    taus = tuple(float(t) for t in cfg.get("taus", (12.0, 24.0, 48.0)))
    folds = int(cfg.get("folds", 10))
    trees = int(cfg.get("trees", 100))
    lexicons, docs = [], None
    if cfg.get("synthetic") is not None:
        ec = _dataclass_config(ex.EWConfig, cfg["synthetic"])
        corpus = ex.generate_ew_corpus(ec, seed=int(cfg["seed"]))
        graph, events = corpus.graph, corpus.events
        signals.write_event_series(events, out / "corpus.events")
        ns.write_edge_list(graph, out / "blog_graph.tsv")
    else:
        graph = _graph(cfg)
        events = _load_events(cfg)
        for lx in cfg.get("lexicons", []):
            lexicons.append(signals.load_lexicon(_path(cfg, lx["path"]), lx.get("name"), lx.get("kind", "valence")))
        if cfg.get("documents"):
            ddir = _path(cfg, cfg["documents"])
            docs = {}
            for ev in events:
                f = ddir / f"{ev.event_id}.txt"
                if f.exists():
                    docs[ev.event_id] = [f.read_text()]
    partition = ns.read_partition_csv(graph, _path(cfg, cfg["partition"])) if cfg.get("partition") else None
    res = ex.ew_pipeline(graph, events, taus, folds, trees, int(cfg.get("max_depth", 6)), int(cfg.get("min_leaf", 2)),
                         int(cfg["seed"]), lexicons, docs, bool(cfg.get("stratify", False)), partition)
    signals.write_features_csv(res.features, out / "features.csv")
    _rows_csv(out / "alerts.csv", ["event_id", "tau_hours", "alert"], res.alerts)
    rows = []
    for tau, rep in res.reports.items():
        for k, a in enumerate(rep.fold_accuracy):
            rows.append((tau, "fold_accuracy", k, a))
        rows.append((tau, "mean_accuracy", "", rep.mean_accuracy))
        for name, v in rep.ranked_importance():
            rows.append((tau, "importance", name, v))
    _rows_csv(out / "cv_report.csv", ["tau_hours", "section", "key", "value"], rows)
    unresolved = sum(signals.unresolved_count(ev, graph) for ev in events)
    parts = [f"events={len(events)} communities={res.partition.community_count} unresolved_mentions={unresolved}"]
    parts += [f"tau={t!r}h accuracy={r.mean_accuracy:.3f} top={r.ranked_importance()[0][0]}" for t, r in res.reports.items()]
    return "; ".join(parts)


COMMANDS = {
    "fig6": cmd_fig6, "fig7": cmd_fig7, "ew": cmd_ew,
    "gen-graph": cmd_gen_graph, "partition": cmd_partition, "kshell": cmd_kshell,
    "sim-abm": cmd_sim_abm, "sim-shds": cmd_sim_shds,
    "reach-check": cmd_reach_check, "reach-mc": cmd_reach_mc, "warn-region": cmd_warn_region,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mesodiff", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (JSON value)")
        p.add_argument("--runs", type=int, action="append")
        p.add_argument("--dt", type=float, action="append")
        p.add_argument("--tau", type=float, action="append")
    return ap


def _category(e: Exception) -> str:
    if isinstance(e, CLIError):
        return e.category
    if isinstance(e, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return "input"
    if isinstance(e, KeyError):
        return "config"
    if isinstance(e, ValueError):
        return "value"
    return "runtime"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config({}, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_meta(out, args.command, cfg)
        msg = COMMANDS[args.command](cfg, out)
    except Exception as e:  # noqa: BLE001 - reported as one machine-readable line
        text = str(e).replace("\n", " | ") if not isinstance(e, KeyError) else f"missing key {e}"
        print(f"ERROR category={_category(e)} message={json.dumps(text)}", file=sys.stderr)
        return 2
    if msg:
        print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
