"""Command-line entry point.

Exit codes: 0 when every check passes, 1 on a failed check, 2 on a bad
configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness as H
from . import metrics as mt
from . import plotting
from .kernel import KernelError
from .meanfield import ConfigurationError, SamplerError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_TAGS = {
    "simulate": "simulate",
    "golden": "golden",
    "demo-discontinuity": "discontinuity",
    "invariants": "invariants",
    "metric-props": "metric_props",
    "converge": "converge",
    "dw1-probe": "dw1_probe",
}


def _config(args, tag, required=False):
    if args.config is None:
        if required:
            raise H.ConfigError(f"{args.command} needs --config")
        return None
    cfg = H.ExperimentConfig.load(args.config)
    if cfg.experiment != tag:
        raise H.ConfigError(f"config is for experiment {cfg.experiment!r}, not {tag!r}")
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or (cfg.out_dir if cfg and cfg.out_dir else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(rep, out: Path, stem: str) -> int:
    H.write_json(out / f"{stem}.json", rep.to_dict())
    for line in rep.lines():
        print(line)
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_golden(args) -> int:
    cfg = _config(args, "golden")
    rep = H.run_golden(cfg)
    out = _out_dir(args, cfg)
    rows = []
    for key in ("eps=+0.5", "eps=-0.5"):
        d = rep.data[key]
        for k, t in enumerate(d["t"]):
            rows.append([key[4:], repr(float(t))] + [repr(float(c)) for c in d["V"][k]]
                        + [repr(float(c)) for c in d["exact"][k]])
    H.write_table(out / "golden.csv", ["eps", "t", "V1", "V2", "V3", "V1_exact", "V2_exact", "V3_exact"], rows)
    plotting.plot_golden(rep, out / "golden.png")
    return _finish(rep, out, "golden")


def cmd_discontinuity(args) -> int:
    cfg = _config(args, "discontinuity")
    p = cfg.params if cfg else {}
    rep = H.run_discontinuity(float(p.get("eps_small", 1e-6)), cfg.T if cfg else 1.0,
                              (cfg.h if cfg and cfg.h else 1e-3), cfg.kernel if cfg else None, cfg)
    out = _out_dir(args, cfg)
    a, b = rep.data["branch+1"], rep.data["branch-1"]
    H.write_table(out / "discontinuity.csv", ["t", "V2_plus", "V2_minus"],
                  [[repr(float(t)), repr(float(x)), repr(float(y))] for t, x, y in zip(a["t"], a["V2"], b["V2"])])
    plotting.plot_discontinuity(rep, out / "discontinuity.png")
    return _finish(rep, out, "discontinuity")


def cmd_simulate(args) -> int:
    cfg = _config(args, "simulate", required=True)
    rep, traj = H.run_simulate(cfg)
    out = _out_dir(args, cfg)
    H.write_trajectory_csv(out / "trajectory.csv", traj, every=int(cfg.param("every", 1)))
    H.write_dat(out / "max_speed.dat", ["t", "max_speed"],
                [(float(t), float(s)) for t, s in zip(traj.times, rep.data["max_speed"])])
    plotting.plot_max_speed(traj.times, rep.data["max_speed"], out / "max_speed.png")
    return _finish(rep, out, "summary")


def cmd_invariants(args) -> int:
    cfg = _config(args, "invariants")
    return _finish(H.run_invariants(cfg), _out_dir(args, cfg), "invariants")


def cmd_metric_props(args) -> int:
    cfg = _config(args, "metric_props")
    return _finish(H.run_metric_props(cfg), _out_dir(args, cfg), "metric_props")


def cmd_converge(args) -> int:
    cfg = _config(args, "converge", required=True)
    rep = H.run_convergence(cfg)
    out = _out_dir(args, cfg)
    H.write_table(out / "convergence.csv",
                  ["seed", "N", "t", "W1_phase", "W1_spatial", "discrepancy_lower", "delta"], rep.rows)
    Ns = sorted(rep.median_sup)
    H.write_dat(out / "convergence.dat", ["N", "median_sup_W1", "median_ratio"],
                [(N, rep.median_sup[N], rep.median_ratio[N]) for N in Ns])
    plotting.plot_convergence(rep, out / "convergence.png")
    return _finish(rep, out, "convergence")


def cmd_dw1(args) -> int:
    cfg = _config(args, "dw1_probe")
    rep = H.run_dw1_probe(cfg)
    out = _out_dir(args, cfg)
    H.write_table(out / "dw1.csv", ["N", "seed", "W1", "D", "C"], rep.data["rows"])
    H.write_dat(out / "dw1.dat", ["N", "median_C"], [(N, c) for N, c in rep.data["median_C"].items()])
    plotting.plot_dw1(rep, out / "dw1.png")
    return _finish(rep, out, "dw1")


def read_points(path, space: str = "phase") -> mt.EmpiricalMeasure:
    """Points from a CSV: ensemble files (x_*, v_*) or any numeric columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise H.ConfigError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    xs = [k for k, c in enumerate(header) if c.startswith("x_")]
    vs = [k for k, c in enumerate(header) if c.startswith("v_")]
    if xs:
        cols = xs if space == "position" else xs + vs
    else:
        cols = [k for k, c in enumerate(header) if c not in ("agent_id", "id")]
    try:
        pts = np.array([[float(r[k]) for k in cols] for r in body])
    except (ValueError, IndexError) as exc:
        raise H.ConfigError(f"{path}: non-numeric point data ({exc})") from exc
    return mt.EmpiricalMeasure(pts)


def cmd_metrics(args) -> int:
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise H.ConfigError(f"cannot read config: {exc}") from exc
        files = [raw.get("mu"), raw.get("nu")]
        space = raw.get("space", args.space)
    else:
        files, space = args.files, args.space
    if len(files) != 2 or not all(files):
        raise H.ConfigError("metrics needs two point files")
    try:
        mu, nu = (read_points(f, space) for f in files)
    except FileNotFoundError as exc:
        raise H.ConfigError(str(exc)) from exc
    if mu.dim != nu.dim:
        raise H.ConfigError("point files have different dimensions")
    w1 = mt.wasserstein1(mu, nu) if mu.n == nu.n else mt.wasserstein1_weighted(mu, nu)
    bounds = mt.discrepancy(mu, nu)
    result = {"wasserstein1": w1, "discrepancy_lower": bounds.lower, "discrepancy_upper": bounds.upper}
    out = _out_dir(args, None)
    H.write_json(out / "metrics.json", result)
    print(json.dumps(result))
    return EXIT_PASS


_COMMANDS = {
    "simulate": cmd_simulate,
    "golden": cmd_golden,
    "demo-discontinuity": cmd_discontinuity,
    "invariants": cmd_invariants,
    "metric-props": cmd_metric_props,
    "converge": cmd_converge,
    "dw1-probe": cmd_dw1,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topoflock", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (default: config out_dir or ./out)")
        if name == "metrics":
            p.add_argument("files", nargs="*", help="two CSV point files")
            p.add_argument("--space", choices=("phase", "position"), default="phase")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (H.ConfigError, ConfigurationError, SamplerError, KernelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
