"""Command-line interface.

    xosbpd run [CONFIG] [--preset NAME] [--scale desk|paper] [--model M] [--out DIR]
    xosbpd kernels CONFIG|--preset NAME
    xosbpd probe CONFIG --state SNAPSHOT.vtk [--out DIR]
    xosbpd check

Exit codes: 0 success, 1 failed check or unexpected error, 2 usage,
3 config, 4 input, 5 geometry, 6 kernel, 7 mechanics, 8 solver, 9 I/O.
``XOSBPD_NUM_THREADS`` overrides the worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import XosbpdError

EXIT_CODES = {"config": 3, "input": 4, "geometry": 5, "kernel": 6, "mechanics": 7,
              "solver": 8, "io": 9}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _parser():
    p = _Parser(prog="xosbpd", description="Corrected state-based peridynamics solver.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run a config file or a preset")
    r.add_argument("config", nargs="?", help="TOML run config")
    r.add_argument("--preset", help="plate2d, block3d or kalthoff")
    r.add_argument("--scale", choices=("desk", "paper"), help="preset resolution")
    r.add_argument("--model", choices=("xosbpd", "osbpd", "lbbpd"), help="override the model")
    r.add_argument("--out", help="output directory (default: output.directory)")

    k = sub.add_parser("kernels", help="compute kernels and report constraint residuals")
    k.add_argument("config", nargs="?")
    k.add_argument("--preset")
    k.add_argument("--scale", choices=("desk", "paper"))
    k.add_argument("--model", choices=("xosbpd", "osbpd", "lbbpd"))

    pr = sub.add_parser("probe", help="sample the config's probes from a snapshot file")
    pr.add_argument("config", nargs="?")
    pr.add_argument("--preset")
    pr.add_argument("--scale", choices=("desk", "paper"))
    pr.add_argument("--model", choices=("xosbpd", "osbpd", "lbbpd"))
    pr.add_argument("--state", required=True, help="snapshot .vtk written by a run")
    pr.add_argument("--out", help="directory for the probe CSVs (default: next to the state)")

    sub.add_parser("check", help="run the invariant suite on built-in micro-cases")
    return p


def _set_threads():
    value = os.environ.get("XOSBPD_NUM_THREADS")
    if not value:
        return
    import numba

    try:
        numba.set_num_threads(max(1, min(int(value), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        warnings.warn(f"ignoring XOSBPD_NUM_THREADS={value!r}", stacklevel=2)


def _config(args, parser):
    from . import config as cfgmod
    from .presets import preset_dict

    if args.config and args.preset:
        parser.error("give either a config file or --preset, not both")
    if args.config:
        base = Path(args.config).resolve().parent
        data = cfgmod.read_toml(args.config)
        if getattr(args, "scale", None):
            data.setdefault("scenario", {})["scale"] = args.scale
    elif args.preset:
        base = Path.cwd()
        data = preset_dict(args.preset, args.scale or "desk")
    else:
        parser.error("a config file or --preset is required")
    if getattr(args, "model", None):
        data.setdefault("model", {})["name"] = args.model
    return cfgmod.from_dict(data), base


def _cmd_run(args, parser):
    from .runner import run

    cfg, base = _config(args, parser)
    out = args.out or cfg.output.directory
    if args.out is None and args.model and cfg.scenario.preset:
        out = f"{out}_{cfg.model.name}"
    result = run(cfg, out_dir=out, base_dir=base)
    rep = result.report
    if cfg.solver.kind == "adr":
        print(f"{cfg.scenario.name} [{cfg.model.name}] converged in {rep['iterations']} ADR "
              f"iterations, residual {rep['residual']:.2e}")
    else:
        print(f"{cfg.scenario.name} [{cfg.model.name}] {rep['steps']} steps to "
              f"t = {rep['time']:.6g} s, {rep['new_broken_bonds']} bonds broken")
        for tip in rep.get("tips", []):
            t0 = tip["initiation_time"]
            ang = tip["angle_deg"]
            print(f"  tip {tip['tip']}: initiation "
                  f"{'none' if t0 is None else f'{t0 * 1e6:.2f} us'}, angle "
                  f"{'n/a' if ang is None else f'{ang:.1f} deg'}")
    for f in result.files:
        print(f"  wrote {f}")
    return 0


def _cmd_kernels(args, parser):
    from .kernel import all_residuals, constraint_residuals
    from .runner import build_kernels, build_scenario

    cfg, base = _config(args, parser)
    scen = build_scenario(cfg, base, kernels=False)
    kern = build_kernels(cfg, scen.nodes, scen.graph, scen.weight, base)
    h0, d0 = all_residuals(scen.nodes, scen.graph, kern, spherical=True)
    h, d = all_residuals(scen.nodes, scen.graph, kern)
    ok = ~kern.singular_fallback
    worst = int(np.argmax(np.maximum(h0, d0)))
    hw, dw = constraint_residuals(scen.nodes, scen.graph, kern, worst)
    lam_h, lam_d = kern.conditioning()
    report = {
        "model": kern.model, "families": scen.nodes.n_nodes, "bonds": scen.graph.n_bonds // 2,
        "max_residual_spherical": float(max(h0.max(), d0.max())),
        "max_residual_used": float(max(h[ok].max(initial=0), d[ok].max(initial=0))),
        "worst_family": worst,
        "worst_family_residual_used": float(max(np.abs(hw).max(), np.abs(dw).max())),
        "singular_families": int(kern.singular_fallback.sum()),
        "hydro_fallback_families": int(kern.hydro_fallback.sum()),
        "negative_omega_d": kern.negative_omega_d,
        "max_abs_lambda_h": lam_h, "max_abs_lambda_d": lam_d,
    }
    print(json.dumps(report, indent=2))
    return 0


def _cmd_probe(args, parser):
    from . import output
    from .runner import build_nodes, write_probes

    cfg, base = _config(args, parser)
    nodes = build_nodes(cfg, base)
    points, arrays = output.read_snapshot(args.state)
    if points.shape[0] != nodes.n_nodes or not np.allclose(
            points[:, :nodes.dimension], nodes.positions, rtol=1e-8, atol=1e-12):
        raise XosbpdError(f"{args.state} does not match the config's {nodes.n_nodes} nodes")
    fields = output.snapshot_fields(arrays, nodes.dimension)
    missing = {q for p in cfg.output.probes for q in p.quantities} - set(fields)
    if missing:
        raise XosbpdError(f"{args.state} lacks quantities {sorted(missing)}")
    out = Path(args.out) if args.out else Path(args.state).parent
    stem = Path(args.state).stem
    step = stem.rsplit("_", 1)[-1]
    title = output.snapshot_title(args.state).split()
    run_id = title[0] if title else stem
    t = next((w[2:] for w in title if w.startswith("t=")), "unknown")
    meta = {"run_id": run_id, "model": cfg.model.name, "step": int(step) if step.isdigit() else 0,
            "time": t}
    for f in write_probes(cfg, nodes, fields, out, meta):
        print(f"wrote {f}")
    return 0


def _cmd_check(args, parser):
    from .checks import run_checks

    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} {r.detail}  ({r.seconds:.2f} s)")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {"run": _cmd_run, "kernels": _cmd_kernels, "probe": _cmd_probe, "check": _cmd_check}


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads()
    try:
        return COMMANDS[args.command](args, parser)
    except XosbpdError as exc:
        cat = getattr(exc, "category", "error")
        print(f"error [{cat}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(cat, 1)
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
