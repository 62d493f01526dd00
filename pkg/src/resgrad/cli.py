"""Command-line interface: run, sweep, fdref-solve, fdref-gridstudy, audit,
report, sign-test.

Precedence for run/sweep settings: built-in defaults, then the TOML config
file, then flags.  Flags are generated from the stage config fields, so
every config key has a flag of the same name (underscores become dashes).
The output directory can be overridden globally with RESGRAD_OUT_DIR.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import annulus, fdref, harness
from . import net as dn
from . import stage1 as s1
from . import stage2 as s2


def _stage_flag_fields() -> dict[str, dataclasses.Field]:
    fields: dict[str, dataclasses.Field] = {}
    for cls in (s1.Stage1TrainConfig, s2.Stage2TrainConfig):
        for fld in dataclasses.fields(cls):
            fields.setdefault(fld.name, fld)
    return fields


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML run config")
    parser.add_argument("--stage", choices=("stage1", "stage2"))
    parser.add_argument("--out-dir", dest="out_dir")
    for name in sorted(_stage_flag_fields()):
        parser.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", default=None)


def _build_config(args) -> harness.RunConfig:
    if args.config is not None:
        cfg = harness.load_config(args.config)
        if args.stage is not None and args.stage != cfg.stage:
            raise harness.ConfigError(
                f"--stage {args.stage} conflicts with config stage {cfg.stage}"
            )
    else:
        if args.stage is None:
            raise harness.ConfigError("either --config or --stage is required")
        cfg = harness.RunConfig(stage=args.stage)
    overrides = {}
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    for name in _stage_flag_fields():
        value = getattr(args, f"cfg_{name}", None)
        if value is not None:
            overrides[name] = value
    return harness.apply_overrides(cfg, overrides)


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    summary = harness.run(cfg)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return 1 if summary.failed else 0


def _parse_list(text: str, cast):
    return [cast(v) for v in text.split(",") if v != ""]


def _cmd_sweep(args) -> int:
    cfg = _build_config(args)
    arms = _parse_list(args.arms, str)
    seeds = _parse_list(args.seeds, int)
    weights = _parse_list(args.weights, float) if args.weights else None
    summaries, agg = harness.sweep(cfg, arms, seeds, weights=weights)
    for row in agg:
        print(json.dumps(row, sort_keys=True))
    return 1 if any(s.failed for s in summaries) else 0


def _geometry_from_args(args) -> annulus.AnnulusGeometry:
    geom = annulus.standard_geometry()
    if args.amplitude is not None:
        geom = annulus.AnnulusGeometry(
            r_min=geom.r_min, r_max=geom.r_max, length=geom.length,
            amplitude=args.amplitude, lobes=geom.lobes,
        )
    return geom


def _flux_from_args(args, geom) -> annulus.FluxProfile:
    if args.q_const is not None:
        return annulus.constant_flux(geom, args.q_const)
    return annulus.FluxProfile(
        z1=args.z1_frac * geom.length, z2=args.z2_frac * geom.length, q_max=args.q_max
    )


def _cmd_fdref_solve(args) -> int:
    geom = _geometry_from_args(args)
    flux = _flux_from_args(args, geom)
    field = fdref.solve_reference(args.ns, args.ntheta, args.nz, geom, flux, tol=args.tol)
    slc = fdref.wall_slice(field)
    fdref.write_wall_slice(slc, args.out, geom, flux)
    print(json.dumps({
        "grid": [args.ns, args.ntheta, args.nz],
        "convergence": field.convergence,
        "wall_slice": str(args.out),
    }, indent=2))
    return 0


def _cmd_fdref_gridstudy(args) -> int:
    geom = _geometry_from_args(args)
    flux = _flux_from_args(args, geom)
    grids = []
    for token in args.grids.split(","):
        ns, nt, nz = (int(v) for v in token.split("x"))
        grids.append((ns, nt, nz))
    rows = fdref.grid_study(grids, geom, flux, tol=args.tol)
    payload = [row.as_dict() for row in rows]
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=list(payload[0]))
            writer.writeheader()
            for row in payload:
                writer.writerow({k: (v if not isinstance(v, list) else "x".join(map(str, v)))
                                 for k, v in row.items()})
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_audit(args) -> int:
    cfg = _build_config(args)
    params = dn.load_checkpoint(args.checkpoint)
    if cfg.stage == "stage1":
        c = cfg.stage1
        metrics = s1.audit_stage1(params, c.seed_audit, n_points=c.audit_points, bank_n=c.bank_n)
        payload = metrics.as_dict()
    else:
        payload = s2.audit_stage2(params, cfg.stage2).as_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    summaries = []
    for path in args.runs:
        p = Path(path)
        if p.is_dir():
            for f in sorted(p.glob("*.json")):
                summaries.append(json.loads(f.read_text()))
        else:
            summaries.append(json.loads(p.read_text()))
    ranking = harness.report(summaries)
    print(json.dumps(ranking, indent=2))
    return 0


def _cmd_sign_test(args) -> int:
    p = harness.paired_sign_test(args.wins, args.n)
    print(json.dumps({"wins": args.wins, "n": args.n, "p_two_sided": p}))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="resgrad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one training run")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="cartesian arm x seed (x weight) sweep")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--arms", required=True, help="comma-separated arm list")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated seed list")
    p_sweep.add_argument("--weights", default=None, help="stage-1 aux weight list")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_solve = sub.add_parser("fdref-solve", help="solve the FD reference, write the wall slice")
    p_solve.add_argument("--ns", type=int, default=25)
    p_solve.add_argument("--ntheta", type=int, default=48)
    p_solve.add_argument("--nz", type=int, default=97)
    p_solve.add_argument("--tol", type=float, default=1e-10)
    p_solve.add_argument("--amplitude", type=float, default=None)
    p_solve.add_argument("--q-const", dest="q_const", type=float, default=None)
    p_solve.add_argument("--z1-frac", dest="z1_frac", type=float, default=0.2)
    p_solve.add_argument("--z2-frac", dest="z2_frac", type=float, default=0.4)
    p_solve.add_argument("--q-max", dest="q_max", type=float, default=1.0)
    p_solve.add_argument("--out", type=Path, required=True)
    p_solve.set_defaults(func=_cmd_fdref_solve)

    p_study = sub.add_parser("fdref-gridstudy", help="nested-grid refinement study")
    p_study.add_argument("--grids", required=True, help="e.g. 13x16x17,13x16x33")
    p_study.add_argument("--tol", type=float, default=1e-10)
    p_study.add_argument("--amplitude", type=float, default=None)
    p_study.add_argument("--q-const", dest="q_const", type=float, default=None)
    p_study.add_argument("--z1-frac", dest="z1_frac", type=float, default=0.2)
    p_study.add_argument("--z2-frac", dest="z2_frac", type=float, default=0.4)
    p_study.add_argument("--q-max", dest="q_max", type=float, default=1.0)
    p_study.add_argument("--out", type=Path, default=None)
    p_study.set_defaults(func=_cmd_fdref_gridstudy)

    p_audit = sub.add_parser("audit", help="recompute audit metrics from a checkpoint")
    _add_config_flags(p_audit)
    p_audit.add_argument("--checkpoint", type=Path, required=True)
    p_audit.set_defaults(func=_cmd_audit)

    p_report = sub.add_parser("report", help="rank arms under the metric hierarchy")
    p_report.add_argument("runs", nargs="+", help="run JSON files or directories")
    p_report.set_defaults(func=_cmd_report)

    p_sign = sub.add_parser("sign-test", help="exact paired sign test")
    p_sign.add_argument("--wins", type=int, required=True)
    p_sign.add_argument("--n", type=int, required=True)
    p_sign.set_defaults(func=_cmd_sign_test)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
