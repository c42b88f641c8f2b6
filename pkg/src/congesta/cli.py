"""Command-line entry point: ``congesta run | counterexample | oned``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, CongestaError
from .scenario import counterexample_report, load_scenario, run_scenario, with_overrides, write_csv
from .oned import oned_table

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_CONFIG = 3
EXIT_ABORT = 4


def _resolution(text: str) -> list[int]:
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}; expected N or NxM") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 4:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}")
    return vals


def _levels(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="congesta", description="Equilibrium media, level curves and velocity decomposition.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario over its time window")
    run.add_argument("scenario", help="scenario TOML file or shipped scenario name")
    run.add_argument("--out", type=Path, help="output directory (overrides outputs.dir)")
    run.add_argument("--levels", type=_levels, help="comma-separated list of levels p")
    run.add_argument("--resolution", type=_resolution, help="grid cells, N or NxM")
    run.add_argument("--quiet", action="store_true", help="only print the final status")

    ce = sub.add_parser("counterexample", help="pointwise vs averaged continuity on the torus strip")
    ce.add_argument("--t", type=float, default=1.0, help="time (default 1.0)")
    ce.add_argument("--resolution", type=int, default=256, help="cells per axis (default 256)")
    ce.add_argument("--scenario", default="counterexample_52", help="scenario to use")
    ce.add_argument("--out", type=Path, help="write counterexample.json here")

    od = sub.add_parser("oned", help="explicit one-dimensional pipeline")
    od.add_argument("scenario", help="1-D scenario TOML file or shipped scenario name")
    od.add_argument("--out", type=Path, help="output directory (overrides outputs.dir)")
    return ap


def _print_summary(summary: dict) -> None:
    for step in summary["steps"]:
        if "error" in step:
            print(f"t={step['t']:g}  ERROR {step['error']}")
            continue
        print(f"t={step['t']:g}  U_N={step['U_N']:.10g}  mass={step['mass']:.10g}")
        for c in step["curves"]:
            print(f"  p={c['p']:g}  L={c['length']:.6g}  coarea={c['coarea']:.8f}  "
                  f"avg_res={c['avg_residual']:.3e}  |theta|={c['theta_norm']:.3e}  "
                  f"weak={c['weak_residual']:.3e}")
        for name, verdict in step["invariants"].items():
            print(f"  {name:28s} {verdict}")
    for key in ("oned", "particles"):
        if key in summary and summary[key]:
            for name, verdict in summary[key]["invariants"].items():
                print(f"{key}: {name:28s} {verdict}")


def _cmd_run(args) -> int:
    s = load_scenario(args.scenario)
    if args.levels is not None or args.resolution is not None:
        res = None
        if args.resolution is not None:
            res = args.resolution[: s.dimension] if s.dimension == 2 else args.resolution[:1]
        s = with_overrides(s, levels=args.levels, resolution=res)
    summary = run_scenario(s, args.out)
    if not args.quiet:
        _print_summary(summary)
    if "error" in summary:
        print(f"error: {summary['error']}", file=sys.stderr)
    print(f"status: {summary['status']}")
    return {"pass": EXIT_OK, "fail": EXIT_INVARIANT}.get(summary["status"], EXIT_ABORT)


def _cmd_counterexample(args) -> int:
    s = load_scenario(args.scenario)
    s = with_overrides(s, resolution=[args.resolution, args.resolution])
    rep = counterexample_report(s, t=args.t, out_dir=args.out)
    print(f"t={rep['t']:g}  resolution={rep['resolution'][0]}x{rep['resolution'][1]}  "
          f"excluded band={rep['excluded_band']:.4g}")
    print(f"(i)   max pointwise residual  {rep['max_pointwise_residual']:.6g}  at {rep['argmax']}")
    for lv in rep["levels"]:
        print(f"(ii)  p={lv['p']:g}  averaged residual {lv['avg_residual']:.3e}")
    for lv in rep["levels"]:
        print(f"(iii) p={lv['p']:g}  weak residual {lv['weak_residual']:.3e}  max|v_par| {lv['max_v_par']:.6g}")
    for name, verdict in rep["checks"].items():
        print(f"{name:28s} {verdict}")
    print(f"status: {rep['status']}")
    return EXIT_OK if rep["status"] == "pass" else EXIT_INVARIANT


def _cmd_oned(args) -> int:
    s = load_scenario(args.scenario)
    if s.dimension != 1:
        raise ConfigError("the oned command needs a scenario with dimension = 1")
    out = Path(args.out if args.out is not None else s.config["outputs"]["dir"])
    header, rows = oned_table(s.field_spec, s.N, s.times)
    write_csv(out / "oned.csv", header, rows.T)
    print(",".join(header))
    for r in rows:
        print(",".join(f"{v:.10g}" for v in r))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "counterexample": _cmd_counterexample, "oned": _cmd_oned}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CongestaError as exc:
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
