"""Command-line entry point ``landau``.

Stage subcommands run the pipeline up to their stage, reusing intact earlier
outputs.  ``--q``/``--kappa``/``--eta1`` overrides compute on the stored
diagnostics and print JSON without touching the stage files.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import degiorgi as dg
from . import functionals as fn
from .evolution import ConfigError, RunConfig
from .grid import read_snapshot, write_snapshot
from .initial_data import prepare
from .operator import KernelSpec
from .pipeline import (
    StageFailure,
    export_plot_data,
    load_manifest,
    load_series,
    run_pipeline,
    singular_stage,
    verify_run,
)

_STAGE_OF = {
    "prep": "prep",
    "simulate": "simulate",
    "diagnose": "diagnose",
    "degiorgi": "degiorgi",
    "detect-singular": "detect-singular",
    "pipeline": "detect-singular",
}


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")


def _run_dir(args) -> Path:
    if args.run:
        return load_manifest(args.run)[1]
    if args.config:
        manifest, directory = run_pipeline(args.config, until=_STAGE_OF.get(args.command, "diagnose"))
        return directory
    raise SystemExit(f"{args.command}: need --run <manifest> or --config <file>")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _cmd_prep(args) -> int:
    if args.input is None:
        return _cmd_stage(args)
    if args.n is None:
        raise SystemExit("prep --input needs --n <index>")
    prepared = prepare(read_snapshot(args.input), args.n)
    if args.output:
        write_snapshot(args.output, prepared.floored)
    _emit(prepared.ledger_dict())
    return 0


def _cmd_diagnose(args) -> int:
    if args.snapshot is None:
        return _cmd_stage(args)
    f = read_snapshot(args.snapshot)
    kernel = KernelSpec(args.kernel_n) if args.kernel_n is not None else None
    _emit(fn.snapshot_functionals(f, args.q or [1.5], args.kappa or [1.0, 2.0, 4.0], kernel))
    return 0


def _cmd_stage(args) -> int:
    if args.verify:
        if not args.run:
            raise SystemExit("--verify needs --run <manifest>")
        result = verify_run(args.run)
        _emit(result)
        return 0 if result["identical"] and not result["checksum_mismatches"] else 1
    if args.run:
        manifest, _ = load_manifest(args.run)
        config = manifest.run_config()
    elif args.config:
        config = RunConfig.load(args.config)
    else:
        raise SystemExit(f"{args.command}: need --config <file> or --run <manifest>")
    if args.seed is not None and args.seed != config.seed:
        config = replace(config, seed=args.seed)
    manifest, directory = run_pipeline(config, until=_STAGE_OF[args.command])
    print(directory / "manifest.json")
    if args.command == "simulate":
        events = json.loads((directory / "simulate" / "events.json").read_text())
        for e in events:
            print(f"event: {e['kind']} at t={e['time']:.6g} value={e['value']:.3g}", file=sys.stderr)
    return 0


def _cmd_degiorgi(args) -> int:
    if args.q is None and args.eta1 is None:
        return _cmd_stage(args)
    directory = _run_dir(args)
    manifest, _ = load_manifest(directory)
    config = manifest.run_config()
    series = load_series(directory)
    out = {}
    for q in [args.q] if args.q is not None else config.qs:
        entry = dg.degiorgi_report(series, q, max(config.degiorgi_levels, 1))
        if dg.Q_IMPROVED[0] < q < dg.Q_IMPROVED[1]:
            eta1 = args.eta1 if args.eta1 is not None else dg.eta1_upper(q)
            entry["improved"] = dg.improved_dg_criterion(series, q, eta1, tuple(config.eps_exponents))
        out[repr(q)] = entry
    _emit(out)
    return 0


def _cmd_singular(args) -> int:
    if args.q is None and args.eta1 is None:
        return _cmd_stage(args)
    directory = _run_dir(args)
    manifest, _ = load_manifest(directory)
    config = manifest.run_config()
    series = load_series(directory)
    ledger = json.loads((directory / "prep" / "ledger.json").read_text())
    q = args.q if args.q is not None else 1.6
    eta1 = args.eta1 if args.eta1 is not None else dg.eta1_upper(q)
    report = singular_stage(series, q, eta1, config.eps_exponents, ledger["H_plus_1"] + 4.0 * ledger["mass"])
    if args.intervals:
        Path(args.intervals).write_text(report.intervals_csv())
    _emit(report.to_dict())
    return 0


def _cmd_verify_lemmas(args) -> int:
    suite = fn.scalar_lemma_suite(seed=args.seed or 0, samples=args.samples)
    out = {"scalar_lemmas": suite}
    if args.run:
        _, directory = load_manifest(args.run)
        f = read_snapshot(directory / "prep" / "initial.bin")
        qs = [args.q] if args.q is not None else [1.4, 1.5, 1.6]
        kappa = args.kappa if args.kappa is not None else 1.0
        out["holder_chain"] = {repr(q): fn.holder_chain_check(f, q, kappa).to_dict() for q in qs}
    _emit(out)
    return 0


def _cmd_scale_check(args) -> int:
    directory = _run_dir(args)
    f = read_snapshot(directory / "prep" / "initial.bin")
    q = args.q if args.q is not None else 1.5
    kappa = args.kappa if args.kappa is not None else 1.0
    _emit({str(n): dg.scaled_identities(f, n, q, kappa) for n in args.levels})
    return 0


def _cmd_export(args) -> int:
    directory = _run_dir(args)
    text = export_plot_data(directory, args.quantity)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_report(args) -> int:
    from .plotting import render_report

    directory = _run_dir(args)
    for p in render_report(directory):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="landau", description="Landau-Coulomb numerical laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--run", help="manifest.json or run directory")
        p.add_argument("--seed", type=int, help="overrides the config seed (gives a new run id)")
        p.set_defaults(handler=handler)
        return p

    stages = {}
    for name, handler, help_ in (
        ("prep", _cmd_prep, "truncate, mollify and floor the initial datum"),
        ("simulate", _cmd_stage, "evolve to the horizon and store snapshots"),
        ("diagnose", _cmd_diagnose, "compute the diagnostics table from snapshots"),
        ("pipeline", _cmd_stage, "run every stage"),
    ):
        stages[name] = add(name, handler, help_)
        stages[name].add_argument("--verify", action="store_true", help="replay the run and byte-compare diagnostics")
    stages["prep"].add_argument("--input", help="prepare this snapshot instead of running the stage")
    stages["prep"].add_argument("--n", type=int, help="regularization index for --input")
    stages["prep"].add_argument("-o", "--output", help="write the prepared snapshot here")
    stages["diagnose"].add_argument("--snapshot", help="evaluate every functional on this snapshot")
    stages["diagnose"].add_argument("--q", type=_floats, help="comma-separated exponents (default 1.5)")
    stages["diagnose"].add_argument("--kappa", type=_floats, help="comma-separated levels (default 1,2,4)")
    stages["diagnose"].add_argument("--kernel-n", type=int, help="also report D_psi with the index-n kernel")
    p = add("degiorgi", _cmd_degiorgi, "De Giorgi energies and smallness thresholds")
    p.add_argument("--q", type=float)
    p.add_argument("--eta1", type=float)
    p.add_argument("--verify", action="store_true")
    p = add("detect-singular", _cmd_singular, "flag candidate singular times")
    p.add_argument("--q", type=float)
    p.add_argument("--eta1", type=float)
    p.add_argument("--intervals", help="also write the interval CSV here")
    p.add_argument("--verify", action="store_true")
    p = add("verify-lemmas", _cmd_verify_lemmas, "scalar lemma suite and Holder chain")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--q", type=float)
    p.add_argument("--kappa", type=float)
    p = add("scale-check", _cmd_scale_check, "scaling identities on the prepared datum")
    p.add_argument("--q", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3])
    p = add("export", _cmd_export, "two-column CSV of one diagnostic")
    p.add_argument("quantity")
    p.add_argument("-o", "--output")
    add("report", _cmd_report, "render figures into <run>/figures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not getattr(args, "verbose", False):
        warnings.simplefilter("ignore")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except KeyError as exc:
        print(exc.args[0] if exc.args else str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
