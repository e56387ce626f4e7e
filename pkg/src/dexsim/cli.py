"""Command-line interface.

    dexsim preset fig-rabi --out results/
    dexsim run --seq experiment.dexseq --out results/ --trajectories 5000
    dexsim fit --model exp_decay --data decay.csv --init 1,1000 --out results/

Exit codes: 0 ok, 2 bad arguments or missing file, 3 sequence parse error,
4 simulation error, 5 fit error.  The seed can be pinned with the
DEXSIM_SEED environment variable; an explicit --seed always wins.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import FitError, lm_fit, load_fit_csv, model_library
from .dynamics import SimulationError, run_ensemble
from .integrate import IntegrationError
from .photonics import ClickStream
from .pulses import FrameError
from .presets import CSV_SCHEMA_VERSION, PRESET_NAMES, PresetConfig, run_preset
from .seqlang import ParseError, parse

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_PARSE = 3
EXIT_SIMULATION = 4
EXIT_FIT = 5

SEED_ENV_VAR = "DEXSIM_SEED"


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dexsim",
        description="Dark-exciton qubit simulator: run sequences, figure presets, fits.")
    ap.add_argument("--version", action="version", version=f"dexsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help=f"simulation seed (default 42 or ${SEED_ENV_VAR})")
        p.add_argument("--trajectories", type=int, default=None)
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--emit", default="csv,json",
                       help="comma list of output formats: csv,json")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel trajectory workers (results identical)")

    prun = sub.add_parser("run", help="run a .dexseq sequence file")
    prun.add_argument("--seq", required=True, help="path to the sequence file")
    prun.add_argument("--periods", type=int, default=1,
                      help="number of repetition periods (state carries over)")
    prun.add_argument("--sample-dt", type=float, default=0.05,
                      help="trace sampling grid in ns; <=0 disables the trace")
    common(prun)

    ppre = sub.add_parser("preset", help="run a built-in figure preset")
    ppre.add_argument("name", choices=PRESET_NAMES)
    common(ppre)

    pfit = sub.add_parser("fit", help="fit a library model to CSV data (t,y[,sigma])")
    pfit.add_argument("--model", required=True, choices=sorted(model_library()))
    pfit.add_argument("--data", required=True, help="CSV path")
    pfit.add_argument("--init", required=True,
                      help="comma-separated initial parameter values")
    pfit.add_argument("--out", required=True, help="output directory")
    pfit.add_argument("--tol", type=float, default=1e-10)
    pfit.add_argument("--max-iter", type=int, default=200)
    return ap


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"dexsim: invalid {SEED_ENV_VAR}={env!r}")
    return 42


def _cmd_run(args) -> int:
    seq_path = Path(args.seq)
    if not seq_path.exists():
        print(f"dexsim: sequence file not found: {seq_path}", file=sys.stderr)
        return EXIT_ARGS
    parsed = parse(seq_path.read_text())
    seq, params = parsed.sequence, parsed.params

    seed = args.seed if args.seed is not None else (
        int(os.environ[SEED_ENV_VAR]) if os.environ.get(SEED_ENV_VAR) else
        parsed.document.globals.get("seed", 42))
    n = args.trajectories or parsed.document.globals.get("trajectories", 1000)
    emit = tuple(s for s in args.emit.split(",") if s)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    sample_dt = args.sample_dt if args.sample_dt and args.sample_dt > 0 else None
    ens = run_ensemble(seq, params, n, seed, periods=args.periods,
                       sample_dt=sample_dt, workers=args.workers)
    if "csv" in emit:
        ens.stream.to_csv(out / "run_clicks.csv")
        if ens.trace is not None:
            data = np.column_stack([ens.trace.times, ens.trace.populations,
                                    ens.trace.bloch])
            np.savetxt(out / "run_trace.csv", data, delimiter=",",
                       header="t_ns,pop_vac,pop_p2,pop_m2,pop_p2x,pop_m2x,"
                              "pop_p3,pop_m3,bloch_x,bloch_y,bloch_z",
                       comments="", fmt="%.10g")
    meta = {
        "command": "run",
        "seq_file": str(seq_path),
        "seed": int(seed),
        "trajectories": int(n),
        "periods": args.periods,
        "workers": args.workers,
        "clicks": len(ens.stream),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "package_version": __version__,
        "params": {k: ("inf" if isinstance(v, float) and math.isinf(v) else v)
                   for k, v in asdict(params).items()},
        "wall_time_s": round(time.time() - t0, 3),
    }
    with open(out / "run_meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    return EXIT_OK


def _cmd_preset(args) -> int:
    cfg = PresetConfig(
        out_dir=Path(args.out),
        seed=_resolve_seed(args),
        trajectories=args.trajectories,
        tol=args.tol,
        emit=tuple(s for s in args.emit.split(",") if s),
        workers=args.workers,
    )
    run_preset(args.name, cfg)
    return EXIT_OK


def _cmd_fit(args) -> int:
    data_path = Path(args.data)
    if not data_path.exists():
        print(f"dexsim: data file not found: {data_path}", file=sys.stderr)
        return EXIT_ARGS
    try:
        init = np.array([float(v) for v in args.init.split(",")])
    except ValueError:
        print(f"dexsim: bad --init {args.init!r}", file=sys.stderr)
        return EXIT_ARGS
    t, y, sigma = load_fit_csv(data_path)
    model = model_library()[args.model]
    result = lm_fit(model, t, y, sigma, init, tol=args.tol, max_iter=args.max_iter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.to_json(out / f"fit_{args.model}.json")
    print(json.dumps({"model": args.model, "params": result.params.tolist(),
                      "chi2": result.chi2, "converged": result.converged}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors and 0 for --help/--version
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "preset":
            return _cmd_preset(args)
        return _cmd_fit(args)
    except ParseError as exc:
        print(f"dexsim: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FitError as exc:
        print(f"dexsim: fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (SimulationError, IntegrationError, FrameError, ValueError) as exc:
        if args.command == "fit":
            print(f"dexsim: fit error: {exc}", file=sys.stderr)
            return EXIT_FIT
        print(f"dexsim: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
