"""``dagsim`` command-line front end.

Exit codes: 0 success, 2 usage or config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import markov
from .config import HASHGRAPH, ConfigError, load_config
from .harness import IoFailure, SUMMARY_COLUMNS, atomic_write, export_metrics, run_scenario, summary_row
from .plot import PlotDataError, plot_files
from .report import comparison_csv, comparison_rows

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"dagsim: {msg}", file=sys.stderr)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


# -- simulate -------------------------------------------------------------


def parse_seed_range(text: str) -> list[int]:
    a, sep, b = text.partition("..")
    try:
        lo, hi = int(a), int(b) if sep else int(a)
    except ValueError:
        raise UsageError(f"--seeds: expected a..b, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise UsageError(f"--seeds: empty or negative range {text!r}")
    return list(range(lo, hi + 1))


def _simulate_one(args: tuple) -> list[str]:
    config, prefix = args
    rep = run_scenario(config)
    export_metrics(rep, prefix)
    return summary_row(rep)


def cmd_simulate(config_path, out_prefix=None, seed_override=None, seeds=None, jobs=1, quiet=False) -> int:
    config = load_config(config_path)
    if seed_override is not None:
        config = config.with_seed(seed_override)
    base = str(out_prefix) if out_prefix else str(Path(config_path).with_suffix(""))
    if seeds is None:
        tasks = [(config, base)]
    else:
        tasks = [(config.with_seed(s), f"{base}_s{s}") for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_simulate_one, tasks))
    else:
        rows = [_simulate_one(t) for t in tasks]
    if not quiet:
        sys.stdout.write(",".join(SUMMARY_COLUMNS) + "\n")
        for r in rows:
            sys.stdout.write(",".join(r) + "\n")
    return EXIT_OK


# -- analyze ----------------------------------------------------------------


def parse_model(text: str) -> markov.ApprovalModel:
    kind, _, rest = text.partition(":")
    parts = rest.split(":") if rest else []
    try:
        if kind == "constant_q" and len(parts) == 1:
            return markov.ConstantQ(float(parts[0]))
        if kind == "two_phase" and len(parts) in (2, 3):
            return markov.TwoPhase(int(parts[0]), *(float(p) for p in parts[1:]))
    except ValueError as exc:
        raise UsageError(f"--model {text!r}: {exc}") from None
    raise UsageError(f"--model: expected constant_q:q or two_phase:w_a:q_low[:q_high], got {text!r}")


def read_weight_traces(path, dt: float) -> list[markov.WeightTrace]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != "tx_id,time_s,cumulative_weight":
        raise UsageError(f"{path}: not a weights export")
    points: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            points[parts[0]].append((float(parts[1]), float(parts[2])))
        except (IndexError, ValueError):
            raise UsageError(f"{path}:{number}: malformed row") from None
    return [markov.WeightTrace(markov.resample(pts, dt)) for pts in points.values()]


def cmd_analyze(lam, dt, w_star, model=None, out_path=None, calibrate=None, matrix_path=None) -> int:
    if calibrate:
        traces = read_weight_traces(calibrate, dt)
        try:
            approval = markov.calibrate_from_traces(traces, w_star, dt, arrival_rate=lam)
        except markov.InsufficientData as exc:
            raise UsageError(f"{calibrate}: {exc}") from None
    else:
        approval = parse_model(model or "constant_q:1")
    try:
        chain = markov.build_transition_matrix(lam, dt, w_star, approval)
    except markov.InvalidParameters as exc:
        raise UsageError(str(exc)) from None
    delay = markov.expected_confirmation_delay(chain)
    text = ",".join(markov.DELAY_COLUMNS) + "\n" + ",".join(markov.delay_row(chain, delay)) + "\n"
    _emit(text, out_path)
    if matrix_path:
        atomic_write(matrix_path, markov.matrix_csv(chain))
    return EXIT_OK


# -- plot / compare -----------------------------------------------------------


def cmd_plot(weights_csvs: Sequence[str], out_svg=None) -> int:
    if not weights_csvs:
        raise UsageError("plot needs at least one weights CSV")
    try:
        svg = plot_files([Path(p) for p in weights_csvs])
    except PlotDataError as exc:
        raise UsageError(str(exc)) from None
    _emit(svg, out_svg)
    return EXIT_OK


def cmd_compare(tangle_config, hashgraph_config, out_csv=None, seed_override=None) -> int:
    t_cfg = load_config(tangle_config)
    h_cfg = load_config(hashgraph_config)
    if t_cfg.protocol == HASHGRAPH:
        raise ConfigError("first config must use protocol = tangle", "protocol", source=str(tangle_config))
    if h_cfg.protocol != HASHGRAPH:
        raise ConfigError("second config must use protocol = hashgraph", "protocol", source=str(hashgraph_config))
    if seed_override is not None:
        t_cfg, h_cfg = t_cfg.with_seed(seed_override), h_cfg.with_seed(seed_override)
    rows = comparison_rows(run_scenario(t_cfg), run_scenario(h_cfg))
    _emit(comparison_csv(rows), out_csv)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path or prefix")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="no stdout report")

    p = _Parser(prog="dagsim", description="DAG ledger consensus simulator", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario and export CSVs")
    s.add_argument("config")
    s.add_argument("--seeds", help="seed range a..b, one replica per seed")
    s.add_argument("--jobs", type=int, default=1, help="worker processes for --seeds")

    a = sub.add_parser("analyze", parents=[common], help="Markov confirmation-delay analysis")
    a.add_argument("--lambda", dest="lam", type=float, required=True)
    a.add_argument("--dt", type=float, default=1.0)
    a.add_argument("--w-star", type=int, required=True)
    a.add_argument("--model", help="constant_q:q or two_phase:w_a:q_low[:q_high]")
    a.add_argument("--calibrate", help="weights CSV from a prior simulate run")
    a.add_argument("--matrix", help="also write the transition matrix here")

    pl = sub.add_parser("plot", parents=[common], help="SVG of mean weight trajectories")
    pl.add_argument("files", nargs="+")

    c = sub.add_parser("compare", parents=[common], help="mechanism comparison table")
    c.add_argument("tangle_config")
    c.add_argument("hashgraph_config")
    c.add_argument("out_csv", nargs="?")
    return p


def _dispatch(ns: argparse.Namespace) -> int:
    seed = getattr(ns, "seed", None)
    out = getattr(ns, "out", None)
    quiet = getattr(ns, "quiet", False)
    if ns.command == "simulate":
        seeds = parse_seed_range(ns.seeds) if ns.seeds else None
        if seeds is not None and seed is not None:
            raise UsageError("--seed and --seeds are mutually exclusive")
        if ns.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return cmd_simulate(ns.config, out, seed, seeds, ns.jobs, quiet)
    if ns.command == "analyze":
        if ns.model and ns.calibrate:
            raise UsageError("--model and --calibrate are mutually exclusive")
        return cmd_analyze(ns.lam, ns.dt, ns.w_star, ns.model, out, ns.calibrate, ns.matrix)
    if ns.command == "plot":
        return cmd_plot(ns.files, out)
    if ns.out_csv and out:
        raise UsageError("give the output CSV either positionally or with --out")
    return cmd_compare(ns.tangle_config, ns.hashgraph_config, ns.out_csv or out, seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        return _dispatch(ns)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except IoFailure as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    except Exception as exc:
        _err(f"runtime error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
