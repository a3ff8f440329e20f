"""
Pipeline tín hiệu giao dịch VIX futures: ingest → curves → fit → train → backtest/signal.

Mỗi lệnh đọc cấu hình (file, biến môi trường, cờ), ghi artifact có nhúng config
hash và một manifest_<command>.json vào thư mục --out.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from curve_service.curve import build_curves, state_vectors, write_curves
from data_service.ingest import FuturesPanel, parse_panel, validate_panel, write_panel
from model_service.dynamics import fit_curve_model, load_model, save_model, simulate_index_paths
from model_service.network import build_training_set, load_network, network_for, save_network, train, write_training_log
from trading_service.backtest import (
    TooFewDatesError,
    benchmark_frame,
    make_folds,
    prepare_data,
    read_reference,
    retraining_provider,
    run_kfold,
    write_metrics,
)
from trading_service.signal import contracts_from_action, curve_rows, policy, replay_contracts, signal_line
from utils.artifacts import write_csv, write_manifest
from utils.config import RunConfig, load_config
from utils.errors import EXIT_IO, EXIT_OK, EXIT_UNEXPECTED, PipelineError
from utils.fixture import write_fixture
from utils.logger import configure_logging, show_log

EXIT_CODES_HELP = """exit codes:
  0  success
  1  unexpected error
  2  configuration error (unknown key, bad value, missing seed)
  3  I/O error (missing input file or artifact)
  4  data error (ingest, curve construction)
  5  model error (dynamics, utility, network)
  6  trading error (signal, backtest)
  7  artifact config-hash mismatch

on failure one line is written to stderr:
  error code=<code> exit=<n> message=<text>
"""

MODEL_FILE = "model.json"
NETWORK_FILE = "network.json"


def load_panel(config: RunConfig) -> FuturesPanel:
    config.data.require("futures_file", "vix_file")
    if config.data.calendar_file:
        config.data.require("calendar_file")
    return parse_panel(config.data.futures_file, config.data.vix_file, config.data.calendar_file)


def cmd_ingest(config: RunConfig, args: argparse.Namespace) -> List[str]:
    panel = load_panel(config)
    report = validate_panel(panel)
    rows = [
        {"check": name, "passed": check.passed, "failed": check.failed, "offenders": ";".join(check.offenders[:20])}
        for name, check in report.checks.items()
    ]
    artifacts = list(write_panel(panel, config.out("panel")).values())
    artifacts.append(write_csv(pd.DataFrame(rows), config.out("validation.csv"), config_hash=config.hash))
    if not report.ok:
        show_log(message=f"cmd_ingest: {report.offender_count()} dates failed validation", level="warning")
    return artifacts


def cmd_curves(config: RunConfig, args: argparse.Namespace) -> List[str]:
    curves = build_curves(load_panel(config), dt=config.econ.dt)
    states = state_vectors(curves)
    frame = pd.DataFrame(states.x, columns=[f"log_v{i}" for i in range(6)] + [f"roll{i}" for i in range(1, 6)])
    frame.insert(0, "date", states.dates.astype(str))
    return [
        write_curves(curves, config.out("curves.csv"), config_hash=config.hash),
        write_csv(frame, config.out("states.csv"), config_hash=config.hash),
    ]


def cmd_fit(config: RunConfig, args: argparse.Namespace) -> List[str]:
    states = state_vectors(build_curves(load_panel(config), dt=config.econ.dt))
    model = fit_curve_model(states.x, min_mode_samples=config.fold.min_mode_samples)
    return [save_model(model, config.out(MODEL_FILE), config_hash=config.hash)]


def cmd_train(config: RunConfig, args: argparse.Namespace) -> List[str]:
    model = load_model(config.out(MODEL_FILE), expected_hash=config.hash)
    training_set = build_training_set(model, config.econ, config.utility, config.train)
    result = train(network_for(model.dim, config.train), training_set, config.train)
    return [
        save_network(result.net, config.out(NETWORK_FILE), config_hash=config.hash),
        write_training_log(result, config.out("training_log.csv"), config_hash=config.hash),
    ]


def cmd_backtest(config: RunConfig, args: argparse.Namespace) -> List[str]:
    data = prepare_data(load_panel(config), config.econ)
    result = run_kfold(
        data,
        config.utility,
        config.train,
        config.econ,
        k=config.fold.folds,
        configuration=config.fold.fold_config,
        cm=config.cost,
        integer=config.integer_contracts,
        min_mode_samples=config.fold.min_mode_samples,
        jobs=config.jobs,
    )
    paths = []
    for fold in result.folds:
        frame = fold.path.frame()
        frame.insert(0, "fold", fold.fold)
        paths.append(frame)
    return [
        write_metrics(result.metrics_frame(), config.out("metrics.csv"), config_hash=config.hash),
        write_csv(pd.concat(paths, ignore_index=True), config.out("path.csv"), config_hash=config.hash),
        write_csv(result.plan.frame(), config.out("folds.csv"), config_hash=config.hash),
    ]


def cmd_signal(config: RunConfig, args: argparse.Namespace) -> List[str]:
    net = load_network(config.out(NETWORK_FILE), expected_hash=config.hash)
    data = prepare_data(load_panel(config), config.econ)
    last = len(data.states) - 1
    row = curve_rows(data.panel, data.curves, [data.offset + last])[0]
    action = policy(net, data.states.x[last])
    position = contracts_from_action(args.portfolio_value, row.omega, action, row.v1, row.v5, integer=True)
    day = str(data.states.dates[last])
    line = signal_line(day, args.portfolio_value, row.omega, action, position)
    print(line)
    frame = pd.DataFrame(
        [[day, args.portfolio_value, row.omega, action.a1, action.a5, *position.as_array(), position.net]],
        columns=["date", "P", "omega", "a1", "a5", "n1", "n2", "n5", "n6", "net"],
    )
    artifacts = [write_csv(frame, config.out("signal.csv"), config_hash=config.hash)]

    if args.replay_days:
        start = max(len(data.states) - args.replay_days, config.fold.min_mode_samples)
        if start >= len(data.states) - 1:
            raise TooFewDatesError(f"không đủ lịch sử để phát lại {args.replay_days} ngày")
        dates, states, rets, rows = data.window(start, len(data.states))
        provider = retraining_provider(
            data,
            start,
            config.utility,
            config.train,
            config.econ,
            retrain_every=config.fold.retrain_every,
            min_mode_samples=config.fold.min_mode_samples,
        )
        table = replay_contracts(dates, states, rets, rows, provider, config.econ, cm=config.cost, integer=True)
        artifacts.append(write_csv(table, config.out("replay.csv"), config_hash=config.hash))
    return artifacts


def cmd_simulate(config: RunConfig, args: argparse.Namespace) -> List[str]:
    model = load_model(config.out(MODEL_FILE), expected_hash=config.hash)
    i1, i5 = simulate_index_paths(model, config.econ, args.horizon, args.paths, seed=config.seed)
    frame = pd.DataFrame(
        {
            "path": np.repeat(np.arange(args.paths), args.horizon + 1),
            "step": np.tile(np.arange(args.horizon + 1), args.paths),
            "i1": i1.reshape(-1),
            "i5": i5.reshape(-1),
        }
    )
    return [write_csv(frame, config.out("simulated_paths.csv"), config_hash=config.hash)]


def cmd_bench(config: RunConfig, args: argparse.Namespace) -> List[str]:
    data = prepare_data(load_panel(config), config.econ)
    plan = make_folds(data.states.dates, config.fold.folds)
    references = {}
    if config.data.reference_file:
        config.data.require("reference_file")
        references[Path(config.data.reference_file).stem] = read_reference(config.data.reference_file)
    frame = benchmark_frame(data, plan, config.econ, cm=config.cost, references=references)
    return [write_metrics(frame, config.out("bench_metrics.csv"), config_hash=config.hash)]


def cmd_fixture(config: RunConfig, args: argparse.Namespace) -> List[str]:
    return list(write_fixture(config.out_dir, n_days=args.days, seed=config.seed).values())


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], List[str]]] = {
    "ingest": cmd_ingest,
    "curves": cmd_curves,
    "fit": cmd_fit,
    "train": cmd_train,
    "backtest": cmd_backtest,
    "signal": cmd_signal,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "fixture": cmd_fixture,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file cấu hình key = value")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--epsilon-bps", type=float, dest="epsilon_bps")
    common.add_argument("--utility", choices=["piecewise_linear", "exponential"], dest="utility_kind")
    common.add_argument("--gamma", type=float)
    common.add_argument("--folds", type=int)
    common.add_argument("--fold-config", choices=["contiguous", "non-adjacent"], dest="fold_config")
    common.add_argument("--integer-contracts", action="store_const", const=True, dest="integer_contracts")
    common.add_argument("--out", dest="out_dir")
    common.add_argument("--verbose", action="store_true", help="ghi log ra stderr ngoài run.log")

    parser = argparse.ArgumentParser(
        prog="pipeline.py",
        description=__doc__,
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = sub.add_parser(name, parents=[common], epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "signal":
            command.add_argument("--portfolio-value", type=float, default=100.0)
            command.add_argument("--replay-days", type=int, default=0)
        elif name == "simulate":
            command.add_argument("--horizon", type=int, default=252)
            command.add_argument("--paths", type=int, default=10)
        elif name == "fixture":
            command.add_argument("--days", type=int, default=200)
    return parser


OVERRIDE_KEYS = ("seed", "jobs", "epsilon_bps", "utility_kind", "gamma", "folds", "fold_config", "integer_contracts", "out_dir")


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, key) for key in OVERRIDE_KEYS}
    config = load_config(args.config, overrides)
    config.data.check_configured()
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    configure_logging(log_file=config.out("run.log"), console=args.verbose)
    show_log(message=f"{args.command}: start, config_hash {config.hash}", level="info")
    artifacts = COMMANDS[args.command](config, args)
    data_files = [config.data.futures_file, config.data.vix_file, config.data.calendar_file, config.data.reference_file]
    write_manifest(config.out_dir, args.command, config.flat, config.hash, {"seed": config.seed}, data_files, artifacts)
    show_log(message=f"{args.command}: done, {len(artifacts)} artifacts", level="info")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging(console=False)
    try:
        return run(argv)
    except PipelineError as ex:
        code, exit_code, message = ex.code, ex.exit_code, str(ex)
    except OSError as ex:
        code, exit_code, message = "io_error", EXIT_IO, str(ex)
    except Exception as ex:  # noqa: BLE001
        code, exit_code, message = "unexpected", EXIT_UNEXPECTED, f"{type(ex).__name__}: {ex}"
    show_log(message=f"{code}: {message}", level="error")
    flat_message = " ".join(message.split())
    print(f"error code={code} exit={exit_code} message={flat_message}", file=sys.stderr)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
