"""
Screenfolio - Command Line Application

Coordinates the pipeline from configuration files:
- backtest: screen, estimate, weight and report out-of-sample performance
- validate-theory: run the screened Sharpe-ratio convergence experiment
- gen-synthetic: write a synthetic data bundle
- screen: emit the screened signals only
- estimate: emit one precision matrix only
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import pandas as pd

from . import __app_name__, __version__
from .backtest import BacktestRunner, ReportWriter, run_backtest, run_screening
from .data import align_window, format_month, load_bundle, required_inputs, to_month
from .errors import ConfigError, DataError, MissingFileError, ScreenfolioError
from .settings import (AGENTS, METHODS, OBJECTIVES, BacktestConfig, SettingsManager, SyntheticSpec,
                       TheorySpec)
from .synthetic import generate_synthetic
from .theory import screened_sharpe_experiment

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "SCREENFOLIO_LOG_LEVEL"
EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_NOT_CONVERGED = 6


def configure_logging(environ: Mapping[str, str] = os.environ) -> int:
    """Set the root log level from SCREENFOLIO_LOG_LEVEL (default WARNING)."""
    name = environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    return level


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Record of what a run read and how it was configured."""

    command: str
    config: Dict[str, Any]
    seed: int
    version: str = __version__
    input_digests: Dict[str, str] = field(default_factory=dict)
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None

    def record_inputs(self, inputs: Mapping[str, Optional[Path]]) -> None:
        """
        Hash every input file.

        Raises:
            MissingFileError: Naming the first input that does not exist.
        """
        for role, path in inputs.items():
            if path is None:
                raise MissingFileError("<not configured>", role)
            if not Path(path).exists():
                raise MissingFileError(str(path), role)
            self.input_digests[role] = file_digest(path)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "version": self.version,
            "seed": self.seed,
            "config": self.config,
            "input_digests": self.input_digests,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    def write(self, output_dir) -> Path:
        self.finished_at = _now()
        path = Path(output_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path


class ScreenfolioApp:
    """
    Main Screenfolio application class.

    Runs one subcommand per invocation and tracks the output directory so
    error records can be written next to the results.
    """

    def __init__(self, args: argparse.Namespace):
        """Initialize with parsed command-line arguments."""
        self._args = args
        self.output_dir: Optional[Path] = None

    def run(self) -> int:
        """Dispatch to the selected subcommand and return its exit status."""
        handler = {
            "backtest": self.cmd_backtest,
            "validate-theory": self.cmd_validate_theory,
            "gen-synthetic": self.cmd_generate_synthetic,
            "screen": self.cmd_screen,
            "estimate": self.cmd_estimate,
        }[self._args.command]
        return handler()

    def _backtest_config(self) -> SettingsManager:
        args = self._args
        manager = SettingsManager(Path(args.config), BacktestConfig)
        manager.load()
        manager.apply_overrides(
            methods=args.method,
            objectives=args.objective,
            agents=args.agents,
            cost_bp=args.cost_bp,
            train_window=args.train_window,
            rho=args.rho,
            out_sample_start=args.out_sample_start,
            out_sample_end=args.out_sample_end,
            seed=args.seed,
            on_estimator_error=args.on_estimator_error,
            output_dir=str(Path(args.output_dir).resolve()) if args.output_dir else None,
        )
        self.output_dir = manager.settings.output_dir
        return manager

    def _start(self, command: str, manager: SettingsManager) -> RunManifest:
        config = manager.settings
        manifest = RunManifest(command, config.to_dict(), config.seed)
        if isinstance(config, BacktestConfig):
            manifest.record_inputs(required_inputs(config))
        return manifest

    def cmd_backtest(self) -> int:
        manager = self._backtest_config()
        config = manager.settings
        manifest = self._start("backtest", manager)
        report = run_backtest(config, load_bundle(config))
        ReportWriter(config.output_dir).write(report)
        manager.save(Path(config.output_dir) / "config.json")
        manifest.write(config.output_dir)
        return EXIT_OK

    def cmd_screen(self) -> int:
        manager = self._backtest_config()
        config = manager.settings
        manifest = self._start("screen", manager)
        screens = run_screening(config, load_bundle(config))
        output = Path(config.output_dir)
        output.mkdir(parents=True, exist_ok=True)
        frames = [s.signals.to_frame() for s in screens]
        signals = (pd.concat(frames, ignore_index=True) if frames
                   else pd.DataFrame(columns=["date", "asset", "signal"]))
        signals.to_csv(output / "signals.csv", index=False, lineterminator="\n")
        pd.DataFrame([s.to_audit_row() for s in screens]).to_csv(output / "audit.csv", index=False,
                                                                  lineterminator="\n")
        manifest.write(output)
        return EXIT_OK

    def cmd_estimate(self) -> int:
        args = self._args
        manager = self._backtest_config()
        config = manager.settings
        method = args.method[-1] if args.method else config.methods[0]
        config = manager.apply_overrides(methods=[method])
        manifest = self._start("estimate", manager)
        try:
            date = to_month(args.date)
        except ValueError as e:
            raise ConfigError(f"Invalid --date '{args.date}': expected YYYY-MM", key="date") from e
        runner = BacktestRunner(config, load_bundle(config))
        if args.no_screen:
            assets = runner.screener.universe(date)
        else:
            assets = runner.screener.screen(date).screened
        if not assets:
            raise DataError(f"Screen at {format_month(date)} selects no assets", date=format_month(date))
        window = align_window(runner.bundle.returns, date, config.train_window, assets)
        estimate = runner.estimate(date, window, method)

        output = Path(config.output_dir)
        output.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(estimate.gamma, index=list(estimate.assets), columns=list(estimate.assets))
        frame.to_csv(output / "precision.csv", float_format="%.17g", lineterminator="\n")
        diagnostics = {"date": format_month(date), "method": estimate.method.value, "p_hat": estimate.p,
                       **estimate.diagnostics}
        with open(output / "precision_diagnostics.json", "w", encoding="utf-8") as f:
            json.dump(diagnostics, f, indent=2, sort_keys=True, default=_json_default)
        manifest.write(output)
        return EXIT_OK

    def cmd_validate_theory(self) -> int:
        args = self._args
        manager = SettingsManager(Path(args.spec), TheorySpec)
        manager.load()
        manager.apply_overrides(
            replications=args.replications,
            workers=args.workers,
            seed=args.seed,
            output_dir=str(Path(args.output_dir).resolve()) if args.output_dir else None,
        )
        spec = manager.settings
        self.output_dir = spec.output_dir
        manifest = RunManifest("validate-theory", spec.to_dict(), spec.seed)
        table = screened_sharpe_experiment(spec)
        table.write(Path(spec.output_dir) / "convergence.csv")
        manifest.write(spec.output_dir)
        if table.converged:
            return EXIT_OK
        if spec.screening == "random":
            logger.info("Contrast run did not converge, as expected for a non-sensible screen")
            return EXIT_OK
        logger.error("Median ratio errors %s are not weakly decreasing", table.medians)
        return EXIT_NOT_CONVERGED

    def cmd_generate_synthetic(self) -> int:
        args = self._args
        if args.config:
            manager = SettingsManager(Path(args.config), SyntheticSpec)
            manager.load()
        else:
            manager = SettingsManager(Path("synthetic.json"), SyntheticSpec)
        manager.apply_overrides(
            seed=args.seed,
            n_assets=args.assets,
            n_months=args.months,
            predictive_strength=args.predictive_strength,
            output_dir=str(Path(args.output_dir).resolve()) if args.output_dir else None,
        )
        spec = manager.settings
        self.output_dir = spec.output_dir
        generate_synthetic(spec)
        return EXIT_OK


def _json_default(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def _add_backtest_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="Backtest configuration (JSON)")
    parser.add_argument("--method", action="append", choices=METHODS,
                        help="Precision estimator; repeat for several (overrides config)")
    parser.add_argument("--objective", action="append", choices=OBJECTIVES,
                        help="Portfolio objective; repeat for several (overrides config)")
    parser.add_argument("--agents", nargs="*", choices=AGENTS,
                        help="Screening agents; pass none for the unscreened baseline")
    parser.add_argument("--cost-bp", type=float, help="Transaction cost in basis points")
    parser.add_argument("--train-window", type=int, help="Training window in months")
    parser.add_argument("--rho", type=float, help="Target monthly return of the MV portfolio")
    parser.add_argument("--out-sample-start", help="First out-of-sample month (YYYY-MM)")
    parser.add_argument("--out-sample-end", help="Last out-of-sample month (YYYY-MM)")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--on-estimator-error", choices=("skip", "abort"))
    parser.add_argument("--output-dir", help="Directory for report files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="screenfolio",
                                     description="Agentic screening and precision-matrix portfolios")
    parser.add_argument("--version", action="version", version=f"{__app_name__} {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_backtest_options(commands.add_parser("backtest", help="Run the rolling backtest"))
    _add_backtest_options(commands.add_parser("screen", help="Write screened signals only"))
    estimate = commands.add_parser("estimate", help="Write one precision matrix")
    _add_backtest_options(estimate)
    estimate.add_argument("--date", required=True, help="Decision month (YYYY-MM)")
    estimate.add_argument("--no-screen", action="store_true", help="Use every covered asset")

    theory = commands.add_parser("validate-theory", help="Run the convergence experiment")
    theory.add_argument("spec", help="Experiment spec (JSON)")
    theory.add_argument("--replications", type=int)
    theory.add_argument("--workers", type=int)
    theory.add_argument("--seed", type=int)
    theory.add_argument("--output-dir")

    synthetic = commands.add_parser("gen-synthetic", help="Write a synthetic data bundle")
    synthetic.add_argument("--config", help="Synthetic spec (JSON)")
    synthetic.add_argument("--seed", type=int)
    synthetic.add_argument("--assets", type=int)
    synthetic.add_argument("--months", type=int)
    synthetic.add_argument("--predictive-strength", type=float)
    synthetic.add_argument("--output-dir")
    return parser


def _report_error(record: Dict[str, Any], output_dir: Optional[Path]) -> None:
    text = json.dumps(record, sort_keys=True, default=_json_default)
    print(text, file=sys.stderr)
    if output_dir is None:
        return
    try:
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(output_dir) / "error.json", "w", encoding="utf-8") as f:
            f.write(text + "\n")
    except OSError as e:
        logger.error("Could not write error record to %s: %s", output_dir, e)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the subcommand and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    configure_logging()
    app = ScreenfolioApp(args)
    try:
        return app.run()
    except ScreenfolioError as e:
        logger.debug("Run failed", exc_info=True)
        _report_error(e.to_record(), app.output_dir)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        _report_error({"error": "internal", "message": str(e)}, app.output_dir)
        return EXIT_INTERNAL


def main(argv: Optional[List[str]] = None):
    """Main entry point for the application."""
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
