"""Batch entry point: ``python -m app <command> ...``.

Commands write plain files only (CSV, Markdown, key=value text) so reruns
with the same arguments and seed are byte-identical. Exit codes: 0 ok,
1 user error or refusal, 2 numerical failure.
"""
import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from app.config import configure_logging, settings
from app.errors import ConfigError, IdentifiabilityRefusal, MnarError
from app.models.dataset import Dataset
from app.models.model_config import ModelConfig
from app.services.estimate import EstimatorConfig, FitResult, markdown_table, write_table_csv
from app.services.identify import IdentifiabilityVerdict
from app.services.run_ledger import record_cli_run
from app.services.simulate import McReport, generate, run_monte_carlo, scenario
from app.services.workflows import PILOT_N, diagnose_model_config, fit_model_config, scenario_config

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "fit", "diagnose", "report", "generate")


@dataclass
class RunConfig:
    command: str
    inputs: List[str] = field(default_factory=list)
    config_path: Optional[str] = None
    seed: Optional[int] = None
    output_dir: Path = Path("out")
    flags: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command '{self.command}'")
        needs_seed = self.command in ("simulate", "generate") or (
            self.command == "fit" and self.flags.get("B", 0) > 0
        )
        if needs_seed and self.seed is None:
            raise ConfigError(f"{self.command} needs --seed")
        if self.seed is not None and self.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        self.output_dir = Path(self.output_dir)
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"output directory {self.output_dir} is not writable: {e}")
        if not os.access(self.output_dir, os.W_OK):
            raise ConfigError(f"output directory {self.output_dir} is not writable")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        flags = {
            key: getattr(args, key)
            for key in (
                "method", "M", "B", "n", "R", "hajek", "override_identifiability",
                "percentile_ci", "oracle", "kappa2", "link", "workers",
            )
            if hasattr(args, key)
        }
        inputs = [getattr(args, key) for key in ("scenario", "csv", "replicates") if getattr(args, key, None)]
        return cls(args.command, inputs, getattr(args, "config", None), getattr(args, "seed", None), args.out, flags)

    def estimator(self, check_identifiability: bool = True) -> EstimatorConfig:
        return EstimatorConfig(
            method=self.flags.get("method", "quadrature"),
            n_imputations=self.flags.get("M", 1000),
            n_bootstrap=self.flags.get("B", 200),
            hajek=self.flags.get("hajek", False),
            percentile_ci=self.flags.get("percentile_ci", False),
            check_identifiability=check_identifiability and not self.flags.get("override_identifiability", False),
            oracle=self.flags.get("oracle", False),
            workers=self.flags.get("workers", 1),
        )


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(run: RunConfig) -> McReport:
    spec = scenario(run.inputs[0], kappa2=run.flags.get("kappa2"), link=run.flags.get("link"))
    report = run_monte_carlo(
        spec,
        run.flags.get("n", 2000),
        run.flags.get("R", 500),
        run.estimator(check_identifiability=False),
        run.seed,
        workers=run.flags.get("workers", 1),
    )
    report.to_csv(run.output_dir)
    markdown = report.to_markdown()
    _write(run.output_dir / "report.md", markdown)
    print(markdown, end="")
    return report


def cmd_report(run: RunConfig) -> McReport:
    path = Path(run.inputs[0])
    if not path.is_file():
        raise ConfigError(f"replicate file {path} does not exist")
    report = McReport.from_replicates(pd.read_csv(path))
    report.to_csv(run.output_dir)
    markdown = report.to_markdown()
    _write(run.output_dir / "report.md", markdown)
    print(markdown, end="")
    return report


def cmd_generate(run: RunConfig) -> Dataset:
    spec = scenario(run.inputs[0], kappa2=run.flags.get("kappa2"), link=run.flags.get("link"))
    data = generate(spec, run.flags.get("n", 2000), run.seed)
    data.to_csv(run.output_dir / "data.csv")
    scenario_config(spec).save(run.output_dir / "model.env")
    print(f"wrote {data.n} rows ({data.n_missing} missing) to {run.output_dir / 'data.csv'}")
    return data


def cmd_diagnose(run: RunConfig) -> IdentifiabilityVerdict:
    config = ModelConfig.load(run.config_path)
    data = config.load_dataset(run.inputs[0]) if run.inputs else None
    verdict = diagnose_model_config(config, data, run.flags.get("n") or PILOT_N, run.seed or 0)
    report = verdict.to_report()
    _write(run.output_dir / "verdict.txt", report)
    witness = verdict.witness_frame()
    if witness is not None:
        write_table_csv(witness, run.output_dir / "witness.csv")
    print(report, end="")
    return verdict


def _fit_diagnostics(results: List[FitResult]) -> str:
    lines = []
    fit = results[0].outcome_fit
    lines += [
        f"outcome.loglik={fit.loglik:.6f}",
        f"outcome.aic={fit.aic:.6f}",
        f"outcome.bic={fit.bic:.6f}",
        f"outcome.r2={fit.r2:.6f}",
        f"outcome.degenerate={str(fit.degenerate).lower()}",
    ]
    for result in results:
        key = result.link.lower()
        lines += [
            f"{key}.method={result.method}",
            f"{key}.converged={str(result.converged).lower()}",
            f"{key}.residual_norm={result.residual_norm:.3e}",
            f"{key}.iterations={result.n_iter}",
            f"{key}.bootstrap_failures={result.bootstrap_failures}",
            f"{key}.unstable_bootstrap={str(result.unstable_bootstrap).lower()}",
        ]
        lines += [f"{key}.note={note}" for note in result.notes]
    return "\n".join(lines) + "\n"


def cmd_fit(run: RunConfig) -> List[FitResult]:
    config = ModelConfig.load(run.config_path)
    data = config.load_dataset(run.inputs[0])
    results, table = fit_model_config(config, data, run.estimator(), run.seed or 0)
    write_table_csv(table, run.output_dir / "estimates.csv")
    markdown = markdown_table(table)
    _write(run.output_dir / "estimates.md", markdown)
    write_table_csv(results[0].outcome_fit.residual_frame(data), run.output_dir / "residuals.csv")
    _write(run.output_dir / "fit_diagnostics.txt", _fit_diagnostics(results))
    print(markdown, end="")
    return results


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
    "generate": cmd_generate,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _estimation_flags(parser: argparse.ArgumentParser, bootstrap_default: int) -> None:
    parser.add_argument("--method", choices=["quadrature", "fi"], default="quadrature", help="how s0 integrates over y")
    parser.add_argument("--M", type=int, default=1000, help="fractional imputation draws per nonrespondent")
    parser.add_argument("--B", type=int, default=bootstrap_default, help="bootstrap replicates (0 skips)")
    parser.add_argument("--hajek", action="store_true", help="normalized IPW mean")
    parser.add_argument("--percentile-ci", action="store_true", help="percentile instead of normal intervals")
    parser.add_argument("--workers", type=int, default=settings.workers)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m app", description="Nonignorable-response models with instruments")
    parser.add_argument("--log-level", default=None, help="overrides MNAR_LOG_LEVEL")
    parser.add_argument("--record", action="store_true", help="append the run to the ledger database")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Monte Carlo study of a preset scenario")
    simulate.add_argument("scenario")
    simulate.add_argument("--kappa2", type=float, default=None)
    simulate.add_argument("--link", default=None, help="S4 response link: logistic or cauchy")
    simulate.add_argument("--n", type=int, default=2000)
    simulate.add_argument("--R", type=int, default=500)
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--oracle", action="store_true", help="fix phi at the truth (IPW only)")
    simulate.add_argument("--out", default="out/simulate")
    _estimation_flags(simulate, bootstrap_default=200)

    fit = sub.add_parser("fit", help="fit the response model to a CSV")
    fit.add_argument("csv")
    fit.add_argument("--config", required=True)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--override-identifiability", action="store_true")
    fit.add_argument("--out", default="out/fit")
    _estimation_flags(fit, bootstrap_default=200)

    diagnose = sub.add_parser("diagnose", help="identifiability verdict for a model config")
    diagnose.add_argument("--config", required=True)
    diagnose.add_argument("--csv", default=None)
    diagnose.add_argument("--seed", type=int, default=None)
    diagnose.add_argument("--n", type=int, default=None, help="pilot sample size for scenario configs")
    diagnose.add_argument("--out", default="out/diagnose")

    report = sub.add_parser("report", help="re-aggregate saved replicate records")
    report.add_argument("replicates")
    report.add_argument("--out", default="out/report")

    gen = sub.add_parser("generate", help="write a synthetic dataset and its config")
    gen.add_argument("scenario")
    gen.add_argument("--kappa2", type=float, default=None)
    gen.add_argument("--link", default=None)
    gen.add_argument("--n", type=int, default=2000)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", default="out/generate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    run = None
    exit_code, status, message = 0, "ok", None
    try:
        run = RunConfig.from_args(args)
        HANDLERS[run.command](run)
    except IdentifiabilityRefusal as e:
        exit_code, status, message = e.exit_code, "refused", str(e)
        print(f"refused: {e}", file=sys.stderr)
        print(e.verdict.to_report(), end="", file=sys.stderr)
    except MnarError as e:
        exit_code, status, message = e.exit_code, "error", str(e)
        print(f"error: {e}", file=sys.stderr)
    except Exception as e:
        logger.error(f"unexpected failure in {args.command}", exc_info=True)
        exit_code, status, message = 2, "error", str(e)
    if args.record:
        config_digest = None
        if run is not None and run.config_path and Path(run.config_path).is_file():
            try:
                config_digest = ModelConfig.load(run.config_path).digest()
            except ConfigError:
                pass
        record_cli_run(
            command=args.command,
            status=status,
            exit_code=exit_code,
            scenario=getattr(args, "scenario", None),
            seed=getattr(args, "seed", None),
            config_digest=config_digest,
            output_dir=str(args.out),
            message=message,
        )
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
