"""Command-line interface for the watermark lab.

Every stage subcommand builds on the run directory of its config: models already
checkpointed there are reused, missing prerequisites are trained first.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from .attacks import agreement
from .errors import PipelineStageError, WatermarkLabError
from .models.config import ExperimentConfig, apply_overrides, load_config, parse_value
from .models.results import VerifyResult
from .pipeline import Experiment, run_pipeline
from .plots import render_plots
from .protocols import LrTier
from .report import collect_summaries, render_report
from .sweep import SweepGrid, expand_sweep, run_sweep, write_sweep_summary

log = logging.getLogger(__name__)

TRIGGERS = ("noise", "content", "unrelated", "fgsm")
LABELS = ("single", "multi")
STRATEGIES = ("joint", "rotation", "smoothed")


def _maybe_load_dotenv() -> None:
    """Load ``WMLAB_*`` defaults from a ``.env`` file when ``python-dotenv`` is installed.

    Existing environment variables are not overridden.
    """
    try:
        from dotenv import find_dotenv, load_dotenv
    except Exception:
        return

    dotenv_path = find_dotenv(usecwd=True)
    if dotenv_path:
        load_dotenv(dotenv_path, override=False)


def _setup_logging(debug: bool, quiet: bool) -> None:
    """Setup logging based on debug/quiet flags."""
    level = logging.DEBUG if debug else (logging.WARNING if quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _print_markdown(text: str) -> None:
    try:
        from rich.console import Console
        from rich.markdown import Markdown
    except ImportError:
        print(text)
        return
    Console().print(Markdown(text))


def _print_verify(name: str, result: VerifyResult) -> None:
    verdict = "WATERMARKED" if result.watermarked else "not watermarked"
    print(f"{name:<24} trigger_acc={result.trigger_acc:.4f} hits={result.hits}/{result.n} p={result.p_value:.3e} → {verdict}")


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    # env-first: flags win, then WMLAB_* variables, then the config file
    p.add_argument("--config", default=os.environ.get("WMLAB_CONFIG"), help="INI config file (ENV: WMLAB_CONFIG)")
    p.add_argument(
        "--seed",
        type=int,
        default=int(os.environ["WMLAB_SEED"]) if os.environ.get("WMLAB_SEED") else None,
        help="Experiment seed (ENV: WMLAB_SEED)",
    )
    p.add_argument("--out", default=os.environ.get("WMLAB_OUT"), help="Output directory (ENV: WMLAB_OUT)")
    p.add_argument("--lr", choices=[t.value for t in LrTier], help="Attack lr tier; also selects the landscape tier")
    p.add_argument("--trigger", choices=TRIGGERS, help="Trigger family")
    p.add_argument("--labels", choices=LABELS, help="Labeling scheme")
    p.add_argument("--strategy", choices=STRATEGIES, help="Embedding strategy")
    p.add_argument(
        "--set",
        dest="set_values",
        action="append",
        default=[],
        help="Override SECTION.KEY=VALUE (repeatable). Example: --set embed.epochs=5",
    )
    p.add_argument("--debug", action="store_true", help="More logs")
    p.add_argument("--quiet", action="store_true", help="Fewer logs")
    return p


def build_parser() -> argparse.ArgumentParser:
    """Build argument parser."""
    common = _common_parser()
    p = argparse.ArgumentParser(prog="pywmlab", description="Backdoor watermark lab: embed, attack, restore and inspect.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "Run every enabled stage end to end"),
        ("pretrain", "Train the never-watermarked clean model"),
        ("make-triggers", "Generate and save the trigger set"),
        ("embed", "Embed the watermark"),
        ("attack-finetune", "Fine-tune attack at the configured (or --lr) tiers"),
        ("attack-extract", "Hard-label extraction attack"),
        ("restore", "Clean retraining after the fine-tune attack"),
        ("blend-finetune", "Blended fine-tuning plus the plain comparison"),
        ("landscape", "Trigger-loss grid and projected trajectory"),
        ("verify", "Ownership test of every checkpoint in the run directory"),
    ):
        sub.add_parser(name, parents=[common], help=text, description=text)

    rep = sub.add_parser("report", parents=[common], help="Markdown table over finished runs")
    rep.add_argument("--runs", help="Directory holding run directories (default: the output directory)")
    rep.add_argument("--output", help="Also write the report to this file")

    sw = sub.add_parser("sweep", parents=[common], help="Run a seed/trigger/label/strategy grid in parallel")
    sw.add_argument("--seeds", default="0,1,2", help="Comma-separated seeds. Default: 0,1,2")
    sw.add_argument("--triggers", default="", help=f"Comma-separated subset of {','.join(TRIGGERS)}")
    sw.add_argument("--label-schemes", default="", help=f"Comma-separated subset of {','.join(LABELS)}")
    sw.add_argument("--strategies", default="", help=f"Comma-separated subset of {','.join(STRATEGIES)}")
    sw.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="Worker processes")
    return p


def _split(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Load the config file (or defaults) and apply flag overrides.

    Raises:
        pydantic.ValidationError: When the result is invalid.
        ValueError: On a malformed ``--set``.
    """
    overrides: dict[str, Any] = {}
    for item in args.set_values:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = parse_value(raw)
    if args.seed is not None:
        overrides["experiment.seed"] = args.seed
    if args.out:
        overrides["experiment.out_dir"] = args.out
    if args.lr:
        overrides["attack.tiers"] = [args.lr]
        overrides["landscape.tier"] = args.lr
    if args.trigger:
        overrides["triggers.type"] = args.trigger
    if args.labels:
        overrides["triggers.labels"] = args.labels
    if args.strategy:
        overrides["embed.strategy"] = args.strategy
    config = load_config(args.config)
    return apply_overrides(config, overrides) if overrides else config


def _cmd_run(config: ExperimentConfig, args: argparse.Namespace) -> int:
    summary = run_pipeline(config)
    print(f"run {summary.run_id}: embed test={summary.embed_test_acc:.4f} trigger={summary.embed_trigger_acc:.4f} → {config.run_dir}")
    return 0


def _cmd_stage(config: ExperimentConfig, args: argparse.Namespace) -> int:
    exp = Experiment(config, reuse=True)
    exp.run_dir.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    tiers = config.attack.tiers
    if cmd == "pretrain":
        if exp.clean_model() is None:
            raise SystemExit("pretrain.enabled is false in this config.")
        print(exp.checkpoint_path("clean"))
    elif cmd == "make-triggers":
        ts = exp.trigger_set()
        print(f"{ts.description}: {len(ts)} samples → {exp.trigger_path}")
    elif cmd == "embed":
        exp.embedded()
        _print_verify("embedded", exp.verify(["embedded"])["embedded"])
    elif cmd == "attack-finetune":
        for tier in tiers:
            exp.attacked(tier)
        for name, result in exp.verify([f"finetune-{t}" for t in tiers]).items():
            _print_verify(name, result)
    elif cmd == "restore":
        for tier in tiers:
            exp.restored(tier)
        for name, result in exp.verify([f"retrain-{t}" for t in tiers]).items():
            _print_verify(name, result)
            if result.restoration_gain is not None:
                print(f"{'':<24} restoration gain {result.restoration_gain:+.4f}")
    elif cmd == "attack-extract":
        surrogate = exp.extracted()
        agree = agreement(exp.embedded(), surrogate, exp.splits().test, workers=config.experiment.workers)
        print(f"surrogate agreement with victim on test inputs: {agree:.4f}")
        _print_verify("extract", exp.verify(["extract"])["extract"])
    elif cmd == "blend-finetune":
        exp.blended()
        for name, result in exp.verify(["blend", "blend-plain"]).items():
            _print_verify(name, result)
    elif cmd == "landscape":
        outcome = exp.landscape()
        render_plots([], [(outcome.grid, outcome.trajectory)], exp.run_dir / "plots")
        print(outcome.summary.model_dump_json(indent=2))
    elif cmd == "verify":
        for name, result in exp.verify().items():
            _print_verify(name, result)
    return 0


def _cmd_report(config: ExperimentConfig, args: argparse.Namespace) -> int:
    root = Path(args.runs or config.experiment.out_dir)
    text = render_report(collect_summaries(root))
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    _print_markdown(text)
    return 0


def _cmd_sweep(config: ExperimentConfig, args: argparse.Namespace) -> int:
    grid = SweepGrid.model_validate(
        {
            "seeds": [int(s) for s in _split(args.seeds)],
            "triggers": _split(args.triggers),
            "labels": _split(args.label_schemes),
            "strategies": _split(args.strategies),
        }
    )
    configs = expand_sweep(config, grid)
    log.info("sweep: %d run(s) on %d worker(s)", len(configs), args.workers)
    summaries = asyncio.run(run_sweep(configs, max_workers=args.workers))
    path = write_sweep_summary(config.experiment.out_dir, summaries)
    print(path)
    return 0


COMMANDS: dict[str, Callable[[ExperimentConfig, argparse.Namespace], int]] = {
    "run": _cmd_run,
    "report": _cmd_report,
    "sweep": _cmd_sweep,
}


def main(argv: Sequence[str] | None = None) -> None:
    """Main entrypoint for CLI."""
    _maybe_load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.debug, args.quiet)

    try:
        config = config_from_args(args)
        code = COMMANDS.get(args.command, _cmd_stage)(config, args)
    except PipelineStageError as exc:
        raise SystemExit(f"Pipeline error: {exc}") from None
    except ValidationError as exc:
        raise SystemExit(f"Invalid configuration: {exc}") from None
    except (WatermarkLabError, ValueError, OSError) as exc:
        raise SystemExit(f"{exc.__class__.__name__}: {exc}") from None
    except ExceptionGroup as group:
        raise SystemExit(f"Sweep failed: {group.exceptions[0]}") from None
    except KeyboardInterrupt:
        code = 130
    raise SystemExit(code)


if __name__ == "__main__":
    main()
