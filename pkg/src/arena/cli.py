"""Command line entry point: ``arena run | validate-config | diff-transcripts | fixtures``."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import steane
from .config import ConfigError, config_load
from .harness import EXPERIMENTS, diff_transcripts, report_render, run_experiment
from .wire import ProverCoins, frame_encode

GOLDEN_SESSION_ID = bytes(16)


def golden_fixtures() -> dict[str, bytes]:
    """Byte fixtures frozen under tests/fixtures."""
    coins = np.unpackbits(np.array([0xA5], dtype=np.uint8), bitorder="little")
    return {
        "prover_coins_a5.frame": frame_encode(ProverCoins(coins), GOLDEN_SESSION_ID, 0),
        "codewords_t1.txt": steane.dump_codeword_sets(steane.gen_codeword_sets(1)).encode(),
    }


@click.group()
def main() -> None:
    """Experiments for the classical-verifier zero-knowledge protocol emulator."""


@main.command()
@click.argument("experiment", type=click.Choice(sorted(EXPERIMENTS)))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--trials", type=int, default=None, help="Override the config's trial count.")
@click.option("--seed", type=int, default=None, help="Override the config's seed.")
@click.option("--workers", type=int, default=None, help="Trial-parallel worker processes.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report path (.json, .csv or .txt).")
@click.option("--transcripts", type=click.Path(dir_okay=False), default=None,
              help="JSONL transcript path (default: next to --out).")
def run(experiment, config_path, trials, seed, workers, out, transcripts):
    """Run EXPERIMENT as described by --config and print a summary."""
    try:
        cfg = config_load(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    for w in cfg.warnings:
        click.echo(f"warning: {w}", err=True)
    if cfg.kind != experiment:
        raise click.ClickException(f"config describes {cfg.kind!r}, not {experiment!r}")
    if out and not transcripts:
        transcripts = Path(out).with_suffix(".transcripts.jsonl")
    report = run_experiment(cfg, trials=trials, seed=seed, workers=workers, transcripts=transcripts,
                            keep_transcripts=False)
    click.echo(report_render(report, "text").decode(), nl=False)
    if out:
        fmt = {".csv": "csv", ".txt": "text"}.get(Path(out).suffix, "json")
        Path(out).write_bytes(report_render(report, fmt))
    sys.exit(0 if report.passed else 1)


@main.command("validate-config")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def validate_config(path):
    """Parse and cross-check a config file."""
    try:
        cfg = config_load(path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    for w in cfg.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"ok: {cfg.kind}, {cfg.trials} trials, seed {cfg.seed}, digest {cfg.digest()}")


@main.command("diff-transcripts")
@click.argument("a", type=click.Path(exists=True, dir_okay=False))
@click.argument("b", type=click.Path(exists=True, dir_okay=False))
def diff_transcripts_cmd(a, b):
    """Compare two JSONL transcripts message by message."""
    diffs = diff_transcripts(Path(a).read_text(), Path(b).read_text())
    for d in diffs:
        click.echo(d)
    click.echo(f"{len(diffs)} differing messages")
    sys.exit(1 if diffs else 0)


@main.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="fixtures")
def fixtures(out_dir):
    """Write the golden wire and codeword fixtures."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name, data in golden_fixtures().items():
        (d / name).write_bytes(data)
        click.echo(f"wrote {d / name} ({len(data)} bytes)")
