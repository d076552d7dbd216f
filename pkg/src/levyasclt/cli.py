"""Command-line front end. Results go to files; ``report`` renders them as text."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import harness
from .errors import ConditionsFailed, ConfigInvalid, LevyAscltError

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2

SCHEMA_HELP = """\
Config file (JSON, unknown keys rejected):
  kind        asclt | lfq_consistency | clt_lfq | lil | conditions
  model       {drift, gaussian_vol, jump_intensity,
               jumps: {kind: normal|uniform|discrete, mean, std, lo, hi, points, probs}}
  family      {name: sqrt|power_diag|weighted_exp|weighted_exp_exact|exp_scale,
               alpha, dim, betas}
  horizon     T > 0          step        0 < step <= T/100
  replicates  n >= 1         base_seed   0 <= seed < 2^64
  eval_times  {t0, ratio, count}         subsample   >= 1
  checks      {ks_max, ks_pass_fraction, sigma_tilde_tol, sigma_hat_tol,
               clt_variance_rel_tol, lil_factor, lil_max_exceed_fraction, lil_window}
  output      {replicates, aggregate, conditions}
"""


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(config, seed, replicates, kind=None):
    if config is None:
        raise _Fail(EXIT_INVALID, "--config is required")
    try:
        raw = json.loads(Path(config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _Fail(EXIT_INVALID, f"cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise _Fail(EXIT_INVALID, "config must be a JSON object")
    if seed is not None:
        raw["base_seed"] = seed
    if replicates is not None:
        raw["replicates"] = replicates
    if kind is not None:
        raw["kind"] = kind
    try:
        return harness.load_config(raw)
    except ConfigInvalid as exc:
        raise _Fail(EXIT_INVALID, f"invalid config: {exc}") from exc


def _say(ctx, msg: str) -> None:
    if not ctx.obj.get("quiet"):
        click.echo(msg)


def _common(f):
    f = click.option("--config", type=click.Path(dir_okay=False), help="Experiment config (JSON).")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True,
                     help="Output directory.")(f)
    f = click.option("--seed", type=click.IntRange(0, harness.MASK64), help="Override base_seed.")(f)
    f = click.option("--replicates", type=click.IntRange(min=1), help="Override the replicate count.")(f)
    f = click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
                     help="Worker processes; never changes the outputs.")(f)
    return f


def _run(ctx, kind, config, out, seed, replicates, threads, check):
    cfg = _load(config, seed, replicates, kind)
    try:
        agg = harness.run_experiment(cfg, out_dir=out, threads=threads)
    except ConditionsFailed as exc:
        _say(ctx, f"conditions failed: {exc} (see {Path(out) / cfg.output.conditions})")
        raise _Fail(EXIT_CHECK if check else EXIT_INVALID, str(exc)) from exc
    _say(ctx, _render(agg))
    if check and not agg["passed"]:
        raise _Fail(EXIT_CHECK, "acceptance check failed")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--quiet", is_flag=True, help="Suppress console output.")
@click.pass_context
def cli(ctx, quiet):
    """Monte Carlo checks of almost-sure limit theorems for Levy martingales."""
    ctx.ensure_object(dict)
    ctx.obj["quiet"] = quiet


@cli.command()
@_common
@click.pass_context
def simulate(ctx, config, out, seed, replicates, threads):
    """Dump simulated paths and jump logs as CSV."""
    cfg = _load(config, seed, replicates)
    files = harness.simulate_paths(cfg, out)
    _say(ctx, f"wrote {len(files)} path file(s) to {out}")


@cli.command("check-family")
@_common
@click.pass_context
def check_family(ctx, config, out, seed, replicates, threads):
    """Write the regularity report of the configured family."""
    cfg = _load(config, seed, replicates, "conditions")
    try:
        agg = harness.run_experiment(cfg, out_dir=out)
    except ConditionsFailed as exc:
        _say(ctx, str(exc))
        raise _Fail(EXIT_CHECK, str(exc)) from exc
    _say(ctx, _render(agg))


@cli.command()
@_common
@click.option("--check", is_flag=True, help="Exit 2 when a gated check fails.")
@click.pass_context
def estimate(ctx, config, out, seed, replicates, threads, check):
    """Variance estimator series (sigma hat, sigma tilde, matrix LFQ)."""
    _run(ctx, "lfq_consistency", config, out, seed, replicates, threads, check)


@cli.command()
@_common
@click.option("--check", is_flag=True, help="Exit 2 when a gated check fails.")
@click.pass_context
def asclt(ctx, config, out, seed, replicates, threads, check):
    """KS distance of the weighted empirical measure to its Gaussian limit."""
    _run(ctx, "asclt", config, out, seed, replicates, threads, check)


@cli.command()
@_common
@click.option("--check", is_flag=True, help="Exit 2 when a gated check fails.")
@click.pass_context
def clt(ctx, config, out, seed, replicates, threads, check):
    """Fluctuations of the variance estimators around sigma^2."""
    _run(ctx, "clt_lfq", config, out, seed, replicates, threads, check)


@cli.command()
@_common
@click.option("--check", is_flag=True, help="Exit 2 when a gated check fails.")
@click.pass_context
def lil(ctx, config, out, seed, replicates, threads, check):
    """Iterated-logarithm envelope of the centered quadratic average."""
    _run(ctx, "lil", config, out, seed, replicates, threads, check)


@cli.command()
@click.argument("aggregate", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def report(ctx, aggregate):
    """Render an aggregate.json as a text table."""
    try:
        agg = json.loads(Path(aggregate).read_text())
    except json.JSONDecodeError as exc:
        raise _Fail(EXIT_INVALID, f"not JSON: {exc}") from exc
    click.echo(_render(agg))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}={_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)


def _render(agg: dict) -> str:
    lines = [f"kind: {agg.get('kind')}  replicates: {agg.get('replicates')}  config: {agg.get('config_hash')}"]
    for section in ("targets", "estimates", "tests"):
        for k, v in sorted((agg.get(section) or {}).items()):
            lines.append(f"  {section[:-1]:<9} {k:<24} {_fmt(v)}")
    for k, c in sorted((agg.get("checks") or {}).items()):
        tag = "PASS" if c["passed"] else "FAIL"
        if not c.get("gated", True):
            tag += " (not gated)"
        lines.append(f"  check     {k:<24} {_fmt(c['value'])} vs {_fmt(c['threshold'])}  {tag}")
    lines.append(f"overall: {'PASS' if agg.get('passed') else 'FAIL'}")
    return "\n".join(lines)


def main(argv=None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        click.echo(cli.get_help(click.Context(cli, info_name="levyasclt")))
        click.echo("\n" + SCHEMA_HELP)
        return EXIT_INVALID
    try:
        cli.main(args=argv, prog_name="levyasclt", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        click.echo(SCHEMA_HELP, err=True)
        return EXIT_INVALID
    except click.exceptions.Abort:
        return EXIT_INVALID
    except _Fail as exc:
        if exc.code == EXIT_INVALID:
            click.echo(f"error: {exc}", err=True)
            click.echo(SCHEMA_HELP, err=True)
        else:
            click.echo(f"check failed: {exc}", err=True)
        return exc.code
    except LevyAscltError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    return EXIT_OK


def run() -> None:
    sys.exit(main())
