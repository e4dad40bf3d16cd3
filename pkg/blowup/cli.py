import json
import os

import click
import pandas as pd
from dotenv import load_dotenv

from blowup import config as config_module, pipeline

load_dotenv()

VERDICT_COLUMNS = ["condition_id", "verdict", "tail", "fitted_tail_exponent", "hbar_value", "expected"]


def resolve_threads(threads):
    if threads is not None:
        return threads
    value = os.getenv("DUALBLOW_THREADS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        raise click.UsageError(f"DUALBLOW_THREADS must be an integer, got '{value}'")


@click.group()
@click.version_option("0.1.0")
def cli():
    """Blow-up solutions of Δ_p u + Δ_p(|u|^{2γ})|u|^{2γ−2}u = a(x)g(u), solved through the dual variable u = f(w)."""
    pass


@cli.command(help="Run the task described by a JSON configuration and write its artifacts.")
@click.option("--config", "config_path", required=True, help="Path to the JSON run configuration.")
@click.option("--out", "out_dir", required=False, help="Output directory (overrides output_dir in the config).")
@click.option("--override-hypotheses", is_flag=True, default=False,
              help="Solve even when a hypothesis fails; results are marked as not theorem-covered.")
@click.option("--threads", type=click.IntRange(min=1), required=False,
              help="Worker threads for family sweeps (default: DUALBLOW_THREADS or 1).")
@click.option("--progress/--no-progress", default=False, show_default=True)
@click.pass_context
def solve(ctx, config_path, out_dir, override_hypotheses, threads, progress):
    threads = resolve_threads(threads)
    try:
        run_config = config_module.load_config(config_path)
    except config_module.ConfigValidationError as e:
        pipeline.write_error_report(out_dir or "dualblow-out", None, e.errors)
        raise click.ClickException(str(e))

    report = pipeline.run(run_config, output_dir=out_dir, override_hypotheses=override_hypotheses,
                          threads=threads, progress=progress)
    target = out_dir or run_config.output_dir
    click.echo(f"Task '{report.task}' finished with status {report.status}; {len(report.files) + 1} files in {target}")
    if not report.theorem_covered:
        click.echo("Warning: hypotheses were overridden; results are not covered by the existence theory.")
    for error in report.errors:
        click.echo(f"[{error['stage']}] {error['type']}: {error['message']}", err=True)
    if report.status == "error":
        raise click.ClickException(f"Computation failed; see {os.path.join(target, 'report.json')}")
    ctx.exit(report.exit_code)


@cli.command(help="Validate a JSON configuration without running it.")
@click.option("--config", "config_path", required=True, help="Path to the JSON run configuration.")
def validate(config_path):
    try:
        run_config = config_module.load_config(config_path)
    except config_module.ConfigValidationError as e:
        raise click.ClickException(str(e))
    p = run_config.params
    click.echo(f"Configuration OK: task '{run_config.task}', p={p.p}, γ={p.gamma}, N={p.N}, "
               f"g={run_config.nonlinearity.kind}, a={run_config.potential.kind}")


@cli.command("list-verdicts", help="Show the hypothesis verdicts stored in a run report.")
@click.option("--input", required=True, help="Path to a report.json written by 'solve'.")
@click.option("--verdict", type=click.Choice(["holds", "fails", "inconclusive"]), required=False,
              help="Only show conditions with this verdict.")
def list_verdicts(input, verdict):
    if not os.path.exists(input):
        raise click.ClickException(f"Input file '{input}' does not exist.")
    try:
        with open(input, "r", encoding="utf-8") as f:
            report = json.load(f)
    except ValueError as e:
        raise click.ClickException(f"Could not read report: {e}")

    rows = report.get("verdicts") or []
    if not rows:
        click.echo("Report contains no verdicts.")
        return
    df = pd.DataFrame(rows)
    if verdict:
        df = df[df["verdict"] == verdict]
    if df.empty:
        click.echo("No matching verdicts found.")
        return

    existing_cols = [col for col in VERDICT_COLUMNS if col in df.columns]
    click.echo(df[existing_cols].to_markdown(index=False, tablefmt="grid"))
    if report.get("gates"):
        gates = report["gates"]
        click.echo(f"radial family: {gates.get('radial_family_ok')}, sandwich: {gates.get('sandwich_ok')}")
