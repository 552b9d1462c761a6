"""Command-line front end: ``fracap <command> --config <file> [--out] [--n] [--s]``."""

from __future__ import annotations

import asyncio
import json
import logging
from typing import Awaitable, Callable, Optional

import click
from pydantic import BaseModel

from src.config.settings import Settings
from src.errors import NumericalError
from src.experiments.config_models import ExperimentConfig, apply_overrides, load_config
from src.experiments.context import run_scope
from src.experiments.logging_utils import configure_logging
from src.experiments.presets import preset
from src.experiments.service import ExperimentService, schema_models

logger = logging.getLogger("fracap.experiments")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

Runner = Callable[[ExperimentService, ExperimentConfig], Awaitable[BaseModel]]


def _exit_code_for(exc: BaseException) -> Optional[int]:
    """Map library failures to stable exit codes; None means not ours to handle."""
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, ValueError):
        # ConfigError, MeshMismatchError, settings validation
        return EXIT_CONFIG
    return None


def _common_options(config_required: bool):
    def decorator(fn):
        fn = click.option("--s", "s", type=float, default=None, help="Override space.s")(fn)
        fn = click.option("--n", "n", type=int, default=None, help="Override mesh.n")(fn)
        fn = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory")(fn)
        fn = click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False),
            required=config_required,
            default=None,
            help="JSON experiment config" + ("" if config_required else " (replaces the preset)"),
        )(fn)
        return fn

    return decorator


def _execute(
    ctx: click.Context,
    command: str,
    runner: Runner,
    *,
    config_path: str | None,
    preset_name: str | None,
    n: int | None,
    s: float | None,
    out: str | None,
) -> None:
    try:
        settings = Settings.load()
    except ValueError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)
        return
    configure_logging(settings.log_level)

    with run_scope(settings.run_id_prefix) as run_id:
        logger.info("command_started command=%s config=%s", command, config_path or preset_name)
        try:
            base = load_config(config_path) if config_path else preset(preset_name)  # type: ignore[arg-type]
            cfg = apply_overrides(base, n=n, s=s, out=out, default_n=settings.default_n)

            async def _main() -> BaseModel:
                service = ExperimentService(
                    settings, solve_concurrency=asyncio.Semaphore(settings.solve_concurrency)
                )
                return await runner(service, cfg)

            result = asyncio.run(_main())
        except Exception as exc:
            code = _exit_code_for(exc)
            if code is None:
                raise
            context = getattr(exc, "context", None) or getattr(exc, "field", None)
            logger.warning("command_failed command=%s exit_code=%d error=%s context=%s", command, code, exc, context)
            click.echo(f"error: {exc}", err=True)
            ctx.exit(code)
            return

        out_dir = cfg.output.dir or settings.output_dir
        logger.info("command_completed command=%s out=%s", command, out_dir)
        click.echo(json.dumps({"command": command, "run_id": run_id, "out": out_dir, **_headline(result)}))


def _headline(result: BaseModel) -> dict:
    data = result.model_dump(mode="json")
    if "summary" in data:
        return {"converged": data["summary"]["converged"], "iterations": data["summary"]["iterations"]}
    if "report" in data:
        return {"verdict": data["report"]["verdict"]}
    if "rescaled_alpha" in data:
        return {"rescaled_alpha": data["rescaled_alpha"]}
    if "supports" in data:
        return {"runs": [row["run"] for row in data["supports"]]}
    return {}


@click.group()
def main() -> None:
    """Fractional Sobolev finite elements, sparse L^p solves and capacitary measures."""


@main.command("assemble")
@_common_options(config_required=True)
@click.pass_context
def assemble_cmd(ctx, config_path, out, n, s):
    """Write the Gram, mass and stiffness matrices as dense text."""
    _execute(ctx, "assemble", lambda svc, cfg: svc.assemble(cfg),
             config_path=config_path, preset_name=None, n=n, s=s, out=out)


@main.command("solve")
@_common_options(config_required=True)
@click.pass_context
def solve_cmd(ctx, config_path, out, n, s):
    """Run the reweighted solve and write solution.csv and report.json."""
    _execute(ctx, "solve", lambda svc, cfg: svc.solve(cfg),
             config_path=config_path, preset_name=None, n=n, s=s, out=out)


@main.command("capacity")
@_common_options(config_required=True)
@click.pass_context
def capacity_cmd(ctx, config_path, out, n, s):
    """Capacities of the configured interval sets with property checks and refinement table."""
    _execute(ctx, "capacity", lambda svc, cfg: svc.capacity(cfg),
             config_path=config_path, preset_name=None, n=n, s=s, out=out)


@main.command("gamma-test")
@_common_options(config_required=True)
@click.pass_context
def gamma_test_cmd(ctx, config_path, out, n, s):
    """Relaxed Dirichlet solutions along a blow-up sequence of block measures."""
    _execute(ctx, "gamma-test", lambda svc, cfg: svc.gamma_test(cfg),
             config_path=config_path, preset_name=None, n=n, s=s, out=out)


@main.command("reproduce-1d")
@_common_options(config_required=False)
@click.pass_context
def reproduce_1d_cmd(ctx, config_path, out, n, s):
    """Support coincidence of w and z for p = 0.5, s = 0.1."""
    _execute(ctx, "reproduce-1d", lambda svc, cfg: svc.reproduce_1d(cfg),
             config_path=config_path, preset_name="reproduce-1d", n=n, s=s, out=out)


@main.command("reproduce-spaces")
@_common_options(config_required=False)
@click.pass_context
def reproduce_spaces_cmd(ctx, config_path, out, n, s):
    """Integral and spectral spaces on the same target, with and without rescaled alpha."""
    _execute(ctx, "reproduce-spaces", lambda svc, cfg: svc.reproduce_spaces(cfg),
             config_path=config_path, preset_name="reproduce-spaces", n=n, s=s, out=out)


@main.command("reproduce-p0")
@_common_options(config_required=False)
@click.pass_context
def reproduce_p0_cmd(ctx, config_path, out, n, s):
    """p = 0 under two epsilon schedules, a p = 0.1 baseline and the p -> 0 continuation."""
    _execute(ctx, "reproduce-p0", lambda svc, cfg: svc.reproduce_p0(cfg),
             config_path=config_path, preset_name="reproduce-p0", n=n, s=s, out=out)


@main.command("schema")
@click.argument("name", type=click.Choice(sorted(schema_models())))
def schema_cmd(name: str) -> None:
    """Print the JSON schema of a config or report document."""
    click.echo(json.dumps(schema_models()[name].model_json_schema(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
