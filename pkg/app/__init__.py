"""
Application package for the Deep Dynamics identification lab
"""
import logging
from typing import Any, Dict, Optional, Sequence

import click

from utils.config_manager import parse_override_value

logger = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def parse_overrides(pairs: Sequence[str], seed: Optional[int] = None) -> Dict[str, Any]:
    """Turn repeated ``key=value`` flags into a dotted override mapping."""
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise click.BadParameter(f"expected KEY=VALUE, got '{pair}'", param_hint="--set")
        overrides[key.strip()] = parse_override_value(raw)
    if seed is not None:
        overrides["seed"] = seed
    return overrides


class CliState:
    """Per-invocation state shared by every command: the config file and its overrides."""

    def __init__(self, config_path: Optional[str], overrides: Dict[str, Any]):
        self.config_path = config_path
        self.overrides = overrides
        self._run = None

    @property
    def run(self):
        """RunContext for the resolved configuration, loaded on first use."""
        if self._run is None:
            from app.services.run_context import RunContext
            from settings import load_run_config
            self._run = RunContext(load_run_config(self.config_path, self.overrides))
        return self._run

    @property
    def config(self):
        return self.run.config


def create_app() -> click.Group:
    """Application factory: the click group with every command registered"""

    @click.group(context_settings={"help_option_names": ["-h", "--help"]})
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="Run configuration JSON (default: $DEEPDYN_CONFIG or config/run_config.json).")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                  help="Dotted config override, e.g. --set train.epochs=5. Repeatable; wins over the file.")
    @click.option("--seed", type=int, default=None, help="Override the run seed.")
    @click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None,
                  help="Logging level (default: $DEEPDYN_LOG_LEVEL or INFO).")
    @click.pass_context
    def cli(ctx, config_path, overrides, seed, log_level):
        """Physics-informed vehicle dynamics identification and racing."""
        if log_level:
            logging.getLogger().setLevel(log_level.upper())
        ctx.obj = CliState(config_path, parse_overrides(overrides, seed))

    # Register commands
    from routes.main import init_config, tracks, export_ground_truth
    from routes.data import generate
    from routes.training import train, tune
    from routes.evaluate import evaluate
    from routes.racing import race

    for command in (init_config, tracks, export_ground_truth, generate, train, tune, evaluate, race):
        cli.add_command(command)

    # Register custom error handlers
    from utils.errors import register_error_handlers
    register_error_handlers(cli)

    return cli
