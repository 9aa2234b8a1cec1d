"""
Configuration and inspection commands.
"""
import logging
from pathlib import Path

import click

from app.services.estimators import save_ground_truth
from app.services.tracks import get_track, save_track
from routes import echo_result, pass_state
from utils.config_manager import get_config_manager
from utils.constants import DEFAULT_CONFIG_FILE

logger = logging.getLogger(__name__)

# Get ConfigManager singleton
config_manager = get_config_manager()

TRACK_NAMES = ("track1", "track2")


@click.command("init-config")
@click.argument("path", type=click.Path(dir_okay=False), default=str(DEFAULT_CONFIG_FILE))
@click.option("--force", is_flag=True, help="Overwrite an existing file.")
@pass_state
def init_config(state, path, force):
    """Write the resolved configuration (defaults plus --set overrides) to PATH."""
    target = Path(path)
    if target.exists() and not force:
        raise click.UsageError(f"{target} exists; pass --force to overwrite")
    config = config_manager.apply_overrides(config_manager.default_config(), state.overrides)
    config_manager.save(config, target)
    echo_result({"config": str(target)})


@click.command("tracks")
@click.option("--export", "export_dir", type=click.Path(file_okay=False), default=None,
              help="Also write each track as JSON into this directory.")
@pass_state
def tracks(state, export_dir):
    """List the built-in tracks with their length and half-width."""
    listing = {}
    for name in TRACK_NAMES:
        track = get_track(name)
        listing[name] = {"length": track.length, "half_width": track.half_width,
                         "points": int(len(track.centerline) - 1)}
        if export_dir:
            save_track(track, Path(export_dir) / f"{name}.json")
    echo_result({"tracks": listing})


@click.command("export-ground-truth")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Destination (default: <checkpoints_dir>/ground-truth.json).")
@pass_state
def export_ground_truth(state, out_path):
    """Write a pseudo-checkpoint that evaluates and races with the simulator's coefficients."""
    run = state.run
    path = Path(out_path) if out_path else run.checkpoint_path("ground-truth")
    save_ground_truth(run.ground_truth, path)
    echo_result({"checkpoint": str(path)})
