"""
Dataset generation command.
"""
import logging
from typing import Optional, Tuple

import click

from app.services.datagen import pure_pursuit_drive
from app.services.telemetry import Dataset, save_csv
from routes import echo_result, pass_state

logger = logging.getLogger(__name__)


def _generate_one(run, track_name: str, track_path: Optional[str], seed: int, laps: int,
                  samples) -> Tuple[Dataset, str]:
    cfg = run.config.datagen
    track = run.track(track_name, cfg.raceline_path, track_path)
    dataset = pure_pursuit_drive(track, run.known, run.ground_truth, laps, run.config.dynamics.rate_hz, seed,
                                 cfg, run.limits, run.config.dynamics.vx_floor)
    if samples is not None:
        if samples <= len(dataset):
            dataset = dataset.excerpt(samples)
        else:
            logger.warning("Only %d of %d requested samples were generated on %s", len(dataset), samples, track.name)
    return dataset, track.name


@click.command("generate")
@click.option("--laps", type=click.IntRange(min=1), default=None, help="Laps driven per track (default: datagen.laps).")
@click.option("--samples", type=click.IntRange(min=2), default=None,
              help="Rows kept per dataset, a centred excerpt (default: datagen.samples).")
@pass_state
def generate(state, laps, samples):
    """Drive the pure-pursuit controller on the training and test tracks and save both CSVs."""
    run = state.run
    cfg = run.config.datagen
    laps = cfg.laps if laps is None else laps
    samples = cfg.samples if samples is None else samples

    train, train_track = _generate_one(run, cfg.train_track, cfg.train_track_path, run.config.seed, laps, samples)
    test, test_track = _generate_one(run, cfg.test_track, cfg.test_track_path, run.config.seed + 1, laps, samples)
    save_csv(train, run.train_csv)
    save_csv(test, run.test_csv)
    echo_result({
        "train": {"path": str(run.train_csv), "rows": len(train), "track": train_track},
        "test": {"path": str(run.test_csv), "rows": len(test), "track": test_track},
    })
