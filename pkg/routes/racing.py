"""
Closed-loop racing command.
"""
import logging
from pathlib import Path
from typing import Optional

import click

from app.services.estimators import load_estimator
from app.services.evaluation import race_table
from app.services.race import race as run_race
from routes import echo_result, pass_state
from utils.checkpoint import write_json
from utils.errors import RaceAbortError

logger = logging.getLogger(__name__)


@click.command("race")
@click.option("--checkpoint", "checkpoints", multiple=True, type=click.Path(dir_okay=False),
              help="Checkpoint supplying coefficients. Repeatable (default: <checkpoints_dir>/ddm.json).")
@click.option("--laps", type=click.IntRange(min=1), default=None, help="Laps to race (default: race.laps).")
@click.option("--track", "track_name", type=click.Choice(["track1", "track2"]), default=None,
              help="Track (default: race.track).")
@pass_state
def race(state, checkpoints, laps, track_name):
    """Race with MPC using each checkpoint's coefficients; writes traces, summaries and a comparison table."""
    run = state.run
    config = run.config
    laps = laps or config.race.laps
    track = run.track(track_name or config.race.track, config.race.raceline_path, config.race.track_path)
    model = run.model()
    paths = [Path(p) for p in checkpoints] or [run.checkpoint_path("ddm")]

    reports, summaries = [], {}
    first_abort: Optional[RaceAbortError] = None
    for path in paths:
        estimator = load_estimator(path)
        try:
            report = run_race(track, estimator, laps, run.ground_truth, model, config.race, config.mpc)
        except RaceAbortError as e:
            logger.error("%s: %s", path.stem, e.message)
            report = e.report
            first_abort = first_abort or e
        stem = path.stem
        report.write_trace(run.report_path(f"race_{stem}_trace.csv"))
        write_json(report.summary(), run.report_path(f"race_{stem}_summary.json"))
        reports.append(report)
        summaries[stem] = report.summary()

    table_path = run.report_path("race_comparison.csv")
    race_table(reports).to_csv(table_path, float_format="%.17g")
    if first_abort is not None:
        raise first_abort
    echo_result({"races": summaries, "comparison": str(table_path)})
