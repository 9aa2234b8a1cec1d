"""
Training and hyperparameter search commands.
"""
import logging
from pathlib import Path

import click

from app.services.estimators import save_network
from app.services.telemetry import load_csv
from app.services.trainer import train as train_network, tune as tune_network
from routes import echo_result, pass_state
from utils.checkpoint import write_json
from utils.config_manager import get_config_manager
from utils.errors import TrainingDivergenceError

logger = logging.getLogger(__name__)

MODEL_CHOICES = ["ddm", "dpm-gt", "dpm-plus20", "dpm-minus20"]


def report_path_for(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.stem + ".report.json")


@click.command("train")
@click.option("--model", "variant", type=click.Choice(MODEL_CHOICES), default=None,
              help="Model variant (default: train.model).")
@click.option("--data", "data_path", type=click.Path(dir_okay=False), default=None,
              help="Training CSV (default: <data_dir>/<train_csv>).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint path (default: <checkpoints_dir>/<model>.json).")
@pass_state
def train(state, variant, data_path, out_path):
    """Train a coefficient network and write its checkpoint and training report."""
    run = state.run
    config = run.config
    variant = variant or config.train.model
    train_config = config.train.model_copy(update={"model": variant})
    dataset = load_csv(data_path or run.train_csv)
    model = run.model(dataset.rate_hz)
    checkpoint = Path(out_path) if out_path else run.checkpoint_path(variant)
    report_file = report_path_for(checkpoint)
    payload = train_config.model_dump(mode="json")

    try:
        network, report = train_network(dataset, train_config, run.bounds(), run.model_kind(variant), model,
                                         config.train_seed, config.bounds.activation)
    except TrainingDivergenceError as e:
        # keep the last finite parameters for inspection
        if e.checkpoint is not None:
            save_network(e.checkpoint, checkpoint.with_name(checkpoint.stem + ".diverged.json"), payload)
        if e.report is not None:
            write_json(e.report.to_dict(), report_file)
        raise

    save_network(network, checkpoint, payload)
    write_json(report.to_dict(), report_file)
    echo_result({
        "checkpoint": str(checkpoint),
        "report": str(report_file),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
    })


@click.command("tune")
@click.option("--budget", type=click.IntRange(min=1), default=None, help="Number of trials (default: tune.budget).")
@click.option("--model", "variant", type=click.Choice(MODEL_CHOICES), default=None,
              help="Model variant (default: train.model).")
@click.option("--data", "data_path", type=click.Path(dir_okay=False), default=None,
              help="Training CSV (default: <data_dir>/<train_csv>).")
@pass_state
def tune(state, budget, variant, data_path):
    """Random search over training hyperparameters; writes the best config and a trials CSV."""
    run = state.run
    config = run.config
    variant = variant or config.train.model
    base = config.train.model_copy(update={"model": variant})
    dataset = load_csv(data_path or run.train_csv)
    best, trials = tune_network(dataset, base, config.tune, run.bounds(), run.model_kind(variant),
                                run.model(dataset.rate_hz), config.train_seed, budget, config.bounds.activation)

    trials_path = run.report_path(f"tune_{variant}_trials.csv")
    trials_path.parent.mkdir(parents=True, exist_ok=True)
    trials.to_csv(trials_path, index=False, float_format="%.17g")
    best_config = config.model_copy(update={"train": best})
    best_path = get_config_manager().save(best_config, run.report_path(f"tune_{variant}_best.json"))
    echo_result({
        "best_config": str(best_path),
        "trials": str(trials_path),
        "best": best.model_dump(mode="json"),
    })
