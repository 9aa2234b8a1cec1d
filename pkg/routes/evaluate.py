"""
Open-loop evaluation command.
"""
import logging
from pathlib import Path

import click

from app.services.estimators import load_estimator
from app.services.evaluation import (
    coefficient_report,
    coefficient_table,
    comparison_table,
    default_horizon_ms,
    open_loop_report,
    write_per_window_csv,
)
from app.services.telemetry import load_csv
from routes import echo_result, pass_state
from utils.checkpoint import write_json

logger = logging.getLogger(__name__)


@click.command("eval")
@click.option("--checkpoint", "checkpoints", multiple=True, type=click.Path(dir_okay=False),
              help="Checkpoint to evaluate. Repeatable (default: <checkpoints_dir>/ddm.json).")
@click.option("--horizon-ms", type=float, default=None,
              help="ADE/FDE horizon in ms (default: eval.horizon_ms_sim, or horizon_ms_real below 40 Hz).")
@click.option("--data", "data_path", type=click.Path(dir_okay=False), default=None,
              help="Evaluation CSV (default: <data_dir>/<test_csv>).")
@pass_state
def evaluate(state, checkpoints, horizon_ms, data_path):
    """Open-loop metrics and coefficient reports for one or more checkpoints."""
    run = state.run
    config = run.config
    dataset = load_csv(data_path or run.test_csv)
    model = run.model(dataset.rate_hz)
    if horizon_ms is None:
        horizon_ms = default_horizon_ms(dataset.rate_hz, config.eval.horizon_ms_sim, config.eval.horizon_ms_real)
    bounds = run.bounds()
    ground_truth = run.ground_truth if config.bounds.regime == "sim" else None
    paths = [Path(p) for p in checkpoints] or [run.checkpoint_path("ddm")]

    open_loop, coefficients, written = [], [], {}
    for path in paths:
        estimator = load_estimator(path)
        report, per_window = open_loop_report(estimator, dataset, model, horizon_ms / 1000.0)
        coeffs = coefficient_report(estimator, dataset, bounds, ground_truth)
        open_loop.append(report)
        coefficients.append(coeffs)

        stem = path.stem
        outputs = {
            "open_loop": str(write_json(report.to_dict(), run.report_path(f"eval_{stem}_open_loop.json"))),
            "coefficients": str(write_json(coeffs.to_dict(), run.report_path(f"eval_{stem}_coefficients.json"))),
        }
        if config.eval.per_window_csv:
            outputs["per_window"] = str(write_per_window_csv(per_window, run.report_path(f"eval_{stem}_windows.csv")))
        written[stem] = outputs

    comparison_path = run.report_path("eval_comparison.csv")
    coefficients_path = run.report_path("eval_coefficients.csv")
    comparison_path.parent.mkdir(parents=True, exist_ok=True)
    comparison_table(open_loop).to_csv(comparison_path, float_format="%.17g")
    coefficient_table(coefficients, ground_truth).to_csv(coefficients_path, float_format="%.17g")
    echo_result({
        "horizon_ms": horizon_ms,
        "reports": written,
        "comparison": str(comparison_path),
        "coefficient_table": str(coefficients_path),
        "models": {r.model: r.to_dict() for r in open_loop},
    })
