"""
RunContext service: turns a validated RunConfig into the objects commands need.

This service is responsible for:
- Building the physics model and ground-truth coefficients
- Building the nominal coefficient bounds for the configured regime
- Resolving tracks (procedural, from a track JSON file, or with a raceline file)
- Building artefact paths for datasets, checkpoints and reports
"""

import logging
from pathlib import Path
from typing import Optional

from app.models import ActuatorLimits, KnownCoefficients, ModelKind, ModelVariant, UnknownCoefficients
from app.services.coefficients import CoefficientBounds, real_nominal_bounds, sim_nominal_bounds
from app.services.dynamics import SingleTrackModel
from app.services.tracks import Track, get_track, load_raceline, load_track
from utils.validation import RunConfig

logger = logging.getLogger(__name__)


class RunContext:
    """
    Derived objects for one run configuration.
    """

    def __init__(self, config: RunConfig):
        self.config = config

    # ========== Physics ==========

    @property
    def known(self) -> KnownCoefficients:
        d = self.config.dynamics
        return KnownCoefficients(d.m, d.l_f, d.l_r)

    @property
    def limits(self) -> ActuatorLimits:
        d = self.config.dynamics
        return ActuatorLimits(d.steer_max, d.dthrottle_max, d.dsteer_max)

    @property
    def ground_truth(self) -> UnknownCoefficients:
        return UnknownCoefficients.from_dict(self.config.dynamics.ground_truth)

    def model(self, rate_hz: Optional[float] = None) -> SingleTrackModel:
        """Physics layer at the configured rate, or at a dataset's own rate."""
        rate = rate_hz or self.config.dynamics.rate_hz
        return SingleTrackModel(self.known, 1.0 / rate, self.limits, self.config.dynamics.vx_floor)

    def bounds(self) -> CoefficientBounds:
        b = self.config.bounds
        if b.regime == "real":
            return real_nominal_bounds(b.overrides)
        return sim_nominal_bounds(self.ground_truth, b.overrides)

    def model_kind(self, variant: str) -> ModelKind:
        return ModelKind.for_variant(ModelVariant(variant), self.ground_truth.I_z)

    # ========== Tracks ==========

    def track(self, name: str, raceline_path: Optional[str] = None, track_path: Optional[str] = None) -> Track:
        """Built-in track ``name``, or the track JSON at ``track_path``; ``raceline_path`` replaces its raceline."""
        if track_path:
            track = load_track(track_path)
            logger.info("Using track '%s' from %s", track.name, track_path)
        else:
            track = get_track(name)
        if raceline_path:
            track = track.with_raceline(load_raceline(raceline_path))
            logger.info("Using raceline %s on %s", raceline_path, track.name)
        return track

    # ========== Paths ==========

    def data_path(self, name: str) -> Path:
        return Path(self.config.paths.data_dir) / name

    @property
    def train_csv(self) -> Path:
        return self.data_path(self.config.paths.train_csv)

    @property
    def test_csv(self) -> Path:
        return self.data_path(self.config.paths.test_csv)

    def checkpoint_path(self, variant: str) -> Path:
        return Path(self.config.paths.checkpoints_dir) / f"{variant}.json"

    def report_path(self, name: str) -> Path:
        return Path(self.config.paths.reports_dir) / name
