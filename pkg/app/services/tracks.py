"""
Closed circuits, racelines and arc-length geometry.

Polylines are stored closed: the last point repeats the first. Arc-length
queries wrap around the lap.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from utils.errors import DataError, TrackError

logger = logging.getLogger(__name__)

TRACK_POINTS = 400
HALF_WIDTH = 0.25  # m, 1:43 scale
CLOSURE_TOLERANCE = 1e-9


def close_polyline(points) -> np.ndarray:
    """Append the first point if the polyline is not already closed."""
    points = np.asarray(points, dtype=float)
    if np.linalg.norm(points[0] - points[-1]) > CLOSURE_TOLERANCE:
        points = np.vstack([points, points[:1]])
    return points


def arc_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length at every vertex, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def vertex_curvature(points: np.ndarray) -> np.ndarray:
    """
    Signed curvature at each vertex of a closed polyline from the circle
    through the neighbouring vertices (positive turning left).
    """
    ring = points[:-1]
    prev_pts = np.roll(ring, 1, axis=0)
    next_pts = np.roll(ring, -1, axis=0)
    a = ring - prev_pts
    b = next_pts - ring
    c = next_pts - prev_pts
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) * np.linalg.norm(c, axis=1)
    kappa = np.where(denom > 0, 2.0 * cross / np.where(denom > 0, denom, 1.0), 0.0)
    return np.append(kappa, kappa[0])


@dataclass(frozen=True)
class Projection:
    """Nearest point on a polyline."""
    s: float
    segment: int
    point: np.ndarray
    distance: float


def project(points: np.ndarray, xy) -> Projection:
    """Exact nearest-point projection of ``xy`` onto a polyline."""
    xy = np.asarray(xy, dtype=float)
    start = points[:-1]
    seg = points[1:] - start
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    u = np.einsum("ij,ij->i", xy - start, seg) / np.where(seg_len2 > 0, seg_len2, 1.0)
    u = np.clip(u, 0.0, 1.0)
    nearest = start + u[:, None] * seg
    dist = np.linalg.norm(nearest - xy, axis=1)
    i = int(np.argmin(dist))
    s = arc_lengths(points)[i] + u[i] * np.sqrt(seg_len2[i])
    return Projection(float(s), i, nearest[i], float(dist[i]))


def point_at(points: np.ndarray, s) -> np.ndarray:
    """Interpolated point(s) at arc length ``s``, wrapping around the lap."""
    cum = arc_lengths(points)
    s = np.mod(np.asarray(s, dtype=float), cum[-1])
    return np.column_stack([np.interp(s, cum, points[:, 0]), np.interp(s, cum, points[:, 1])])


@dataclass(frozen=True)
class Track:
    """A closed circuit with its half width and the raceline to follow."""
    name: str
    centerline: np.ndarray
    half_width: float
    raceline: Optional[np.ndarray] = None
    _cache: Dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        center = np.asarray(self.centerline, dtype=float)
        if center.ndim != 2 or center.shape[1] != 2 or center.shape[0] < 4:
            raise TrackError(f"Track '{self.name}' needs at least 3 distinct (x, y) points",
                             {'shape': list(center.shape)})
        if not self.half_width > 0:
            raise TrackError(f"Track '{self.name}' half_width must be positive", {'half_width': self.half_width})
        center = close_polyline(center)
        raceline = center if self.raceline is None else close_polyline(self.raceline)
        if raceline.shape[0] < 3:
            raise TrackError(f"Raceline of '{self.name}' needs at least 2 points")
        object.__setattr__(self, "centerline", center)
        object.__setattr__(self, "raceline", raceline)
        offsets = np.array([self.offset(p) for p in raceline[:-1]])
        if offsets.max() > self.half_width:
            raise TrackError(f"Raceline of '{self.name}' leaves the track",
                             {'max_offset': float(offsets.max()), 'half_width': self.half_width})

    @property
    def length(self) -> float:
        return float(arc_lengths(self.raceline)[-1])

    @property
    def raceline_s(self) -> np.ndarray:
        if "s" not in self._cache:
            self._cache["s"] = arc_lengths(self.raceline)
        return self._cache["s"]

    @property
    def raceline_curvature(self) -> np.ndarray:
        if "kappa" not in self._cache:
            self._cache["kappa"] = vertex_curvature(self.raceline)
        return self._cache["kappa"]

    def offset(self, xy) -> float:
        """Distance from the centerline."""
        return project(self.centerline, xy).distance

    def project(self, xy) -> Projection:
        """Projection onto the raceline."""
        return project(self.raceline, xy)

    def point_at(self, s) -> np.ndarray:
        return point_at(self.raceline, s)

    def heading_at(self, s: float) -> float:
        here, ahead = self.point_at([s, s + 1e-3])
        return float(np.arctan2(ahead[1] - here[1], ahead[0] - here[0]))

    def curvature_at(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.length)
        return np.interp(s, self.raceline_s, self.raceline_curvature)

    def start_pose(self) -> Tuple[float, float, float]:
        """First raceline point, heading along the raceline."""
        x, y = self.raceline[0]
        return float(x), float(y), self.heading_at(0.0)

    def with_raceline(self, raceline) -> "Track":
        return Track(self.name, self.centerline, self.half_width, raceline)

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "half_width": self.half_width,
            "centerline": self.centerline[:-1].tolist(),
            "raceline": self.raceline[:-1].tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Track":
        try:
            return cls(data["name"], np.array(data["centerline"], dtype=float), float(data["half_width"]),
                       None if data.get("raceline") is None else np.array(data["raceline"], dtype=float))
        except (KeyError, TypeError, ValueError) as e:
            raise TrackError(f"Invalid track definition: {e}")


def _start_at_straightest(points: np.ndarray) -> np.ndarray:
    ring = points[:-1]
    start = int(np.argmin(np.abs(vertex_curvature(points)[:-1])))
    return close_polyline(np.roll(ring, -start, axis=0))


def _ellipse(a: float, b: float, n: int = TRACK_POINTS) -> np.ndarray:
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return close_polyline(np.column_stack([a * np.cos(phi), b * np.sin(phi)]))


def _trefoil(r0: float, ripple: float, n: int = TRACK_POINTS) -> np.ndarray:
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    r = r0 + ripple * np.cos(3.0 * phi)
    return close_polyline(np.column_stack([r * np.cos(phi), r * np.sin(phi)]))


def make_tracks() -> Tuple[Track, Track]:
    """
    The training circuit (an ellipse, 3.6 m x 1.8 m) and the test circuit
    (a three-lobed loop of mean radius 1 m). Both are counter-clockwise and
    start at their straightest point.
    """
    track1 = Track("track1", _start_at_straightest(_ellipse(1.8, 0.9)), HALF_WIDTH)
    track2 = Track("track2", _start_at_straightest(_trefoil(1.0, 0.15)), HALF_WIDTH)
    return track1, track2


def get_track(name: str) -> Track:
    tracks = {t.name: t for t in make_tracks()}
    if name not in tracks:
        raise TrackError(f"Unknown track '{name}'", {'known': sorted(tracks)})
    return tracks[name]


def make_stadium(straight: float = 20.0, radius: float = 2.0, half_width: float = HALF_WIDTH,
                 n_arc: int = 60) -> Track:
    """Two straights joined by half circles; index 0 starts the first straight."""
    n_straight = max(int(straight / 0.05), 2)
    xs = np.linspace(0.0, straight, n_straight, endpoint=False)
    bottom = np.column_stack([xs, np.full_like(xs, -radius)])
    ang = np.linspace(-np.pi / 2, np.pi / 2, n_arc, endpoint=False)
    right = np.column_stack([straight + radius * np.cos(ang), radius * np.sin(ang)])
    top = np.column_stack([straight - xs, np.full_like(xs, radius)])
    ang = np.linspace(np.pi / 2, 3 * np.pi / 2, n_arc, endpoint=False)
    left = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    return Track("stadium", np.vstack([bottom, right, top, left]), half_width)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def save_track(track: Track, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(track.to_dict(), fh, indent=2, sort_keys=True)
    logger.info("Saved track '%s' to %s", track.name, path)
    return path


def load_track(path: Union[str, Path]) -> Track:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Track file not found: {path}", str(path))
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise TrackError(f"Track file {path} is not valid JSON: {e}")
    return Track.from_dict(data)


def load_raceline(path: Union[str, Path]) -> np.ndarray:
    """Read a two-column ``x,y`` raceline CSV."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Raceline file not found: {path}", str(path))
    frame = pd.read_csv(path)
    if list(frame.columns) != ["x", "y"]:
        raise TrackError(f"Raceline {path} must have columns x,y", {'columns': list(frame.columns)})
    points = frame.to_numpy(dtype=float)
    if len(points) < 2 or not np.all(np.isfinite(points)):
        raise TrackError(f"Raceline {path} needs at least 2 finite points")
    return points
