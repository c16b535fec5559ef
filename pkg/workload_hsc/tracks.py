"""Polyline centerlines and the nearest-point geometry the planner, operator and metrics share."""
import logging
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

try:
    from smart_open import open
except ImportError:
    pass

logger = logging.getLogger(__name__)

SPACING = 1.0


class TrackPoint(NamedTuple):
    error: float
    heading: float
    arc_length: float


def _nearest(geometry, point):
    starts, deltas, lengths, arc_starts = geometry
    rel = point - starts
    t = jnp.clip(jnp.sum(rel * deltas, axis=1) / lengths ** 2, 0.0, 1.0)
    diff = rel - t[:, None] * deltas
    dist2 = jnp.sum(diff * diff, axis=1)
    # argmin returns the first minimum, i.e. the lowest arc length on ties
    i = jnp.argmin(dist2)
    cross = deltas[i, 0] * rel[i, 1] - deltas[i, 1] * rel[i, 0]
    error = jnp.where(cross < 0, -1.0, 1.0) * jnp.sqrt(dist2[i])
    heading = jnp.arctan2(deltas[i, 1], deltas[i, 0])
    arc = arc_starts[i] + t[i] * lengths[i]
    return error, heading, arc


def squared_distance(geometry, point):
    """Squared distance to the polyline; smooth enough to differentiate through."""
    starts, deltas, lengths, _ = geometry
    rel = point - starts
    t = jnp.clip(jnp.sum(rel * deltas, axis=1) / lengths ** 2, 0.0, 1.0)
    diff = rel - t[:, None] * deltas
    return jnp.min(jnp.sum(diff * diff, axis=1))


nearest_on = jax.jit(_nearest)
_nearest_many = jax.jit(jax.vmap(_nearest, in_axes=(None, 0)))


class Track:
    def __init__(self, waypoints, closed=False, name=None):
        waypoints = np.asarray(waypoints, dtype=float)
        if waypoints.ndim != 2 or waypoints.shape[1] != 2:
            raise ValueError(f"waypoints must have shape (n, 2), got {waypoints.shape}")
        if not np.all(np.isfinite(waypoints)):
            raise ValueError("waypoints must be finite")
        if closed and len(waypoints) > 2 and np.allclose(waypoints[0], waypoints[-1]):
            waypoints = waypoints[:-1]
        if len(waypoints) < 2:
            raise ValueError(f"a track needs at least 2 waypoints, got {len(waypoints)}")

        ends = np.roll(waypoints, -1, axis=0) if closed else waypoints[1:]
        starts = waypoints if closed else waypoints[:-1]
        deltas = ends - starts
        lengths = np.hypot(deltas[:, 0], deltas[:, 1])
        if np.any(lengths <= 0):
            bad = int(np.argmin(lengths))
            raise ValueError(f"consecutive waypoints {bad} and {bad + 1} coincide")

        self.name = name
        self.waypoints = waypoints
        self.closed = closed
        self.arc_length_table = np.concatenate([[0.0], np.cumsum(lengths)])
        self.length = float(self.arc_length_table[-1])
        self.geometry = (jnp.asarray(starts), jnp.asarray(deltas), jnp.asarray(lengths),
                         jnp.asarray(self.arc_length_table[:-1]))

    def __repr__(self):
        return f"Track(name={self.name!r}, waypoints={len(self.waypoints)}, length={self.length:.1f}, closed={self.closed})"

    def nearest(self, x, y):
        error, heading, arc = nearest_on(self.geometry, jnp.array([x, y], dtype=float))
        return TrackPoint(float(error), float(heading), float(arc))

    def nearest_many(self, xs, ys):
        points = jnp.stack([jnp.asarray(xs, dtype=float), jnp.asarray(ys, dtype=float)], axis=1)
        error, heading, arc = _nearest_many(self.geometry, points)
        return np.asarray(error), np.asarray(heading), np.asarray(arc)

    def start_pose(self):
        dx, dy = self.waypoints[1] - self.waypoints[0]
        return float(self.waypoints[0, 0]), float(self.waypoints[0, 1]), float(np.arctan2(dy, dx))

    def offset(self, distance):
        """The centerline shifted `distance` metres along its left normal."""
        starts, deltas, lengths, _ = (np.asarray(g) for g in self.geometry)
        normals = np.stack([-deltas[:, 1], deltas[:, 0]], axis=1) / lengths[:, None]
        if self.closed:
            vertex = normals + np.roll(normals, 1, axis=0)
        else:
            vertex = np.concatenate([normals[:1], normals[1:] + normals[:-1], normals[-1:]])
        vertex /= np.linalg.norm(vertex, axis=1, keepdims=True)
        name = f"{self.name}+{distance:g}" if self.name else None
        return Track(self.waypoints + distance * vertex, closed=self.closed, name=name)

    @classmethod
    def from_csv(cls, path, closed=False):
        with open(path, "r") as f:
            header = f.readline().strip().replace(" ", "")
            if header != "x,y":
                raise ValueError(f"track file {path!r} must start with header 'x,y', got {header!r}")
            waypoints = np.loadtxt(f, delimiter=",", ndmin=2)
        return cls(waypoints, closed=closed, name=str(path))

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("x,y\n")
            for x, y in self.waypoints:
                f.write(f"{float(x)!r},{float(y)!r}\n")


def cross_track_error(track, x, y):
    """Signed distance to the nearest centerline point, positive left of travel."""
    return track.nearest(x, y).error


def from_curvature(pieces, spacing=SPACING, name=None):
    """Integrate piecewise-constant curvature [(length, curvature), ...] from the origin heading +x."""
    points = [(0.0, 0.0)]
    x = y = heading = 0.0
    for length, curvature in pieces:
        steps = int(round(length / spacing))
        ds = length / steps
        for _ in range(steps):
            if curvature == 0:
                x += ds * np.cos(heading)
                y += ds * np.sin(heading)
            else:
                turned = heading + curvature * ds
                x += (np.sin(turned) - np.sin(heading)) / curvature
                y -= (np.cos(turned) - np.cos(heading)) / curvature
                heading = turned
            points.append((x, y))
    return Track(points, name=name)


def straight_track(length=1500.0):
    return from_curvature([(length, 0.0)], name="straight")


def circle_track(radius=60.0):
    n = int(round(2 * np.pi * radius / SPACING))
    phi = 2 * np.pi * np.arange(n) / n
    # counterclockwise about (0, radius), starting at the origin heading +x
    return Track(np.stack([radius * np.sin(phi), radius - radius * np.cos(phi)], axis=1), closed=True,
                 name="circle")


def s_curve_track():
    period = [(125.0, 1 / 80), (250.0, -1 / 80), (125.0, 1 / 80)]
    return from_curvature([(100.0, 0.0)] + 3 * period + [(100.0, 0.0)], name="s_curve")


def mixed_track():
    return from_curvature([(150.0, 0.0), (150.0, 1 / 100), (100.0, 0.0), (120.0, -1 / 60), (200.0, 0.0),
                           (200.0, 1 / 150), (150.0, 0.0), (100.0, -1 / 80), (250.0, 0.0)], name="mixed")


BUNDLED_TRACKS = {
    "straight": straight_track,
    "circle": circle_track,
    "s_curve": s_curve_track,
    "mixed": mixed_track,
}


def load_track(track_id):
    if track_id in BUNDLED_TRACKS:
        return BUNDLED_TRACKS[track_id]()
    logger.info(f"loading track from {track_id}")
    return Track.from_csv(track_id)
