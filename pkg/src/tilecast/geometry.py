"""Wrap-aware equirectangular viewport geometry.

Viewport centers live in the equirectangular projection of a panoramic frame:
the horizontal axis wraps at the frame width, the vertical axis is clamped at
the poles.  This module provides the distance function used by the forecaster
loss, tile-grid bookkeeping, viewport tile masks, and the IoU accuracy metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validate import check_positive, check_unit_interval

__all__ = [
    "ViewportPoint",
    "Trajectory",
    "TileGrid",
    "TileMask",
    "FieldOfView",
    "wrap_distance",
    "axis_wrap_difference",
    "wrap_distance_arrays",
    "viewport_tile_mask",
    "iou",
    "LabeledTrace",
    "load_viewport_traces",
    "write_viewport_trace",
]


@dataclass(frozen=True)
class ViewportPoint:
    """Viewport center in pixel coordinates; x in [0, width), y in [0, height)."""

    x: float
    y: float


@dataclass(frozen=True)
class TileGrid:
    """Spatial tiling of the frame, row-major tile indexing."""

    rows: int = 8
    cols: int = 8
    video_width: float = 1920.0
    video_height: float = 960.0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        check_positive(self.video_width, "video_width")
        check_positive(self.video_height, "video_height")

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def tile_width(self) -> float:
        return self.video_width / self.cols

    @property
    def tile_height(self) -> float:
        return self.video_height / self.rows

    def tile_centers(self) -> np.ndarray:
        """Pixel centers of all tiles, shape (n_tiles, 2), row-major order."""
        cx = (np.arange(self.cols) + 0.5) * self.tile_width
        cy = (np.arange(self.rows) + 0.5) * self.tile_height
        xs, ys = np.meshgrid(cx, cy)
        return np.stack([xs.ravel(), ys.ravel()], axis=1)

    def tile_index(self, x: float, y: float) -> int:
        """Row-major index of the tile containing (x, y); x wraps, y clamps."""
        col = int((x % self.video_width) / self.tile_width)
        row = int(np.clip(y, 0.0, None) / self.tile_height)
        return min(row, self.rows - 1) * self.cols + min(col, self.cols - 1)

    def contains(self, point: ViewportPoint) -> bool:
        return 0.0 <= point.x < self.video_width and 0.0 <= point.y < self.video_height


@dataclass(frozen=True)
class FieldOfView:
    """Viewport extent as fractions of the frame, both in (0, 1]."""

    width_fraction: float = 0.33
    height_fraction: float = 0.33

    def __post_init__(self) -> None:
        check_unit_interval(self.width_fraction, "width_fraction", open_low=True)
        check_unit_interval(self.height_fraction, "height_fraction", open_low=True)


@dataclass
class Trajectory:
    """Ordered viewport centers sampled at a fixed rate.

    `xy` has shape (n, 2) in pixel coordinates.
    """

    xy: np.ndarray
    timestep_duration: float = 0.2

    def __post_init__(self) -> None:
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.xy.ndim != 2 or self.xy.shape[1] != 2 or self.xy.shape[0] == 0:
            raise ValueError(f"trajectory must be a non-empty (n, 2) array, got {self.xy.shape}")
        check_positive(self.timestep_duration, "timestep_duration")

    def __len__(self) -> int:
        return self.xy.shape[0]

    def point(self, i: int) -> ViewportPoint:
        return ViewportPoint(float(self.xy[i, 0]), float(self.xy[i, 1]))

    def points(self) -> list[ViewportPoint]:
        return [self.point(i) for i in range(len(self))]

    @classmethod
    def from_points(cls, points, timestep_duration: float = 0.2) -> "Trajectory":
        return cls(np.array([[p.x, p.y] for p in points]), timestep_duration)


@dataclass(eq=False)
class TileMask:
    """Boolean membership per tile, row-major, aligned to `grid`."""

    grid: TileGrid
    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool).ravel()
        if self.bits.size != self.grid.n_tiles:
            raise ValueError(
                f"mask length {self.bits.size} does not match grid with {self.grid.n_tiles} tiles"
            )

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def same_as(self, other: "TileMask") -> bool:
        return self.grid == other.grid and bool(np.array_equal(self.bits, other.bits))


def axis_wrap_difference(a: float, b: float, period: float) -> float:
    """Minimum of |a-b|, |a+period-b|, |a-period-b| (periodic axis distance).

    Evaluated as min(d, |period - d|) with d = |a-b|, which equals the
    three-candidate form for in-range coordinates but is exactly symmetric
    in floating point.
    """
    d = abs(a - b)
    return min(d, abs(period - d))


def wrap_distance(v: ViewportPoint, v_hat: ViewportPoint, grid: TileGrid) -> float:
    """Squared viewport distance with periodic handling on both axes.

    Returns (dx^2 + dy^2) / 2 where each axis difference takes the minimum over
    the unshifted and the two period-shifted candidates.  Symmetric in v, v_hat.
    """
    dx = axis_wrap_difference(v.x, v_hat.x, grid.video_width)
    dy = axis_wrap_difference(v.y, v_hat.y, grid.video_height)
    return (dx * dx + dy * dy) / 2.0


def wrap_distance_arrays(a: np.ndarray, b: np.ndarray, width: float, height: float) -> np.ndarray:
    """Vectorized `wrap_distance` over (..., 2) coordinate arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dx = np.abs(a[..., 0] - b[..., 0])
    dx = np.minimum(dx, np.abs(width - dx))
    dy = np.abs(a[..., 1] - b[..., 1])
    dy = np.minimum(dy, np.abs(height - dy))
    return (dx * dx + dy * dy) / 2.0


def viewport_tile_mask(center: ViewportPoint, fov: FieldOfView, grid: TileGrid) -> TileMask:
    """Tiles whose centers fall in the FoV rectangle around `center`.

    The rectangle wraps horizontally; vertically it is clamped at the poles,
    i.e. shifted inward so it never extends past the frame (a full-height FoV
    therefore always spans all rows).  The tile containing `center` is always
    included, so the mask is never empty.  Out-of-range centers are reduced
    into the frame (x modulo width, y clipped).
    """
    width, height = grid.video_width, grid.video_height
    cx = center.x % width
    cy = float(np.clip(center.y, 0.0, np.nextafter(height, 0.0)))
    half_w = fov.width_fraction * width / 2.0
    half_h = fov.height_fraction * height / 2.0
    cy_eff = float(np.clip(cy, half_h, height - half_h))

    centers = grid.tile_centers()
    raw_dx = np.abs(centers[:, 0] - cx)
    circ_dx = np.minimum(raw_dx, width - raw_dx)
    dy = np.abs(centers[:, 1] - cy_eff)
    bits = (circ_dx <= half_w) & (dy <= half_h)
    bits[grid.tile_index(cx, cy)] = True
    return TileMask(grid, bits)


def iou(a: TileMask, b: TileMask) -> float:
    """Intersection-over-union of two tile masks on the same grid.

    Both masks empty counts as perfect agreement (1.0).
    """
    if a.grid != b.grid:
        raise ValueError("cannot compare masks defined on different grids")
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return inter / union


@dataclass
class LabeledTrace:
    """One user's trajectory for one video, as stored in trace CSV files."""

    user_id: str
    video_id: str
    trajectory: Trajectory

    @property
    def family(self) -> str:
        """Viewing-pattern family, encoded as the user_id prefix before '_u'."""
        return self.user_id.split("_u")[0]


def write_viewport_trace(path, trace: LabeledTrace, grid: TileGrid) -> None:
    """Write one trace as CSV rows `user_id,video_id,t_seconds,x_norm,y_norm`.

    Coordinates are normalized by the frame size and formatted to 6 decimals,
    clamped below 1.0 so they reload as valid in-range points.
    """
    path = Path(path)
    dt = trace.trajectory.timestep_duration
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "video_id", "t_seconds", "x_norm", "y_norm"])
        for i, (x, y) in enumerate(trace.trajectory.xy):
            xn = min(round(x / grid.video_width, 6), 0.999999)
            yn = min(round(y / grid.video_height, 6), 0.999999)
            writer.writerow(
                [trace.user_id, trace.video_id, f"{i * dt:.6f}", f"{xn:.6f}", f"{yn:.6f}"]
            )


def load_viewport_traces(path, grid: TileGrid) -> list[LabeledTrace]:
    """Load trace CSVs from a file or directory into pixel-coordinate traces.

    Rows are grouped by (user_id, video_id) and ordered by t_seconds; the
    sampling interval is recovered from consecutive timestamps.
    """
    path = Path(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    traces: list[LabeledTrace] = []
    for f in files:
        groups: dict[tuple[str, str], list[tuple[float, float, float]]] = {}
        with f.open(newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                try:
                    t = float(row["t_seconds"])
                    xn = float(row["x_norm"])
                    yn = float(row["y_norm"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{f}: malformed row {lineno}: {row}") from exc
                if not (0.0 <= xn < 1.0 and 0.0 <= yn < 1.0):
                    raise ValueError(
                        f"{f}: row {lineno}: normalized coordinates must lie in [0, 1), "
                        f"got ({xn}, {yn})"
                    )
                groups.setdefault((row["user_id"], row["video_id"]), []).append((t, xn, yn))
        for (user_id, video_id), rows in sorted(groups.items()):
            rows.sort(key=lambda r: r[0])
            ts = np.array([r[0] for r in rows])
            xy = np.array([[r[1] * grid.video_width, r[2] * grid.video_height] for r in rows])
            dt = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.2
            traces.append(LabeledTrace(user_id, video_id, Trajectory(xy, dt)))
    return traces
