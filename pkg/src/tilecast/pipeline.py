"""Glue between viewport forecasting and the streaming simulator.

A viewport plan fixes, per chunk, the predicted and the ground-truth tile
masks.  Plans are precomputed once per (user, video) pair because predictions
depend only on the viewport trace, never on bitrate decisions.
"""

from __future__ import annotations

import numpy as np

from .forecasting import ViewportForecaster
from .geometry import FieldOfView, TileGrid, Trajectory, ViewportPoint, viewport_tile_mask
from .simenv import BandwidthTrace, PlannedEnv, VideoManifest, ViewportPlan
from .trajectory_transformer import ensemble_xy

__all__ = ["build_viewport_plan", "make_planned_envs"]


def _chunk_centers(trajectory: Trajectory, chunk_duration: float) -> tuple[np.ndarray, int, int]:
    dt = trajectory.timestep_duration
    per_chunk = max(int(round(chunk_duration / dt)), 1)
    n_chunks = len(trajectory) // per_chunk
    if n_chunks == 0:
        raise ValueError("trajectory shorter than one chunk")
    mids = np.array([c * per_chunk + per_chunk // 2 for c in range(n_chunks)])
    return trajectory.xy[mids], per_chunk, n_chunks


def build_viewport_plan(trajectory: Trajectory, grid: TileGrid, fov: FieldOfView,
                        chunk_duration: float = 1.0,
                        forecaster: ViewportForecaster | None = None) -> ViewportPlan:
    """Per-chunk predicted and actual masks along one viewport trace.

    The actual mask of chunk c comes from the viewport at the chunk midpoint.
    With a forecaster, the prediction for chunk c is the ensembled forecast
    from the history ending at the chunk boundary, read at the midpoint step;
    without one (or before enough history exists) the last observed viewport
    is held.
    """
    actual_xy, per_chunk, n_chunks = _chunk_centers(trajectory, chunk_duration)
    xy = trajectory.xy

    predicted_xy = np.empty_like(actual_xy)
    history_len = forecaster.config_.history_len if forecaster is not None else 0
    batch_rows, batch_chunks = [], []
    for c in range(n_chunks):
        boundary = c * per_chunk
        if forecaster is not None and boundary >= history_len:
            batch_rows.append(xy[boundary - history_len:boundary])
            batch_chunks.append(c)
        else:
            # hold the latest observed viewport
            predicted_xy[c] = xy[boundary - 1] if boundary > 0 else xy[0]
    if batch_chunks:
        preds = forecaster.predict_batch(np.stack(batch_rows))
        ens = ensemble_xy(preds, grid.video_width, grid.video_height)
        step = min(per_chunk // 2, ens.shape[1] - 1)
        for row, c in enumerate(batch_chunks):
            predicted_xy[c] = ens[row, step]

    predicted = [viewport_tile_mask(ViewportPoint(*p), fov, grid) for p in predicted_xy]
    actual = [viewport_tile_mask(ViewportPoint(*a), fov, grid) for a in actual_xy]
    return ViewportPlan(predicted, actual)


def make_planned_envs(manifests: list[VideoManifest], traces: list[BandwidthTrace],
                      plans: list[ViewportPlan], buffer_cap: float = 4.0,
                      scale: float = 2.0, k: int = 8) -> list[PlannedEnv]:
    """One environment per (manifest, viewport plan, bandwidth trace) combination."""
    envs = [
        PlannedEnv(manifest, trace, plan, buffer_cap, scale, k)
        for manifest in manifests
        for plan in plans
        for trace in traces
    ]
    if not envs:
        raise ValueError("no environments were assembled")
    return envs
