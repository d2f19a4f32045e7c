"""Synthetic data generation: viewport pattern families, bandwidth, manifests.

Two viewing-pattern archetypes are provided out of the box: "focus" users
jitter around a fixed point of interest with mean reversion, "explore" users
drift horizontally around the panorama with random dwell stops.  All
generators are pure functions of their parameters and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import LabeledTrace, TileGrid, Trajectory
from .simenv import BandwidthTrace, BitrateLadder, VideoManifest

__all__ = [
    "PatternFamily",
    "gen_viewport_traces",
    "gen_bandwidth_trace",
    "gen_manifest",
]


@dataclass(frozen=True)
class PatternFamily:
    """Parameters of one viewing-pattern generator.

    kind "focus": mean-reverting jitter of strength `noise_scale` (fraction of
    the frame per step) pulled back toward a per-user center with rate
    `reversion`.  kind "explore": horizontal drift of `drift_rate` (fraction of
    frame width per step) interrupted by dwell stops entered with probability
    `dwell_prob` per step.
    """

    name: str
    kind: str = "focus"
    drift_rate: float = 0.01
    dwell_prob: float = 0.1
    noise_scale: float = 0.01
    reversion: float = 0.15

    def __post_init__(self) -> None:
        if self.kind not in ("focus", "explore"):
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if not 0.0 <= self.dwell_prob <= 1.0:
            raise ValueError("dwell_prob must lie in [0, 1]")

    @classmethod
    def focus(cls, name: str = "focus", noise_scale: float = 0.01,
              reversion: float = 0.15) -> "PatternFamily":
        return cls(name=name, kind="focus", noise_scale=noise_scale, reversion=reversion)

    @classmethod
    def explore(cls, name: str = "explore", drift_rate: float = 0.01,
                dwell_prob: float = 0.1, noise_scale: float = 0.005) -> "PatternFamily":
        return cls(name=name, kind="explore", drift_rate=drift_rate,
                   dwell_prob=dwell_prob, noise_scale=noise_scale)


def gen_viewport_traces(family: PatternFamily, users: int, duration: float, seed: int,
                        grid: TileGrid, timestep_duration: float = 0.2,
                        video_id: str = "synthetic") -> list[LabeledTrace]:
    """Generate one trajectory per user; deterministic for a fixed seed."""
    steps = max(int(round(duration / timestep_duration)), 1)
    w, h = grid.video_width, grid.video_height
    traces = []
    for user in range(users):
        rng = np.random.default_rng([seed, user])
        if family.kind == "focus":
            xy = _gen_focus(rng, family, steps, w, h)
        else:
            xy = _gen_explore(rng, family, steps, w, h)
        traces.append(LabeledTrace(f"{family.name}_u{user:03d}", video_id,
                                   Trajectory(xy, timestep_duration)))
    return traces


def _clamp_y(y: np.ndarray | float, h: float):
    return np.clip(y, 0.0, np.nextafter(h, 0.0))


def _gen_focus(rng: np.random.Generator, family: PatternFamily, steps: int,
               w: float, h: float) -> np.ndarray:
    # user-specific point of interest; collapses to the frame center as noise -> 0
    cx = w / 2.0 + family.noise_scale * w * rng.uniform(-5.0, 5.0)
    cy = h / 2.0 + family.noise_scale * h * rng.uniform(-3.0, 3.0)
    cy = float(_clamp_y(cy, h))
    xy = np.empty((steps, 2))
    x, y = cx % w, cy
    for t in range(steps):
        xy[t] = (x, y)
        x = (x + family.reversion * (cx - x) + family.noise_scale * w * rng.normal()) % w
        y = float(_clamp_y(y + family.reversion * (cy - y)
                           + family.noise_scale * h * rng.normal(), h))
    return xy


def _gen_explore(rng: np.random.Generator, family: PatternFamily, steps: int,
                 w: float, h: float) -> np.ndarray:
    x = rng.uniform(0.0, w) if family.noise_scale > 0 else 0.0
    y = h / 2.0
    dwell_left = 0
    xy = np.empty((steps, 2))
    for t in range(steps):
        xy[t] = (x, y)
        if dwell_left > 0:
            dwell_left -= 1
        else:
            if family.dwell_prob > 0 and rng.random() < family.dwell_prob:
                dwell_left = int(rng.integers(2, 8))
            else:
                x = (x + family.drift_rate * w) % w
        x = (x + family.noise_scale * w * rng.normal()) % w if family.noise_scale > 0 else x
        y = float(_clamp_y(y + family.noise_scale * h * rng.normal(), h)) \
            if family.noise_scale > 0 else y
    return xy


def gen_bandwidth_trace(profile: str, duration: float, seed: int,
                        level_mbps: float = 10.0, low_mbps: float = 4.0,
                        high_mbps: float = 8.0, period_s: float = 2.0,
                        sigma: float = 0.35, interval: float = 1.0) -> BandwidthTrace:
    """Throughput series for one of the profiles: stable, stepwise, bursty."""
    samples = max(int(round(duration / interval)), 1)
    if profile == "stable":
        mbps = np.full(samples, level_mbps)
    elif profile == "stepwise":
        half = max(int(round(period_s / interval)), 1)
        phase = (np.arange(samples) // half) % 2
        mbps = np.where(phase == 0, low_mbps, high_mbps).astype(np.float64)
    elif profile == "bursty":
        rng = np.random.default_rng(seed)
        mbps = level_mbps * np.exp(rng.normal(0.0, sigma, size=samples))
    else:
        raise ValueError(f"unknown bandwidth profile {profile!r}")
    return BandwidthTrace(mbps, interval)


def gen_manifest(grid: TileGrid, n_chunks: int, ladder: BitrateLadder, seed: int,
                 chunk_duration: float = 1.0, jitter: float = 0.1) -> VideoManifest:
    """Synthetic tile sizes: nominal rung bits per tile with per-tile jitter.

    size(chunk, tile, rung) = rung_mbps * 1e6 * chunk_duration / n_tiles * (1 + eps)
    with one eps per (chunk, tile) so sizes stay monotone across rungs.
    """
    rng = np.random.default_rng(seed)
    eps = rng.uniform(-jitter, jitter, size=(n_chunks, grid.n_tiles, 1))
    nominal = np.asarray(ladder.rungs) * 1e6 * chunk_duration / grid.n_tiles
    sizes = nominal[None, None, :] * (1.0 + eps)
    return VideoManifest(sizes, ladder, grid, chunk_duration)
