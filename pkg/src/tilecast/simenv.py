"""Deterministic tile-based streaming simulator.

Models one client session: a bitrate ladder, per-tile chunk sizes, a cyclic
bandwidth trace, a playback buffer, and the two-level bitrate action that the
pyramid rule expands into per-tile assignments.  Every step is a pure function
of the session state and its inputs, so episodes replay exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validate import check_non_negative, check_positive
from .geometry import TileGrid, TileMask, iou
from .observations import Observation, ObservationSpec
from .qoe import ChunkQoEBreakdown, QoEPreference, compute_breakdown

__all__ = [
    "BitrateLadder",
    "BitrateAction",
    "action_space",
    "VideoManifest",
    "BandwidthTrace",
    "pyramid_assign",
    "download_time",
    "EnvState",
    "StepInfo",
    "StreamingSession",
    "ViewportPlan",
    "PlannedEnv",
    "heuristic_policy",
    "write_episode_log",
    "load_manifest_csv",
    "write_manifest_csv",
    "load_bandwidth_csv",
    "write_bandwidth_csv",
]

DEFAULT_RUNGS = (1.0, 5.0, 8.0, 16.0, 35.0)


@dataclass(frozen=True)
class BitrateLadder:
    """Strictly ascending encoding bitrates in Mbps."""

    rungs: tuple[float, ...] = DEFAULT_RUNGS

    def __post_init__(self) -> None:
        if len(self.rungs) < 1:
            raise ValueError("ladder needs at least one rung")
        if any(b <= a for a, b in zip(self.rungs, self.rungs[1:])):
            raise ValueError(f"ladder must be strictly ascending, got {self.rungs}")
        if self.rungs[0] <= 0:
            raise ValueError("ladder rungs must be positive")

    def __len__(self) -> int:
        return len(self.rungs)

    @property
    def min_rung(self) -> float:
        return self.rungs[0]

    @property
    def max_rung(self) -> float:
        return self.rungs[-1]

    def index_of(self, mbps: float) -> int:
        try:
            return self.rungs.index(mbps)
        except ValueError:
            raise ValueError(f"{mbps} Mbps is not a ladder rung {self.rungs}") from None

    def closest(self, target: float) -> float:
        """Ladder rung nearest to `target`; equidistant targets snap downward."""
        arr = np.asarray(self.rungs)
        return float(arr[int(np.argmin(np.abs(arr - target)))])


@dataclass(frozen=True)
class BitrateAction:
    """Bitrates for tiles inside (r_in) and outside (r_out) the predicted viewport."""

    r_in: float
    r_out: float

    def __post_init__(self) -> None:
        if self.r_in < self.r_out:
            raise ValueError(f"r_in must be at least r_out, got ({self.r_in}, {self.r_out})")


def action_space(ladder: BitrateLadder) -> list[BitrateAction]:
    """All (r_in, r_out) pairs with r_in >= r_out, lexicographically ordered."""
    return [
        BitrateAction(r_in, r_out)
        for r_in in ladder.rungs
        for r_out in ladder.rungs
        if r_out <= r_in
    ]


@dataclass
class VideoManifest:
    """Per-chunk, per-tile, per-rung encoded sizes in bits."""

    sizes: np.ndarray  # (n_chunks, n_tiles, n_rungs)
    ladder: BitrateLadder
    grid: TileGrid
    chunk_duration: float = 1.0

    def __post_init__(self) -> None:
        self.sizes = np.asarray(self.sizes, dtype=np.float64)
        if self.sizes.ndim != 3:
            raise ValueError(f"sizes must be (chunks, tiles, rungs), got {self.sizes.shape}")
        if self.sizes.shape[1] != self.grid.n_tiles:
            raise ValueError(
                f"manifest has {self.sizes.shape[1]} tiles but grid has {self.grid.n_tiles}"
            )
        if self.sizes.shape[2] != len(self.ladder):
            raise ValueError(
                f"manifest has {self.sizes.shape[2]} rungs but ladder has {len(self.ladder)}"
            )
        if np.any(self.sizes <= 0):
            raise ValueError("tile sizes must be positive")
        if np.any(np.diff(self.sizes, axis=2) <= 0):
            raise ValueError("tile sizes must increase strictly with the rung")
        check_positive(self.chunk_duration, "chunk_duration")

    @property
    def n_chunks(self) -> int:
        return self.sizes.shape[0]

    def chunk_bits(self, chunk: int, tile_mbps: np.ndarray) -> float:
        """Total bits of one chunk under a per-tile bitrate assignment."""
        rung_idx = [self.ladder.index_of(float(m)) for m in tile_mbps]
        return float(self.sizes[chunk, np.arange(self.grid.n_tiles), rung_idx].sum())


@dataclass
class BandwidthTrace:
    """Piecewise-constant throughput samples (Mbps) repeating cyclically."""

    mbps: np.ndarray
    interval: float = 1.0

    def __post_init__(self) -> None:
        self.mbps = np.asarray(self.mbps, dtype=np.float64).ravel()
        if self.mbps.size == 0:
            raise ValueError("bandwidth trace must contain at least one sample")
        if np.any(self.mbps <= 0):
            raise ValueError("throughput samples must be positive")
        check_positive(self.interval, "interval")

    def rate_at(self, t: float) -> float:
        idx = int(np.floor(t / self.interval)) % self.mbps.size
        return float(self.mbps[idx])

    def time_to_deliver(self, bits: float, start_time: float) -> float:
        """Wall time to push `bits` through the trace starting at `start_time`."""
        check_non_negative(bits, "bits")
        if bits == 0:
            return 0.0
        remaining = float(bits)
        segment = int(np.floor(start_time / self.interval))
        offset = start_time - segment * self.interval
        elapsed = 0.0
        while True:
            rate_bps = self.mbps[segment % self.mbps.size] * 1e6
            seg_time = self.interval - offset
            capacity = rate_bps * seg_time
            if capacity >= remaining:
                return elapsed + remaining / rate_bps
            remaining -= capacity
            elapsed += seg_time
            segment += 1
            offset = 0.0


def pyramid_assign(action: BitrateAction, predicted: TileMask, ladder: BitrateLadder,
                   scale: float = 2.0) -> np.ndarray:
    """Per-tile Mbps from the two-level action via ring dilation.

    Predicted-viewport tiles get r_in.  The mask is then dilated one tile-ring
    at a time (8-neighborhood, wrapping horizontally, clamped vertically); ring
    j receives the ladder rung closest to r_out / scale^(j-1), never below the
    cheapest rung, until every tile is covered.
    """
    if scale < 1:
        raise ValueError(f"scale must be at least 1, got {scale}")
    ladder.index_of(action.r_in)
    ladder.index_of(action.r_out)
    if not predicted.bits.any():
        raise ValueError("predicted viewport mask is empty")
    grid = predicted.grid
    rates = np.empty(grid.n_tiles, dtype=np.float64)
    covered = predicted.bits.copy()
    rates[covered] = action.r_in
    current = covered.reshape(grid.rows, grid.cols)
    ring = 1
    while not covered.all():
        dilated = _dilate_ring(current)
        fresh = dilated.ravel() & ~covered
        target = action.r_out / scale ** (ring - 1)
        rates[fresh] = max(ladder.closest(target), ladder.min_rung)
        covered |= fresh
        current = dilated
        ring += 1
    return rates


def _dilate_ring(mask2d: np.ndarray) -> np.ndarray:
    """One 8-neighborhood dilation; columns wrap, rows clamp at the poles."""
    horiz = mask2d | np.roll(mask2d, 1, axis=1) | np.roll(mask2d, -1, axis=1)
    out = horiz.copy()
    out[1:, :] |= horiz[:-1, :]
    out[:-1, :] |= horiz[1:, :]
    return out


def download_time(manifest: VideoManifest, chunk: int, tile_mbps: np.ndarray,
                  trace: BandwidthTrace, start_time: float) -> float:
    """Seconds to download one chunk's selected tiles through the trace."""
    if not 0 <= chunk < manifest.n_chunks:
        raise ValueError(f"chunk {chunk} outside manifest with {manifest.n_chunks} chunks")
    return trace.time_to_deliver(manifest.chunk_bits(chunk, tile_mbps), start_time)


@dataclass
class EnvState:
    """Agent-visible session state before requesting the next chunk."""

    z: np.ndarray        # (n_tiles, n_rungs) sizes of the upcoming chunk, bits
    r: np.ndarray        # ladder rungs, Mbps
    v: TileMask          # predicted viewport of the upcoming chunk
    g: np.ndarray        # prediction IoU of the past k chunks
    n: np.ndarray        # effective throughput of the past k chunks, Mbps
    q1_hist: np.ndarray  # past-k viewport quality
    q2_hist: np.ndarray  # past-k quality variation
    q3_hist: np.ndarray  # past-k rebuffer time
    b: float             # buffer occupancy, seconds


@dataclass(frozen=True)
class StepInfo:
    """Reward-side measurements of one chunk download."""

    download_time: float
    stall: float
    sleep: float
    total_bits: float
    throughput_mbps: float
    prediction_iou: float
    tile_mbps: np.ndarray
    wall_clock: float


class StreamingSession:
    """One playback session stepping chunk by chunk.

    Chunks download sequentially; the buffer gains one chunk duration per
    download, drains by wall time, and blocks (sleeps) at the cap.
    """

    def __init__(self, manifest: VideoManifest, trace: BandwidthTrace,
                 buffer_cap: float = 4.0, scale: float = 2.0, k: int = 8,
                 n_chunks: int | None = None) -> None:
        check_positive(buffer_cap, "buffer_cap")
        if k < 1:
            raise ValueError(f"history length k must be at least 1, got {k}")
        self.manifest = manifest
        self.trace = trace
        self.buffer_cap = buffer_cap
        self.scale = scale
        self.k = k
        self.n_chunks = manifest.n_chunks if n_chunks is None else min(n_chunks,
                                                                       manifest.n_chunks)
        self.chunk = 0
        self.clock = 0.0
        self.q1_prev = 0.0
        self.state = self._initial_state()

    def _initial_state(self) -> EnvState:
        grid = self.manifest.grid
        zeros = lambda: np.zeros(self.k)
        return EnvState(
            z=self.manifest.sizes[0].copy(),
            r=np.asarray(self.manifest.ladder.rungs, dtype=np.float64),
            v=TileMask(grid, np.zeros(grid.n_tiles, dtype=bool)),
            g=zeros(), n=zeros(), q1_hist=zeros(), q2_hist=zeros(), q3_hist=zeros(),
            b=0.0,
        )

    @property
    def finished(self) -> bool:
        return self.chunk >= self.n_chunks

    def step(self, action: BitrateAction, predicted_mask: TileMask, actual_mask: TileMask,
             pref: QoEPreference, next_predicted_mask: TileMask | None = None,
             ) -> tuple[EnvState, ChunkQoEBreakdown, StepInfo]:
        """Download the current chunk under `action` and advance the session."""
        if self.finished:
            raise RuntimeError("session is finished; no more chunks to download")
        manifest = self.manifest
        tile_mbps = pyramid_assign(action, predicted_mask, manifest.ladder, self.scale)
        total_bits = manifest.chunk_bits(self.chunk, tile_mbps)
        l_c = self.trace.time_to_deliver(total_bits, self.clock)
        b_c = self.state.b

        breakdown = compute_breakdown(tile_mbps, actual_mask, self.q1_prev, l_c, b_c, pref)

        raw_buffer = max(b_c - l_c, 0.0) + manifest.chunk_duration
        sleep = max(raw_buffer - self.buffer_cap, 0.0)
        new_buffer = min(raw_buffer, self.buffer_cap)
        self.clock += l_c + sleep
        throughput = total_bits / l_c / 1e6 if l_c > 0 else 0.0
        accuracy = iou(predicted_mask, actual_mask)

        shift = lambda hist, value: np.concatenate([hist[1:], [value]])
        self.chunk += 1
        self.q1_prev = breakdown.q1
        grid = manifest.grid
        next_z = (manifest.sizes[self.chunk].copy() if not self.finished
                  else np.zeros_like(manifest.sizes[0]))
        next_v = (next_predicted_mask if next_predicted_mask is not None
                  else TileMask(grid, np.zeros(grid.n_tiles, dtype=bool)))
        self.state = EnvState(
            z=next_z,
            r=self.state.r,
            v=next_v,
            g=shift(self.state.g, accuracy),
            n=shift(self.state.n, throughput),
            q1_hist=shift(self.state.q1_hist, breakdown.q1),
            q2_hist=shift(self.state.q2_hist, breakdown.q2),
            q3_hist=shift(self.state.q3_hist, breakdown.q3),
            b=new_buffer,
        )
        info = StepInfo(
            download_time=l_c, stall=breakdown.q3, sleep=sleep, total_bits=total_bits,
            throughput_mbps=throughput, prediction_iou=accuracy, tile_mbps=tile_mbps,
            wall_clock=self.clock,
        )
        return self.state, breakdown, info


@dataclass
class ViewportPlan:
    """Per-chunk predicted and actual viewport masks for one (user, video) pair."""

    predicted: list[TileMask]
    actual: list[TileMask]

    def __post_init__(self) -> None:
        if len(self.predicted) != len(self.actual):
            raise ValueError("predicted and actual mask lists must have equal length")
        if not self.predicted:
            raise ValueError("viewport plan must cover at least one chunk")

    def __len__(self) -> int:
        return len(self.predicted)


class PlannedEnv:
    """RL-facing wrapper: streaming session plus a precomputed viewport plan.

    Observations are normalized to O(1) ranges with fixed scales so that
    identical underlying states always produce identical observations.
    """

    THROUGHPUT_NORM_MBPS = 100.0

    def __init__(self, manifest: VideoManifest, trace: BandwidthTrace, plan: ViewportPlan,
                 buffer_cap: float = 4.0, scale: float = 2.0, k: int = 8) -> None:
        self.manifest = manifest
        self.trace = trace
        self.plan = plan
        self.buffer_cap = buffer_cap
        self.scale = scale
        self.k = k
        self.actions = action_space(manifest.ladder)
        self.n_chunks = min(manifest.n_chunks, len(plan))
        self.session: StreamingSession | None = None
        self.pref: QoEPreference | None = None

    @property
    def qoe_scale(self) -> float:
        return self.manifest.ladder.max_rung

    def clone(self) -> "PlannedEnv":
        """Fresh environment sharing the immutable manifest, trace, and plan."""
        return PlannedEnv(self.manifest, self.trace, self.plan, self.buffer_cap,
                          self.scale, self.k)

    def observation_spec(self) -> ObservationSpec:
        grid = self.manifest.grid
        n_rungs = len(self.manifest.ladder)
        return ObservationSpec(
            groups=(
                ("z", grid.n_tiles * n_rungs),
                ("r", n_rungs),
                ("v", grid.n_tiles),
                ("g", self.k),
                ("n", self.k),
                ("q1", self.k),
                ("q2", self.k),
                ("q3", self.k),
            ),
            n_actions=len(self.actions),
        )

    def reset(self, pref: QoEPreference) -> Observation:
        self.session = StreamingSession(self.manifest, self.trace, self.buffer_cap,
                                        self.scale, self.k, n_chunks=self.n_chunks)
        self.session.state.v = self.plan.predicted[0]
        self.pref = pref
        return self._observe()

    def step(self, action_index: int) -> tuple[Observation, ChunkQoEBreakdown, bool, StepInfo]:
        if self.session is None:
            raise RuntimeError("call reset before step")
        chunk = self.session.chunk
        next_mask = self.plan.predicted[chunk + 1] if chunk + 1 < self.n_chunks else None
        _, breakdown, info = self.session.step(
            self.actions[action_index], self.plan.predicted[chunk], self.plan.actual[chunk],
            self.pref, next_predicted_mask=next_mask,
        )
        return self._observe(), breakdown, self.session.finished, info

    def _observe(self) -> Observation:
        state = self.session.state
        ladder = self.manifest.ladder
        tile_scale = ladder.max_rung * 1e6 * self.manifest.chunk_duration / self.manifest.grid.n_tiles
        groups = {
            "z": (state.z / tile_scale).ravel(),
            "r": state.r / ladder.max_rung,
            "v": state.v.bits.astype(np.float64),
            "g": state.g.copy(),
            "n": state.n / self.THROUGHPUT_NORM_MBPS,
            "q1": state.q1_hist / ladder.max_rung,
            "q2": state.q2_hist / ladder.max_rung,
            "q3": state.q3_hist / self.manifest.chunk_duration,
        }
        return Observation(groups=groups, scalar=state.b / self.buffer_cap,
                           pref=self.pref.as_array())


def heuristic_policy(state: EnvState, ladder: BitrateLadder, chunk_duration: float,
                     scale: float = 2.0) -> BitrateAction:
    """Throughput-conservative baseline.

    Estimates bandwidth as the harmonic mean of the observed past throughputs
    and returns the lexicographically highest action whose pyramid-assigned
    chunk downloads within one chunk duration at that estimate; falls back to
    the cheapest pair when nothing fits or nothing was measured yet.
    """
    lowest = BitrateAction(ladder.min_rung, ladder.min_rung)
    measured = state.n[state.n > 0]
    if measured.size == 0 or not state.v.bits.any():
        return lowest
    harmonic = measured.size / float((1.0 / measured).sum())
    budget_bits = harmonic * 1e6 * chunk_duration
    n_tiles = state.v.grid.n_tiles
    for act in reversed(action_space(ladder)):
        tile_mbps = pyramid_assign(act, state.v, ladder, scale)
        rung_idx = [ladder.index_of(float(m)) for m in tile_mbps]
        bits = float(state.z[np.arange(n_tiles), rung_idx].sum())
        if bits <= budget_bits:
            return act
    return lowest


EPISODE_LOG_HEADER = ["chunk", "r_in", "r_out", "l_c", "q1", "q2", "q3", "qoe_total", "buffer"]


def write_episode_log(path, rows: list[dict]) -> None:
    """Write one episode's per-chunk log CSV."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EPISODE_LOG_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _fmt(row[key]) for key in EPISODE_LOG_HEADER})


def _fmt(value) -> str:
    return f"{value:.9g}" if isinstance(value, float) else str(value)


def write_manifest_csv(path, manifest: VideoManifest) -> None:
    # repr round-trips the float exactly, so reloaded sizes match bit for bit
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chunk", "tile", "rung_index", "bits"])
        for c in range(manifest.n_chunks):
            for t in range(manifest.grid.n_tiles):
                for r in range(len(manifest.ladder)):
                    writer.writerow([c, t, r, repr(float(manifest.sizes[c, t, r]))])


def load_manifest_csv(path, ladder: BitrateLadder, grid: TileGrid,
                      chunk_duration: float = 1.0) -> VideoManifest:
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row["chunk"]), int(row["tile"]), int(row["rung_index"]),
                             float(row["bits"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row {lineno}: {row}") from exc
    if not rows:
        raise ValueError(f"{path}: manifest is empty")
    n_chunks = max(r[0] for r in rows) + 1
    sizes = np.zeros((n_chunks, grid.n_tiles, len(ladder)))
    for c, t, r, bits in rows:
        sizes[c, t, r] = bits
    return VideoManifest(sizes, ladder, grid, chunk_duration)


def write_bandwidth_csv(path, trace: BandwidthTrace) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "mbps"])
        for i, mbps in enumerate(trace.mbps):
            writer.writerow([f"{i * trace.interval:.6f}", repr(float(mbps))])


def load_bandwidth_csv(path) -> BandwidthTrace:
    ts, rates = [], []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                ts.append(float(row["t_seconds"]))
                rates.append(float(row["mbps"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row {lineno}: {row}") from exc
    if not rates:
        raise ValueError(f"{path}: bandwidth trace is empty")
    interval = float(np.median(np.diff(ts))) if len(ts) > 1 else 1.0
    return BandwidthTrace(np.array(rates), interval)
