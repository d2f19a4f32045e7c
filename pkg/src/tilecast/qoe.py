"""Per-chunk quality-of-experience model and the preference pool.

A chunk's QoE combines three terms: average bitrate of tiles inside the actual
viewport, quality variation (within the viewport plus across consecutive
chunks), and rebuffering time.  A preference vector weights the three terms on
the probability simplex.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validate import check_non_negative, check_simplex
from .geometry import TileMask

__all__ = [
    "QoEPreference",
    "ChunkQoEBreakdown",
    "viewport_quality",
    "quality_variation",
    "rebuffer_time",
    "chunk_qoe",
    "compute_breakdown",
    "preference_pool",
    "load_preference_csv",
    "write_preference_csv",
]


@dataclass(frozen=True)
class QoEPreference:
    """Simplex weights over (viewport quality, quality variation, rebuffering)."""

    lambda1: float
    lambda2: float
    lambda3: float

    def __post_init__(self) -> None:
        check_simplex((self.lambda1, self.lambda2, self.lambda3), "preference")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3], dtype=np.float64)


@dataclass(frozen=True)
class ChunkQoEBreakdown:
    """The three QoE terms of one chunk plus their weighted total."""

    q1: float
    q2: float
    q3: float
    total: float


def viewport_quality(tile_bitrates: np.ndarray, actual_mask: TileMask) -> float:
    """Average bitrate (Mbps) over tiles inside the actual viewport."""
    bits = actual_mask.bits
    if not bits.any():
        raise ValueError("actual viewport mask is empty; ground truth is invalid")
    rates = np.asarray(tile_bitrates, dtype=np.float64)
    return float(rates[bits].mean())


def quality_variation(
    tile_bitrates: np.ndarray,
    actual_mask: TileMask,
    q1_current: float,
    q1_previous: float,
) -> float:
    """Intra-viewport bitrate spread plus the jump from the previous chunk.

    The intra term averages |r_i - q1| over in-viewport tiles; the inter term
    is |q1 - q1_previous|, with q1_previous = 0 for the first chunk.
    """
    bits = actual_mask.bits
    if not bits.any():
        raise ValueError("actual viewport mask is empty; ground truth is invalid")
    rates = np.asarray(tile_bitrates, dtype=np.float64)
    intra = float(np.abs(rates[bits] - q1_current).mean())
    return intra + abs(q1_current - q1_previous)


def rebuffer_time(download_time: float, buffer_at_request: float) -> float:
    """Stall duration: positive part of (download time - buffer at request)."""
    check_non_negative(download_time, "download_time")
    check_non_negative(buffer_at_request, "buffer_at_request")
    return max(download_time - buffer_at_request, 0.0)


def chunk_qoe(q1: float, q2: float, q3: float, pref: QoEPreference) -> float:
    """Weighted total: lambda1*q1 - lambda2*q2 - lambda3*q3."""
    return pref.lambda1 * q1 - pref.lambda2 * q2 - pref.lambda3 * q3


def compute_breakdown(
    tile_bitrates: np.ndarray,
    actual_mask: TileMask,
    q1_previous: float,
    download_time: float,
    buffer_at_request: float,
    pref: QoEPreference,
) -> ChunkQoEBreakdown:
    """Evaluate all three terms and the weighted total for one chunk."""
    q1 = viewport_quality(tile_bitrates, actual_mask)
    q2 = quality_variation(tile_bitrates, actual_mask, q1, q1_previous)
    q3 = rebuffer_time(download_time, buffer_at_request)
    return ChunkQoEBreakdown(q1, q2, q3, chunk_qoe(q1, q2, q3, pref))


def preference_pool() -> tuple[tuple[QoEPreference, ...], tuple[QoEPreference, ...]]:
    """The eight-preference pool: four for training, four held out.

    The training set spans the three single-term extremes plus the balanced
    point; the held-out set sits between them on the simplex.
    """
    train = (
        QoEPreference(7 / 9, 1 / 9, 1 / 9),
        QoEPreference(1 / 9, 7 / 9, 1 / 9),
        QoEPreference(1 / 9, 1 / 9, 7 / 9),
        QoEPreference(1 / 3, 1 / 3, 1 / 3),
    )
    held_out = (
        QoEPreference(5 / 9, 1 / 3, 1 / 9),
        QoEPreference(1 / 9, 5 / 9, 1 / 3),
        QoEPreference(1 / 3, 1 / 9, 5 / 9),
        QoEPreference(5 / 9, 1 / 9, 1 / 3),
    )
    return train, held_out


def load_preference_csv(path) -> tuple[list[QoEPreference], list[QoEPreference]]:
    """Load a preference override file: columns lambda1,lambda2,lambda3,split."""
    train: list[QoEPreference] = []
    held_out: list[QoEPreference] = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                pref = QoEPreference(
                    float(row["lambda1"]), float(row["lambda2"]), float(row["lambda3"])
                )
                split = row["split"].strip().lower()
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row {lineno}: {row}") from exc
            if split in ("train", "trained"):
                train.append(pref)
            elif split in ("held_out", "heldout", "unseen"):
                held_out.append(pref)
            else:
                raise ValueError(f"{path}: row {lineno}: unknown split {split!r}")
    return train, held_out


def write_preference_csv(path, train, held_out) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda1", "lambda2", "lambda3", "split"])
        for pref in train:
            writer.writerow([repr(pref.lambda1), repr(pref.lambda2), repr(pref.lambda3), "train"])
        for pref in held_out:
            writer.writerow(
                [repr(pref.lambda1), repr(pref.lambda2), repr(pref.lambda3), "unseen"]
            )
