"""Shared test machinery: brute-force oracles and a preference bandit.

The bandit has analytically known optima: arm 0 yields QoE terms (1, 0, 1) and
arm 1 yields (0, 0, 0), so a pure-quality preference favors arm 0 while a
pure-rebuffering preference favors arm 1.  Episodes are a single step, which
exercises the full training loop (identifier updates, mixed reward, PPO) on a
problem whose solution is known in closed form.
"""

import numpy as np

from tilecast.geometry import TileMask
from tilecast.observations import Observation, ObservationSpec
from tilecast.qoe import ChunkQoEBreakdown, QoEPreference, chunk_qoe


def ring_distances_oracle(mask: TileMask) -> np.ndarray:
    """Chebyshev distance (wrapping columns, clamped rows) to the mask tiles."""
    rows, cols = mask.grid.rows, mask.grid.cols
    src = np.argwhere(mask.bits.reshape(rows, cols))
    out = np.empty((rows, cols), dtype=int)
    for r in range(rows):
        for c in range(cols):
            best = 10 ** 9
            for sr, sc in src:
                dc = abs(c - sc)
                dc = min(dc, cols - dc)
                best = min(best, max(abs(r - sr), dc))
            out[r, c] = best
    return out.ravel()


def pyramid_oracle(action, mask: TileMask, ladder, scale: float) -> np.ndarray:
    """Ring-construction oracle for the pyramid bitrate assignment."""
    rings = ring_distances_oracle(mask)
    rates = np.empty(mask.grid.n_tiles)
    arr = np.asarray(ladder.rungs)
    for t, ring in enumerate(rings):
        if ring == 0:
            rates[t] = action.r_in
        else:
            target = action.r_out / scale ** (ring - 1)
            rates[t] = max(float(arr[np.argmin(np.abs(arr - target))]), ladder.min_rung)
    return rates

BANDIT_SPEC = ObservationSpec(groups=(("ctx", 2),), n_actions=2)

# per-arm (q1, q2, q3)
ARM_TERMS = ((1.0, 0.0, 1.0), (0.0, 0.0, 0.0))


def bandit_optimal_arm(pref: QoEPreference) -> int:
    scores = [chunk_qoe(*terms, pref) for terms in ARM_TERMS]
    return int(np.argmax(scores))


class PreferenceBandit:
    """One-step environment; the context vector is constant."""

    qoe_scale = 1.0

    def observation_spec(self) -> ObservationSpec:
        return BANDIT_SPEC

    def clone(self) -> "PreferenceBandit":
        return PreferenceBandit()

    def reset(self, pref: QoEPreference) -> Observation:
        self.pref = pref
        return self._observe()

    def step(self, action_index: int):
        q1, q2, q3 = ARM_TERMS[action_index]
        total = chunk_qoe(q1, q2, q3, self.pref)
        breakdown = ChunkQoEBreakdown(q1, q2, q3, total)
        return self._observe(), breakdown, True, {}

    def _observe(self) -> Observation:
        return Observation(groups={"ctx": np.array([1.0, 0.0])}, scalar=0.0,
                           pref=self.pref.as_array())
