"""Observation containers shared by environments, the agent and the identifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ObservationSpec", "Observation"]


@dataclass(frozen=True)
class ObservationSpec:
    """Declares the vector groups an environment emits and its action count.

    `groups` is an ordered tuple of (name, length); every observation carries
    one float vector per group, one scalar, and a 3-component preference.
    """

    groups: tuple[tuple[str, int], ...]
    n_actions: int

    def group_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.groups)


@dataclass
class Observation:
    """One normalized agent input: named vectors, a scalar, and the preference."""

    groups: dict[str, np.ndarray]
    scalar: float
    pref: np.ndarray

    def matches(self, spec: ObservationSpec) -> bool:
        if set(self.groups) != set(spec.group_names()):
            return False
        return all(self.groups[name].shape == (length,) for name, length in spec.groups)
