"""Preference identifier: regresses the QoE preference from state-action pairs.

The identifier reuses the agent's state feature extractor, embeds the action
as a one-hot through an FC layer, fuses through the same two FC layers, re-adds
the action feature residually, and emits three sigmoid outputs.  Its negative
log mean-squared error against the true preference is the representation-
learning reward bonus: the better the preference can be recovered from
behavior, the larger the bonus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .observations import Observation, ObservationSpec
from .qoe import QoEPreference
from .agent import _StateFeatures, observation_tensors

__all__ = [
    "IdentifiedPreference",
    "QoeIdentifierNet",
    "build_identifier",
    "mi_reward_term",
    "identifier_mse",
    "update_identifier",
    "combined_reward",
    "MSE_FLOOR",
]

MSE_FLOOR = 1e-6  # keeps the log-MSE bonus bounded when the identifier is exact


@dataclass(frozen=True)
class IdentifiedPreference:
    """Raw sigmoid outputs in [0,1]^3; deliberately not renormalized."""

    values: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(not 0.0 <= v <= 1.0 for v in self.values):
            raise ValueError(f"identified components must lie in [0, 1], got {self.values}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class QoeIdentifierNet(nn.Module):
    def __init__(self, spec: ObservationSpec, filters: int = 128, action_width: int = 128,
                 fc1_width: int = 1280, fc2_width: int = 128) -> None:
        super().__init__()
        self.spec = spec
        self.state_features = _StateFeatures(spec, filters)
        self.action_fc = nn.Linear(spec.n_actions, action_width)
        self.fc1 = nn.Linear(self.state_features.out_width + action_width, fc1_width)
        self.fc2 = nn.Linear(fc1_width, fc2_width)
        if fc2_width != action_width:
            raise ValueError("penultimate width must match the action feature width")
        self.out = nn.Linear(fc2_width, 3)

    def forward(self, groups: dict[str, torch.Tensor], scalar: torch.Tensor,
                actions_onehot: torch.Tensor) -> torch.Tensor:
        state_feat = self.state_features(groups, scalar)
        action_feat = torch.relu(self.action_fc(actions_onehot))
        h = torch.relu(self.fc1(torch.cat([state_feat, action_feat], dim=1)))
        h = torch.relu(self.fc2(h))
        h = h + action_feat  # residual: keep action information past the fusion
        return torch.sigmoid(self.out(h))

    def identify(self, obs: Observation, action_index: int) -> IdentifiedPreference:
        dtype = self.out.weight.dtype
        groups, scalar, _ = observation_tensors([obs], dtype)
        onehot = torch.zeros((1, self.spec.n_actions), dtype=dtype)
        onehot[0, action_index] = 1.0
        with torch.no_grad():
            out = self.forward(groups, scalar, onehot)
        return IdentifiedPreference(tuple(float(v) for v in out[0]))

    def identify_batch(self, observations: list[Observation],
                       action_indices: np.ndarray) -> np.ndarray:
        dtype = self.out.weight.dtype
        groups, scalar, _ = observation_tensors(observations, dtype)
        onehot = _onehot(action_indices, self.spec.n_actions, dtype)
        with torch.no_grad():
            out = self.forward(groups, scalar, onehot)
        return out.numpy().astype(np.float64)


def build_identifier(spec: ObservationSpec, seed: int = 0, **kwargs) -> QoeIdentifierNet:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return QoeIdentifierNet(spec, **kwargs)


def _onehot(indices: np.ndarray, n: int, dtype: torch.dtype) -> torch.Tensor:
    idx = torch.as_tensor(np.asarray(indices, dtype=np.int64))
    return torch.nn.functional.one_hot(idx, n).to(dtype)


def mi_reward_term(true_pref: QoEPreference, identified: IdentifiedPreference,
                   mse_floor: float = MSE_FLOOR) -> float:
    """Preference-recovery bonus: -log of the (floored) mean squared error."""
    diff = true_pref.as_array() - identified.as_array()
    mse = float((diff * diff).mean())
    return -float(np.log(max(mse, mse_floor)))


def identifier_mse(net: QoeIdentifierNet, observations: list[Observation],
                   action_indices: np.ndarray, prefs: np.ndarray) -> float:
    """Batch mean squared error between true and identified preferences."""
    out = net.identify_batch(observations, action_indices)
    diff = out - np.asarray(prefs, dtype=np.float64)
    return float((diff * diff).mean())


def update_identifier(net: QoeIdentifierNet, observations: list[Observation],
                      action_indices: np.ndarray, prefs: np.ndarray,
                      learning_rate: float = 1e-4,
                      optimizer: torch.optim.Optimizer | None = None) -> float:
    """One descent step on the batch MSE; returns the post-update batch MSE.

    Without an optimizer this is a plain gradient-descent step at
    `learning_rate` (the form the update-rule oracle checks); passing a
    persistent optimizer lets the training loop use adaptive steps.
    """
    if len(observations) == 0:
        raise ValueError("identifier update needs a non-empty batch")
    dtype = net.out.weight.dtype
    groups, scalar, _ = observation_tensors(observations, dtype)
    onehot = _onehot(action_indices, net.spec.n_actions, dtype)
    target = torch.as_tensor(np.asarray(prefs, dtype=np.float64), dtype=dtype)

    out = net.forward(groups, scalar, onehot)
    mse = torch.mean((out - target) ** 2)
    if optimizer is None:
        net.zero_grad()
        mse.backward()
        with torch.no_grad():
            for p in net.parameters():
                if p.grad is not None:
                    p -= learning_rate * p.grad
        net.zero_grad()
    else:
        optimizer.zero_grad()
        mse.backward()
        optimizer.step()
    return identifier_mse(net, observations, action_indices, prefs)


def combined_reward(qoe_total: float, mi_term: float, alpha: float) -> float:
    """Blend of the (normalized) QoE score and the preference-recovery bonus."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * qoe_total + alpha * mi_term
