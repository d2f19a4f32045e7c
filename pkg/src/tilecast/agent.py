"""Preference-conditioned bitrate policy and value network, with PPO updates.

The network extracts one 128-wide feature per state vector through a
full-width 1D convolution, embeds the buffer scalar and the preference through
fully-connected layers, fuses everything through two FC layers (1280 then 128),
and re-adds the preference feature to the penultimate output so preference
information survives the fusion.  A softmax head scores the discrete bitrate
actions; a linear head on the same trunk estimates the value baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .observations import Observation, ObservationSpec

__all__ = [
    "PolicyValueNet",
    "build_policy",
    "observation_tensors",
    "ActionDistribution",
    "PpoConfig",
    "RolloutBatch",
    "ppo_surrogate_loss",
    "ppo_update",
    "compute_gae",
]


@dataclass
class ActionDistribution:
    """Probabilities over the ordered action space."""

    probabilities: np.ndarray

    def __post_init__(self) -> None:
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64).ravel()
        if np.any(self.probabilities < 0) or abs(self.probabilities.sum() - 1.0) > 1e-6:
            raise ValueError("action distribution must be non-negative and sum to 1")

    def sample(self, rng: np.random.Generator) -> int:
        p = self.probabilities / self.probabilities.sum()
        return int(rng.choice(p.size, p=p))

    def argmax(self) -> int:
        return int(np.argmax(self.probabilities))


class _StateFeatures(nn.Module):
    """Shared extractor: one conv feature per vector group plus the scalar FC."""

    def __init__(self, spec: ObservationSpec, filters: int = 128) -> None:
        super().__init__()
        self.spec = spec
        self.filters = filters
        # kernel size equals the input length, so each conv emits one position
        self.convs = nn.ModuleDict({
            name: nn.Conv1d(1, filters, kernel_size=length)
            for name, length in spec.groups
        })
        self.scalar_fc = nn.Linear(1, filters)

    @property
    def out_width(self) -> int:
        return (len(self.spec.groups) + 1) * self.filters

    def forward(self, groups: dict[str, torch.Tensor], scalar: torch.Tensor) -> torch.Tensor:
        # a full-width kernel makes each conv one matrix-vector product, so
        # F.linear on the squeezed kernel computes it with far less overhead
        feats = [
            torch.relu(nn.functional.linear(groups[name],
                                            self.convs[name].weight.squeeze(1),
                                            self.convs[name].bias))
            for name, _ in self.spec.groups
        ]
        feats.append(torch.relu(self.scalar_fc(scalar.unsqueeze(1))))
        return torch.cat(feats, dim=1)


class PolicyValueNet(nn.Module):
    def __init__(self, spec: ObservationSpec, filters: int = 128, pref_width: int = 128,
                 fc1_width: int = 1280, fc2_width: int = 128) -> None:
        super().__init__()
        self.spec = spec
        self.state_features = _StateFeatures(spec, filters)
        self.pref_fc = nn.Linear(3, pref_width)
        self.fc1 = nn.Linear(self.state_features.out_width + pref_width, fc1_width)
        self.fc2 = nn.Linear(fc1_width, fc2_width)
        if fc2_width != pref_width:
            raise ValueError("penultimate width must match the preference feature width")
        self.policy_head = nn.Linear(fc2_width, spec.n_actions)
        self.value_head = nn.Linear(fc2_width, 1)

    def forward(self, groups: dict[str, torch.Tensor], scalar: torch.Tensor,
                pref: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Logits over actions and the value estimate for a batch."""
        state_feat = self.state_features(groups, scalar)
        pref_feat = torch.relu(self.pref_fc(pref))
        h = torch.relu(self.fc1(torch.cat([state_feat, pref_feat], dim=1)))
        h = torch.relu(self.fc2(h))
        h = h + pref_feat  # residual: keep preference information past the fusion
        return self.policy_head(h), self.value_head(h).squeeze(-1)

    def distribution(self, obs: Observation) -> ActionDistribution:
        groups, scalar, pref = observation_tensors([obs], self._dtype())
        with torch.no_grad():
            logits, _ = self.forward(groups, scalar, pref)
        probs = torch.softmax(logits[0], dim=-1)
        return ActionDistribution(probs.numpy().astype(np.float64))

    def value(self, obs: Observation) -> float:
        groups, scalar, pref = observation_tensors([obs], self._dtype())
        with torch.no_grad():
            _, value = self.forward(groups, scalar, pref)
        return float(value[0])

    def act(self, obs: Observation, rng: np.random.Generator | None = None,
            greedy: bool = False) -> tuple[int, float, float]:
        """Pick an action; returns (index, log probability, value estimate)."""
        probs, values = self.act_batch([obs])
        if greedy or rng is None:
            idx = int(np.argmax(probs[0]))
        else:
            idx = int(rng.choice(probs.shape[1], p=probs[0] / probs[0].sum()))
        return idx, float(np.log(max(probs[0, idx], 1e-300))), float(values[0])

    def act_batch(self, obs_list: list[Observation]) -> tuple[np.ndarray, np.ndarray]:
        """Action probabilities and value estimates for a batch, one forward."""
        groups, scalar, pref = observation_tensors(obs_list, self._dtype())
        with torch.no_grad():
            logits, values = self.forward(groups, scalar, pref)
        probs = torch.softmax(logits, dim=-1).numpy().astype(np.float64)
        return probs, values.numpy().astype(np.float64)

    def _dtype(self) -> torch.dtype:
        return self.pref_fc.weight.dtype


def build_policy(spec: ObservationSpec, seed: int = 0, **kwargs) -> PolicyValueNet:
    """Construct a policy/value network with seed-determined initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return PolicyValueNet(spec, **kwargs)


def observation_tensors(obs_list: list[Observation], dtype: torch.dtype = torch.float32,
                        ) -> tuple[dict[str, torch.Tensor], torch.Tensor, torch.Tensor]:
    """Stack observations into batched tensors keyed by group name."""
    names = obs_list[0].groups.keys()
    groups = {
        name: torch.as_tensor(np.stack([o.groups[name] for o in obs_list]), dtype=dtype)
        for name in names
    }
    scalar = torch.as_tensor(np.array([o.scalar for o in obs_list]), dtype=dtype)
    pref = torch.as_tensor(np.stack([o.pref for o in obs_list]), dtype=dtype)
    return groups, scalar, pref


def compute_gae(rewards: np.ndarray, values: np.ndarray, discount: float,
                gae_lambda: float, last_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over one finished episode."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must align")
    ext = np.append(values, last_value)
    advantages = np.zeros_like(rewards)
    gae = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + discount * ext[t + 1] - ext[t]
        gae = delta + discount * gae_lambda * gae
        advantages[t] = gae
    return advantages, advantages + values


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    entropy_coef: float = 0.02
    value_coef: float = 0.5
    discount: float = 0.95
    gae_lambda: float = 0.95
    epochs: int = 4
    learning_rate: float = 5e-4
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True


@dataclass
class RolloutBatch:
    """Transitions collected under a fixed policy snapshot."""

    observations: list[Observation]
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.observations)
        for name in ("actions", "old_log_probs", "advantages", "returns"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")

    def __len__(self) -> int:
        return len(self.observations)


def _surrogate_from_logits(logits: torch.Tensor, actions: torch.Tensor,
                           old_log_probs: torch.Tensor, advantages: torch.Tensor,
                           clip_epsilon: float) -> tuple[torch.Tensor, dict]:
    log_probs = torch.log_softmax(logits, dim=-1)
    chosen = log_probs.gather(1, actions.view(-1, 1)).squeeze(1)
    ratio = torch.exp(chosen - old_log_probs)
    clipped = torch.clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    surrogate = -torch.min(ratio * advantages, clipped * advantages).mean()
    with torch.no_grad():
        clip_fraction = float(((ratio - 1.0).abs() > clip_epsilon).float().mean())
        diagnostics = {"mean_ratio": float(ratio.mean()), "clip_fraction": clip_fraction}
    return surrogate, diagnostics


def ppo_surrogate_loss(net: PolicyValueNet, groups, scalar, pref, actions: torch.Tensor,
                       old_log_probs: torch.Tensor, advantages: torch.Tensor,
                       clip_epsilon: float) -> tuple[torch.Tensor, dict]:
    """Clipped-ratio policy objective (to minimize) plus ratio diagnostics."""
    logits, _ = net(groups, scalar, pref)
    return _surrogate_from_logits(logits, actions, old_log_probs, advantages, clip_epsilon)


def ppo_update(net: PolicyValueNet, optimizer: torch.optim.Optimizer, batch: RolloutBatch,
               config: PpoConfig = PpoConfig()) -> dict:
    """Run the clipped-surrogate update epochs on one rollout batch.

    Returns diagnostics: mean probability ratio, clip fraction, entropy, and
    the component losses, all from the final epoch.
    """
    if len(batch) < 2:
        raise ValueError("PPO update needs at least 2 transitions")
    dtype = net._dtype()
    groups, scalar, pref = observation_tensors(batch.observations, dtype)
    actions = torch.as_tensor(batch.actions, dtype=torch.long)
    old_log_probs = torch.as_tensor(batch.old_log_probs, dtype=dtype)
    returns = torch.as_tensor(batch.returns, dtype=dtype)

    adv = batch.advantages
    if config.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    advantages = torch.as_tensor(adv, dtype=dtype)

    diagnostics: dict = {}
    for _epoch in range(config.epochs):
        logits, values = net(groups, scalar, pref)
        surrogate, diagnostics = _surrogate_from_logits(
            logits, actions, old_log_probs, advantages, config.clip_epsilon,
        )
        log_probs = torch.log_softmax(logits, dim=-1)
        entropy = -(log_probs.exp() * log_probs).sum(dim=1).mean()
        value_loss = torch.mean((values - returns) ** 2)
        loss = surrogate + config.value_coef * value_loss - config.entropy_coef * entropy

        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), config.max_grad_norm)
        optimizer.step()
        diagnostics.update({
            "entropy": float(entropy.detach()), "value_loss": float(value_loss.detach()),
            "policy_loss": float(surrogate.detach()), "total_loss": float(loss.detach()),
        })
    return diagnostics
