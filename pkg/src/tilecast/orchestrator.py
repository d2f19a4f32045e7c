"""Adversarial training loop and evaluation campaigns for the bitrate agent.

Each iteration samples a batch of QoE preferences, rolls out one episode per
sample with the preference held fixed, updates the identifier on those
trajectories, recomputes the mixed reward with the freshly updated identifier,
and then takes a PPO step on the agent.  Evaluation replays greedy episodes
per preference and reports QoE statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .agent import (
    PolicyValueNet,
    PpoConfig,
    RolloutBatch,
    build_policy,
    compute_gae,
    ppo_update,
)
from .identifier import (
    MSE_FLOOR,
    QoeIdentifierNet,
    build_identifier,
    identifier_mse,
    update_identifier,
)
from .observations import Observation
from .qoe import QoEPreference
from .simenv import BitrateAction, heuristic_policy

__all__ = [
    "TrainingConfig",
    "IterationDiagnostics",
    "TrainingResult",
    "run_training",
    "run_ablation_no_repl",
    "EvalRow",
    "run_evaluation",
    "AgentPolicy",
    "HeuristicPolicy",
    "save_agent_checkpoint",
    "load_agent_checkpoint",
    "write_diagnostics_csv",
    "write_identifier_diag_csv",
    "write_eval_report_csv",
]


@dataclass(frozen=True)
class TrainingConfig:
    iterations: int = 300
    pref_batch: int = 4          # episodes per iteration, one preference each
    alpha: float = 0.5           # reward mix: (1-alpha) QoE + alpha preference recovery
    identifier_lr: float = 1e-4
    identifier_adaptive: bool = True  # Adam on the identifier instead of plain SGD
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seed: int = 0
    capture_rollouts: bool = False
    # one preference drawn per iteration (all episodes share it) instead of one
    # draw per episode; sharpens the preference-forgetting pressure the
    # identifier is there to counteract
    single_pref_iterations: bool = False
    # network size overrides, e.g. for toy problems
    policy_kwargs: dict = field(default_factory=dict)
    identifier_kwargs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.pref_batch < 1:
            raise ValueError("pref_batch must be at least 1")


@dataclass
class IterationDiagnostics:
    iteration: int
    alpha: float
    mean_reward: float
    identifier_mse: float
    mi_term_mean: float
    mean_qoe_by_pref: list[float]  # NaN where a pool preference was not sampled


@dataclass
class TrainingResult:
    policy: PolicyValueNet
    identifier: QoeIdentifierNet
    diagnostics: list[IterationDiagnostics]
    pool: list[QoEPreference]
    config: TrainingConfig
    rollouts: list[list[tuple[int, int, list[int]]]] | None = None
    env_steps: int = 0


@dataclass
class _Episode:
    pref_index: int
    env_index: int
    observations: list[Observation]
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    qoe_totals: np.ndarray
    q_terms: np.ndarray   # (n, 3)
    r_in: np.ndarray
    r_out: np.ndarray
    stalls: np.ndarray


class _EpisodeBuilder:
    def __init__(self, env, pref_index: int, env_index: int) -> None:
        self.env = env
        self.pref_index = pref_index
        self.env_index = env_index
        self.observations: list[Observation] = []
        self.actions: list[int] = []
        self.log_probs: list[float] = []
        self.values: list[float] = []
        self.qoes: list[float] = []
        self.terms: list[tuple[float, float, float]] = []
        self.r_in: list[float] = []
        self.r_out: list[float] = []
        self.stalls: list[float] = []

    def record(self, obs, idx: int, logp: float, value: float, breakdown, info) -> None:
        self.observations.append(obs)
        self.actions.append(idx)
        self.log_probs.append(logp)
        self.values.append(value)
        self.qoes.append(breakdown.total)
        self.terms.append((breakdown.q1, breakdown.q2, breakdown.q3))
        action_obj = getattr(self.env, "actions", None)
        if action_obj is not None and isinstance(action_obj[idx], BitrateAction):
            self.r_in.append(action_obj[idx].r_in)
            self.r_out.append(action_obj[idx].r_out)
        else:
            self.r_in.append(float(idx))
            self.r_out.append(float(idx))
        self.stalls.append(getattr(info, "stall", breakdown.q3))

    def finish(self) -> _Episode:
        return _Episode(
            self.pref_index, self.env_index, self.observations,
            np.array(self.actions, dtype=np.int64), np.array(self.log_probs),
            np.array(self.values), np.array(self.qoes), np.array(self.terms),
            np.array(self.r_in), np.array(self.r_out), np.array(self.stalls),
        )


def _collect_episodes(envs: list, pool: list[QoEPreference], pref_indices: list[int],
                      env_indices: list[int], policy: PolicyValueNet,
                      rng: np.random.Generator) -> list[_Episode]:
    """Roll out one episode per (preference, environment) draw, stepped in
    lockstep so every decision round costs a single batched forward pass.

    Environments are cloned so the same underlying instance can be drawn more
    than once per batch without sharing mutable session state.
    """
    builders = []
    current_obs = []
    for pref_index, env_index in zip(pref_indices, env_indices):
        env = envs[env_index]
        env = env.clone() if hasattr(env, "clone") else env
        builders.append(_EpisodeBuilder(env, pref_index, env_index))
        current_obs.append(env.reset(pool[pref_index]))

    active = list(range(len(builders)))
    while active:
        probs, values = policy.act_batch([current_obs[i] for i in active])
        probs = probs / probs.sum(axis=1, keepdims=True)
        still_active = []
        for pos, i in enumerate(active):
            idx = int(rng.choice(probs.shape[1], p=probs[pos]))
            logp = float(np.log(max(probs[pos, idx], 1e-300)))
            builder = builders[i]
            obs, breakdown, done, info = builder.env.step(idx)
            builder.record(current_obs[i], idx, logp, float(values[pos]), breakdown, info)
            current_obs[i] = obs
            if not done:
                still_active.append(i)
        active = still_active
    return [b.finish() for b in builders]


def run_training(envs: list, pool: list[QoEPreference],
                 config: TrainingConfig = TrainingConfig()) -> TrainingResult:
    """Train agent and identifier jointly over the preference pool.

    Per iteration: sample preferences and environments, roll out one episode
    per sample with the preference fixed, descend the identifier on those
    state-action pairs, score every transition with the updated identifier,
    and PPO-update the agent on the mixed reward.  Fully deterministic for a
    fixed seed.
    """
    if not envs:
        raise ValueError("need at least one environment")
    if not pool:
        raise ValueError("preference pool is empty")
    spec = envs[0].observation_spec()
    for env in envs[1:]:
        if env.observation_spec() != spec:
            raise ValueError("all environments must share one observation spec")

    rng = np.random.default_rng(config.seed)
    policy = build_policy(spec, seed=config.seed, **config.policy_kwargs)
    identifier = build_identifier(spec, seed=config.seed + 1, **config.identifier_kwargs)
    agent_optim = torch.optim.Adam(policy.parameters(), lr=config.ppo.learning_rate,
                                   foreach=True)
    ident_optim = (torch.optim.Adam(identifier.parameters(), lr=config.identifier_lr,
                                    foreach=True)
                   if config.identifier_adaptive else None)

    pool = list(pool)
    diagnostics: list[IterationDiagnostics] = []
    captured: list[list[tuple[int, int, list[int]]]] | None = \
        [] if config.capture_rollouts else None
    env_steps = 0

    for iteration in range(config.iterations):
        if config.single_pref_iterations:
            pref_indices = [int(rng.integers(len(pool)))] * config.pref_batch
        else:
            pref_indices = [int(rng.integers(len(pool))) for _ in range(config.pref_batch)]
        env_indices = [int(rng.integers(len(envs))) for _ in range(config.pref_batch)]
        episodes = _collect_episodes(envs, pool, pref_indices, env_indices, policy, rng)
        env_steps += sum(len(ep.actions) for ep in episodes)
        if captured is not None:
            captured.append([(ep.pref_index, ep.env_index, ep.actions.tolist())
                             for ep in episodes])

        all_obs = [o for ep in episodes for o in ep.observations]
        all_actions = np.concatenate([ep.actions for ep in episodes])
        all_prefs = np.concatenate([
            np.tile(pool[ep.pref_index].as_array(), (len(ep.actions), 1)) for ep in episodes
        ])

        if config.alpha > 0.0:
            # identifier first: rewards below use the post-update identifier
            mse_after = update_identifier(identifier, all_obs, all_actions, all_prefs,
                                          config.identifier_lr, ident_optim)
            identified = identifier.identify_batch(all_obs, all_actions)
            per_step_mse = ((identified - all_prefs) ** 2).mean(axis=1)
            mi_terms = -np.log(np.maximum(per_step_mse, MSE_FLOOR))
        else:
            mse_after = float("nan")
            mi_terms = np.zeros(len(all_obs))
        # both reward components are brought to O(1): QoE by the ladder ceiling
        # below, the recovery bonus by its own ceiling -log(mse floor)
        mi_scaled = mi_terms / -np.log(MSE_FLOOR)

        advantages, returns, rewards = [], [], []
        cursor = 0
        for ep in episodes:
            n = len(ep.actions)
            qoe_scale = getattr(envs[ep.env_index], "qoe_scale", 1.0)
            rew = ((1.0 - config.alpha) * ep.qoe_totals / qoe_scale
                   + config.alpha * mi_scaled[cursor:cursor + n])
            adv, ret = compute_gae(rew, ep.values, config.ppo.discount,
                                   config.ppo.gae_lambda)
            rewards.append(rew)
            advantages.append(adv)
            returns.append(ret)
            cursor += n
        rewards = np.concatenate(rewards)

        batch = RolloutBatch(all_obs, all_actions.astype(np.float64),
                             np.concatenate([ep.log_probs for ep in episodes]),
                             np.concatenate(advantages), np.concatenate(returns))
        ppo_update(policy, agent_optim, batch, config.ppo)

        qoe_by_pref = [float("nan")] * len(pool)
        for idx in range(len(pool)):
            sampled = [float(ep.qoe_totals.mean()) for ep in episodes if ep.pref_index == idx]
            if sampled:
                qoe_by_pref[idx] = float(np.mean(sampled))
        diagnostics.append(IterationDiagnostics(
            iteration=iteration, alpha=config.alpha, mean_reward=float(rewards.mean()),
            identifier_mse=mse_after, mi_term_mean=float(mi_terms.mean()),
            mean_qoe_by_pref=qoe_by_pref,
        ))

    return TrainingResult(policy, identifier, diagnostics, pool, config, captured, env_steps)


def run_ablation_no_repl(envs: list, pool: list[QoEPreference],
                         config: TrainingConfig = TrainingConfig()) -> TrainingResult:
    """Identical loop with the identifier guidance removed (alpha forced to 0)."""
    return run_training(envs, pool, replace(config, alpha=0.0))


class AgentPolicy:
    """Evaluation adapter around a trained policy network."""

    def __init__(self, net: PolicyValueNet, greedy: bool = True,
                 rng: np.random.Generator | None = None) -> None:
        self.net = net
        self.greedy = greedy
        self.rng = rng

    def act(self, env, obs: Observation) -> int:
        idx, _, _ = self.net.act(obs, rng=self.rng, greedy=self.greedy)
        return idx


class HeuristicPolicy:
    """Evaluation adapter around the bandwidth-heuristic baseline policy."""

    def act(self, env, obs: Observation) -> int:
        action = heuristic_policy(env.session.state, env.manifest.ladder,
                                  env.manifest.chunk_duration, env.scale)
        return env.actions.index(action)


@dataclass
class EvalRow:
    pref_index: int
    pref: QoEPreference
    env_index: int
    mean_qoe: float
    p10_qoe: float
    p50_qoe: float
    p90_qoe: float
    mean_q1: float
    mean_q2: float
    mean_q3: float
    mean_r_in: float
    mean_r_out: float
    total_stall: float


def run_evaluation(policy, envs: list, prefs: list[QoEPreference]) -> list[EvalRow]:
    """One deterministic episode per (preference, environment) pair.

    `policy` is anything with act(env, obs) -> action index, so trained agents
    and the heuristic baseline share the interface.
    """
    rows: list[EvalRow] = []
    for pref_index, pref in enumerate(prefs):
        for env_index, env in enumerate(envs):
            obs = env.reset(pref)
            qoes, terms, r_in, r_out, stalls = [], [], [], [], []
            done = False
            while not done:
                idx = policy.act(env, obs)
                obs, breakdown, done, info = env.step(idx)
                qoes.append(breakdown.total)
                terms.append((breakdown.q1, breakdown.q2, breakdown.q3))
                action = env.actions[idx]
                r_in.append(action.r_in)
                r_out.append(action.r_out)
                stalls.append(getattr(info, "stall", breakdown.q3))
            qoes_arr = np.array(qoes)
            terms_arr = np.array(terms)
            rows.append(EvalRow(
                pref_index=pref_index, pref=pref, env_index=env_index,
                mean_qoe=float(qoes_arr.mean()),
                p10_qoe=float(np.percentile(qoes_arr, 10)),
                p50_qoe=float(np.percentile(qoes_arr, 50)),
                p90_qoe=float(np.percentile(qoes_arr, 90)),
                mean_q1=float(terms_arr[:, 0].mean()),
                mean_q2=float(terms_arr[:, 1].mean()),
                mean_q3=float(terms_arr[:, 2].mean()),
                mean_r_in=float(np.mean(r_in)),
                mean_r_out=float(np.mean(r_out)),
                total_stall=float(np.sum(stalls)),
            ))
    return rows


def save_agent_checkpoint(directory, result: TrainingResult) -> Path:
    """Write agent+identifier weights with config echo and seed into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = result.policy.spec
    payload = {
        "format": "tilecast.bitrate-agent",
        "version": 1,
        "spec_groups": list(spec.groups),
        "n_actions": spec.n_actions,
        "seed": result.config.seed,
        "alpha": result.config.alpha,
        "iterations": result.config.iterations,
        "policy_state": result.policy.state_dict(),
        "identifier_state": result.identifier.state_dict(),
        "pool": [tuple(p.as_array()) for p in result.pool],
        "env_steps": result.env_steps,
    }
    path = directory / "agent.pt"
    torch.save(payload, path)
    return path


def load_agent_checkpoint(directory) -> tuple[PolicyValueNet, QoeIdentifierNet, dict]:
    directory = Path(directory)
    path = directory / "agent.pt" if directory.is_dir() else directory
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != "tilecast.bitrate-agent":
        raise ValueError(f"{path} is not a bitrate agent checkpoint")
    from .observations import ObservationSpec

    spec = ObservationSpec(tuple(tuple(g) for g in payload["spec_groups"]),
                           payload["n_actions"])
    policy = build_policy(spec, seed=payload["seed"])
    policy.load_state_dict(payload["policy_state"])
    policy.eval()
    identifier = build_identifier(spec, seed=payload["seed"] + 1)
    identifier.load_state_dict(payload["identifier_state"])
    identifier.eval()
    return policy, identifier, payload


def _fmt(value: float) -> str:
    if isinstance(value, float) and np.isnan(value):
        return ""
    return f"{value:.9g}" if isinstance(value, float) else str(value)


def write_diagnostics_csv(path, result: TrainingResult) -> None:
    """Full per-iteration training diagnostics."""
    n_pool = len(result.pool)
    header = (["iter", "alpha", "mean_reward", "identifier_mse", "mi_term_mean"]
              + [f"qoe_p{i}" for i in range(n_pool)])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for d in result.diagnostics:
            writer.writerow([d.iteration, _fmt(d.alpha), _fmt(d.mean_reward),
                             _fmt(d.identifier_mse), _fmt(d.mi_term_mean)]
                            + [_fmt(q) for q in d.mean_qoe_by_pref])


def write_identifier_diag_csv(path, result: TrainingResult) -> None:
    """The identifier's training trace: iter, batch MSE, mean reward bonus."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "identifier_mse", "mi_term_mean"])
        for d in result.diagnostics:
            writer.writerow([d.iteration, _fmt(d.identifier_mse), _fmt(d.mi_term_mean)])


EVAL_HEADER = ["pref_index", "lambda1", "lambda2", "lambda3", "env", "mean_qoe",
               "p10_qoe", "p50_qoe", "p90_qoe", "mean_q1", "mean_q2", "mean_q3",
               "mean_r_in", "mean_r_out", "total_stall"]


def write_eval_report_csv(path, rows: list[EvalRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_HEADER)
        for row in rows:
            writer.writerow([
                row.pref_index, _fmt(row.pref.lambda1), _fmt(row.pref.lambda2),
                _fmt(row.pref.lambda3), row.env_index, _fmt(row.mean_qoe),
                _fmt(row.p10_qoe), _fmt(row.p50_qoe), _fmt(row.p90_qoe),
                _fmt(row.mean_q1), _fmt(row.mean_q2), _fmt(row.mean_q3),
                _fmt(row.mean_r_in), _fmt(row.mean_r_out), _fmt(row.total_stall),
            ])
