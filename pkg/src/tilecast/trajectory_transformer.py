"""Multi-trajectory transformer for viewport forecasting.

One shared encoder-decoder transformer carries M parallel input and output
heads: during training each head sees an independently sampled trajectory, so
M sub-models are fitted implicitly inside one network; at inference the same
history is duplicated across heads and the M outputs are averaged.  A
convolution + max-pool stage halves the encoder output length before it feeds
the decoder, and decoding is autoregressive: each step re-injects the previous
predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .geometry import TileGrid, Trajectory, wrap_distance_arrays

__all__ = [
    "PredictorConfig",
    "PredictionSet",
    "attention",
    "MultiHeadAttention",
    "Distill",
    "MultiTrajectoryTransformer",
    "build_model",
    "mtio_loss",
    "mtio_loss_torch",
    "ensemble",
    "ensemble_xy",
    "count_params_flops",
]


@dataclass(frozen=True)
class PredictorConfig:
    """Hyperparameters of the multi-head trajectory transformer."""

    m_heads: int = 3
    d_embed: int = 512
    n_attn_heads: int = 8
    d_key: int = 64
    d_value: int = 64
    n_blocks: int = 2
    history_len: int = 5
    horizon: int = 5
    ffn_width: int | None = None

    def __post_init__(self) -> None:
        for name in ("m_heads", "d_embed", "n_attn_heads", "d_key", "d_value", "n_blocks",
                     "history_len", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.ffn_width is not None and self.ffn_width < 1:
            raise ValueError(f"ffn_width must be at least 1, got {self.ffn_width}")

    @property
    def resolved_ffn_width(self) -> int:
        return self.ffn_width if self.ffn_width is not None else 4 * self.d_embed


@dataclass
class PredictionSet:
    """The M trajectories produced by the output heads for one history."""

    trajectories: list[Trajectory]

    def __post_init__(self) -> None:
        if not self.trajectories:
            raise ValueError("prediction set must contain at least one trajectory")
        horizon = len(self.trajectories[0])
        if any(len(t) != horizon for t in self.trajectories):
            raise ValueError("all predicted trajectories must share the same horizon")

    @property
    def m_heads(self) -> int:
        return len(self.trajectories)

    @property
    def horizon(self) -> int:
        return len(self.trajectories[0])

    def as_array(self) -> np.ndarray:
        """Stacked coordinates, shape (M, horizon, 2)."""
        return np.stack([t.xy for t in self.trajectories])


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
              mask: torch.Tensor | None = None) -> torch.Tensor:
    """Scaled dot-product attention over the last two dimensions.

    q: (..., Lq, d_k), k: (..., Lk, d_k), v: (..., Lk, d_v).  Each output row is
    a convex combination of v rows weighted by row-softmax of q k^T / sqrt(d_k).
    An optional additive mask (broadcastable to (..., Lq, Lk)) is applied to the
    scores before the softmax.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value length mismatch: {k.shape[-2]} vs {v.shape[-2]}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores + mask
    return torch.softmax(scores, dim=-1) @ v


class MultiHeadAttention(nn.Module):
    """Attention repeated over N_ah subspaces, concatenated and re-projected."""

    def __init__(self, d_embed: int, n_heads: int, d_key: int, d_value: int) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.d_key = d_key
        self.d_value = d_value
        self.proj_q = nn.Linear(d_embed, n_heads * d_key)
        self.proj_k = nn.Linear(d_embed, n_heads * d_key)
        self.proj_v = nn.Linear(d_embed, n_heads * d_value)
        self.proj_out = nn.Linear(n_heads * d_value, d_embed)

    def forward(self, x_q: torch.Tensor, x_k: torch.Tensor, x_v: torch.Tensor,
                mask: torch.Tensor | None = None) -> torch.Tensor:
        b, lq, _ = x_q.shape
        lk = x_k.shape[1]
        q = self.proj_q(x_q).view(b, lq, self.n_heads, self.d_key).transpose(1, 2)
        k = self.proj_k(x_k).view(b, lk, self.n_heads, self.d_key).transpose(1, 2)
        v = self.proj_v(x_v).view(b, lk, self.n_heads, self.d_value).transpose(1, 2)
        mixed = attention(q, k, v, mask)
        mixed = mixed.transpose(1, 2).reshape(b, lq, self.n_heads * self.d_value)
        return self.proj_out(mixed)


class FeedForward(nn.Module):
    def __init__(self, d_embed: int, width: int) -> None:
        super().__init__()
        self.lin1 = nn.Linear(d_embed, width)
        self.lin2 = nn.Linear(width, d_embed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(torch.relu(self.lin1(x)))


class Distill(nn.Module):
    """Length-halving feature compression: 1D convolution then max-pool.

    Convolution kernel 3, stride 1, same padding; pool kernel 3, stride 2,
    padding 1, so an L-step sequence comes out ceil(L/2) steps long.  Length-1
    inputs pass through unchanged.
    """

    def __init__(self, d_embed: int) -> None:
        super().__init__()
        self.conv = nn.Conv1d(d_embed, d_embed, kernel_size=3, padding=1)
        self.pool = nn.MaxPool1d(kernel_size=3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] < 2:
            return x
        y = self.conv(x.transpose(1, 2))
        y = self.pool(y)
        return y.transpose(1, 2)


class EncoderBlock(nn.Module):
    def __init__(self, config: PredictorConfig) -> None:
        super().__init__()
        self.attn = MultiHeadAttention(config.d_embed, config.n_attn_heads,
                                       config.d_key, config.d_value)
        self.ffn = FeedForward(config.d_embed, config.resolved_ffn_width)
        self.norm1 = nn.LayerNorm(config.d_embed)
        self.norm2 = nn.LayerNorm(config.d_embed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.attn(x, x, x))
        return self.norm2(x + self.ffn(x))


class DecoderBlock(nn.Module):
    def __init__(self, config: PredictorConfig) -> None:
        super().__init__()
        self.self_attn = MultiHeadAttention(config.d_embed, config.n_attn_heads,
                                            config.d_key, config.d_value)
        self.cross_attn = MultiHeadAttention(config.d_embed, config.n_attn_heads,
                                             config.d_key, config.d_value)
        self.ffn = FeedForward(config.d_embed, config.resolved_ffn_width)
        self.norm1 = nn.LayerNorm(config.d_embed)
        self.norm2 = nn.LayerNorm(config.d_embed)
        self.norm3 = nn.LayerNorm(config.d_embed)

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                causal_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.self_attn(x, x, x, causal_mask))
        x = self.norm2(x + self.cross_attn(x, memory, memory))
        return self.norm3(x + self.ffn(x))


def _sinusoidal_encoding(max_len: int, d_embed: int) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_embed, 2, dtype=torch.float64)
                    * (-math.log(10000.0) / d_embed))
    table = torch.zeros(max_len, d_embed, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: d_embed // 2])
    return table.to(torch.float32)


class MultiTrajectoryTransformer(nn.Module):
    """M-head trajectory forecaster over a shared transformer backbone.

    Inputs and outputs are pixel coordinates; internally coordinates are
    normalized by the frame size and the output heads squash through a sigmoid,
    so predictions always land inside the frame.
    """

    def __init__(self, config: PredictorConfig, video_width: float, video_height: float) -> None:
        super().__init__()
        self.config = config
        self.video_width = float(video_width)
        self.video_height = float(video_height)
        m, d = config.m_heads, config.d_embed
        self.enc_in = nn.Linear(2 * m, d)
        self.dec_in = nn.Linear(2 * m, d)
        self.encoder = nn.ModuleList(EncoderBlock(config) for _ in range(config.n_blocks))
        self.distill = Distill(d)
        self.decoder = nn.ModuleList(DecoderBlock(config) for _ in range(config.n_blocks))
        self.heads = nn.ModuleList(nn.Linear(d, 2) for _ in range(m))
        max_len = max(config.history_len, config.horizon + 1)
        self.register_buffer("pos_table", _sinusoidal_encoding(max_len, d))

    def _frame(self, like: torch.Tensor) -> torch.Tensor:
        return torch.tensor([self.video_width, self.video_height],
                            dtype=like.dtype, device=like.device)

    def forward(self, histories: torch.Tensor, override=None) -> torch.Tensor:
        """Predict `horizon` steps for a batch of M-head histories.

        histories: (B, M, history_len, 2) pixel coordinates.  Returns
        (B, M, horizon, 2) pixel coordinates.  `override`, if given, is called
        as override(step_index, predictions) with predictions of shape
        (B, M, 2) and may return a replacement; later steps consume whatever it
        returns, which is how tests isolate the autoregressive dependency.
        """
        cfg = self.config
        if histories.ndim != 4 or histories.shape[1] != cfg.m_heads \
                or histories.shape[2] != cfg.history_len or histories.shape[3] != 2:
            raise ValueError(
                f"expected histories of shape (B, {cfg.m_heads}, {cfg.history_len}, 2), "
                f"got {tuple(histories.shape)}"
            )
        dtype = self.enc_in.weight.dtype
        histories = histories.to(dtype)
        frame = self._frame(histories)
        norm = histories / frame

        b, m, h, _ = norm.shape
        enc_tokens = norm.permute(0, 2, 1, 3).reshape(b, h, 2 * m)
        x = self.enc_in(enc_tokens) + self.pos_table[:h].to(dtype)
        for block in self.encoder:
            x = block(x)
        memory = self.distill(x)

        dec_feats = [norm[:, :, -1, :].reshape(b, 2 * m)]
        outputs = []
        for step in range(cfg.horizon):
            length = len(dec_feats)
            tokens = torch.stack(dec_feats, dim=1)
            y = self.dec_in(tokens) + self.pos_table[:length].to(dtype)
            mask = torch.full((length, length), float("-inf"), dtype=dtype,
                              device=y.device).triu(1)
            for block in self.decoder:
                y = block(y, memory, mask)
            last = y[:, -1]
            logits = torch.stack([head(last) for head in self.heads], dim=1)
            pixels = torch.sigmoid(logits) * frame
            if override is not None:
                replaced = override(step, pixels)
                if replaced is not None:
                    pixels = replaced.to(dtype)
            outputs.append(pixels)
            dec_feats.append((pixels / frame).reshape(b, 2 * m))
        return torch.stack(outputs, dim=2)

    @torch.no_grad()
    def predict_array(self, histories: np.ndarray) -> np.ndarray:
        """Numpy wrapper around forward; histories (B, M, h, 2) -> (B, M, H, 2)."""
        was_training = self.training
        self.eval()
        try:
            out = self.forward(torch.from_numpy(np.ascontiguousarray(histories, dtype=np.float32)))
        finally:
            self.train(was_training)
        return out.numpy().astype(np.float64)

    def predict_set(self, histories: list[Trajectory]) -> PredictionSet:
        """Forecast from M per-head histories (each of length history_len)."""
        cfg = self.config
        if len(histories) != cfg.m_heads:
            raise ValueError(f"expected {cfg.m_heads} histories, got {len(histories)}")
        for t in histories:
            if len(t) != cfg.history_len:
                raise ValueError(
                    f"history length must be {cfg.history_len}, got {len(t)}"
                )
        stacked = np.stack([t.xy for t in histories])[None]
        preds = self.predict_array(stacked)[0]
        dt = histories[0].timestep_duration
        return PredictionSet([Trajectory(preds[i], dt) for i in range(cfg.m_heads)])

    def predict_duplicated(self, history: Trajectory) -> PredictionSet:
        """Duplicate one history across all M input heads and forecast."""
        return self.predict_set([history] * self.config.m_heads)


def build_model(config: PredictorConfig, video_width: float, video_height: float,
                seed: int = 0) -> MultiTrajectoryTransformer:
    """Construct a transformer with reproducible, seed-determined initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return MultiTrajectoryTransformer(config, video_width, video_height)


def mtio_loss(pred: PredictionSet, truth: list[Trajectory], grid: TileGrid) -> float:
    """Sum over heads and horizon steps of the wrap-aware squared distance."""
    if len(truth) != pred.m_heads:
        raise ValueError(f"expected {pred.m_heads} truth trajectories, got {len(truth)}")
    truth_arr = np.stack([t.xy for t in truth])
    pred_arr = pred.as_array()
    if truth_arr.shape != pred_arr.shape:
        raise ValueError(f"shape mismatch: pred {pred_arr.shape} vs truth {truth_arr.shape}")
    return float(
        wrap_distance_arrays(pred_arr, truth_arr, grid.video_width, grid.video_height).sum()
    )


def mtio_loss_torch(pred: torch.Tensor, truth: torch.Tensor,
                    video_width: float, video_height: float) -> torch.Tensor:
    """Differentiable loss: batch mean of the per-sample head/step distance sum.

    pred, truth: (B, M, H, 2).
    """
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs truth {tuple(truth.shape)}")
    truth = truth.to(pred.dtype)
    dist_total = pred.new_zeros(pred.shape[0])
    for axis, period in ((0, video_width), (1, video_height)):
        delta = (pred[..., axis] - truth[..., axis]).abs()
        wrapped = torch.minimum(delta, (period - delta).abs())
        dist_total = dist_total + (wrapped * wrapped).sum(dim=(1, 2)) / 2.0
    return dist_total.mean()


def ensemble_xy(preds: np.ndarray, video_width: float, video_height: float) -> np.ndarray:
    """Average head predictions (..., M, H, 2) -> (..., H, 2), reduced into frame.

    The mean is taken on raw coordinates (no wrap-aware averaging); afterwards
    x is reduced modulo the width and y clamped below the height.
    """
    mean = np.asarray(preds, dtype=np.float64).mean(axis=-3)
    out = np.empty_like(mean)
    out[..., 0] = np.mod(mean[..., 0], video_width)
    out[..., 1] = np.clip(mean[..., 1], 0.0, np.nextafter(video_height, 0.0))
    return out


def ensemble(pred: PredictionSet, grid: TileGrid) -> Trajectory:
    """Per-timestep arithmetic mean of the M predicted trajectories."""
    dt = pred.trajectories[0].timestep_duration
    return Trajectory(ensemble_xy(pred.as_array(), grid.video_width, grid.video_height), dt)


def _linear_flops(length: int, d_in: int, d_out: int) -> int:
    # multiply+add per weight element, plus the bias add
    return 2 * length * d_in * d_out + length * d_out


def _mha_flops(cfg: PredictorConfig, l_q: int, l_k: int) -> int:
    d, nh, dk, dv = cfg.d_embed, cfg.n_attn_heads, cfg.d_key, cfg.d_value
    total = _linear_flops(l_q, d, nh * dk)        # query projection
    total += _linear_flops(l_k, d, nh * dk)       # key projection
    total += _linear_flops(l_k, d, nh * dv)       # value projection
    total += nh * 2 * l_q * l_k * dk              # q k^T
    total += nh * l_q * l_k                       # 1/sqrt(d_k) scaling
    total += nh * 5 * l_q * l_k                   # softmax: exp, max, sub, sum, div
    total += nh * 2 * l_q * l_k * dv              # weights @ v
    total += _linear_flops(l_q, nh * dv, d)       # output projection
    return total


def _ffn_flops(cfg: PredictorConfig, length: int) -> int:
    f = cfg.resolved_ffn_width
    return (_linear_flops(length, cfg.d_embed, f) + length * f
            + _linear_flops(length, f, cfg.d_embed))


def _layernorm_flops(cfg: PredictorConfig, length: int) -> int:
    # mean, variance, normalize, scale+shift: ~8 ops per element
    return 8 * length * cfg.d_embed


def count_params_flops(config: PredictorConfig) -> tuple[int, int]:
    """Exact parameter count and a per-inference FLOP estimate.

    The parameter count mirrors the module layout exactly (verified against the
    instantiated network in tests).  FLOPs model one duplicated-history
    inference: encoder over the full history, distillation, then `horizon`
    autoregressive decoder passes, each recomputed over its growing prefix.
    Multiply-accumulates count as 2 FLOPs; softmax 5/elem, layernorm 8/elem,
    relu 1/elem, sigmoid 4/elem, max-pool 3/elem (kernel comparisons).
    """
    m, d = config.m_heads, config.d_embed
    nh, dk, dv = config.n_attn_heads, config.d_key, config.d_value
    f = config.resolved_ffn_width
    h, horizon = config.history_len, config.horizon

    mha_params = (2 * (d * nh * dk + nh * dk)       # query and key projections
                  + d * nh * dv + nh * dv           # value projection
                  + nh * dv * d + d)                # output projection
    ffn_params = d * f + f + f * d + d
    ln_params = 2 * d

    params = 2 * (2 * m * d + d)                    # encoder and decoder input projections
    params += config.n_blocks * (mha_params + ffn_params + 2 * ln_params)
    params += d * d * 3 + d                         # distillation convolution
    params += config.n_blocks * (2 * mha_params + ffn_params + 3 * ln_params)
    params += m * (d * 2 + 2)                       # per-head output projections

    l_mem = max((h + 1) // 2, 1)                    # distilled memory length
    flops = _linear_flops(h, 2 * m, d) + h * d      # input projection + positional add
    flops += config.n_blocks * (_mha_flops(config, h, h) + _ffn_flops(config, h)
                                + 2 * _layernorm_flops(config, h) + 2 * h * d)
    flops += 2 * h * 3 * d * d + h * d              # distill convolution
    flops += 3 * l_mem * d                          # distill max-pool
    for prefix in range(1, horizon + 1):
        flops += _linear_flops(prefix, 2 * m, d) + prefix * d
        flops += config.n_blocks * (_mha_flops(config, prefix, prefix)
                                    + _mha_flops(config, prefix, l_mem)
                                    + _ffn_flops(config, prefix)
                                    + 3 * _layernorm_flops(config, prefix)
                                    + 3 * prefix * d)
        flops += m * (_linear_flops(1, d, 2) + 2 * 4)   # output heads + sigmoid
    return params, flops
