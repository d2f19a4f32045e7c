"""Training and evaluation of the multi-head viewport forecaster.

`ViewportForecaster` follows the scikit-learn estimator convention: all
hyperparameters are constructor arguments, `fit` learns from windowed
trajectories and stores fitted state in trailing-underscore attributes, and
`predict` maps one history to an ensembled future trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .geometry import (
    FieldOfView,
    LabeledTrace,
    TileGrid,
    Trajectory,
    iou,
    viewport_tile_mask,
)
from .trajectory_transformer import (
    MultiTrajectoryTransformer,
    PredictionSet,
    PredictorConfig,
    build_model,
    ensemble_xy,
    mtio_loss_torch,
)

__all__ = [
    "WindowedDataset",
    "ViewportForecaster",
    "evaluate_accuracy",
    "accuracy_by_family",
    "save_forecaster",
    "load_forecaster",
]


@dataclass
class WindowedDataset:
    """Fixed-length (history, future) pairs cut from viewport trajectories."""

    histories: np.ndarray  # (n, history_len, 2) pixels
    futures: np.ndarray    # (n, horizon, 2) pixels
    families: np.ndarray   # (n,) viewing-pattern labels
    timestep_duration: float = 0.2

    def __post_init__(self) -> None:
        self.histories = np.asarray(self.histories, dtype=np.float64)
        self.futures = np.asarray(self.futures, dtype=np.float64)
        self.families = np.asarray(self.families)
        if len(self.histories) != len(self.futures) or len(self.histories) != len(self.families):
            raise ValueError("histories, futures and families must have equal length")

    def __len__(self) -> int:
        return len(self.histories)

    @classmethod
    def from_traces(cls, traces: list[LabeledTrace], history_len: int, horizon: int,
                    stride: int | None = None) -> "WindowedDataset":
        """Slide a (history_len + horizon) window over each trace.

        Default stride is `horizon`, i.e. adjacent windows overlap in history
        but not in prediction target.
        """
        stride = stride or horizon
        hists, futs, fams = [], [], []
        dt = traces[0].trajectory.timestep_duration if traces else 0.2
        span = history_len + horizon
        for trace in traces:
            xy = trace.trajectory.xy
            for start in range(0, len(xy) - span + 1, stride):
                hists.append(xy[start:start + history_len])
                futs.append(xy[start + history_len:start + span])
                fams.append(trace.family)
        if not hists:
            raise ValueError("no windows could be cut; traces are shorter than one window")
        return cls(np.stack(hists), np.stack(futs), np.array(fams), dt)

    def subset(self, families) -> "WindowedDataset":
        wanted = {families} if isinstance(families, str) else set(families)
        keep = np.array([f in wanted for f in self.families])
        if not keep.any():
            raise ValueError(f"no windows belong to families {sorted(wanted)}")
        return WindowedDataset(self.histories[keep], self.futures[keep],
                               self.families[keep], self.timestep_duration)


class ViewportForecaster(BaseEstimator):
    """Multi-head transformer viewport forecaster with prediction ensembling.

    Parameters mirror `PredictorConfig` plus the training knobs.  During
    training each input head draws its windows independently from the dataset;
    at inference one history is duplicated across heads and the head outputs
    are averaged into a single trajectory.
    """

    def __init__(self, m_heads=3, d_embed=512, n_attn_heads=8, d_key=64, d_value=64,
                 n_blocks=2, history_len=5, horizon=5, ffn_width=None,
                 video_width=1920.0, video_height=960.0,
                 learning_rate=1e-4, batch_size=64, max_epochs=50, patience=10,
                 grad_clip=1.0, val_fraction=0.1, seed=0):
        self.m_heads = m_heads
        self.d_embed = d_embed
        self.n_attn_heads = n_attn_heads
        self.d_key = d_key
        self.d_value = d_value
        self.n_blocks = n_blocks
        self.history_len = history_len
        self.horizon = horizon
        self.ffn_width = ffn_width
        self.video_width = video_width
        self.video_height = video_height
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.grad_clip = grad_clip
        self.val_fraction = val_fraction
        self.seed = seed

    def _config(self) -> PredictorConfig:
        return PredictorConfig(
            m_heads=self.m_heads, d_embed=self.d_embed, n_attn_heads=self.n_attn_heads,
            d_key=self.d_key, d_value=self.d_value, n_blocks=self.n_blocks,
            history_len=self.history_len, horizon=self.horizon, ffn_width=self.ffn_width,
        )

    def fit(self, dataset: WindowedDataset, y=None) -> "ViewportForecaster":
        """Train by gradient descent on the wrap-aware multi-head loss.

        Each optimizer step samples an independent uniform batch of windows for
        every input head.  Early stopping watches a duplicated-history
        validation loss with the configured patience.
        """
        if len(dataset) == 0:
            raise ValueError("cannot fit on an empty dataset")
        config = self._config()
        if dataset.histories.shape[1] != config.history_len:
            raise ValueError(
                f"dataset history length {dataset.histories.shape[1]} does not match "
                f"history_len={config.history_len}"
            )
        if dataset.futures.shape[1] != config.horizon:
            raise ValueError(
                f"dataset horizon {dataset.futures.shape[1]} does not match "
                f"horizon={config.horizon}"
            )

        rng = np.random.default_rng(self.seed)
        model = build_model(config, self.video_width, self.video_height, self.seed)
        optim = torch.optim.Adam(model.parameters(), lr=self.learning_rate)

        n = len(dataset)
        n_val = int(n * self.val_fraction) if n >= 10 else 0
        perm = rng.permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        if n_val == 0:
            val_idx = train_idx
        hist = torch.from_numpy(dataset.histories.astype(np.float32))
        fut = torch.from_numpy(dataset.futures.astype(np.float32))

        m = config.m_heads
        steps_per_epoch = max(1, len(train_idx) // self.batch_size)
        batch = min(self.batch_size, len(train_idx))
        loss_log, val_log = [], []
        best_val, best_state, since_best = np.inf, None, 0
        for _epoch in range(self.max_epochs):
            model.train()
            epoch_losses = []
            for _step in range(steps_per_epoch):
                idx = rng.choice(train_idx, size=(m, batch), replace=True)
                head_hist = hist[idx.ravel()].reshape(m, batch, *hist.shape[1:]).transpose(0, 1)
                head_fut = fut[idx.ravel()].reshape(m, batch, *fut.shape[1:]).transpose(0, 1)
                pred = model(head_hist)
                loss = mtio_loss_torch(pred, head_fut, self.video_width, self.video_height)
                optim.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), self.grad_clip)
                optim.step()
                epoch_losses.append(float(loss.detach()))
            loss_log.append(float(np.mean(epoch_losses)))
            val_loss = self._validation_loss(model, hist[val_idx], fut[val_idx])
            val_log.append(val_loss)
            if val_loss < best_val - 1e-12:
                best_val, since_best = val_loss, 0
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            else:
                since_best += 1
                if since_best >= self.patience:
                    break
        if best_state is not None:
            model.load_state_dict(best_state)
        model.eval()

        self.model_ = model
        self.config_ = config
        self.loss_log_ = loss_log
        self.val_log_ = val_log
        self.timestep_duration_ = dataset.timestep_duration
        return self

    @staticmethod
    def _validation_loss(model: MultiTrajectoryTransformer, hist: torch.Tensor,
                         fut: torch.Tensor) -> float:
        """Inference-style loss: duplicated histories against duplicated truth."""
        m = model.config.m_heads
        with torch.no_grad():
            model.eval()
            dup_h = hist.unsqueeze(1).expand(-1, m, -1, -1)
            dup_f = fut.unsqueeze(1).expand(-1, m, -1, -1)
            loss = mtio_loss_torch(model(dup_h), dup_f,
                                   model.video_width, model.video_height)
        return float(loss)

    def predict_batch(self, histories: np.ndarray) -> np.ndarray:
        """Duplicated-history head predictions for (B, history_len, 2) input."""
        check_is_fitted(self, "model_")
        histories = np.asarray(histories, dtype=np.float64)
        dup = np.repeat(histories[:, None], self.config_.m_heads, axis=1)
        return self.model_.predict_array(dup)

    def predict_set(self, history: Trajectory) -> PredictionSet:
        """All M head trajectories for one duplicated history."""
        check_is_fitted(self, "model_")
        return self.model_.predict_duplicated(history)

    def predict(self, history: Trajectory) -> Trajectory:
        """Ensembled future trajectory for one history."""
        check_is_fitted(self, "model_")
        preds = self.predict_batch(history.xy[None])
        xy = ensemble_xy(preds[0], self.video_width, self.video_height)
        return Trajectory(xy, history.timestep_duration)

    def score(self, dataset: WindowedDataset, fov: FieldOfView | None = None,
              grid: TileGrid | None = None) -> float:
        """Mean tile-mask IoU of ensembled predictions over all horizon steps."""
        per_step = evaluate_accuracy(self, dataset, fov or FieldOfView(),
                                     grid or self._default_grid())
        return float(np.mean(per_step))

    def _default_grid(self) -> TileGrid:
        return TileGrid(video_width=self.video_width, video_height=self.video_height)


def _mask_iou_per_step(pred_xy: np.ndarray, truth_xy: np.ndarray, fov: FieldOfView,
                       grid: TileGrid) -> np.ndarray:
    from .geometry import ViewportPoint

    steps = pred_xy.shape[0]
    out = np.empty(steps)
    for j in range(steps):
        pm = viewport_tile_mask(ViewportPoint(*pred_xy[j]), fov, grid)
        tm = viewport_tile_mask(ViewportPoint(*truth_xy[j]), fov, grid)
        out[j] = iou(pm, tm)
    return out


def evaluate_accuracy(forecaster: ViewportForecaster, dataset: WindowedDataset,
                      fov: FieldOfView, grid: TileGrid,
                      horizon_steps: int | None = None) -> np.ndarray:
    """Mean IoU between ensembled predictions and truth, per horizon step."""
    check_is_fitted(forecaster, "model_")
    steps = horizon_steps or forecaster.config_.horizon
    preds = forecaster.predict_batch(dataset.histories)
    ensembled = ensemble_xy(preds, grid.video_width, grid.video_height)
    scores = np.empty((len(dataset), steps))
    for i in range(len(dataset)):
        scores[i] = _mask_iou_per_step(ensembled[i, :steps], dataset.futures[i, :steps],
                                       fov, grid)
    return scores.mean(axis=0)


def accuracy_by_family(forecaster: ViewportForecaster, dataset: WindowedDataset,
                       fov: FieldOfView, grid: TileGrid) -> dict[str, np.ndarray]:
    """Per-family accuracy curves, for trained-versus-unseen reporting."""
    return {
        family: evaluate_accuracy(forecaster, dataset.subset(family), fov, grid)
        for family in sorted(set(dataset.families.tolist()))
    }


def per_head_accuracy(forecaster: ViewportForecaster, dataset: WindowedDataset,
                      fov: FieldOfView, grid: TileGrid) -> np.ndarray:
    """Mean IoU of each head's own (un-ensembled) predictions, shape (M,)."""
    check_is_fitted(forecaster, "model_")
    preds = forecaster.predict_batch(dataset.histories)
    m = forecaster.config_.m_heads
    out = np.empty(m)
    for head in range(m):
        scores = [
            _mask_iou_per_step(preds[i, head], dataset.futures[i], fov, grid).mean()
            for i in range(len(dataset))
        ]
        out[head] = float(np.mean(scores))
    return out


def save_forecaster(path, forecaster: ViewportForecaster) -> None:
    """Write a self-describing checkpoint: config echo, seed, named parameters."""
    check_is_fitted(forecaster, "model_")
    payload = {
        "format": "tilecast.viewport-forecaster",
        "version": 1,
        "params": forecaster.get_params(),
        "seed": forecaster.seed,
        "timestep_duration": forecaster.timestep_duration_,
        "loss_log": forecaster.loss_log_,
        "val_log": forecaster.val_log_,
        "state_dict": forecaster.model_.state_dict(),
    }
    torch.save(payload, Path(path))


def load_forecaster(path) -> ViewportForecaster:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != "tilecast.viewport-forecaster":
        raise ValueError(f"{path} is not a viewport forecaster checkpoint")
    forecaster = ViewportForecaster(**payload["params"])
    model = build_model(forecaster._config(), forecaster.video_width,
                        forecaster.video_height, forecaster.seed)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    forecaster.model_ = model
    forecaster.config_ = forecaster._config()
    forecaster.loss_log_ = payload["loss_log"]
    forecaster.val_log_ = payload["val_log"]
    forecaster.timestep_duration_ = payload["timestep_duration"]
    return forecaster
