"""Adam training loop with plateau-based learning-rate halving.

The epoch loss is the mean of the batch losses.  When the best epoch loss
has not improved for ``plateau_epochs`` consecutive epochs the learning
rate is multiplied by ``lr_decay`` and the patience counter restarts.
Shuffling uses the pinned generator, so a seed fixes the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import ClipFeatures
from .model import ModelDims, ModelParams, backward, init_params
from .rng import DeterministicRng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    plateau_epochs: int = 5
    lr_decay: float = 0.5
    max_epochs: int = 50
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate, max_epochs and batch_size must be positive")
        if self.plateau_epochs <= 0:
            raise ValueError("plateau_epochs must be positive")
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class VideoSample:
    """One training row: per-clip features plus the MOS label."""

    clips: tuple[ClipFeatures, ...]
    label: float
    video_id: str = ""


class PlateauSchedule:
    """Tracks the best loss; decays the LR after `patience` stale epochs."""

    def __init__(self, initial_lr: float, patience: int, factor: float):
        self.lr = initial_lr
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self._stale = 0

    def step(self, epoch_loss: float) -> float:
        if epoch_loss < self.best:
            self.best = epoch_loss
            self._stale = 0
        else:
            self._stale += 1
            if self._stale >= self.patience:
                self.lr *= self.factor
                self._stale = 0
        return self.lr


class AdamOptimizer:
    def __init__(self, params: ModelParams):
        self._m = {n: np.zeros_like(t) for n, t in params.tensors()}
        self._v = {n: np.zeros_like(t) for n, t in params.tensors()}
        self._t = 0

    def step(self, params: ModelParams, grads: ModelParams, lr: float) -> None:
        self._t += 1
        correction1 = 1.0 - ADAM_BETA1 ** self._t
        correction2 = 1.0 - ADAM_BETA2 ** self._t
        for name, tensor in params.tensors():
            g = getattr(grads, name)
            m = self._m[name]
            v = self._v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            tensor -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass(eq=False)
class TrainResult:
    params: ModelParams
    epoch_losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)


def evaluate_loss(params: ModelParams, dataset: Sequence[VideoSample]) -> float:
    """MSE of video-level predictions over a dataset (no gradients)."""
    from .model import mse_loss, score_video

    preds = [score_video(params, sample.clips) for sample in dataset]
    return mse_loss(preds, [sample.label for sample in dataset])


def train(
    dataset: Sequence[VideoSample],
    cfg: TrainConfig,
    params: ModelParams | None = None,
    dims: ModelDims | None = None,
    plateau_dataset: Sequence[VideoSample] | None = None,
) -> TrainResult:
    """Fit the regressor on labeled videos; deterministic given cfg.seed.

    The plateau rule watches the train loss unless ``plateau_dataset`` is
    given, in which case that held-out set's loss drives the LR decay.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if params is None:
        if dims is None:
            raise ValueError("either params or dims must be given")
        params = init_params(dims, cfg.seed)

    optimizer = AdamOptimizer(params)
    schedule = PlateauSchedule(cfg.learning_rate, cfg.plateau_epochs, cfg.lr_decay)
    shuffler = DeterministicRng(cfg.seed)
    order = list(range(len(dataset)))
    result = TrainResult(params)

    lr = cfg.learning_rate
    for _ in range(cfg.max_epochs):
        shuffler.shuffle(order)
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [
                (dataset[i].clips, dataset[i].label)
                for i in order[start:start + cfg.batch_size]
            ]
            loss, grads = backward(batch, params)
            optimizer.step(params, grads, lr)
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        result.epoch_losses.append(epoch_loss)
        result.learning_rates.append(lr)
        if plateau_dataset is not None:
            plateau_loss = evaluate_loss(params, plateau_dataset)
        else:
            plateau_loss = epoch_loss
        lr = schedule.step(plateau_loss)
    return result
