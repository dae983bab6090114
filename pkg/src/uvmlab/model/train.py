"""Mini-batch training loop with Adam and per-epoch validation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..trace import SequenceDataset
from .features import token_indices
from .network import (
    CLAMP_LIMIT,
    Model,
    ModelConfig,
    Quant,
    forward,
    loss_and_grads,
    softmax,
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    train_fraction: float = 0.8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    @property
    def val_fraction(self) -> float:
        return 1.0 - self.train_fraction


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_top1: float


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            params[k] -= c.lr * (m / corr1) / (np.sqrt(v / corr2) + c.eps)


def evaluate_top1(model: Model, dataset: SequenceDataset, batch_size: int = 512) -> float:
    if len(dataset) == 0:
        return float("nan")
    idx = token_indices(model.config.schema, dataset.tokens)
    correct = 0
    for s in range(0, len(idx), batch_size):
        logits, _ = forward(model, idx[s : s + batch_size])
        pred = np.argmax(softmax(logits), axis=-1)
        correct += int(np.sum(pred == dataset.labels[s : s + batch_size]))
    return correct / len(dataset)


def chronological_split(dataset: SequenceDataset, train_fraction: float):
    cut = int(round(len(dataset) * train_fraction))
    return dataset.subset(slice(0, cut)), dataset.subset(slice(cut, None))


def train(
    dataset: SequenceDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig = TrainConfig(),
    val_dataset: SequenceDataset | None = None,
    model: Model | None = None,
) -> tuple[Model, list[EpochStats]]:
    """Fit a model; without ``val_dataset`` the dataset is split by ``train_fraction``.

    Runs are bitwise reproducible for a fixed ``train_cfg.seed`` and model seed.
    """
    if not 0.0 < train_cfg.train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    if val_dataset is None:
        train_ds, val_ds = chronological_split(dataset, train_cfg.train_fraction)
    else:
        train_ds, val_ds = dataset, val_dataset
    if len(train_ds) == 0:
        raise ValueError("empty training dataset")
    vocab = dataset.vocab
    if model_cfg.num_classes == 0:
        model_cfg = replace(model_cfg, num_classes=vocab.num_classes)
    if model_cfg.num_classes != vocab.num_classes:
        raise ValueError(f"num_classes {model_cfg.num_classes} != vocabulary size {vocab.num_classes}")
    if train_ds.seq_len != model_cfg.seq_len:
        raise ValueError(f"dataset windows have length {train_ds.seq_len}, model expects {model_cfg.seq_len}")

    if model is None:
        model = Model.init(model_cfg, vocab)
    else:
        model = Model(model_cfg, {k: v.copy() for k, v in model.params.items()}, vocab)
    opt = Adam(model.params, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    idx = token_indices(model_cfg.schema, train_ds.tokens)
    labels = train_ds.labels
    clamp = model_cfg.quant is not Quant.NONE
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(labels))
        total, seen = 0.0, 0
        for s in range(0, len(order), train_cfg.batch_size):
            b = order[s : s + train_cfg.batch_size]
            loss, grads, _ = loss_and_grads(model, idx[b], labels[b])
            opt.step(model.params, grads)
            if clamp:
                for v in model.params.values():
                    np.clip(v, -CLAMP_LIMIT, CLAMP_LIMIT, out=v)
            total += loss * len(b)
            seen += len(b)
        history.append(EpochStats(epoch, total / seen, evaluate_top1(model, val_ds)))
    return model, history
