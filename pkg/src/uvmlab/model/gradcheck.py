"""Finite-difference verification of the hand-written backward pass."""

from __future__ import annotations

import numpy as np

from .network import Model, ModelConfig, loss_and_grads


def _loss(model: Model, idx, labels) -> float:
    return loss_and_grads(model, idx, labels)[0]


def tensor_errors(
    model_cfg: ModelConfig,
    epsilon: float = 1e-5,
    batch: int = 3,
    seed: int = 0,
    corrupt: str | None = None,
) -> dict[str, float]:
    """Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||) per parameter tensor.

    ``corrupt`` names a tensor whose analytic gradient gets its sign flipped,
    which must make the check fail.
    """
    rng = np.random.default_rng(seed)
    model = Model.init(model_cfg, rng=rng)
    n_feat = len(model_cfg.schema.names)
    idx = rng.integers(0, model_cfg.schema.buckets, size=(batch, model_cfg.seq_len, n_feat))
    labels = rng.integers(0, model_cfg.num_classes, size=batch)
    _, grads, _ = loss_and_grads(model, idx, labels)
    if corrupt is not None:
        grads[corrupt] = -grads[corrupt]

    errors = {}
    for name, p in model.params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = _loss(model, idx, labels)
            flat[i] = orig - epsilon
            down = _loss(model, idx, labels)
            flat[i] = orig
            nflat[i] = (up - down) / (2 * epsilon)
        a, n = grads[name], numeric
        denom = np.linalg.norm(a) + np.linalg.norm(n)
        diff = np.linalg.norm(a - n)
        errors[name] = float(diff / denom) if denom > 1e-10 else float(diff)
    return errors


def gradient_check(
    model_cfg: ModelConfig,
    epsilon: float = 1e-5,
    seed: int = 0,
    corrupt: str | None = None,
) -> float:
    """Max relative error over all parameter tensors (double precision).

    HLSH is piecewise in its inputs, so a perturbation may flip a hash bucket;
    use full or bypass attention for a clean check.
    """
    if model_cfg.model_dim > 8 or model_cfg.seq_len > 6:
        raise ValueError("gradient_check is meant for tiny configs (model_dim <= 8, seq_len <= 6)")
    return max(tensor_errors(model_cfg, epsilon, seed=seed, corrupt=corrupt).values())
