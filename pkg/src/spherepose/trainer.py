"""SGD training loop with Nesterov momentum and a step learning-rate decay.

The update is the momentum-lookahead variant, applied exactly as written:

    v <- mu * v - lr * g
    w <- w + mu * v - lr * g

The learning rate is lr * decay^((epoch - 1) // decay_every) with 1-based
epochs, so with decay_every = 8 epochs 1-8 run at lr, 9-16 at lr*decay.

When grad_clip is set, the gradient is rescaled to global L2 norm at most
grad_clip before the velocity update.  A single oversized step can push
every encoder ReLU pre-activation negative at once, after which gradients
are identically zero and the model is stuck at the uniform distribution;
the cap bounds the step without touching the update law on healthy steps.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import head as hd
from .grids import nearest_index
from .model import Model
from .solids import SolidDataset

__all__ = ["TrainConfig", "train", "forward", "backward"]


@dataclass
class TrainConfig:
    lr: float = 0.015
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 16
    lr_decay: float = 0.1
    decay_every: int = 8
    seed: int = 0
    max_steps: int | None = None  # cap for smoke runs; None trains fully
    checkpoint_every: int = 5
    grad_clip: float | None = None  # global L2 norm cap; None disables

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** ((epoch - 1) // self.decay_every)


def forward(model: Model, images: np.ndarray, rng=None):
    """Logits and activation cache for a batch; see Model.forward."""
    return model.forward(images, rng)


def backward(model: Model, cache, dlogits: np.ndarray):
    """Parameter gradients from dLoss/dLogits; see Model.backward."""
    return model.backward(cache, dlogits)


def train(
    model: Model,
    dataset: SolidDataset,
    config: TrainConfig,
    checkpoint_path=None,
    log_path=None,
    verbose: bool = False,
) -> list[dict]:
    """Train in place; returns the per-epoch metric records.

    Deterministic given (model init, dataset, config.seed). Loss rows go
    to log_path as one JSON object per line when given; checkpoints are
    written every config.checkpoint_every epochs and at the end.
    """
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    targets = nearest_index(model.grid, dataset.labels)
    images = dataset.images

    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    t_start = time.monotonic()
    step = 0
    try:
        velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
        for epoch in range(1, config.epochs + 1):
            lr = config.lr_at(epoch)
            order = rng.permutation(n)
            losses = []
            grad_norms = []
            for lo in range(0, n, config.batch_size):
                if config.max_steps is not None and step >= config.max_steps:
                    break
                idx = order[lo : lo + config.batch_size]
                logits, cache = model.forward(images[idx], rng)
                batch_losses, dlogits = hd.cross_entropy_batch(logits, targets[idx])
                loss = float(batch_losses.mean())
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss {loss} at epoch {epoch} step {step}; "
                        "aborting before the parameters are poisoned"
                    )
                losses.append(loss)
                grads = model.backward(cache, dlogits / len(idx))
                norm = float(np.sqrt(sum(
                    np.vdot(g, g).real for g in grads.values()
                )))
                grad_norms.append(norm)
                if config.grad_clip is not None and norm > config.grad_clip:
                    scale = config.grad_clip / norm
                    for g in grads.values():
                        g *= scale
                mu = config.momentum
                for k, g in grads.items():
                    v = velocity[k]
                    v *= mu
                    v -= lr * g
                    model.params[k] += mu * v - lr * g
                step += 1
            record = {
                "epoch": epoch,
                "loss": float(np.mean(losses)) if losses else float("nan"),
                "lr": lr,
                "grad_norm": float(np.max(grad_norms)) if grad_norms else 0.0,
                "wall_time": time.monotonic() - t_start,
                "steps": step,
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if verbose:
                print(
                    f"epoch {epoch:3d}  loss {record['loss']:.4f}  lr {lr:g}",
                    flush=True,
                )
            if checkpoint_path and epoch % config.checkpoint_every == 0:
                model.save(checkpoint_path)
            if config.max_steps is not None and step >= config.max_steps:
                break
        if checkpoint_path:
            model.save(checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    return history
