"""Training recipe: L1 objective, Adam, linear warmup + cosine annealing,
and a fully seeded epoch loop (shuffle, crops, flips and updates are all
deterministic given the seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import NonFiniteError, Tensor, backward, record
from . import ops
from .network import MambaUIE

__all__ = ["TrainConfig", "OptimizerState", "TrainingHalt", "l1_loss",
           "lr_at", "adam_step", "train_loop", "TrainResult"]


@dataclass
class TrainConfig:
    lr0: float = 5e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 800
    batch: int = 8
    warmup_epochs: int = 3
    lr_min: float = 1e-6
    crop: int = 64
    seed: int = 0
    checkpoint_every: int = 100

    def __post_init__(self):
        if not (0.0 < self.lr_min < self.lr0):
            raise ValueError("need 0 < lr_min < lr0")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ValueError("need warmup_epochs < epochs")


class TrainingHalt(RuntimeError):
    """Training stopped on a non-finite loss or gradient."""


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference (subgradient 0 at ties)."""
    if pred.shape != target.shape:
        raise ops.ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return ops.mean_all(ops.absolute(ops.sub(pred, target)))


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Learning rate at a (fractional) epoch: linear warmup, then cosine
    annealing from lr0 down to lr_min."""
    if not (0.0 <= epoch <= cfg.epochs):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if epoch < cfg.warmup_epochs:
        return cfg.lr0 * epoch / cfg.warmup_epochs
    span = cfg.epochs - cfg.warmup_epochs
    progress = (epoch - cfg.warmup_epochs) / span
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """Adam first/second moments per parameter plus the shared step counter."""

    moments: dict = field(default_factory=dict)  # name -> [m, v]
    t: int = 0


def adam_step(params, grads, state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place on the parameter tensors.

    ``params`` maps name -> Tensor, ``grads`` maps name -> ndarray (missing
    or zero grads leave the parameter untouched).  Raises TrainingHalt on a
    non-finite gradient.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingHalt(
                f"non-finite gradient for {name!r} at step {state.t + 1} "
                f"(|g|_max={np.max(np.abs(g))!r})")
    state.t += 1
    t = state.t
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.moments:
            state.moments[name] = [np.zeros_like(p.data), np.zeros_like(p.data)]
        m, v = state.moments[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / corr1) / (np.sqrt(v / corr2) + eps)
        p.data -= (lr * update).astype(p.data.dtype)


@dataclass
class TrainResult:
    history: list           # per-epoch dicts: epoch, loss, lr
    steps: int
    final_loss: float


def _make_batch(pairs, indices, crop: int, rng, dtype):
    raws, refs = [], []
    for i in indices:
        raw, ref = pairs[i].raw, pairs[i].reference
        _, h, w = raw.shape
        if h < crop or w < crop:
            raise ValueError(f"pair {pairs[i].id!r} smaller than crop {crop}")
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        rc = raw[:, top:top + crop, left:left + crop]
        fc = ref[:, top:top + crop, left:left + crop]
        if rng.random() < 0.5:  # horizontal flip
            rc = rc[:, :, ::-1]
            fc = fc[:, :, ::-1]
        raws.append(np.ascontiguousarray(rc, dtype=dtype))
        refs.append(np.ascontiguousarray(fc, dtype=dtype))
    return np.stack(raws), np.stack(refs)


def train_loop(model: MambaUIE, dataset, cfg: TrainConfig, out_dir=None,
               log_path=None, max_steps=None, stop_loss=None) -> TrainResult:
    """Seeded epoch loop: shuffle -> crop/flip batches -> forward -> L1 ->
    backward -> Adam at the scheduled learning rate.

    Emits one ``epoch=<n> loss=<f> lr=<f>`` line per epoch on stdout (and to
    ``log_path`` when given); checkpoints every ``cfg.checkpoint_every``
    epochs into ``out_dir``.  ``max_steps``/``stop_loss`` bound the run for
    probe-style training.
    """
    if len(dataset.pairs) == 0:
        raise ValueError("dataset is empty")
    if cfg.crop % model.cfg.multiple:
        raise ValueError(
            f"crop {cfg.crop} must be a multiple of {model.cfg.multiple}")
    from .serialization import save_weights

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = OptimizerState()
    b1, b2 = cfg.betas
    n = len(dataset.pairs)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch))
    history = []
    log_f = open(log_path, "a") if log_path else None
    step = 0
    final_loss = math.inf
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for s in range(steps_per_epoch):
                idx = order[s * cfg.batch:(s + 1) * cfg.batch]
                if len(idx) == 0:
                    continue
                raw, ref = _make_batch(dataset.pairs, idx, cfg.crop, rng,
                                       model.dtype)
                lr = lr_at(min(epoch + s / steps_per_epoch, float(cfg.epochs)),
                           cfg)
                try:
                    with record() as tape:
                        pred = model.forward(Tensor(raw))
                        loss = l1_loss(pred, Tensor(ref))
                        loss_val = loss.item()
                        if not math.isfinite(loss_val):
                            raise NonFiniteError("loss is not finite")
                        backward(tape, loss)
                except NonFiniteError as exc:
                    ids = [dataset.pairs[i].id for i in idx]
                    raise TrainingHalt(
                        f"non-finite loss at epoch {epoch} step {s} "
                        f"(batch ids: {ids}): {exc}") from exc
                grads = {name: p.grad for name, p in params.items()
                         if p.grad is not None}
                adam_step(params, grads, state, lr, b1, b2, cfg.eps)
                for p in params.values():
                    p.zero_grad()
                epoch_losses.append(loss_val)
                final_loss = loss_val
                step += 1
                if max_steps is not None and step >= max_steps:
                    break
            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else math.nan
            line = f"epoch={epoch} loss={mean_loss!r} lr={lr_at(float(epoch), cfg)!r}"
            print(line)
            if log_f:
                log_f.write(line + "\n")
                log_f.flush()
            history.append({"epoch": epoch, "loss": mean_loss,
                            "lr": lr_at(float(epoch), cfg)})
            if out_dir is not None and (epoch + 1) % cfg.checkpoint_every == 0:
                save_weights(params, Path(out_dir) / f"ckpt_{epoch + 1:05d}.muie")
            if max_steps is not None and step >= max_steps:
                break
            if stop_loss is not None and mean_loss < stop_loss:
                break
    finally:
        if log_f:
            log_f.close()
    return TrainResult(history=history, steps=step, final_loss=final_loss)
