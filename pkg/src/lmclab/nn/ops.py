"""Checkpoint-level operations: init, forward, loss/grad, SGD, BN reset."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import Checkpoint, CheckpointMeta
from .network import Network
from .spec import ModelSpec


@dataclass(frozen=True)
class Batch:
    """Inputs paired with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(
                f"inputs ({len(self.inputs)}) and labels ({len(self.labels)}) differ in length"
            )

    def __len__(self):
        return len(self.labels)


def init_model(spec: ModelSpec, seed: int) -> Checkpoint:
    """Fresh checkpoint; (spec, seed) fixes the parameter vector bitwise."""
    net = Network(spec)
    return Checkpoint(
        spec=spec,
        params=net.init_params(seed),
        bn_stats=tuple(net.init_bn_stats()),
        meta=CheckpointMeta(init_seed=seed),
    )


def forward(ckpt: Checkpoint, batch: Batch, mode: str = "eval") -> np.ndarray:
    """Logits for a batch. Pure in both modes: to apply the train-mode EMA
    update, use Network.loss_and_grad / Network.ema_update directly."""
    net = ckpt.network()
    logits, _ = net.forward(ckpt.params, batch.inputs, list(ckpt.bn_stats), mode=mode)
    return logits


def loss_and_grad(ckpt: Checkpoint, batch: Batch) -> tuple[float, np.ndarray]:
    """Train-mode mean cross-entropy and its flat gradient."""
    net = ckpt.network()
    loss, grad, _ = net.loss_and_grad(ckpt.params, batch.inputs, batch.labels)
    return loss, grad


def sgd_step(ckpt: Checkpoint, grad: np.ndarray, learning_rate: float) -> Checkpoint:
    """Plain SGD: params - lr * grad. Epoch bookkeeping stays with the caller."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    if grad.shape != ckpt.params.shape:
        raise ValueError(f"gradient length {grad.shape} != params {ckpt.params.shape}")
    return replace(ckpt, params=ckpt.params - np.float32(learning_rate) * grad)


def recompute_bn_stats(
    ckpt: Checkpoint,
    inputs: np.ndarray,
    passes: int = 1,
    batch_size: int = 256,
) -> Checkpoint:
    """Replace BN running stats with averages of batch statistics.

    Runs `passes` train-mode sweeps over `inputs` with parameters frozen and
    sets each BN layer's running (mean, var) to the plain average of its
    batch statistics. The result depends only on (params, inputs, batching),
    not on the current running stats, so a second call is a no-op.
    """
    if not ckpt.bn_stats:
        warnings.warn("model has no batch-norm layers; recompute_bn_stats is a no-op")
        return ckpt
    net = ckpt.network()
    sums = [
        (np.zeros(d, dtype=np.float64), np.zeros(d, dtype=np.float64))
        for d in net.bn_dims
    ]
    count = 0
    for _ in range(passes):
        for start in range(0, len(inputs), batch_size):
            xb = inputs[start:start + batch_size]
            _, batch_stats = net.forward(ckpt.params, xb, None, mode="train")
            for (sm, sv), (bm, bv) in zip(sums, batch_stats):
                sm += bm
                sv += bv
            count += 1
    new_stats = tuple(
        ((sm / count).astype(np.float32), (sv / count).astype(np.float32))
        for sm, sv in sums
    )
    return replace(ckpt, bn_stats=new_stats)
