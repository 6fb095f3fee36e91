"""Network assembly and the forward/backward engine.

A Network is built once from a ModelSpec and holds no parameters itself:
parameters travel as a flat vector (canonical layer-major order, see
spec.param_layout) and BN running statistics as a list of (mean, var) pairs.
This keeps checkpoints immutable and evaluation pure, so shared read-only
checkpoints can be evaluated from many threads.
"""
from __future__ import annotations

import math

import numpy as np

from . import layers
from .spec import ModelSpec, param_layout, bn_layout

BN_MOMENTUM = 0.1  # running = (1 - m) * running + m * batch


class _DenseBlock:
    def __init__(self, n_in, n_out, bn, relu):
        self.param_shapes = [(n_in, n_out), (n_out,)]
        if bn:
            self.param_shapes += [(n_out,), (n_out,)]
        self.bn = bn
        self.relu = relu
        self.bn_count = 1 if bn else 0

    def forward(self, x, params, bn_stats, mode):
        y, x_in = layers.dense_forward(x, params[0], params[1])
        bn_cache = None
        batch_stats = []
        if self.bn:
            if mode == "train":
                y, bn_cache, stats = layers.bn_forward_train(y, params[2], params[3])
                batch_stats.append(stats)
            else:
                y = layers.bn_forward_eval(y, params[2], params[3], *bn_stats[0])
        mask = None
        if self.relu:
            y, mask = layers.relu_forward(y)
        return y, (x_in, bn_cache, mask), batch_stats

    def backward(self, dy, cache, params):
        x_in, bn_cache, mask = cache
        if self.relu:
            dy = layers.relu_backward(dy, mask)
        bn_grads = []
        if self.bn:
            dy, bn_grads = layers.bn_backward(dy, bn_cache)
        dx, dense_grads = layers.dense_backward(dy, x_in, params[0])
        return dx, dense_grads + bn_grads


class _ConvBlock:
    def __init__(self, c_in, c_out, bn, relu):
        self.param_shapes = [(c_out, c_in, 3, 3), (c_out,)]
        if bn:
            self.param_shapes += [(c_out,), (c_out,)]
        self.bn = bn
        self.relu = relu
        self.bn_count = 1 if bn else 0

    def forward(self, x, params, bn_stats, mode):
        y, xp = layers.conv3x3_forward(x, params[0], params[1])
        bn_cache = None
        batch_stats = []
        if self.bn:
            if mode == "train":
                y, bn_cache, stats = layers.bn_forward_train(y, params[2], params[3])
                batch_stats.append(stats)
            else:
                y = layers.bn_forward_eval(y, params[2], params[3], *bn_stats[0])
        mask = None
        if self.relu:
            y, mask = layers.relu_forward(y)
        return y, (xp, bn_cache, mask), batch_stats

    def backward(self, dy, cache, params):
        xp, bn_cache, mask = cache
        if self.relu:
            dy = layers.relu_backward(dy, mask)
        bn_grads = []
        if self.bn:
            dy, bn_grads = layers.bn_backward(dy, bn_cache)
        dx, conv_grads = layers.conv3x3_backward(dy, xp, params[0])
        return dx, conv_grads + bn_grads


class _ResidualPair:
    """Two conv blocks under an identity skip: out = relu(b2(b1(x)) + x)."""

    def __init__(self, first: _ConvBlock, second: _ConvBlock):
        assert first.relu and not second.relu
        self.first = first
        self.second = second
        self.param_shapes = first.param_shapes + second.param_shapes
        self.bn_count = first.bn_count + second.bn_count

    def _split(self, seq):
        k = len(self.first.param_shapes)
        return seq[:k], seq[k:]

    def forward(self, x, params, bn_stats, mode):
        p1, p2 = self._split(params)
        s1 = bn_stats[: self.first.bn_count]
        s2 = bn_stats[self.first.bn_count:]
        h, cache1, stats1 = self.first.forward(x, p1, s1, mode)
        h, cache2, stats2 = self.second.forward(h, p2, s2, mode)
        out, mask = layers.relu_forward(h + x)
        return out, (cache1, cache2, mask), stats1 + stats2

    def backward(self, dy, cache, params):
        cache1, cache2, mask = cache
        p1, p2 = self._split(params)
        ds = layers.relu_backward(dy, mask)
        dh, g2 = self.second.backward(ds, cache2, p2)
        dx, g1 = self.first.backward(dh, cache1, p1)
        return dx + ds, g1 + g2


class _GlobalAvgPool:
    param_shapes: list = []
    bn_count = 0

    def forward(self, x, params, bn_stats, mode):
        y, shape = layers.gap_forward(x)
        return y, shape, []

    def backward(self, dy, cache, params):
        return layers.gap_backward(dy, cache), []


def _build_blocks(spec: ModelSpec) -> list:
    blocks: list = []
    if spec.kind == "mlp":
        dims = (spec.input_dim,) + spec.widths
        for i, width in enumerate(spec.widths):
            blocks.append(_DenseBlock(dims[i], width, spec.batch_norm[i], relu=True))
    else:
        channels = (spec.input_shape[0],) + spec.widths
        conv = [
            _ConvBlock(channels[i], w, spec.batch_norm[i], relu=True)
            for i, w in enumerate(spec.widths)
        ]
        if spec.kind == "conv-residual":
            blocks.append(conv[0])  # stem
            i = 1
            while i + 1 < len(conv):
                conv[i + 1].relu = False  # relu moves after the skip add
                blocks.append(_ResidualPair(conv[i], conv[i + 1]))
                i += 2
            if i < len(conv):
                blocks.append(conv[i])
        else:
            blocks.extend(conv)
        blocks.append(_GlobalAvgPool())
    blocks.append(_DenseBlock(spec.widths[-1], spec.num_classes, bn=False, relu=False))
    return blocks


class Network:
    """Stateless engine for one architecture; parameters are passed in."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.blocks = _build_blocks(spec)
        self._layout = param_layout(spec)
        self._slots: list[tuple[int, tuple[int, ...]]] = []
        offset = 0
        for _, shape in self._layout:
            self._slots.append((offset, shape))
            offset += math.prod(shape)
        self.param_count = offset
        assert self.param_count == spec.param_count
        self.bn_dims = bn_layout(spec)

    # -- parameter vector layout -------------------------------------------------

    def unflatten(self, flat: np.ndarray) -> list[np.ndarray]:
        """Views into `flat`, one per parameter array, in canonical order."""
        if flat.shape != (self.param_count,):
            raise ValueError(
                f"parameter vector has length {flat.shape}, expected ({self.param_count},)"
            )
        return [
            flat[off:off + math.prod(shape)].reshape(shape)
            for off, shape in self._slots
        ]

    def flatten(self, arrays: list[np.ndarray]) -> np.ndarray:
        if len(arrays) != len(self._slots):
            raise ValueError(f"expected {len(self._slots)} arrays, got {len(arrays)}")
        for a, (_, shape) in zip(arrays, self._slots):
            if a.shape != shape:
                raise ValueError(f"array shape {a.shape} does not match slot {shape}")
        return np.concatenate([a.ravel() for a in arrays])

    # -- initialization ------------------------------------------------------------

    def init_params(self, seed: int) -> np.ndarray:
        """Scaled-uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

        BN gains start at 1, shifts at 0. The draw order equals the canonical
        layout order, so (spec, seed) fixes the vector bitwise.
        """
        rng = np.random.Generator(np.random.PCG64(seed))
        flat = np.empty(self.param_count, dtype=np.float32)
        views = self.unflatten(flat)
        for (name, shape), view in zip(self._layout, views):
            if name.endswith(".gamma"):
                view[...] = 1.0
            elif name.endswith(".beta"):
                view[...] = 0.0
            else:
                if name.endswith(".W"):
                    fan_in = math.prod(shape) // shape[-1] if len(shape) == 2 else math.prod(shape[1:])
                else:  # bias uses its layer's fan-in
                    fan_in = self._bias_fan_in(name)
                bound = 1.0 / math.sqrt(fan_in)
                view[...] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        return flat

    def _bias_fan_in(self, bias_name: str) -> int:
        w_name = bias_name[:-2] + ".W"
        for name, shape in self._layout:
            if name == w_name:
                return math.prod(shape) // shape[-1] if len(shape) == 2 else math.prod(shape[1:])
        raise KeyError(bias_name)

    def init_bn_stats(self, dtype=np.float32) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (np.zeros(d, dtype=dtype), np.ones(d, dtype=dtype))
            for d in self.bn_dims
        ]

    # -- forward / backward ---------------------------------------------------------

    def _prepare_input(self, x: np.ndarray, dtype) -> np.ndarray:
        x = np.asarray(x)
        if self.spec.kind == "mlp":
            x = x.reshape(x.shape[0], -1)
            if x.shape[1] != self.spec.input_dim:
                raise ValueError(
                    f"input has {x.shape[1]} features, spec wants {self.spec.input_dim}"
                )
        else:
            if x.ndim == 2:
                x = x.reshape((x.shape[0],) + self.spec.input_shape)
            if x.shape[1:] != self.spec.input_shape:
                raise ValueError(
                    f"input shape {x.shape[1:]} does not match spec {self.spec.input_shape}"
                )
        return x.astype(dtype, copy=False)

    def forward(self, params: np.ndarray, x: np.ndarray, bn_stats=None, mode: str = "eval"):
        """Logits plus, in train mode, the per-BN-layer batch statistics.

        Eval mode is pure: BN layers read the supplied running stats and
        nothing is updated. Train mode normalizes by batch statistics and
        returns them; applying the EMA update is the caller's job.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if bn_stats is None:
            bn_stats = self.init_bn_stats(dtype=params.dtype)
        x = self._prepare_input(x, params.dtype)
        views = self.unflatten(params)
        logits, _, batch_stats = self._run(views, x, bn_stats, mode, want_caches=False)
        return logits, batch_stats

    def _run(self, views, x, bn_stats, mode, want_caches):
        caches = []
        batch_stats = []
        p_idx = 0
        s_idx = 0
        for block in self.blocks:
            n_p = len(block.param_shapes)
            block_params = views[p_idx:p_idx + n_p]
            block_stats = bn_stats[s_idx:s_idx + block.bn_count]
            x, cache, stats = block.forward(x, block_params, block_stats, mode)
            if want_caches:
                caches.append(cache)
            batch_stats.extend(stats)
            p_idx += n_p
            s_idx += block.bn_count
        return x, caches, batch_stats

    def loss_and_grad(self, params: np.ndarray, x: np.ndarray, labels: np.ndarray):
        """Train-mode mean CE loss, flat gradient, and BN batch statistics."""
        x = self._prepare_input(x, params.dtype)
        labels = np.asarray(labels)
        if len(labels) == 0:
            raise ValueError("batch is empty")
        views = self.unflatten(params)
        bn_stats = self.init_bn_stats(dtype=params.dtype)  # unused in train mode
        logits, caches, batch_stats = self._run(views, x, bn_stats, "train", want_caches=True)
        loss, dlogits = layers.softmax_cross_entropy(logits, labels)

        grad = np.zeros_like(params)
        grad_views = self.unflatten(grad)
        dy = dlogits
        p_idx = len(views)
        for block, cache in zip(reversed(self.blocks), reversed(caches)):
            n_p = len(block.param_shapes)
            p_idx -= n_p
            block_params = views[p_idx:p_idx + n_p]
            dy, grads = block.backward(dy, cache, block_params)
            for slot, g in zip(grad_views[p_idx:p_idx + n_p], grads):
                slot[...] = g
        return loss, grad, batch_stats

    def loss(self, params: np.ndarray, x: np.ndarray, labels: np.ndarray) -> float:
        """Train-mode loss only; the evaluation path for finite differencing."""
        x = self._prepare_input(x, params.dtype)
        views = self.unflatten(params)
        bn_stats = self.init_bn_stats(dtype=params.dtype)
        logits, _, _ = self._run(views, x, bn_stats, "train", want_caches=False)
        loss, _ = layers.softmax_cross_entropy(logits, np.asarray(labels))
        return loss

    def relu_pattern(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Concatenated boolean activation states of every ReLU (train mode).

        A finite difference only estimates a derivative where the loss is
        smooth over the whole step interval; comparing patterns at the
        perturbed points detects kink crossings that invalidate it.
        """
        x = self._prepare_input(x, params.dtype)
        views = self.unflatten(params)
        bn_stats = self.init_bn_stats(dtype=params.dtype)
        _, caches, _ = self._run(views, x, bn_stats, "train", want_caches=True)
        bits: list[np.ndarray] = []

        def collect(block, cache):
            if isinstance(block, _ResidualPair):
                collect(block.first, cache[0])
                collect(block.second, cache[1])
                bits.append(cache[2].ravel())
            elif isinstance(block, (_DenseBlock, _ConvBlock)) and block.relu:
                bits.append(cache[2].ravel())

        for block, cache in zip(self.blocks, caches):
            collect(block, cache)
        return np.concatenate(bits) if bits else np.zeros(0, dtype=bool)

    # -- evaluation helpers -----------------------------------------------------------

    def predict_proba(self, params, x, bn_stats=None, batch_size: int = 1024) -> np.ndarray:
        out = []
        for start in range(0, len(x), batch_size):
            logits, _ = self.forward(params, x[start:start + batch_size], bn_stats, mode="eval")
            out.append(layers.softmax(logits))
        return np.concatenate(out, axis=0)

    def evaluate(self, params, x, labels, bn_stats=None, batch_size: int = 1024):
        """Eval-mode (loss, accuracy) over a full set, computed in chunks."""
        labels = np.asarray(labels)
        total_loss = 0.0
        correct = 0
        for start in range(0, len(x), batch_size):
            xb = x[start:start + batch_size]
            yb = labels[start:start + batch_size]
            logits, _ = self.forward(params, xb, bn_stats, mode="eval")
            loss, _ = layers.softmax_cross_entropy(logits, yb)
            total_loss += loss * len(yb)
            correct += int((logits.argmax(axis=1) == yb).sum())
        n = len(labels)
        return total_loss / n, correct / n

    def ema_update(self, bn_stats, batch_stats, momentum: float = BN_MOMENTUM):
        """Exponential moving average update of running BN statistics."""
        return [
            ((1.0 - momentum) * rm + momentum * bm, (1.0 - momentum) * rv + momentum * bv)
            for (rm, rv), (bm, bv) in zip(bn_stats, batch_stats)
        ]
