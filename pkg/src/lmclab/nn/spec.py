"""Architecture descriptions and parameter accounting.

A ModelSpec pins down the exact layer list of a network, which in turn fixes
the canonical layer-major flattening order of its parameter vector. Three
families are supported:

  mlp            dense -> [bn] -> relu blocks, then a linear head
  conv-plain     3x3 conv -> [bn] -> relu blocks, global average pool, head
  conv-residual  like conv-plain, but post-stem blocks pair up under
                 identity skips (out = relu(block(block(x)) + x))
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

KINDS = ("mlp", "conv-plain", "conv-residual")


class SpecError(ValueError):
    """Invalid architecture description."""


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of a network architecture.

    widths lists the output size of each hidden/conv block; batch_norm flags
    one BN layer per block. input_shape is (D,) for mlp or (C, H, W) for the
    conv kinds. The derived param_count is the exact length of the flattened
    parameter vector.
    """

    kind: str
    widths: tuple[int, ...]
    batch_norm: tuple[bool, ...]
    input_shape: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "batch_norm", tuple(bool(b) for b in self.batch_norm))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.kind not in KINDS:
            raise SpecError(f"unknown architecture kind {self.kind!r}")
        if not self.widths:
            raise SpecError("widths must list at least one block")
        if any(w <= 0 for w in self.widths):
            raise SpecError(f"widths must be positive, got {self.widths}")
        if len(self.batch_norm) != len(self.widths):
            raise SpecError("batch_norm flags must match widths in length")
        if self.num_classes <= 0:
            raise SpecError("num_classes must be positive")
        if any(d <= 0 for d in self.input_shape):
            raise SpecError(f"input_shape must be positive, got {self.input_shape}")
        if self.kind == "mlp":
            if len(self.input_shape) != 1:
                raise SpecError("mlp input_shape must be (D,)")
        else:
            if len(self.input_shape) != 3:
                raise SpecError(f"{self.kind} input_shape must be (C, H, W)")
        if self.kind == "conv-residual":
            self._check_residual_joins()

    def _check_residual_joins(self):
        # Block 0 is the stem; blocks (1,2), (3,4), ... sit under identity
        # skips, so channels entering a pair must equal channels leaving it.
        channels = (self.input_shape[0],) + self.widths
        for p in range(1, len(self.widths) - 1, 2):
            if channels[p] != channels[p + 2]:
                raise SpecError(
                    f"residual join mismatch at blocks {p}-{p + 1}: "
                    f"skip carries {channels[p]} channels but the pair emits {channels[p + 2]}"
                )

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def input_dim(self) -> int:
        return math.prod(self.input_shape)

    @property
    def param_count(self) -> int:
        return sum(math.prod(shape) for _, shape in param_layout(self))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "widths": list(self.widths),
            "batch_norm": list(self.batch_norm),
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            kind=d["kind"],
            widths=tuple(d["widths"]),
            batch_norm=tuple(d["batch_norm"]),
            input_shape=tuple(d["input_shape"]),
            num_classes=int(d["num_classes"]),
        )


def param_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Named shapes of every parameter array in canonical flattening order.

    Order is layer-major: per block W, b, then gamma, beta when the block has
    batch norm; the linear head comes last. This order is the contract for
    ParamVector flattening and the checkpoint file layout.
    """
    layout: list[tuple[str, tuple[int, ...]]] = []
    if spec.kind == "mlp":
        dims = (spec.input_dim,) + spec.widths
        for i, width in enumerate(spec.widths):
            layout.append((f"dense{i}.W", (dims[i], width)))
            layout.append((f"dense{i}.b", (width,)))
            if spec.batch_norm[i]:
                layout.append((f"bn{i}.gamma", (width,)))
                layout.append((f"bn{i}.beta", (width,)))
    else:
        channels = (spec.input_shape[0],) + spec.widths
        for i, width in enumerate(spec.widths):
            layout.append((f"conv{i}.W", (width, channels[i], 3, 3)))
            layout.append((f"conv{i}.b", (width,)))
            if spec.batch_norm[i]:
                layout.append((f"bn{i}.gamma", (width,)))
                layout.append((f"bn{i}.beta", (width,)))
    layout.append(("head.W", (spec.widths[-1], spec.num_classes)))
    layout.append(("head.b", (spec.num_classes,)))
    return layout


def bn_layout(spec: ModelSpec) -> list[int]:
    """Feature counts of the BN layers in canonical order (empty if BN-free)."""
    return [w for w, flag in zip(spec.widths, spec.batch_norm) if flag]
