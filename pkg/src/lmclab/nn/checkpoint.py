"""Checkpoints and their bit-exact binary file format.

Layout of a .lmck file:
  [offset] [size] [content]
  0        4      magic "LMCK"
  4        4      format version, u32 little-endian (currently 1)
  8        4      metadata length M, u32 little-endian
  12       M      metadata, UTF-8 JSON: {"spec": ..., "meta": ...}
  12+M     4*P    parameter values, float32 little-endian, canonical layout
  ...             per BN layer in order: running mean then running variance,
                  float32 little-endian
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .spec import ModelSpec, bn_layout
from .network import Network

MAGIC = b"LMCK"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


@dataclass(frozen=True)
class CheckpointMeta:
    """Provenance needed to re-derive a training run bit-exactly."""

    init_seed: int | None = None
    noise_seed: int | None = None
    noise_mode: str | None = None  # alignment rule used by the schedule
    subset_id: str | None = None
    epoch: int = 0
    batch_size: int | None = None
    learning_rate: float | None = None
    dataset_n: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CheckpointMeta":
        return cls(**d)


@dataclass(frozen=True)
class Checkpoint:
    """Immutable parameters + BN running statistics + provenance.

    bn_stats is a tuple of (running_mean, running_var) float32 pairs, one per
    BN layer in canonical order; empty for BN-free models.
    """

    spec: ModelSpec
    params: np.ndarray
    bn_stats: tuple[tuple[np.ndarray, np.ndarray], ...] = ()
    meta: CheckpointMeta = field(default_factory=CheckpointMeta)

    def __post_init__(self):
        if self.params.shape != (self.spec.param_count,):
            raise ValueError(
                f"params length {self.params.shape} does not match spec P={self.spec.param_count}"
            )
        dims = bn_layout(self.spec)
        if len(self.bn_stats) != len(dims):
            raise ValueError(
                f"expected {len(dims)} BN stat pairs, got {len(self.bn_stats)}"
            )
        for (mean, var), d in zip(self.bn_stats, dims):
            if mean.shape != (d,) or var.shape != (d,):
                raise ValueError("BN stat array shape does not match layer width")
            if not np.all(var > 0):
                raise ValueError("BN running variances must be strictly positive")
        object.__setattr__(self, "bn_stats", tuple((m, v) for m, v in self.bn_stats))

    def network(self) -> Network:
        return Network(self.spec)

    def with_meta(self, **kwargs) -> "Checkpoint":
        return replace(self, meta=replace(self.meta, **kwargs))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta_json = json.dumps(
        {"spec": ckpt.spec.to_dict(), "meta": ckpt.meta.to_dict()},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(FORMAT_VERSION).tobytes())
        f.write(np.uint32(len(meta_json)).tobytes())
        f.write(meta_json)
        f.write(np.ascontiguousarray(ckpt.params, dtype="<f4").tobytes())
        for mean, var in ckpt.bn_stats:
            f.write(np.ascontiguousarray(mean, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(var, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError("bad magic, not an LMCK file", 0)
    if len(data) < 12:
        raise CheckpointFormatError("truncated header", len(data))
    version = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}", 4)
    meta_len = int(np.frombuffer(data, dtype="<u4", count=1, offset=8)[0])
    body = 12 + meta_len
    if len(data) < body:
        raise CheckpointFormatError("truncated metadata", len(data))
    try:
        header = json.loads(data[12:body].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"bad metadata JSON: {e}", 12) from e
    spec = ModelSpec.from_dict(header["spec"])
    meta = CheckpointMeta.from_dict(header["meta"])
    p = spec.param_count
    dims = bn_layout(spec)
    expected = body + 4 * (p + 2 * sum(dims))
    if len(data) != expected:
        raise CheckpointFormatError(
            f"payload has {len(data) - body} bytes, expected {expected - body}",
            min(len(data), expected),
        )
    params = np.frombuffer(data, dtype="<f4", count=p, offset=body).astype(np.float32)
    offset = body + 4 * p
    bn_stats = []
    for d in dims:
        mean = np.frombuffer(data, dtype="<f4", count=d, offset=offset).astype(np.float32)
        offset += 4 * d
        var = np.frombuffer(data, dtype="<f4", count=d, offset=offset).astype(np.float32)
        offset += 4 * d
        bn_stats.append((mean, var))
    return Checkpoint(spec=spec, params=params, bn_stats=tuple(bn_stats), meta=meta)
