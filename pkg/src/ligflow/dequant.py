"""Uniform dequantization of discrete vertex features.

Categorical blocks are one-hot, ordinal blocks hold one integer in a
range, continuous blocks pass through.  Dequantizing adds
``scale * U[0, 1) - scale / 2`` to every discrete entry; with ``scale < 1``
argmax and rounding recover the original values exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SchemaError

NOISE_SCALE = 0.9


@dataclass(frozen=True)
class FeatureBlock:
    name: str
    kind: str  # "categorical" | "ordinal" | "continuous"
    width: int = 1
    labels: tuple = ()
    low: int = 0
    high: int = 0

    def __post_init__(self):
        if self.kind not in ("categorical", "ordinal", "continuous"):
            raise ContractError(f"unknown feature kind {self.kind!r}")
        if self.kind == "ordinal" and self.width != 1:
            raise ContractError("ordinal blocks hold a single value")
        if self.kind == "categorical" and self.labels and len(self.labels) != self.width:
            raise ContractError("categorical labels must match the block width")


@dataclass(frozen=True)
class FeatureSchema:
    blocks: tuple

    @property
    def width(self):
        return sum(b.width for b in self.blocks)

    def offsets(self):
        out, k = [], 0
        for b in self.blocks:
            out.append(k)
            k += b.width
        return out

    def block(self, name):
        for b, off in zip(self.blocks, self.offsets()):
            if b.name == name:
                return b, off
        raise KeyError(name)

    def to_dict(self):
        return {"blocks": [b.__dict__ | {"labels": list(b.labels)} for b in self.blocks]}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(FeatureBlock(**(b | {"labels": tuple(b.get("labels", ()))})) for b in data["blocks"]))

    def encode(self, **values):
        """Discrete feature row from per-block values (labels for categorical)."""
        row = np.zeros(self.width)
        for b, off in zip(self.blocks, self.offsets()):
            val = values[b.name]
            if b.kind == "categorical":
                idx = b.labels.index(val) if b.labels else int(val)
                row[off + idx] = 1.0
            elif b.kind == "ordinal":
                row[off] = float(val)
            else:
                row[off : off + b.width] = np.asarray(val, dtype=np.float64).reshape(b.width)
        return row

    def decode(self, row):
        """Per-block values of one quantized row (labels for categorical)."""
        out = {}
        for b, off in zip(self.blocks, self.offsets()):
            seg = row[off : off + b.width]
            if b.kind == "categorical":
                k = int(np.argmax(seg))
                out[b.name] = b.labels[k] if b.labels else k
            elif b.kind == "ordinal":
                out[b.name] = int(seg[0])
            else:
                out[b.name] = np.array(seg)
        return out


LIGAND_SCHEMA = FeatureSchema(
    (
        FeatureBlock("element", "categorical", 4, ("C", "N", "O", "F")),
        FeatureBlock("charge", "ordinal", 1, low=-1, high=1),
    )
)

RECEPTOR_SCHEMA = FeatureSchema((FeatureBlock("element", "categorical", 5, ("C", "N", "O", "S", "other")),))


def validate(h, schema):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != schema.width:
        raise SchemaError(f"feature width {h.shape[-1]} does not match schema width {schema.width}")
    for b, off in zip(schema.blocks, schema.offsets()):
        seg = h[..., off : off + b.width]
        if b.kind == "categorical":
            if not (np.all((seg == 0) | (seg == 1)) and np.all(seg.sum(axis=-1) == 1)):
                raise SchemaError(f"block {b.name!r} is not one-hot")
        elif b.kind == "ordinal":
            if not (np.all(seg == np.round(seg)) and np.all((seg >= b.low) & (seg <= b.high))):
                raise SchemaError(f"block {b.name!r} outside integer range [{b.low}, {b.high}]")
    return h


def dequantize(h, schema, rng, scale=NOISE_SCALE):
    """Continuous features from discrete ones by centred uniform noise."""
    h = validate(h, schema).copy()
    for b, off in zip(schema.blocks, schema.offsets()):
        if b.kind == "continuous":
            continue
        sl = (..., slice(off, off + b.width))
        h[sl] = h[sl] + scale * rng.random(h[sl].shape) - scale / 2
    return h


def quantize(h, schema):
    """Discrete features: argmax for categorical blocks, clamped rounding for ordinal."""
    h = np.asarray(h, dtype=np.float64)
    out = h.copy()
    for b, off in zip(schema.blocks, schema.offsets()):
        sl = (..., slice(off, off + b.width))
        if b.kind == "categorical":
            # np.argmax resolves ties toward the lowest index
            out[sl] = np.eye(b.width)[np.argmax(h[sl], axis=-1)]
        elif b.kind == "ordinal":
            out[sl] = np.clip(np.round(h[sl]), b.low, b.high) + 0.0  # no negative zero
    return out
