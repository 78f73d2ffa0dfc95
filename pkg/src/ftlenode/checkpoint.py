"""Plain-text checkpoint format for models.

Layout:

    ftle-node-ckpt v1 d=2 K=5 ell=1 dims=2,2,2 act=tanh breaks=0,2,4,6,8,10
    block=0 layer=1 tensor=W shape=2x2 frozen=0
    <row-major values, space separated, one line>
    ...
    block=L layer=1 tensor=W shape=2x2 frozen=0
    ...

Tensor records follow the canonical flattening order (blocks, then layers,
then W, b, V, a; the output layer last, named W and b). Vectors are written
as shape=<r>x1. Values use repr-exact decimal (%.17g), so a save/load round
trip reproduces the parameter vector bit for bit.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .training import Model
from .vecfield import ACTIVATIONS, FieldShape

_MAGIC = "ftle-node-ckpt"
_VERSION = "v1"


def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(values).ravel())


def save_checkpoint(model: Model, path) -> None:
    shape = model.shape
    k = model.breakpoints.size - 1
    dims = ",".join(str(v) for v in shape.dims)
    breaks = ",".join(f"{t:.17g}" for t in model.breakpoints)
    lines = [
        f"{_MAGIC} {_VERSION} d={shape.d} K={k} ell={shape.ell} "
        f"dims={dims} act={shape.activation} breaks={breaks}"
    ]
    for spec in model.layout.specs:
        rows = spec.shape[0]
        cols = spec.shape[1] if len(spec.shape) == 2 else 1
        lines.append(
            f"block={spec.block} layer={spec.layer} tensor={spec.name} "
            f"shape={rows}x{cols} frozen={1 if spec.frozen else 0}"
        )
        lines.append(_fmt(model.layout.view(model.theta, spec)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_kv(token: str, key: str) -> str:
    if not token.startswith(key + "="):
        raise InvalidInputError(f"expected {key}=..., got {token!r}")
    return token[len(key) + 1 :]


def load_checkpoint(path) -> Model:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise InvalidInputError("empty checkpoint")
    head = lines[0].split()
    if len(head) != 8 or head[0] != _MAGIC or head[1] != _VERSION:
        raise InvalidInputError(f"bad checkpoint header {lines[0]!r}")
    d = int(_parse_kv(head[2], "d"))
    k = int(_parse_kv(head[3], "K"))
    ell = int(_parse_kv(head[4], "ell"))
    dims = tuple(int(v) for v in _parse_kv(head[5], "dims").split(","))
    act = _parse_kv(head[6], "act")
    breaks = np.array([float(v) for v in _parse_kv(head[7], "breaks").split(",")])
    if act not in ACTIVATIONS:
        raise InvalidInputError(f"unknown activation {act!r}")
    if len(dims) != 2 * ell + 1 or dims[0] != d or dims[-1] != d:
        raise InvalidInputError(f"dims {dims} inconsistent with d={d} ell={ell}")
    if breaks.size != k + 1:
        raise InvalidInputError(f"expected {k + 1} breakpoints, got {breaks.size}")

    records = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        meta = dict(tok.split("=", 1) for tok in lines[i].split())
        if set(meta) != {"block", "layer", "tensor", "shape", "frozen"}:
            raise InvalidInputError(f"bad tensor record {lines[i]!r}")
        if i + 1 >= len(lines):
            raise InvalidInputError("tensor record missing its value line")
        rows, cols = (int(v) for v in meta["shape"].split("x"))
        values = np.array([float(t) for t in lines[i + 1].split()])
        if values.size != rows * cols:
            raise InvalidInputError(
                f"tensor {meta['tensor']} expected {rows * cols} values, "
                f"got {values.size}"
            )
        records.append((meta, rows, cols, values))
        i += 2

    frozen = set()
    for meta, _, _, _ in records:
        if meta["block"] != "L" and meta["frozen"] == "1":
            frozen.add((int(meta["layer"]), meta["tensor"]))
    shape = FieldShape(dims=dims, activation=act, frozen=frozenset(frozen))
    model = Model(shape, breaks)
    if len(records) != len(model.layout.specs):
        raise InvalidInputError(
            f"expected {len(model.layout.specs)} tensors, got {len(records)}"
        )
    for spec, (meta, rows, cols, values) in zip(model.layout.specs, records):
        block = meta["block"] if meta["block"] == "L" else int(meta["block"])
        if (block, int(meta["layer"]), meta["tensor"]) != (
            spec.block,
            spec.layer,
            spec.name,
        ):
            raise InvalidInputError(
                f"tensor out of order: {meta} where {spec.block}/{spec.layer}/"
                f"{spec.name} was expected"
            )
        want_rows = spec.shape[0]
        want_cols = spec.shape[1] if len(spec.shape) == 2 else 1
        if (rows, cols) != (want_rows, want_cols):
            raise InvalidInputError(
                f"tensor {spec.name} shape {rows}x{cols}, expected "
                f"{want_rows}x{want_cols}"
            )
        if bool(int(meta["frozen"])) != spec.frozen:
            raise InvalidInputError("inconsistent frozen flags across blocks")
        model.layout.view(model.theta, spec)[...] = values.reshape(spec.shape)
    return model
