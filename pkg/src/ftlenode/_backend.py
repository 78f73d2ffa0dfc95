"""Backend selection for the batched flow/tangent kernels.

The compiled Cython module (ftlenode._kernels) is used when it imported
cleanly and the model is a plain layered field; everything else falls back to
the vectorized NumPy implementation with identical semantics. Set
FTLENODE_BACKEND=python or =compiled to force a choice (forcing "compiled"
when the extension is missing raises at call time).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py
from .errors import InvalidInputError
from .vecfield import ACTIVATIONS, TENSOR_NAMES, VectorField

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - build-env dependent
    _compiled = None

_env = os.environ.get("FTLENODE_BACKEND", "").strip().lower()
if _env not in ("", "compiled", "python"):
    raise InvalidInputError(f"FTLENODE_BACKEND must be 'compiled' or 'python', got {_env!r}")
_forced = _env or None


def has_compiled() -> bool:
    return _compiled is not None


def use(name: str | None) -> None:
    """Force a backend ('compiled' or 'python'); None restores auto-select."""
    global _forced
    if name not in (None, "compiled", "python"):
        raise InvalidInputError("backend must be 'compiled', 'python', or None")
    _forced = name


def active_backend() -> str:
    if _forced == "python":
        return "python"
    if _forced == "compiled":
        return "compiled"
    return "compiled" if _compiled is not None else "python"


class PackedField:
    """Flat-array view of a VectorField for the compiled kernels."""

    def __init__(self, vf: VectorField):
        shape = vf.shape
        self.act_id = ACTIVATIONS.index(shape.activation)
        ell = shape.ell
        n_blocks = vf.schedule.n_blocks
        self.ldims = np.array(
            [shape.layer_dims(i) for i in range(1, ell + 1)], dtype=np.int64
        )
        self.offsets = np.zeros((n_blocks, ell, 4), dtype=np.int64)
        chunks = []
        pos = 0
        for k, layers in enumerate(vf.schedule.blocks):
            for i, lp in enumerate(layers):
                for t, tensor in enumerate(lp.tensors()):
                    self.offsets[k, i, t] = pos
                    flat = np.ascontiguousarray(tensor, dtype=np.float64).ravel()
                    chunks.append(flat)
                    pos += flat.size
        self.theta = np.concatenate(chunks) if chunks else np.zeros(0)
        self.max_width = int(self.ldims.max())
        self.d = shape.d


def _resolve(model):
    """(packed, use_compiled) for the given duck-typed field model."""
    backend = active_backend()
    if backend == "compiled" and isinstance(model, VectorField):
        if _compiled is None:
            raise InvalidInputError("compiled backend forced but extension missing")
        return PackedField(model), True
    if _forced == "compiled" and _compiled is None:
        raise InvalidInputError("compiled backend forced but extension missing")
    return None, False


def flow_batch(model, x0s, dt, kidx, record_steps) -> np.ndarray:
    x0s = np.ascontiguousarray(x0s, dtype=np.float64)
    kidx = np.ascontiguousarray(kidx, dtype=np.int64)
    record = np.ascontiguousarray(record_steps, dtype=np.int64)
    packed, compiled = _resolve(model)
    if compiled:
        return _compiled.flow_batch(
            packed.theta, packed.ldims, packed.offsets, packed.act_id,
            packed.max_width, x0s, float(dt), kidx, record,
        )
    return _kernels_py.flow_batch(model, x0s, float(dt), kidx, record)


def tangent_batch(model, x0s, dt, kidx, record_steps):
    x0s = np.ascontiguousarray(x0s, dtype=np.float64)
    kidx = np.ascontiguousarray(kidx, dtype=np.int64)
    record = np.ascontiguousarray(record_steps, dtype=np.int64)
    packed, compiled = _resolve(model)
    if compiled:
        return _compiled.tangent_batch(
            packed.theta, packed.ldims, packed.offsets, packed.act_id,
            packed.max_width, x0s, float(dt), kidx, record,
        )
    return _kernels_py.tangent_batch(model, x0s, float(dt), kidx, record)


def run_chunked(points: np.ndarray, threads: int, chunk_fn, chunk_size: int = 4096):
    """Apply chunk_fn(slice_start, points_chunk) over point chunks.

    Chunks are fixed-size regardless of thread count and every worker writes
    to disjoint output slices inside chunk_fn, so results are identical for
    any `threads`.
    """
    n = points.shape[0]
    starts = list(range(0, n, chunk_size))
    if threads <= 1 or len(starts) <= 1:
        for s in starts:
            chunk_fn(s, points[s : s + chunk_size])
        return
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        futures = [
            pool.submit(chunk_fn, s, points[s : s + chunk_size]) for s in starts
        ]
        for fut in futures:
            fut.result()
