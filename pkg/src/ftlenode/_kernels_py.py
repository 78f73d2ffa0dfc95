"""Pure-NumPy batched flow/tangent kernels (fallback backend).

Same contract as the compiled module: given per-step block indices and a
sorted list of record steps, march every point forward with explicit Euler
and snapshot states (or tangent matrices) at the requested steps. Non-finite
values are allowed to propagate; callers turn them into NaN sentinels.
"""

from __future__ import annotations

import numpy as np


def flow_batch(model, x0s, dt, kidx, record_steps) -> np.ndarray:
    """States after the requested step counts; shape (R, n, d)."""
    x = np.array(x0s, dtype=np.float64)
    n, d = x.shape
    record = np.asarray(record_steps, dtype=np.int64)
    out = np.empty((record.size, n, d))
    ri = 0
    while ri < record.size and record[ri] == 0:
        out[ri] = x
        ri += 1
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(int(kidx.shape[0])):
            x = x + dt * model.eval_batch(int(kidx[step]), x)
            while ri < record.size and record[ri] == step + 1:
                out[ri] = x
                ri += 1
    return out


def tangent_batch(model, x0s, dt, kidx, record_steps) -> tuple[np.ndarray, np.ndarray]:
    """Joint state/tangent march; returns (final states (n, d), Y records).

    Y starts at the identity and picks up one (I + dt J) factor per step,
    with J evaluated at the step's left endpoint before the state moves.
    """
    x = np.array(x0s, dtype=np.float64)
    n, d = x.shape
    record = np.asarray(record_steps, dtype=np.int64)
    y = np.tile(np.eye(d), (n, 1, 1))
    out = np.empty((record.size, n, d, d))
    ri = 0
    while ri < record.size and record[ri] == 0:
        out[ri] = y
        ri += 1
    eval_jac = getattr(model, "eval_jac_batch", None)
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(int(kidx.shape[0])):
            k = int(kidx[step])
            if eval_jac is not None:
                fx, jx = eval_jac(k, x)
            else:
                fx = model.eval_batch(k, x)
                jx = model.jac_batch(k, x)
            y = y + dt * np.matmul(jx, y)
            x = x + dt * fx
            while ri < record.size and record[ri] == step + 1:
                out[ri] = y
                ri += 1
    return x, out
