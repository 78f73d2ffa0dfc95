"""Layered vector fields with piecewise-constant parameter schedules.

The right-hand side is a composition of ell blocks

    f_i(y) = V_i sigma(W_i y + b_i) + a_i,

with a smooth scalar activation applied elementwise, and the parameter set
switches between K constant values on a partition [t_{k-1}, t_k) of [0, T).
Intervals are half open on the right: t equal to a breakpoint belongs to the
later block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, OutOfDomainError

ACTIVATIONS = ("tanh", "sigmoid")
TENSOR_NAMES = ("W", "b", "V", "a")

# Slack used when snapping query times onto breakpoints, relative to the
# horizon. Covers float noise in t0 + n*dt without moving any honest query.
_SNAP = 1e-9


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _activate_deriv(s: np.ndarray, activation: str) -> np.ndarray:
    # Derivative written in terms of the activation value s = sigma(z).
    if activation == "tanh":
        return 1.0 - s * s
    return s * (1.0 - s)


def _activate_second(s: np.ndarray, d: np.ndarray, activation: str) -> np.ndarray:
    # sigma''(z) in terms of s and d = sigma'(z).
    if activation == "tanh":
        return -2.0 * s * d
    return d * (1.0 - 2.0 * s)


@dataclass(frozen=True)
class FieldShape:
    """Architecture of one layered field.

    dims lists (d_0, h_1, d_1, ..., h_ell, d_ell); d_0 = d_ell is the state
    dimension. frozen holds (layer, tensor) pairs, layer 1-based, tensor one
    of "W", "b", "V", "a"; frozen tensors keep fixed values (identity for V,
    zeros otherwise) and never receive gradient.
    """

    dims: tuple[int, ...]
    activation: str = "tanh"
    frozen: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.dims) < 3 or len(self.dims) % 2 == 0:
            raise InvalidInputError("dims must be (d0, h1, d1, ..., h_ell, d_ell)")
        if any(int(v) <= 0 for v in self.dims):
            raise InvalidInputError("dims must be positive")
        if self.dims[0] != self.dims[-1]:
            raise InvalidInputError("field must map R^d to R^d")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}")
        for layer, name in self.frozen:
            if not (1 <= layer <= self.ell) or name not in TENSOR_NAMES:
                raise InvalidInputError(f"bad frozen tag {(layer, name)}")

    @property
    def d(self) -> int:
        return self.dims[0]

    @property
    def ell(self) -> int:
        return (len(self.dims) - 1) // 2

    def layer_dims(self, i: int) -> tuple[int, int, int]:
        """(fan-in, hidden, out) of 1-based layer i."""
        return self.dims[2 * i - 2], self.dims[2 * i - 1], self.dims[2 * i]

    def is_frozen(self, layer: int, tensor: str) -> bool:
        return (layer, tensor) in self.frozen

    def tensor_shape(self, layer: int, tensor: str) -> tuple[int, ...]:
        fan_in, hid, out = self.layer_dims(layer)
        return {
            "W": (hid, fan_in),
            "b": (hid,),
            "V": (out, hid),
            "a": (out,),
        }[tensor]


@dataclass
class LayerParams:
    """Parameter tensors of one layer; also reused as a gradient container."""

    W: np.ndarray
    b: np.ndarray
    V: np.ndarray
    a: np.ndarray

    def tensors(self):
        return (self.W, self.b, self.V, self.a)

    @classmethod
    def zeros(cls, shape: FieldShape, layer: int) -> "LayerParams":
        return cls(*(np.zeros(shape.tensor_shape(layer, t)) for t in TENSOR_NAMES))


def _check_breakpoints(breakpoints) -> np.ndarray:
    bp = np.asarray(breakpoints, dtype=np.float64)
    if bp.ndim != 1 or bp.size < 2:
        raise InvalidInputError("breakpoints must be a 1-D array of length K+1")
    if bp[0] != 0.0 or not np.all(np.diff(bp) > 0.0) or not np.isfinite(bp).all():
        raise InvalidInputError("breakpoints must start at 0 and strictly increase")
    return bp


@dataclass
class ParamSchedule:
    """K parameter blocks on a partition 0 = t_0 < t_1 < ... < t_K = T."""

    breakpoints: np.ndarray
    blocks: list  # list[list[LayerParams]], one inner list per block

    def __post_init__(self):
        self.breakpoints = _check_breakpoints(self.breakpoints)
        if len(self.blocks) != self.breakpoints.size - 1:
            raise InvalidInputError("need one parameter block per interval")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def t_end(self) -> float:
        return float(self.breakpoints[-1])


def active_block(schedule: ParamSchedule, t: float) -> int:
    """0-based index of the block whose half-open interval covers t.

    t = t_k lands in the later block (half-open convention); t outside
    [0, T) raises OutOfDomainError.
    """
    bp = schedule.breakpoints
    t = float(t)
    if not np.isfinite(t) or t < 0.0 or t >= bp[-1]:
        raise OutOfDomainError(f"t={t} outside [0, {bp[-1]})")
    snap = _SNAP * max(bp[-1], 1.0)
    k = int(np.searchsorted(bp, t + snap, side="right")) - 1
    return min(max(k, 0), schedule.n_blocks - 1)


class VectorField:
    """A FieldShape plus its ParamSchedule; the f(theta(t), x) of the model."""

    def __init__(self, shape: FieldShape, schedule: ParamSchedule):
        self.shape = shape
        self.schedule = schedule
        for layers in schedule.blocks:
            if len(layers) != shape.ell:
                raise InvalidInputError("each block needs ell layers")
            for i, lp in enumerate(layers, start=1):
                for name, tensor in zip(TENSOR_NAMES, lp.tensors()):
                    want = shape.tensor_shape(i, name)
                    if tuple(tensor.shape) != want:
                        raise InvalidInputError(
                            f"layer {i} tensor {name}: shape {tensor.shape} != {want}"
                        )

    @property
    def d(self) -> int:
        return self.shape.d

    @property
    def breakpoints(self) -> np.ndarray:
        return self.schedule.breakpoints

    @property
    def t_end(self) -> float:
        return self.schedule.t_end

    def block_index(self, t: float) -> int:
        return active_block(self.schedule, t)

    def eval_batch(self, k: int, x: np.ndarray) -> np.ndarray:
        return eval_field_batch(self.shape, self.schedule.blocks[k], x)

    def jac_batch(self, k: int, x: np.ndarray) -> np.ndarray:
        return field_jacobian_batch(self.shape, self.schedule.blocks[k], x)

    def eval_jac_batch(self, k: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return field_eval_jac_batch(self.shape, self.schedule.blocks[k], x)


class LinearField:
    """Autonomous linear field x' = A x; diagnostic stand-in for a model.

    Euler orbits and tangents have closed forms, which makes this the
    reference case for integrator and exponent tests.
    """

    def __init__(self, a_matrix, t_end: float):
        self.a_matrix = np.asarray(a_matrix, dtype=np.float64)
        if self.a_matrix.ndim != 2 or self.a_matrix.shape[0] != self.a_matrix.shape[1]:
            raise InvalidInputError("A must be square")
        if not t_end > 0.0:
            raise InvalidInputError("t_end must be positive")
        self.t_end = float(t_end)
        self.breakpoints = np.array([0.0, self.t_end])

    @property
    def d(self) -> int:
        return self.a_matrix.shape[0]

    def block_index(self, t: float) -> int:
        if not 0.0 <= t < self.t_end:
            raise OutOfDomainError(f"t={t} outside [0, {self.t_end})")
        return 0

    def eval_batch(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.a_matrix.T

    def jac_batch(self, k: int, x: np.ndarray) -> np.ndarray:
        b = np.asarray(x).shape[0]
        return np.broadcast_to(self.a_matrix, (b, self.d, self.d)).copy()


def _check_state(x, d: int, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (d,):
        raise InvalidInputError(f"{name} must have shape ({d},)")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def eval_field_batch(shape: FieldShape, layers, x: np.ndarray) -> np.ndarray:
    """f applied to a batch of states, shape (B, d) -> (B, d)."""
    h = np.asarray(x, dtype=np.float64)
    for lp in layers:
        z = h @ lp.W.T + lp.b
        s = _activate(z, shape.activation)
        h = s @ lp.V.T + lp.a
    return h


def eval_field(shape: FieldShape, layers, x) -> np.ndarray:
    """f(theta, x) for a single state of shape (d,)."""
    arr = _check_state(x, shape.d)
    return eval_field_batch(shape, layers, arr[None, :])[0]


def field_jacobian_batch(shape: FieldShape, layers, x: np.ndarray) -> np.ndarray:
    """D_x f for a batch of states: (B, d) -> (B, d, d).

    Chain rule through the layers: J = prod_i V_i diag(sigma'(z_i)) W_i,
    accumulated left to right on the running (B, q_i, d) product.
    """
    h = np.asarray(x, dtype=np.float64)
    b, d = h.shape
    p = np.tile(np.eye(d), (b, 1, 1))
    for lp in layers:
        z = h @ lp.W.T + lp.b
        s = _activate(z, shape.activation)
        dvec = _activate_deriv(s, shape.activation)
        wp = np.einsum("hp,bpd->bhd", lp.W, p)
        p = np.einsum("qh,bhd->bqd", lp.V, dvec[:, :, None] * wp)
        h = s @ lp.V.T + lp.a
    return p


def field_jacobian_x(shape: FieldShape, layers, x) -> np.ndarray:
    """D_x f(theta, x) for a single state, shape (d, d)."""
    arr = _check_state(x, shape.d)
    return field_jacobian_batch(shape, layers, arr[None, :])[0]


def field_eval_jac_batch(shape: FieldShape, layers, x: np.ndarray):
    """(f, D_x f) for a batch, sharing one layer pass.

    The value path uses the exact expressions of eval_field_batch so that
    joint state/tangent marches reproduce plain flows bit for bit.
    """
    h = np.asarray(x, dtype=np.float64)
    b, d = h.shape
    p = np.tile(np.eye(d), (b, 1, 1))
    for lp in layers:
        z = h @ lp.W.T + lp.b
        s = _activate(z, shape.activation)
        dvec = _activate_deriv(s, shape.activation)
        wp = np.einsum("hp,bpd->bhd", lp.W, p)
        p = np.einsum("qh,bhd->bqd", lp.V, dvec[:, :, None] * wp)
        h = s @ lp.V.T + lp.a
    return h, p


def field_vjp_params(shape: FieldShape, layers, x, cotangent) -> list:
    """Gradient of <cotangent, f(theta, x)> in every parameter tensor.

    Returns one LayerParams of gradients per layer, in layer order. Frozen
    tensors get exact zeros.
    """
    arr = _check_state(x, shape.d)
    cot = _check_state(cotangent, shape.d, "cotangent")

    hs = [arr]
    ss = []
    h = arr
    for lp in layers:
        z = lp.W @ h + lp.b
        s = _activate(z, shape.activation)
        h = lp.V @ s + lp.a
        ss.append(s)
        hs.append(h)

    grads = [LayerParams.zeros(shape, i) for i in range(1, shape.ell + 1)]
    ybar = cot
    for i in range(shape.ell - 1, -1, -1):
        lp = layers[i]
        g = grads[i]
        s = ss[i]
        g.V += np.outer(ybar, s)
        g.a += ybar
        sbar = lp.V.T @ ybar
        zbar = sbar * _activate_deriv(s, shape.activation)
        g.W += np.outer(zbar, hs[i])
        g.b += zbar
        ybar = lp.W.T @ zbar

    for i, g in enumerate(grads, start=1):
        for name, tensor in zip(TENSOR_NAMES, g.tensors()):
            if shape.is_frozen(i, name):
                tensor[...] = 0.0
    return grads
