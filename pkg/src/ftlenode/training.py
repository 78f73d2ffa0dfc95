"""Classifier container and training with optional FTLE suppression.

The model is the Euler flow of a layered field over [0, T] followed by a
trainable affine readout L: out = W x(T) + b. Targets are (0, 1) for blue
and (0, -1) for orange; the loss is mean squared error over the batch, and
the suppression term adds gamma * mean(max(lambda_max([0, T1], x0), delta)).

Both gradients are exact reverse-mode passes written out by hand: grad_mse
backpropagates through the Euler steps, and grad_reg differentiates the top
singular value of the tangent map through the joint state/tangent recursion
(second derivatives of the field appear through the Jacobian's dependence on
the trajectory).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _backend
from ._rng import generator, standard_normals
from .data import LABELS
from .errors import DivergenceError, InvalidInputError, TrainingDivergedError
from .integrator import FlowConfig, flow, step_blocks
from .linalg import svd, svd2_batch
from .vecfield import (
    TENSOR_NAMES,
    FieldShape,
    LayerParams,
    ParamSchedule,
    VectorField,
    _activate,
    _activate_deriv,
    _activate_second,
    _check_breakpoints,
)


class DegenerateTopPairWarning(UserWarning):
    """Top singular pair nearly degenerate; its gradient is ill-conditioned."""


@dataclass(frozen=True)
class TensorSpec:
    block: object  # 0-based block index, or "L" for the output layer
    layer: int
    name: str
    shape: tuple
    offset: int
    frozen: bool

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


class ParamLayout:
    """Canonical flattening: blocks in order, layers in order, tensors in
    (W, b, V, a) order, each row-major; the output layer (W, b) last."""

    def __init__(self, shape: FieldShape, n_blocks: int):
        specs = []
        off = 0
        for k in range(n_blocks):
            for i in range(1, shape.ell + 1):
                for name in TENSOR_NAMES:
                    tshape = shape.tensor_shape(i, name)
                    spec = TensorSpec(
                        block=k,
                        layer=i,
                        name=name,
                        shape=tshape,
                        offset=off,
                        frozen=shape.is_frozen(i, name),
                    )
                    specs.append(spec)
                    off += spec.size
        d = shape.d
        for name, tshape in (("W", (d, d)), ("b", (d,))):
            spec = TensorSpec(
                block="L", layer=1, name=name, shape=tshape, offset=off, frozen=False
            )
            specs.append(spec)
            off += spec.size
        self.specs = specs
        self.size = off
        self.n_blocks = n_blocks
        self.shape = shape
        self._by_key = {(s.block, s.layer, s.name): s for s in specs}

    def spec(self, block, layer: int, name: str) -> TensorSpec:
        return self._by_key[(block, layer, name)]

    def view(self, vec: np.ndarray, spec: TensorSpec) -> np.ndarray:
        return vec[spec.offset : spec.offset + spec.size].reshape(spec.shape)

    def field_views(self, vec: np.ndarray) -> list:
        blocks = []
        for k in range(self.n_blocks):
            layers = []
            for i in range(1, self.shape.ell + 1):
                layers.append(
                    LayerParams(
                        *(self.view(vec, self.spec(k, i, n)) for n in TENSOR_NAMES)
                    )
                )
            blocks.append(layers)
        return blocks

    def output_views(self, vec: np.ndarray) -> "OutputLayer":
        return OutputLayer(
            W=self.view(vec, self.spec("L", 1, "W")),
            b=self.view(vec, self.spec("L", 1, "b")),
        )

    def trainable_mask(self) -> np.ndarray:
        mask = np.ones(self.size)
        for s in self.specs:
            if s.frozen:
                mask[s.offset : s.offset + s.size] = 0.0
        return mask


@dataclass
class OutputLayer:
    W: np.ndarray
    b: np.ndarray


class Model:
    """Field schedule plus output layer, backed by one flat parameter vector.

    theta is updated in place by the optimizer; all tensor views stay live.
    """

    def __init__(self, shape: FieldShape, breakpoints, theta: np.ndarray | None = None):
        self.shape = shape
        self.breakpoints = _check_breakpoints(breakpoints)
        self.layout = ParamLayout(shape, self.breakpoints.size - 1)
        if theta is None:
            theta = np.zeros(self.layout.size)
        else:
            theta = np.array(theta, dtype=np.float64)
            if theta.shape != (self.layout.size,):
                raise InvalidInputError(
                    f"theta must have {self.layout.size} entries, got {theta.shape}"
                )
        self.theta = theta
        blocks = self.layout.field_views(self.theta)
        self.field = VectorField(shape, ParamSchedule(self.breakpoints.copy(), blocks))
        self.output = self.layout.output_views(self.theta)

    @property
    def d(self) -> int:
        return self.shape.d

    @property
    def t_end(self) -> float:
        return float(self.breakpoints[-1])

    def copy(self) -> "Model":
        return Model(self.shape, self.breakpoints.copy(), self.theta.copy())


def he_init(shape: FieldShape, breakpoints, seed: int = 0) -> Model:
    """He-initialized model: weight entries ~ N(0, 2/fan_in), biases and
    shifts zero, frozen tensors at their fixed values (identity for V).

    Draws follow the canonical flattening order; frozen tensors consume no
    draws. Normals come from the documented Philox + inverse-CDF stream.
    """
    model = Model(shape, breakpoints)
    rng = generator(seed)
    for spec in model.layout.specs:
        view = model.layout.view(model.theta, spec)
        if spec.frozen:
            if spec.name == "V":
                if spec.shape[0] != spec.shape[1]:
                    raise InvalidInputError("frozen V must be square (identity)")
                view[...] = np.eye(spec.shape[0])
            else:
                view[...] = 0.0
        elif spec.name in ("W", "V"):
            fan_in = spec.shape[1]
            view[...] = np.sqrt(2.0 / fan_in) * standard_normals(rng, spec.shape)
        else:
            view[...] = 0.0
    return model


# ---------------------------------------------------------------------------
# forward passes


def _endpoints(field: VectorField, x0s: np.ndarray, kidx: np.ndarray, dt: float):
    steps = int(kidx.shape[0])
    return _backend.flow_batch(field, x0s, dt, kidx, [steps])[0]


def _forward_stash(field: VectorField, x0s: np.ndarray, kidx: np.ndarray, dt: float,
                   need_jac: bool):
    """Euler march storing per-step, per-layer intermediates for backprop.

    With need_jac, also accumulates the per-step field Jacobian chain
    (P_prev, B = W P_prev, C = sigma' . B per layer) and the tangents Y_n.
    """
    shape = field.shape
    act = shape.activation
    x = np.array(x0s, dtype=np.float64)
    n_b, d = x.shape
    steps = int(kidx.shape[0])
    states = np.empty((steps + 1, n_b, d))
    states[0] = x
    stash = []
    jacs = None
    ys = None
    if need_jac:
        jacs = np.empty((steps, n_b, d, d))
        ys = np.empty((steps + 1, n_b, d, d))
        ys[0] = np.eye(d)
    eye = np.eye(d)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(steps):
            layers = field.schedule.blocks[int(kidx[n])]
            h = states[n]
            per_layer = []
            p = np.tile(eye, (n_b, 1, 1)) if need_jac else None
            for lp in layers:
                z = h @ lp.W.T + lp.b
                s = _activate(z, act)
                dv = _activate_deriv(s, act)
                if need_jac:
                    bm = np.einsum("hp,bpd->bhd", lp.W, p)
                    c = dv[:, :, None] * bm
                    per_layer.append((h, s, dv, p, bm, c))
                    p = np.einsum("qh,bhd->bqd", lp.V, c)
                else:
                    per_layer.append((h, s, dv))
                h = s @ lp.V.T + lp.a
            stash.append(per_layer)
            if need_jac:
                jacs[n] = p
                ys[n + 1] = ys[n] + dt * np.matmul(p, ys[n])
            states[n + 1] = states[n] + dt * h
    return states, stash, jacs, ys


# ---------------------------------------------------------------------------
# losses and gradients


def _check_batch(model: Model, x0s, labels=None):
    x = np.asarray(x0s, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d or x.shape[0] == 0:
        raise InvalidInputError(f"batch must be (B, {model.d})")
    if labels is None:
        return x, None
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != x.shape:
        raise InvalidInputError("labels must match the batch shape")
    return x, y


def _readout(model: Model, x_end: np.ndarray) -> np.ndarray:
    return x_end @ model.output.W.T + model.output.b


def pred_from_readout(out: np.ndarray) -> np.ndarray:
    """pred = d_orange / (d_blue + d_orange) from readout values (B, 2)."""
    db = np.sqrt(((out - LABELS[0]) ** 2).sum(axis=1))
    do = np.sqrt(((out - LABELS[1]) ** 2).sum(axis=1))
    return do / np.maximum(db + do, 1e-300)


def predict(model: Model, x0, cfg: FlowConfig) -> float:
    """Blue-class score in [0, 1]; NaN when the flow diverges."""
    try:
        traj = flow(model.field, x0, (0.0, cfg.t_end), cfg)
    except DivergenceError:
        return float("nan")
    out = _readout(model, traj.states[-1][None, :])
    return float(pred_from_readout(out)[0])


def predict_batch(model: Model, x0s, cfg: FlowConfig) -> np.ndarray:
    x, _ = _check_batch(model, x0s)
    kidx = step_blocks(model.field, 0.0, cfg.dt, cfg.n_steps)
    end = _endpoints(model.field, x, kidx, cfg.dt)
    out = _readout(model, end)
    with np.errstate(invalid="ignore"):
        pred = pred_from_readout(out)
    pred[~np.isfinite(out).all(axis=1)] = np.nan
    return pred


def mse_loss(model: Model, x0s, labels, cfg: FlowConfig) -> float:
    x, y = _check_batch(model, x0s, labels)
    kidx = step_blocks(model.field, 0.0, cfg.dt, cfg.n_steps)
    end = _endpoints(model.field, x, kidx, cfg.dt)
    r = _readout(model, end) - y
    return float((r * r).sum() / x.shape[0])


def grad_mse(model: Model, x0s, labels, cfg: FlowConfig):
    """(loss, flat gradient) of the batch MSE; frozen entries exactly zero."""
    x, y = _check_batch(model, x0s, labels)
    kidx = step_blocks(model.field, 0.0, cfg.dt, cfg.n_steps)
    return _grad_mse(model, x, y, kidx, cfg.dt)


def _grad_mse(model: Model, x, y, kidx, dt):
    # overflow surfaces as non-finite loss/grad checked by the caller
    field = model.field
    n_b = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        states, stash, _, _ = _forward_stash(field, x, kidx, dt, need_jac=False)
        x_end = states[-1]
        out = x_end @ model.output.W.T + model.output.b
        r = out - y
        loss = float((r * r).sum() / n_b)

        g = np.zeros(model.layout.size)
        gblocks = model.layout.field_views(g)
        gout = model.layout.output_views(g)
        go = (2.0 / n_b) * r
        gout.W += go.T @ x_end
        gout.b += go.sum(axis=0)
        xbar = go @ model.output.W

        ell = field.shape.ell
        for n in range(int(kidx.shape[0]) - 1, -1, -1):
            k = int(kidx[n])
            lps = field.schedule.blocks[k]
            gls = gblocks[k]
            ybar = dt * xbar
            per_layer = stash[n]
            for i in range(ell - 1, -1, -1):
                h, s, dv = per_layer[i]
                lp = lps[i]
                gl = gls[i]
                gl.V += ybar.T @ s
                gl.a += ybar.sum(axis=0)
                zbar = (ybar @ lp.V) * dv
                gl.W += zbar.T @ h
                gl.b += zbar.sum(axis=0)
                ybar = zbar @ lp.W
            xbar = xbar + ybar

    g *= model.layout.trainable_mask()
    return loss, g


def _top_pair(y_end: np.ndarray):
    """(sigma, u1, v1) per item; sigma is (B, 2)-or-(B, d) descending."""
    d = y_end.shape[1]
    if d == 2:
        sigma, u, v = svd2_batch(y_end)
        return sigma, u[:, :, 0], v[:, :, 0]
    sig = np.empty((y_end.shape[0], d))
    u1 = np.empty((y_end.shape[0], d))
    v1 = np.empty((y_end.shape[0], d))
    for i in range(y_end.shape[0]):
        ui, si, vi = svd(y_end[i])
        sig[i] = si
        u1[i] = ui[:, 0]
        v1[i] = vi[:, 0]
    return sig, u1, v1


def _reg_grid(model: Model, t1: float, cfg: FlowConfig, reg_dt):
    dt_r = cfg.dt if reg_dt is None else float(reg_dt)
    if not (np.isfinite(dt_r) and dt_r > 0.0):
        raise InvalidInputError("reg_dt must be positive")
    if t1 <= 0.0 or t1 > min(cfg.t_end, model.t_end) * (1.0 + 1e-9):
        raise InvalidInputError(f"t1={t1} outside (0, horizon]")
    r = t1 / dt_r
    if abs(r - round(r)) > 1e-9 * max(1.0, abs(r)):
        raise InvalidInputError(f"t1={t1} not on the reg_dt={dt_r} grid")
    steps = int(round(r))
    kidx = step_blocks(model.field, 0.0, dt_r, steps)
    return dt_r, steps, kidx


def max_exponents(model: Model, x0s, t1: float, cfg: FlowConfig, reg_dt=None):
    """lambda_max([0, t1], x0) for each point in the batch (NaN on blowup)."""
    x, _ = _check_batch(model, x0s)
    dt_r, steps, kidx = _reg_grid(model, t1, cfg, reg_dt)
    _, yrec = _backend.tangent_batch(model.field, x, dt_r, kidx, [steps])
    y = yrec[0]
    finite = np.isfinite(y).all(axis=(1, 2))
    with np.errstate(invalid="ignore"):
        sigma, _, _ = _top_pair(np.where(finite[:, None, None], y, 0.0))
        lam = np.log(sigma[:, 0]) / (steps * dt_r)
    lam[~finite] = np.nan
    return lam


def reg_term(model: Model, x0s, delta: float, t1: float, cfg: FlowConfig,
             reg_dt=None) -> float:
    """mean(max(lambda_max([0, t1], x0), delta)) over the batch."""
    if not delta > 0.0:
        raise InvalidInputError("delta must be positive")
    lam = max_exponents(model, x0s, t1, cfg, reg_dt)
    return float(np.mean(np.maximum(lam, delta)))


def grad_reg(model: Model, x0s, delta: float, t1: float, cfg: FlowConfig,
             reg_dt=None):
    """(value, flat gradient) of the thresholded top-exponent mean.

    The derivative of lambda_max = ln(sigma_1(Y_N))/T1 uses the top singular
    pair, d sigma_1 = u1^T dY v1, and one reverse pass through the joint
    state/tangent recursion; points at or below delta contribute zero (the
    max kink takes the inactive side's subgradient).
    """
    if not delta > 0.0:
        raise InvalidInputError("delta must be positive")
    x, _ = _check_batch(model, x0s)
    dt_r, steps, kidx = _reg_grid(model, t1, cfg, reg_dt)
    field = model.field
    n_b, d = x.shape
    states, stash, jacs, ys = _forward_stash(field, x, kidx, dt_r, need_jac=True)
    y_end = ys[steps]
    length = steps * dt_r
    sigma, u1, v1 = _top_pair(y_end)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.log(sigma[:, 0]) / length
    value = float(np.mean(np.maximum(lam, delta)))
    active = lam > delta
    if np.any(active & (sigma[:, 0] - sigma[:, 1] < 1e-9 * sigma[:, 0])):
        warnings.warn(
            "top singular pair nearly degenerate; suppression gradient is "
            "ill-conditioned",
            DegenerateTopPairWarning,
        )

    coef = np.where(active, 1.0 / (n_b * length * np.maximum(sigma[:, 0], 1e-300)), 0.0)
    ybar = coef[:, None, None] * np.einsum("bi,bj->bij", u1, v1)
    xbar = np.zeros((n_b, d))
    g = np.zeros(model.layout.size)
    gblocks = model.layout.field_views(g)
    ell = field.shape.ell
    act = field.shape.activation

    for n in range(steps - 1, -1, -1):
        k = int(kidx[n])
        lps = field.schedule.blocks[k]
        gls = gblocks[k]
        jbar = dt_r * np.matmul(ybar, np.transpose(ys[n], (0, 2, 1)))
        pbar = jbar
        hbar = dt_r * xbar
        per_layer = stash[n]
        for i in range(ell - 1, -1, -1):
            h, s, dv, p_prev, bm, c = per_layer[i]
            lp = lps[i]
            gl = gls[i]
            gl.V += np.einsum("bqd,bhd->qh", pbar, c) + hbar.T @ s
            gl.a += hbar.sum(axis=0)
            cbar = np.einsum("qh,bqd->bhd", lp.V, pbar)
            dbar = np.einsum("bhd,bhd->bh", cbar, bm)
            bbar = dv[:, :, None] * cbar
            zbar = (hbar @ lp.V) * dv + dbar * _activate_second(s, dv, act)
            gl.W += np.einsum("bhd,bpd->hp", bbar, p_prev) + zbar.T @ h
            gl.b += zbar.sum(axis=0)
            pbar = np.einsum("hp,bhd->bpd", lp.W, bbar)
            hbar = zbar @ lp.W
        xbar = xbar + hbar
        ybar = ybar + dt_r * np.matmul(np.transpose(jacs[n], (0, 2, 1)), ybar)

    g *= model.layout.trainable_mask()
    return value, g


# ---------------------------------------------------------------------------
# optimizer and training loop


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size))


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam descent step, updating theta in place."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class TrainConfig:
    gamma: float = 0.0
    delta: float = 0.05
    t1: float | None = None  # defaults to the flow horizon
    lr: float = 1e-2
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    reg_dt: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.gamma < 0.0 or not np.isfinite(self.gamma):
            raise InvalidInputError("gamma must be >= 0")
        if not self.delta > 0.0:
            raise InvalidInputError("delta must be > 0")
        if not self.lr > 0.0:
            raise InvalidInputError("lr must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be >= 1")


TRAIN_LOG_COLUMNS = ("epoch", "mse", "reg", "train_acc", "test_acc",
                     "mean_lmax_T1", "seconds")


@dataclass
class TrainLog:
    rows: list = dc_field(default_factory=list)

    def append(self, **kw) -> None:
        self.rows.append(tuple(kw[c] for c in TRAIN_LOG_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        i = TRAIN_LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path, zero_seconds: bool = False) -> None:
        """zero_seconds drops the one wall-clock column so that repeated
        identical runs produce identical bytes."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write(",".join(TRAIN_LOG_COLUMNS) + "\n")
            for row in self.rows:
                if zero_seconds:
                    row = row[:-1] + (0.0,)
                cells = [str(int(row[0]))] + [f"{v:.17g}" for v in row[1:]]
                fh.write(",".join(cells) + "\n")


def load_train_log(path) -> TrainLog:
    log = TrainLog()
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != TRAIN_LOG_COLUMNS:
            raise InvalidInputError(f"unexpected log header {header}")
        for line in fh:
            if not line.strip():
                continue
            cells = line.strip().split(",")
            log.rows.append((int(cells[0]),) + tuple(float(c) for c in cells[1:]))
    return log


def accuracy(model: Model, ds, cfg: FlowConfig) -> float:
    """Fraction of points whose prediction side matches the class."""
    pred = predict_batch(model, ds.points, cfg)
    want_blue = ds.class_ids == 0
    with np.errstate(invalid="ignore"):
        correct = np.where(want_blue, pred > 0.5, pred < 0.5)
    correct &= np.isfinite(pred)
    return float(np.mean(correct))


def train(model: Model, train_ds, tcfg: TrainConfig, cfg: FlowConfig,
          test_ds=None) -> TrainLog:
    """Adam on MSE (+ gamma * suppression) over shuffled minibatches.

    Mutates model.theta in place and returns the per-epoch log. With
    gamma = 0 the regularizer pass is never entered, so the parameter
    sequence is identical to a build without it. Shuffles come from a Philox
    stream keyed by seed + 1 (init uses the seed itself). On non-finite
    numbers, training aborts with the last completed epoch's parameters.
    """
    x_all, y_all = _check_batch(model, train_ds.points, train_ds.labels)
    n = x_all.shape[0]
    t1 = float(tcfg.t1) if tcfg.t1 is not None else cfg.t_end
    dt_r, _, _ = _reg_grid(model, t1, cfg, tcfg.reg_dt)
    kidx = step_blocks(model.field, 0.0, cfg.dt, cfg.n_steps)
    rng = generator(tcfg.seed + 1)
    probe = x_all[: min(256, n)].copy()
    adam = AdamState.zeros(model.layout.size)
    log = TrainLog()
    last_stable = model.theta.copy()
    last_epoch = 0

    for epoch in range(1, tcfg.epochs + 1):
        tic = time.perf_counter()
        perm = rng.permutation(n)
        mse_vals = []
        reg_vals = []
        for start in range(0, n, tcfg.batch_size):
            sel = perm[start : start + tcfg.batch_size]
            loss, g = _grad_mse(model, x_all[sel], y_all[sel], kidx, cfg.dt)
            if tcfg.gamma > 0.0:
                rv, gr = grad_reg(
                    model, x_all[sel], tcfg.delta, t1, cfg, tcfg.reg_dt
                )
                g = g + tcfg.gamma * gr
                reg_vals.append(rv)
            if not (np.isfinite(loss) and np.isfinite(g).all()):
                raise TrainingDivergedError(
                    f"non-finite loss/gradient in epoch {epoch}",
                    epoch=last_epoch,
                    theta=last_stable,
                )
            adam_step(model.theta, g, adam, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
            if not np.isfinite(model.theta).all():
                raise TrainingDivergedError(
                    f"non-finite parameters in epoch {epoch}",
                    epoch=last_epoch,
                    theta=last_stable,
                )
            mse_vals.append(loss)
        with np.errstate(invalid="ignore"):
            lam = max_exponents(model, probe, t1, cfg, tcfg.reg_dt)
        log.append(
            epoch=epoch,
            mse=float(np.mean(mse_vals)),
            reg=float(np.mean(reg_vals)) if reg_vals else float("nan"),
            train_acc=accuracy(model, train_ds, cfg),
            test_acc=accuracy(model, test_ds, cfg) if test_ds is not None else float("nan"),
            mean_lmax_T1=float(np.nanmean(lam)) if np.isfinite(lam).any() else float("nan"),
            seconds=time.perf_counter() - tic,
        )
        last_stable = model.theta.copy()
        last_epoch = epoch
    return log
