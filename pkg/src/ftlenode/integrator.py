"""Explicit Euler integration of the flow and its tangent (variational) map.

The schedule is sampled at the left endpoint of every step, so one Euler step
is x_{n} = x_{n-1} + dt f(theta(t_{n-1}), x_{n-1}), and with dt = 1 the flow
map is exactly the residual-network recursion x_k = x_{k-1} + f(theta_k,
x_{k-1}). Interval endpoints must sit on the step grid; there is no off-grid
interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DivergenceError, InvalidInputError

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class FlowConfig:
    """Step size and horizon of the integration grid."""

    dt: float
    t_end: float

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise InvalidInputError("dt must be positive and finite")
        if not (np.isfinite(self.t_end) and self.t_end > 0.0):
            raise InvalidInputError("t_end must be positive and finite")
        r = self.t_end / self.dt
        if abs(r - round(r)) > _ALIGN_TOL * max(1.0, abs(r)):
            raise InvalidInputError("t_end must be an integral number of steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray  # (S+1,)
    states: np.ndarray  # (S+1, d)


@dataclass
class TangentFlowResult:
    trajectory: Trajectory
    final_jacobian: np.ndarray  # (d, d)
    jacobians: list | None = None  # cumulative Y_n per step when recorded


def _step_index(t: float, dt: float, what: str) -> int:
    r = t / dt
    n = round(r)
    if abs(r - n) > _ALIGN_TOL * max(1.0, abs(r)):
        raise AlignmentError(f"{what}={t} is not on the dt={dt} step grid")
    return int(n)


def check_interval(model, interval, cfg: FlowConfig) -> tuple[int, int]:
    """Validate [t0, t1] against the step grid and horizons; return step ids."""
    t0, t1 = float(interval[0]), float(interval[1])
    if not (np.isfinite(t0) and np.isfinite(t1)):
        raise InvalidInputError("interval must be finite")
    n0 = _step_index(t0, cfg.dt, "t0")
    n1 = _step_index(t1, cfg.dt, "t1")
    if n0 < 0 or n1 <= n0:
        raise AlignmentError(f"need 0 <= t0 < t1, got [{t0}, {t1}]")
    horizon = min(cfg.t_end, float(getattr(model, "t_end", cfg.t_end)))
    if t1 > horizon * (1.0 + _ALIGN_TOL) + _ALIGN_TOL:
        raise AlignmentError(f"t1={t1} beyond horizon {horizon}")
    return n0, n1


def step_blocks(model, t0: float, dt: float, n_steps: int) -> np.ndarray:
    """Active block index for each step's left endpoint, as an int array.

    Lookups snap onto breakpoints with a horizon-relative 1e-9 slack so that
    accumulated-float left endpoints (t0 + n*dt) land in the same block as
    their exact values.
    """
    bp = np.asarray(model.breakpoints, dtype=np.float64)
    times = t0 + dt * np.arange(n_steps)
    snap = 1e-9 * max(bp[-1], 1.0)
    idx = np.searchsorted(bp, times + snap, side="right") - 1
    idx = np.clip(idx, 0, bp.size - 2)
    return idx.astype(np.int64)


def flow(model, x0, interval, cfg: FlowConfig) -> Trajectory:
    """Euler flow of one state over [t0, t1]; raises on divergence."""
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (model.d,):
        raise InvalidInputError(f"x0 must have shape ({model.d},)")
    if not np.isfinite(x).all():
        raise InvalidInputError("x0 has non-finite entries")
    n0, n1 = check_interval(model, interval, cfg)
    t0 = float(interval[0])
    steps = n1 - n0
    kidx = step_blocks(model, t0, cfg.dt, steps)
    states = np.empty((steps + 1, model.d))
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(steps):
            fx = model.eval_batch(int(kidx[n]), states[n][None, :])[0]
            states[n + 1] = states[n] + cfg.dt * fx
            if not np.isfinite(states[n + 1]).all():
                raise DivergenceError(
                    f"non-finite state after step {n + 1}", step_index=n + 1
                )
    times = t0 + cfg.dt * np.arange(steps + 1)
    return Trajectory(times=times, states=states)


def tangent_flow(
    model, x0, interval, cfg: FlowConfig, record_intermediate: bool = False
) -> TangentFlowResult:
    """Joint propagation of the state and the tangent map Y over [t0, t1].

    Y solves the variational recursion Y_n = (I + dt D_x f) Y_{n-1}, Y_0 = I,
    with the Jacobian evaluated at the step's left endpoint, so Y at t1 is the
    derivative of the discrete flow map with respect to x0.
    """
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (model.d,):
        raise InvalidInputError(f"x0 must have shape ({model.d},)")
    if not np.isfinite(x).all():
        raise InvalidInputError("x0 has non-finite entries")
    n0, n1 = check_interval(model, interval, cfg)
    t0 = float(interval[0])
    steps = n1 - n0
    kidx = step_blocks(model, t0, cfg.dt, steps)
    d = model.d
    states = np.empty((steps + 1, d))
    states[0] = x
    y = np.eye(d)
    recorded = [y.copy()] if record_intermediate else None
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(steps):
            k = int(kidx[n])
            cur = states[n][None, :]
            fx = model.eval_batch(k, cur)[0]
            jx = model.jac_batch(k, cur)[0]
            y = y + cfg.dt * (jx @ y)
            states[n + 1] = states[n] + cfg.dt * fx
            if not (np.isfinite(states[n + 1]).all() and np.isfinite(y).all()):
                raise DivergenceError(
                    f"non-finite state or tangent after step {n + 1}",
                    step_index=n + 1,
                )
            if record_intermediate:
                recorded.append(y.copy())
    times = t0 + cfg.dt * np.arange(steps + 1)
    return TangentFlowResult(
        trajectory=Trajectory(times=times, states=states),
        final_jacobian=y,
        jacobians=recorded,
    )


def resnet_step_equivalence(model, x0, n_steps: int) -> bool:
    """Whether dt = 1 Euler matches the residual recursion bit for bit.

    Runs the flow over [0, n_steps] with unit steps and replays the recursion
    x_k = x_{k-1} + f(theta(k-1), x_{k-1}) through the same field evaluation;
    returns True only when every intermediate state is identical.
    """
    if n_steps < 1:
        raise InvalidInputError("n_steps must be >= 1")
    cfg = FlowConfig(dt=1.0, t_end=float(n_steps))
    traj = flow(model, x0, (0.0, float(n_steps)), cfg)
    kidx = step_blocks(model, 0.0, 1.0, n_steps)
    x = np.asarray(x0, dtype=np.float64).copy()
    for n in range(n_steps):
        x = x + model.eval_batch(int(kidx[n]), x[None, :])[0]
        if not np.array_equal(x, traj.states[n + 1]):
            return False
    return True


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Dump a trajectory as CSV with header t,x1,...,xd."""
    d = traj.states.shape[1]
    header = "t," + ",".join(f"x{i + 1}" for i in range(d))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for t, row in zip(traj.times, traj.states):
            cells = [f"{t:.17g}"] + [f"{v:.17g}" for v in row]
            fh.write(",".join(cells) + "\n")
