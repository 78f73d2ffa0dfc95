"""Post-training diagnostics on rasters shared with the exponent fields.

Covers prediction grids and decision margins, ridge extraction by gradient-
aligned non-maximum suppression, ridge/margin overlap scoring, Monte Carlo
almost-invariance estimates, and adversarial probing of trained classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from ._rng import generator
from .errors import DivergenceError, InvalidInputError
from .ftle import _normalize_bytes, grid_axes, grid_points
from .integrator import FlowConfig, check_interval, step_blocks
from .training import Model, pred_from_readout

DEFAULT_MARGIN_EPS = 0.1
DEFAULT_OVERLAP_TOL = 3
DEFAULT_PGA_STEPS = 24
_SWEEP_ANGLES = 16
_SWEEP_RADII = 6


@dataclass
class ScalarGrid:
    """One scalar per node on the same raster as exponent-field frames:
    values[iy, ix] sits at (xs[ix], ys[iy])."""

    bounds: tuple
    resolution: int
    values: np.ndarray

    def axes(self):
        return grid_axes(self.bounds, self.resolution)

    def cell_area(self) -> float:
        (x0, x1), (y0, y1) = self.bounds
        n = self.resolution - 1
        return ((x1 - x0) / n) * ((y1 - y0) / n)


@dataclass
class RidgeSet:
    mask: np.ndarray
    indices: np.ndarray  # (n, 2) rows of (iy, ix)
    values: np.ndarray
    directions: np.ndarray  # quantized (dy, dx); (0, 0) marks the plateau rule

    @property
    def n_nodes(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class CoherenceReport:
    epsilon_out: float
    ratio: float
    sample_count: int


def pred_grid(model: Model, bounds, resolution: int, cfg: FlowConfig,
              threads: int = 1) -> ScalarGrid:
    """Blue-class score at every node; NaN where the flow blows up."""
    points = grid_points(bounds, resolution)
    kidx = step_blocks(model.field, 0.0, cfg.dt, cfg.n_steps)
    record = np.array([cfg.n_steps], dtype=np.int64)
    flat = np.empty(points.shape[0])

    def run(start, chunk):
        end = _backend.flow_batch(model.field, chunk, cfg.dt, kidx, record)[0]
        out = end @ model.output.W.T + model.output.b
        with np.errstate(invalid="ignore"):
            pred = pred_from_readout(out)
        pred[~np.isfinite(out).all(axis=1)] = np.nan
        flat[start : start + chunk.shape[0]] = pred

    _backend.run_chunked(points, threads, run)
    return ScalarGrid(bounds=bounds, resolution=resolution,
                      values=flat.reshape(resolution, resolution))


def decision_margin(grid: ScalarGrid, epsilon: float = DEFAULT_MARGIN_EPS):
    """(mask, area) of the low-confidence band |pred - 0.5| < epsilon.

    The area estimate is node count times cell area. NaN nodes are excluded.
    """
    if epsilon < 0.0 or not np.isfinite(epsilon):
        raise InvalidInputError("epsilon must be >= 0")
    with np.errstate(invalid="ignore"):
        mask = np.abs(grid.values - 0.5) < epsilon
    mask &= np.isfinite(grid.values)
    return mask, float(mask.sum()) * grid.cell_area()


def extract_ridges(grid: ScalarGrid, min_value: float | None = None) -> RidgeSet:
    """Gradient-aligned non-maximum suppression on the raster.

    A node is a ridge point iff its value is at least min_value and strictly
    exceeds both neighbors along the quantized central-difference gradient
    direction. Where the gradient vanishes the node must be a strict maximum
    along one axis and a weak maximum along the other (this flags plateau
    crests and isolated peaks but rejects saddles and constants). Border
    nodes are never flagged. min_value defaults to the midpoint of the
    finite value range.
    """
    v = grid.values
    res = grid.resolution
    if min_value is None:
        finite = v[np.isfinite(v)]
        if finite.size == 0:
            empty = np.zeros((res, res), dtype=bool)
            return RidgeSet(empty, np.empty((0, 2), dtype=np.int64),
                            np.empty(0), np.empty((0, 2), dtype=np.int64))
        min_value = 0.5 * (float(finite.min()) + float(finite.max()))

    vi = v[1:-1, 1:-1]
    with np.errstate(invalid="ignore"):
        gx = 0.5 * (v[1:-1, 2:] - v[1:-1, :-2])
        gy = 0.5 * (v[2:, 1:-1] - v[:-2, 1:-1])
        norm = np.hypot(gx, gy)
        moving = norm > 0.0
        dyq = np.zeros_like(gy, dtype=np.int64)
        dxq = np.zeros_like(gx, dtype=np.int64)
        dyq[moving] = np.rint(gy[moving] / norm[moving]).astype(np.int64)
        dxq[moving] = np.rint(gx[moving] / norm[moving]).astype(np.int64)

        flag = np.zeros(vi.shape, dtype=bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                sel = moving & (dyq == dy) & (dxq == dx)
                if not sel.any():
                    continue
                fwd = v[1 + dy : res - 1 + dy, 1 + dx : res - 1 + dx]
                bwd = v[1 - dy : res - 1 - dy, 1 - dx : res - 1 - dx]
                flag |= sel & (vi > fwd) & (vi > bwd)

        up, down = v[2:, 1:-1], v[:-2, 1:-1]
        right, left = v[1:-1, 2:], v[1:-1, :-2]
        y_strict = (vi > up) & (vi > down)
        y_weak = (vi >= up) & (vi >= down)
        x_strict = (vi > right) & (vi > left)
        x_weak = (vi >= right) & (vi >= left)
        flag |= (~moving) & np.isfinite(gx) & np.isfinite(gy) & (
            (y_strict & x_weak) | (x_strict & y_weak)
        )
        flag &= vi >= min_value

    mask = np.zeros((res, res), dtype=bool)
    mask[1:-1, 1:-1] = flag
    iy, ix = np.nonzero(mask)
    order = np.lexsort((ix, iy))
    iy, ix = iy[order], ix[order]
    indices = np.stack([iy, ix], axis=1).astype(np.int64)
    dirs = np.zeros((iy.size, 2), dtype=np.int64)
    dirs[:, 0] = dyq[iy - 1, ix - 1]
    dirs[:, 1] = dxq[iy - 1, ix - 1]
    return RidgeSet(mask=mask, indices=indices, values=v[iy, ix], directions=dirs)


def ridge_boundary_overlap(ridges: RidgeSet, margin_mask: np.ndarray,
                           tolerance_cells: int = DEFAULT_OVERLAP_TOL):
    """Fraction of ridge nodes within a Chebyshev distance of the margin.

    Returns None when the ridge set is empty (undefined, distinct from 0).
    """
    if margin_mask.shape != ridges.mask.shape:
        raise InvalidInputError("ridge and margin rasters differ in shape")
    if tolerance_cells < 0:
        raise InvalidInputError("tolerance_cells must be >= 0")
    if ridges.n_nodes == 0:
        return None
    res_y, res_x = margin_mask.shape
    dilated = np.zeros_like(margin_mask)
    t = int(tolerance_cells)
    for dy in range(-t, t + 1):
        ys0, ys1 = max(0, dy), min(res_y, res_y + dy)
        ms0, ms1 = max(0, -dy), min(res_y, res_y - dy)
        for dx in range(-t, t + 1):
            xs0, xs1 = max(0, dx), min(res_x, res_x + dx)
            mx0, mx1 = max(0, -dx), min(res_x, res_x - dx)
            dilated[ys0:ys1, xs0:xs1] |= margin_mask[ms0:ms1, mx0:mx1]
    hits = dilated[ridges.indices[:, 0], ridges.indices[:, 1]]
    return float(np.mean(hits))


def coherence_ratio(model: Model, region_t0: np.ndarray, region_t1: np.ndarray,
                    bounds, interval, cfg: FlowConfig, samples: int = 10_000,
                    seed: int = 0, threads: int = 1) -> CoherenceReport:
    """Monte Carlo estimate of how much of region_t0 flows into region_t1.

    Points are drawn uniformly from the cells of region_t0 (node choice plus
    in-cell jitter), advanced over the interval, and assigned to the nearest
    node; landings outside the raster or at non-finite states count as
    leaked. Raises when every sample blows up.
    """
    region_t0 = np.asarray(region_t0, dtype=bool)
    region_t1 = np.asarray(region_t1, dtype=bool)
    if region_t0.shape != region_t1.shape or region_t0.ndim != 2:
        raise InvalidInputError("region masks must share one square raster")
    res = region_t0.shape[0]
    if region_t0.shape[1] != res:
        raise InvalidInputError("region masks must be square")
    if not region_t0.any():
        raise InvalidInputError("region_t0 has no nodes")
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    n0, n1 = check_interval(model.field, interval, cfg)
    xs, ys = grid_axes(bounds, res)
    hx = xs[1] - xs[0] if res > 1 else 1.0
    hy = ys[1] - ys[0] if res > 1 else 1.0

    rng = generator(seed)
    node_iy, node_ix = np.nonzero(region_t0)
    pick = rng.integers(0, node_iy.size, size=samples)
    # jitter stays strictly inside the half-open cell so zero dynamics maps
    # every sample back to its own node
    jit = (rng.random((samples, 2)) - 0.5) * (1.0 - 1e-12)
    starts = np.stack(
        [xs[node_ix[pick]] + jit[:, 0] * hx, ys[node_iy[pick]] + jit[:, 1] * hy],
        axis=1,
    )

    kidx = step_blocks(model.field, float(interval[0]), cfg.dt, n1 - n0)
    record = np.array([n1 - n0], dtype=np.int64)
    landed = np.empty_like(starts)

    def run(start, chunk):
        landed[start : start + chunk.shape[0]] = _backend.flow_batch(
            model.field, chunk, cfg.dt, kidx, record
        )[0]

    _backend.run_chunked(starts, threads, run)

    finite = np.isfinite(landed).all(axis=1)
    if not finite.any():
        raise DivergenceError("every coherence sample left the finite domain")
    with np.errstate(invalid="ignore"):
        ixl = np.rint((landed[:, 0] - xs[0]) / hx)
        iyl = np.rint((landed[:, 1] - ys[0]) / hy)
    inside = finite & (ixl >= 0) & (ixl < res) & (iyl >= 0) & (iyl < res)
    hit = np.zeros(samples, dtype=bool)
    hit[inside] = region_t1[iyl[inside].astype(int), ixl[inside].astype(int)]
    ratio = float(hit.sum()) / samples
    return CoherenceReport(epsilon_out=1.0 - ratio, ratio=ratio,
                           sample_count=samples)


# ---------------------------------------------------------------------------
# adversarial probing


def _pred_batch_flow(model: Model, x, cfg: FlowConfig, kidx, record):
    end = _backend.flow_batch(model.field, x, cfg.dt, kidx, record)[0]
    out = end @ model.output.W.T + model.output.b
    with np.errstate(invalid="ignore"):
        pred = pred_from_readout(out)
    pred[~np.isfinite(out).all(axis=1)] = np.nan
    return pred


def _pred_and_grad(model: Model, x, cfg: FlowConfig, kidx, record):
    """Score and its input gradient through the tangent map."""
    from .data import LABELS

    end, y_rec = _backend.tangent_batch(model.field, x, cfg.dt, kidx, record)
    y_end = y_rec[-1]
    out = end @ model.output.W.T + model.output.b
    with np.errstate(invalid="ignore", divide="ignore"):
        rb = out - LABELS[0]
        ro = out - LABELS[1]
        db = np.sqrt((rb * rb).sum(axis=1))
        do = np.sqrt((ro * ro).sum(axis=1))
        tot = np.maximum(db + do, 1e-300)
        pred = do / tot
        db_g = rb / np.maximum(db, 1e-300)[:, None]
        do_g = ro / np.maximum(do, 1e-300)[:, None]
        gout = (do_g * db[:, None] - do[:, None] * db_g) / (tot * tot)[:, None]
        gx = np.einsum("bij,bi->bj", y_end, gout @ model.output.W)
    bad = ~np.isfinite(out).all(axis=1)
    pred[bad] = np.nan
    gx[bad] = np.nan
    return pred, gx


def _flip(pred, orig_blue):
    with np.errstate(invalid="ignore"):
        return np.where(orig_blue, pred < 0.5, pred > 0.5) & np.isfinite(pred)


def adversarial_success(model: Model, x0s, budget: float, cfg: FlowConfig,
                        steps: int = DEFAULT_PGA_STEPS):
    """Per-point class-flip search within the Euclidean budget ball.

    Projected gradient iterations (step 2*budget/steps) move each point
    against its original-class confidence; any iterate that flips the
    predicted class is a witness. Points still unflipped get a radial sweep
    over 16 fixed directions, the initial gradient direction, and the final
    iterate direction, at 6 radii up to the budget. Returns (success flags,
    witnesses) with NaN witness rows where the search failed. Unclassified
    points (NaN or exactly 0.5) never succeed.
    """
    x0 = np.asarray(x0s, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[1] != model.d:
        raise InvalidInputError(f"probe points must be (B, {model.d})")
    if budget < 0.0 or not np.isfinite(budget):
        raise InvalidInputError("budget must be >= 0")
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    n = x0.shape[0]
    success = np.zeros(n, dtype=bool)
    witness = np.full_like(x0, np.nan)
    if budget == 0.0:
        return success, witness

    kidx = step_blocks(model.field, 0.0, cfg.dt, cfg.n_steps)
    record = np.array([cfg.n_steps], dtype=np.int64)
    pred0, g0 = _pred_and_grad(model, x0, cfg, kidx, record)
    alive = np.isfinite(pred0) & (pred0 != 0.5)
    orig_blue = pred0 > 0.5

    x = x0.copy()
    step = 2.0 * budget / steps
    for _ in range(steps):
        moving = alive & ~success
        if not moving.any():
            break
        pred, grad = _pred_and_grad(model, x[moving], cfg, kidx, record)
        flipped = _flip(pred, orig_blue[moving])
        idx = np.nonzero(moving)[0]
        new = idx[flipped]
        success[new] = True
        witness[new] = x[new]
        still = idx[~flipped]
        if still.size == 0:
            break
        g = grad[~flipped]
        sign = np.where(orig_blue[still], -1.0, 1.0)
        gn = np.linalg.norm(g, axis=1)
        ok = np.isfinite(gn) & (gn > 0.0)
        move = np.zeros_like(g)
        move[ok] = g[ok] / gn[ok, None]
        cand = x[still] + step * sign[:, None] * move
        xi = cand - x0[still]
        r = np.linalg.norm(xi, axis=1)
        shrink = np.minimum(1.0, budget / np.maximum(r, 1e-300))
        x[still] = x0[still] + xi * shrink[:, None]

    moving = alive & ~success
    if moving.any():
        pred, _ = _pred_and_grad(model, x[moving], cfg, kidx, record)
        flipped = _flip(pred, orig_blue[moving])
        idx = np.nonzero(moving)[0]
        success[idx[flipped]] = True
        witness[idx[flipped]] = x[idx[flipped]]

    rest = np.nonzero(alive & ~success)[0]
    if rest.size:
        angles = 2.0 * np.pi * np.arange(_SWEEP_ANGLES) / _SWEEP_ANGLES
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        dirs = np.tile(dirs, (rest.size, 1, 1))
        extra = []
        for src in (g0[rest] * np.where(orig_blue[rest], -1.0, 1.0)[:, None],
                    x[rest] - x0[rest]):
            nrm = np.linalg.norm(src, axis=1)
            unit = np.zeros_like(src)
            good = np.isfinite(nrm) & (nrm > 0.0)
            unit[good] = src[good] / nrm[good, None]
            extra.append(unit[:, None, :])
        dirs = np.concatenate([dirs] + extra, axis=1)  # (m, n_dir, 2)
        radii = budget * np.arange(1, _SWEEP_RADII + 1) / _SWEEP_RADII
        cand = (x0[rest, None, None, :]
                + radii[None, None, :, None] * dirs[:, :, None, :])
        flat = cand.reshape(-1, 2)
        pred = _pred_batch_flow(model, flat, cfg, kidx, record)
        n_dir = dirs.shape[1]
        flips = _flip(pred, np.repeat(orig_blue[rest], n_dir * _SWEEP_RADII))
        flips = flips.reshape(rest.size, n_dir * _SWEEP_RADII)
        for row, pi in enumerate(rest):
            j = np.argmax(flips[row])
            if flips[row, j]:
                success[pi] = True
                witness[pi] = flat[row * n_dir * _SWEEP_RADII + j]
    return success, witness


def adversarial_probe(model: Model, x0, budget: float, cfg: FlowConfig,
                      steps: int = DEFAULT_PGA_STEPS):
    """(success, witness or None) for a single classified point."""
    x = np.asarray(x0, dtype=np.float64).reshape(1, -1)
    kidx = step_blocks(model.field, 0.0, cfg.dt, cfg.n_steps)
    record = np.array([cfg.n_steps], dtype=np.int64)
    p = _pred_batch_flow(model, x, cfg, kidx, record)[0]
    if not np.isfinite(p) or p == 0.5:
        raise InvalidInputError("probe point is not classified")
    success, witness = adversarial_success(model, x, budget, cfg, steps=steps)
    return bool(success[0]), (witness[0].copy() if success[0] else None)


def adversarial_success_rate(model: Model, x0s, budget: float, cfg: FlowConfig,
                             steps: int = DEFAULT_PGA_STEPS) -> float:
    success, _ = adversarial_success(model, x0s, budget, cfg, steps=steps)
    return float(np.mean(success))


# ---------------------------------------------------------------------------
# artifact writers


def write_scalar_csv(grid: ScalarGrid, name: str, path) -> None:
    """Grid as CSV: bounds/res comment lines, then x,y,<name> (x fastest)."""
    xs, ys = grid.axes()
    (x0, x1), (y0, y1) = grid.bounds
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# field={name}\n")
        fh.write(f"# bounds={x0:.17g}:{x1:.17g}:{y0:.17g}:{y1:.17g}\n")
        fh.write(f"# res={grid.resolution}\n")
        fh.write(f"x,y,{name}\n")
        for iy in range(grid.resolution):
            for ix in range(grid.resolution):
                fh.write(f"{xs[ix]:.17g},{ys[iy]:.17g},{grid.values[iy, ix]:.17g}\n")


def write_mask_pgm(mask: np.ndarray, path) -> None:
    """Boolean raster as 8-bit PGM, north up (row 0 = max y)."""
    byte, _, _ = _normalize_bytes(mask.astype(np.float64))
    img = byte[::-1, :]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_ridge_csv(grid: ScalarGrid, ridges: RidgeSet, path) -> None:
    """Ridge nodes as x,y,lambda rows."""
    xs, ys = grid.axes()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("x,y,lambda\n")
        for (iy, ix), val in zip(ridges.indices, ridges.values):
            fh.write(f"{xs[ix]:.17g},{ys[iy]:.17g},{val:.17g}\n")


def format_report(entries: dict) -> str:
    """Flat key=value lines; None renders as `undefined`."""
    lines = []
    for key, val in entries.items():
        if val is None:
            lines.append(f"{key}=undefined")
        elif isinstance(val, bool):
            lines.append(f"{key}={'true' if val else 'false'}")
        elif isinstance(val, (int, np.integer)):
            lines.append(f"{key}={int(val)}")
        elif isinstance(val, float):
            lines.append(f"{key}={val:.17g}")
        else:
            lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"
