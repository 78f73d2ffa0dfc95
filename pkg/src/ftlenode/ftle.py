"""Finite-time Lyapunov exponents of the learned flow.

The j-th exponent over [t0, t1] is ln(sigma_j(Y)) / (t1 - t0), with sigma_j
the singular values of the tangent map Y propagated by the integrator.
Equivalently ln(rho_j) / (2 (t1 - t0)) for eigenvalues rho_j of the
Cauchy-Green tensor Y^T Y; both normalizations are computed here and checked
against each other in the tests.

Field sweeps evaluate the exponents on a uniform grid of initial states, in
one of four interval modes:

    full        one frame, [0, T]
    growing     frames [0, t_n] on sampled steps, one shared trajectory
    shrinking   frames [t_n, T], tangent restarted at the frame start
    subinterval one frame per parameter block, [t_{k-1}, t_k], restarted

Frame interval lengths are always accumulated as n_steps * dt so that e.g.
the last growing frame reproduces the full-mode field bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend, linalg
from .errors import AlignmentError, DegenerateTangentError, InvalidInputError
from .integrator import FlowConfig, step_blocks

MODES = ("full", "growing", "shrinking", "subinterval")


@dataclass
class FtleSpectrum:
    exponents: np.ndarray  # (d,), descending
    interval: tuple[float, float]


@dataclass
class CauchyGreen:
    tensor: np.ndarray  # (d, d), symmetric
    eigenvalues: np.ndarray  # (d,), descending
    eigenvectors: np.ndarray  # (d, d), columns
    interval: tuple[float, float]

    @property
    def max_exponent(self) -> float:
        length = self.interval[1] - self.interval[0]
        return float(np.log(self.eigenvalues[0]) / (2.0 * length))


@dataclass
class FtleField:
    bounds: tuple[tuple[float, float], tuple[float, float]]
    resolution: int
    mode: str
    which_exponent: int
    frames: list  # list of (res, res) arrays indexed [iy, ix]
    intervals: list  # list of (t0, t1) per frame
    failed_points: int


def _check_interval_pair(interval) -> tuple[float, float]:
    t0, t1 = float(interval[0]), float(interval[1])
    if not (np.isfinite(t0) and np.isfinite(t1) and t1 > t0):
        raise InvalidInputError(f"bad interval [{t0}, {t1}]")
    return t0, t1


def spectrum_from_tangent(y, interval) -> FtleSpectrum:
    """Exponent spectrum of one tangent matrix over the given interval."""
    t0, t1 = _check_interval_pair(interval)
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidInputError("tangent must be square")
    if not np.isfinite(arr).all():
        raise InvalidInputError("tangent has non-finite entries")
    sigma = linalg.svd(arr)[1]
    if sigma[-1] <= 1e-300:
        raise DegenerateTangentError("tangent is numerically singular")
    return FtleSpectrum(exponents=np.log(sigma) / (t1 - t0), interval=(t0, t1))


def cauchy_green(y, interval) -> CauchyGreen:
    """Cauchy-Green tensor C = Y^T Y with its eigen-decomposition."""
    t0, t1 = _check_interval_pair(interval)
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidInputError("tangent must be square")
    if not np.isfinite(arr).all():
        raise InvalidInputError("tangent has non-finite entries")
    c = arr.T @ arr
    w, q = linalg.sym_eig(c)
    return CauchyGreen(tensor=c, eigenvalues=w, eigenvectors=q, interval=(t0, t1))


def grid_axes(bounds, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    (x0, x1), (y0, y1) = bounds
    if not (x1 > x0 and y1 > y0):
        raise InvalidInputError("bounds must be increasing")
    if resolution < 2:
        raise InvalidInputError("resolution must be >= 2")
    return np.linspace(x0, x1, resolution), np.linspace(y0, y1, resolution)


def grid_points(bounds, resolution: int) -> np.ndarray:
    """Grid nodes as an (res*res, 2) array, x fastest, matching [iy, ix]."""
    xs, ys = grid_axes(bounds, resolution)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _block_step_ranges(field, cfg: FlowConfig) -> list[tuple[int, int]]:
    """Step index range of each parameter block; breakpoints must be on-grid."""
    bp = np.asarray(field.breakpoints, dtype=np.float64)
    out = []
    for k in range(bp.size - 1):
        r0 = bp[k] / cfg.dt
        r1 = bp[k + 1] / cfg.dt
        if abs(r0 - round(r0)) > 1e-9 * max(1.0, abs(r0)) or abs(
            r1 - round(r1)
        ) > 1e-9 * max(1.0, abs(r1)):
            raise AlignmentError(
                f"block boundary [{bp[k]}, {bp[k + 1]}] not on the dt={cfg.dt} grid"
            )
        out.append((int(round(r0)), int(round(r1))))
    return out


def ftle_field(
    model,
    bounds,
    resolution: int,
    mode: str,
    which_exponent: int,
    cfg: FlowConfig,
    sample_every: int = 5,
    threads: int = 1,
) -> FtleField:
    """Exponent field(s) over a grid of initial states.

    model may be a full classifier (its .field is used) or any field object
    with eval_batch/jac_batch. Nodes whose trajectory or tangent leaves the
    representable range get NaN and are counted in failed_points.
    """
    field = getattr(model, "field", model)
    if field.d != 2:
        raise InvalidInputError("field sweeps are defined for d = 2")
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}")
    if not 1 <= which_exponent <= field.d:
        raise InvalidInputError(
            f"which_exponent must be in [1, {field.d}], got {which_exponent}"
        )
    if sample_every < 1:
        raise InvalidInputError("sample_every must be >= 1")
    n_steps = cfg.n_steps
    horizon = float(getattr(field, "t_end", cfg.t_end))
    if cfg.t_end > horizon * (1.0 + 1e-9):
        raise AlignmentError(f"t_end={cfg.t_end} beyond schedule horizon {horizon}")
    kidx = step_blocks(field, 0.0, cfg.dt, n_steps)
    pts = grid_points(bounds, resolution)
    j = which_exponent - 1
    dt = cfg.dt

    if mode == "full":
        rec_steps = [n_steps]
        intervals = [(0.0, n_steps * dt)]
    elif mode == "growing":
        rec_steps = sorted(set(range(sample_every, n_steps, sample_every)) | {n_steps})
        intervals = [(0.0, n * dt) for n in rec_steps]
    elif mode == "shrinking":
        starts = list(range(0, n_steps, sample_every))
        intervals = [(m * dt, m * dt + (n_steps - m) * dt) for m in starts]
    else:
        ranges = _block_step_ranges(field, cfg)
        if ranges[-1][1] != n_steps:
            raise AlignmentError("schedule horizon does not match t_end")
        intervals = [(n0 * dt, n0 * dt + (n1 - n0) * dt) for n0, n1 in ranges]

    n_frames = len(intervals)
    flat_frames = np.empty((n_frames, pts.shape[0]))

    def sweep_full_growing(start, chunk):
        _, yrec = _backend.tangent_batch(field, chunk, dt, kidx, rec_steps)
        for fi, n in enumerate(rec_steps):
            sig = linalg.singular_values_batch(yrec[fi])
            with np.errstate(divide="ignore", invalid="ignore"):
                flat_frames[fi, start : start + chunk.shape[0]] = np.log(
                    sig[:, j]
                ) / (n * dt)

    def sweep_shrinking(start, chunk):
        states = _backend.flow_batch(field, chunk, dt, kidx, starts)
        for fi, m in enumerate(starts):
            _, yrec = _backend.tangent_batch(
                field, states[fi], dt, kidx[m:], [n_steps - m]
            )
            sig = linalg.singular_values_batch(yrec[0])
            with np.errstate(divide="ignore", invalid="ignore"):
                flat_frames[fi, start : start + chunk.shape[0]] = np.log(
                    sig[:, j]
                ) / ((n_steps - m) * dt)

    def sweep_subinterval(start, chunk):
        starts_k = [n0 for n0, _ in ranges]
        states = _backend.flow_batch(field, chunk, dt, kidx, starts_k)
        for fi, (n0, n1) in enumerate(ranges):
            _, yrec = _backend.tangent_batch(
                field, states[fi], dt, kidx[n0:n1], [n1 - n0]
            )
            sig = linalg.singular_values_batch(yrec[0])
            with np.errstate(divide="ignore", invalid="ignore"):
                flat_frames[fi, start : start + chunk.shape[0]] = np.log(
                    sig[:, j]
                ) / ((n1 - n0) * dt)

    if mode in ("full", "growing"):
        worker = sweep_full_growing
    elif mode == "shrinking":
        worker = sweep_shrinking
    else:
        worker = sweep_subinterval
    _backend.run_chunked(pts, threads, worker)

    finite = np.isfinite(flat_frames)
    flat_frames[~finite] = np.nan
    failed = int(np.count_nonzero(~finite.all(axis=0)))
    frames = [flat_frames[i].reshape(resolution, resolution) for i in range(n_frames)]
    return FtleField(
        bounds=tuple((float(lo), float(hi)) for lo, hi in bounds),
        resolution=resolution,
        mode=mode,
        which_exponent=which_exponent,
        frames=frames,
        intervals=intervals,
        failed_points=failed,
    )


def _field_header(field: FtleField, frame_index: int) -> list[str]:
    t0, t1 = field.intervals[frame_index]
    (x0, x1), (y0, y1) = field.bounds
    return [
        f"# mode={field.mode}",
        f"# interval={t0:.17g}:{t1:.17g}",
        f"# exponent={field.which_exponent}",
        f"# bounds={x0:.17g}:{x1:.17g}:{y0:.17g}:{y1:.17g}",
        f"# res={field.resolution}",
    ]


def write_field_csv(field: FtleField, frame_index: int, path) -> None:
    """One frame as CSV: comment header, then x,y,lambda rows (x fastest)."""
    xs, ys = grid_axes(field.bounds, field.resolution)
    values = field.frames[frame_index]
    with open(path, "w", encoding="ascii") as fh:
        for line in _field_header(field, frame_index):
            fh.write(line + "\n")
        fh.write("x,y,lambda\n")
        for iy in range(field.resolution):
            for ix in range(field.resolution):
                fh.write(f"{xs[ix]:.17g},{ys[iy]:.17g},{values[iy, ix]:.17g}\n")


def _normalize_bytes(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    finite = np.isfinite(values)
    if finite.any():
        vmin = float(values[finite].min())
        vmax = float(values[finite].max())
    else:
        vmin = vmax = 0.0
    if vmax > vmin:
        scaled = (values - vmin) / (vmax - vmin)
    else:
        scaled = np.zeros_like(values)
    scaled = np.where(finite, scaled, 0.0)
    byte = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    return byte, vmin, vmax


def write_field_pgm(field: FtleField, frame_index: int, path) -> tuple[float, float]:
    """One frame as 8-bit PGM (min-max normalized, NaN -> black, north up).

    The normalization range goes to a sidecar file (same name, .meta suffix)
    as a single `vmin=<...> vmax=<...>` line.
    """
    values = field.frames[frame_index]
    byte, vmin, vmax = _normalize_bytes(values)
    img = byte[::-1, :]  # row 0 = max y
    with open(path, "wb") as fh:
        fh.write(f"P5\n{field.resolution} {field.resolution}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    meta = str(path)
    meta = meta[: meta.rfind(".")] + ".meta" if "." in meta else meta + ".meta"
    with open(meta, "w", encoding="ascii") as fh:
        fh.write(f"vmin={vmin:.17g} vmax={vmax:.17g}\n")
    return vmin, vmax


# 256-entry color table: the 11 anchor colors below (viridis-like, dark
# purple to yellow) linearly interpolated on [0, 1]. This table definition is
# the format spec for the PPM output.
_ANCHORS = np.array(
    [
        (0.267, 0.005, 0.329),
        (0.283, 0.141, 0.458),
        (0.254, 0.265, 0.530),
        (0.207, 0.372, 0.553),
        (0.164, 0.471, 0.558),
        (0.128, 0.567, 0.551),
        (0.135, 0.659, 0.518),
        (0.267, 0.749, 0.441),
        (0.478, 0.821, 0.318),
        (0.741, 0.873, 0.150),
        (0.993, 0.906, 0.144),
    ]
)


def color_table() -> np.ndarray:
    """(256, 3) uint8 palette used by write_field_ppm."""
    t = np.linspace(0.0, 1.0, 256)
    xp = np.linspace(0.0, 1.0, _ANCHORS.shape[0])
    rgb = np.stack([np.interp(t, xp, _ANCHORS[:, c]) for c in range(3)], axis=1)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


_TABLE = color_table()


def write_field_ppm(field: FtleField, frame_index: int, path) -> tuple[float, float]:
    """One frame as binary PPM through the fixed 256-entry color table."""
    values = field.frames[frame_index]
    byte, vmin, vmax = _normalize_bytes(values)
    img = _TABLE[byte[::-1, :]]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{field.resolution} {field.resolution}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return vmin, vmax
