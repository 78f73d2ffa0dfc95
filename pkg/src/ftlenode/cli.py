"""Command line front end for the whole pipeline.

Subcommands: data, train, evolve, ftle, analyze, repro, bench. Settings come
from built-in defaults, then a `key = value` config file (# comments), then
explicit flags, in increasing precedence; the effective configuration is
echoed to run.cfg in the output directory. Exit codes: 0 ok, 2 usage,
3 numerical divergence, 4 mode/checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import _backend, analysis, ftle, presets
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_csv, make_moons, save_csv, split
from .errors import (
    AlignmentError,
    DegenerateTangentError,
    DivergenceError,
    InvalidInputError,
    OutOfDomainError,
    TrainingDivergedError,
)
from .integrator import FlowConfig, flow, write_trajectory_csv
from .training import Model, TrainConfig, accuracy, he_init, train

DEFAULT_BOUNDS = "-2:2:-1.5:1.5"
FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8")


class ModeMismatchError(RuntimeError):
    """Field mode or exponent request does not fit the checkpoint."""


# ---------------------------------------------------------------------------
# configuration plumbing

_DEFAULTS = {
    "data": {
        "n": 4000, "noise": 0.1, "seed": 0, "out_dir": ".", "out": "moons.csv",
        "test_fraction": 0.0,
    },
    # lr, epochs, batch, and seed default per architecture (TRAIN_DEFAULTS)
    "train": {
        "arch": "ex1", "gamma": 0.0, "delta": 0.05, "t1": None, "lr": None,
        "epochs": None, "batch": None, "seed": None, "reg_dt": None, "dt": 0.1,
        "t_end": 10.0, "n": 4000, "noise": 0.1, "data_seed": 0,
        "test_fraction": 0.25, "data": None, "out_dir": ".",
        "out": "model.ckpt", "log": "train_log.csv",
    },
    "evolve": {
        "ckpt": None, "x0": "0:0", "t0": 0.0, "t1": None, "dt": 0.1,
        "out_dir": ".", "out": "trajectory.csv",
    },
    "ftle": {
        "ckpt": None, "mode": "full", "exponent": 1, "bounds": DEFAULT_BOUNDS,
        "res": 200, "dt": 0.1, "t_end": None, "sample_every": 5,
        "threads": 1, "ppm": False, "out_dir": ".", "prefix": "field",
    },
    "analyze": {
        "ckpt": None, "baseline": None, "bounds": DEFAULT_BOUNDS, "res": 200,
        "dt": 0.1, "t_end": None, "eps": 0.1, "tol": 3, "threads": 1,
        "skip_ridges": False, "coherence": False, "coherence_samples": 10000,
        "adversarial": False, "budget": 0.1, "probes": 200, "steps": 24,
        "seed": 0, "out_dir": ".",
    },
    "repro": {
        "figure": None, "epochs": None, "res": 200, "n": 4000, "probes": 200,
        "threads": 1, "seed": None, "data_seed": 0, "out_dir": None,
    },
    "bench": {
        "arch": "ex2", "res": 64, "dt": 0.1, "t_end": 10.0, "seed": 0,
        "repeats": 3, "threads": 1, "out_dir": ".", "out": "bench.txt",
    },
}


def _parse_config_file(path) -> dict:
    entries = {}
    with open(path, "r", encoding="ascii") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{ln}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            entries[key.replace("-", "_")] = val
    return entries


def _coerce(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise InvalidInputError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int) and not isinstance(like, bool):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _effective(cmd: str, args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS[cmd])
    config_path = getattr(args, "config", None)
    if config_path is not None:
        for key, raw in _parse_config_file(config_path).items():
            if key not in cfg:
                raise InvalidInputError(f"unknown config key {key!r} for {cmd}")
            like = cfg[key]
            if like is None:
                # untyped defaults: numbers where possible, strings otherwise
                try:
                    cfg[key] = float(raw) if "." in raw or "e" in raw else int(raw)
                except ValueError:
                    cfg[key] = raw
            else:
                cfg[key] = _coerce(raw, like)
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _write_run_cfg(out_dir: str, cmd: str, cfg: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"command = {cmd}"]
    for key in sorted(cfg):
        val = cfg[key]
        if val is None:
            continue
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = f"{val:.17g}"
        lines.append(f"{key} = {val}")
    with open(os.path.join(out_dir, "run.cfg"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_bounds(text: str):
    parts = text.split(":")
    if len(parts) != 4:
        raise InvalidInputError(f"bounds must be x0:x1:y0:y1, got {text!r}")
    x0, x1, y0, y1 = (float(p) for p in parts)
    if not (x0 < x1 and y0 < y1):
        raise InvalidInputError("bounds must satisfy x0 < x1 and y0 < y1")
    return ((x0, x1), (y0, y1))


def _parse_point(text: str) -> np.ndarray:
    parts = text.replace(",", ":").split(":")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise InvalidInputError(f"bad point {text!r}") from exc


def _load_model(path) -> Model:
    if path is None:
        raise InvalidInputError("a checkpoint path is required")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_data(cfg: dict) -> int:
    if cfg["n"] < 2:
        raise InvalidInputError("--n must be at least 2")
    ds = make_moons(cfg["n"], noise=cfg["noise"], seed=cfg["seed"])
    out_dir = cfg["out_dir"]
    _write_run_cfg(out_dir, "data", cfg)
    out = os.path.join(out_dir, cfg["out"])
    save_csv(ds, out)
    print(f"wrote {len(ds)} points to {out}")
    if cfg["test_fraction"] > 0.0:
        tr, te = split(ds, cfg["test_fraction"], seed=cfg["seed"])
        stem, ext = os.path.splitext(out)
        save_csv(tr, stem + ".train" + ext)
        save_csv(te, stem + ".test" + ext)
        print(f"split {len(tr)}/{len(te)} into {stem}.train{ext} and {stem}.test{ext}")
    return 0


def _train_data(cfg: dict):
    if cfg["data"] is not None:
        ds = load_csv(cfg["data"])
        return split(ds, cfg["test_fraction"], seed=cfg["data_seed"])
    ds = make_moons(cfg["n"], noise=cfg["noise"], seed=cfg["data_seed"])
    return split(ds, cfg["test_fraction"], seed=cfg["data_seed"])


def cmd_train(cfg: dict) -> int:
    tdef = presets.train_defaults(cfg["arch"])
    for key, pkey in (("lr", "lr"), ("epochs", "epochs"),
                      ("batch", "batch_size"), ("seed", "seed")):
        if cfg[key] is None:
            cfg[key] = tdef[pkey]
    fcfg = FlowConfig(dt=cfg["dt"], t_end=cfg["t_end"])
    train_ds, test_ds = _train_data(cfg)
    model = he_init(
        presets.field_shape(cfg["arch"]),
        presets.breakpoints(cfg["arch"], cfg["t_end"]),
        seed=cfg["seed"],
    )
    tcfg = TrainConfig(
        gamma=cfg["gamma"], delta=cfg["delta"],
        t1=None if cfg["t1"] is None else float(cfg["t1"]),
        lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch"],
        seed=cfg["seed"], reg_dt=cfg["reg_dt"],
    )
    out_dir = cfg["out_dir"]
    _write_run_cfg(out_dir, "train", cfg)
    log = train(model, train_ds, tcfg, fcfg, test_ds=test_ds)
    save_checkpoint(model, os.path.join(out_dir, cfg["out"]))
    log.to_csv(os.path.join(out_dir, cfg["log"]))
    last = log.rows[-1]
    print(
        f"epoch {last[0]}: mse={last[1]:.6f} train_acc={last[3]:.4f} "
        f"test_acc={last[4]:.4f}"
    )
    return 0


def cmd_evolve(cfg: dict) -> int:
    model = _load_model(cfg["ckpt"])
    t1 = model.t_end if cfg["t1"] is None else float(cfg["t1"])
    fcfg = FlowConfig(dt=cfg["dt"], t_end=model.t_end)
    x0 = _parse_point(cfg["x0"])
    try:
        traj = flow(model.field, x0, (cfg["t0"], t1), fcfg)
    except AlignmentError as exc:
        raise InvalidInputError(str(exc)) from exc
    out_dir = cfg["out_dir"]
    _write_run_cfg(out_dir, "evolve", cfg)
    out = os.path.join(out_dir, cfg["out"])
    write_trajectory_csv(traj, out)
    print(f"wrote {traj.times.size} rows to {out}")
    return 0


def cmd_ftle(cfg: dict) -> int:
    model = _load_model(cfg["ckpt"])
    bounds = _parse_bounds(cfg["bounds"])
    if cfg["res"] < 2:
        raise InvalidInputError("--res must be at least 2")
    if cfg["mode"] not in ftle.MODES:
        raise InvalidInputError(f"--mode must be one of {ftle.MODES}")
    t_end = model.t_end if cfg["t_end"] is None else float(cfg["t_end"])
    fcfg = FlowConfig(dt=cfg["dt"], t_end=t_end)
    try:
        field = ftle.ftle_field(
            model.field, bounds, cfg["res"], cfg["mode"],
            which_exponent=cfg["exponent"], cfg=fcfg,
            sample_every=cfg["sample_every"], threads=cfg["threads"],
        )
    except (InvalidInputError, AlignmentError, OutOfDomainError) as exc:
        raise ModeMismatchError(str(exc)) from exc
    out_dir = cfg["out_dir"]
    _write_run_cfg(out_dir, "ftle", cfg)
    for i in range(len(field.frames)):
        stem = os.path.join(out_dir, f"{cfg['prefix']}_f{i}")
        ftle.write_field_csv(field, i, stem + ".csv")
        ftle.write_field_pgm(field, i, stem + ".pgm")
        if cfg["ppm"]:
            ftle.write_field_ppm(field, i, stem + ".ppm")
    print(
        f"wrote {len(field.frames)} frame(s) at {cfg['res']}x{cfg['res']} "
        f"({cfg['mode']} mode, exponent {cfg['exponent']})"
    )
    return 0


def _analysis_bundle(model, bounds, res, fcfg, eps, tol, threads, skip_ridges,
                     out_dir, prefix=""):
    """Pred grid, margin, ridges, and overlap artifacts for one model."""
    grid = analysis.pred_grid(model, bounds, res, fcfg, threads=threads)
    mask, area = analysis.decision_margin(grid, eps)
    analysis.write_scalar_csv(grid, "pred", os.path.join(out_dir, prefix + "pred.csv"))
    analysis.write_mask_pgm(mask, os.path.join(out_dir, prefix + "margin.pgm"))
    entries = {"margin_eps": eps, "margin_area": area}
    if not skip_ridges:
        field = ftle.ftle_field(
            model.field, bounds, res, "full", which_exponent=1, cfg=fcfg,
            threads=threads,
        )
        lam = analysis.ScalarGrid(bounds=bounds, resolution=res,
                                  values=field.frames[0])
        ridges = analysis.extract_ridges(lam)
        analysis.write_ridge_csv(lam, ridges,
                                 os.path.join(out_dir, prefix + "ridges.csv"))
        ftle.write_field_pgm(field, 0, os.path.join(out_dir, prefix + "lmax.pgm"))
        overlap = analysis.ridge_boundary_overlap(ridges, mask, tol)
        entries["ridge_nodes"] = ridges.n_nodes
        entries["overlap_tol_cells"] = tol
        entries["overlap"] = overlap
        entries["mean_lmax_grid"] = float(np.nanmean(field.frames[0]))
    return grid, mask, entries


def cmd_analyze(cfg: dict) -> int:
    model = _load_model(cfg["ckpt"])
    bounds = _parse_bounds(cfg["bounds"])
    if cfg["res"] < 2:
        raise InvalidInputError("--res must be at least 2")
    t_end = model.t_end if cfg["t_end"] is None else float(cfg["t_end"])
    fcfg = FlowConfig(dt=cfg["dt"], t_end=t_end)
    out_dir = cfg["out_dir"]
    _write_run_cfg(out_dir, "analyze", cfg)
    grid, mask, entries = _analysis_bundle(
        model, bounds, cfg["res"], fcfg, cfg["eps"], cfg["tol"],
        cfg["threads"], cfg["skip_ridges"], out_dir,
    )
    report = {"checkpoint": cfg["ckpt"], **entries}

    if cfg["baseline"] is not None:
        base = _load_model(cfg["baseline"])
        bgrid = analysis.pred_grid(base, bounds, cfg["res"], fcfg,
                                   threads=cfg["threads"])
        _, barea = analysis.decision_margin(bgrid, cfg["eps"])
        report["baseline_margin_area"] = barea
        report["margin_area_ratio"] = (
            entries["margin_area"] / barea if barea > 0 else None
        )

    if cfg["coherence"]:
        with np.errstate(invalid="ignore"):
            blue = np.isfinite(grid.values) & (grid.values > 0.5)
        if not blue.any():
            report["coherence_ratio"] = None
        else:
            rep = analysis.coherence_ratio(
                model, blue, blue, bounds, (0.0, fcfg.t_end), fcfg,
                samples=cfg["coherence_samples"], seed=cfg["seed"],
                threads=cfg["threads"],
            )
            report["coherence_ratio"] = rep.ratio
            report["coherence_eps_out"] = rep.epsilon_out
            report["coherence_samples"] = rep.sample_count

    if cfg["adversarial"]:
        _, test_ds = presets.moons_split(seed=cfg["seed"])
        probes = test_ds.points[: cfg["probes"]]
        rate = analysis.adversarial_success_rate(
            model, probes, cfg["budget"], fcfg, steps=cfg["steps"]
        )
        report["adversarial_budget"] = cfg["budget"]
        report["adversarial_probes"] = int(probes.shape[0])
        report["adversarial_rate"] = rate

    text = analysis.format_report(report)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="ascii") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def _repro_train(arch, regularized, epochs, seed, data, fcfg):
    # epochs None defers to the per-arch preset, which differs between the
    # baseline and regularized runs.
    train_ds, test_ds = data
    model = he_init(presets.field_shape(arch),
                    presets.breakpoints(arch, fcfg.t_end), seed=seed)
    kw = {} if epochs is None else {"epochs": epochs}
    tcfg = presets.train_config(arch, regularized=regularized, seed=seed, **kw)
    log = train(model, train_ds, tcfg, fcfg, test_ds=test_ds)
    return model, log


def _repro_field_frames(model, bounds, res, mode, fcfg, out_dir, prefix, threads):
    field = ftle.ftle_field(model.field, bounds, res, mode, which_exponent=1,
                            cfg=fcfg, threads=threads)
    for i in range(len(field.frames)):
        stem = os.path.join(out_dir, f"{prefix}_f{i}")
        ftle.write_field_csv(field, i, stem + ".csv")
        ftle.write_field_pgm(field, i, stem + ".pgm")
    return field


def cmd_repro(cfg: dict) -> int:
    figure = cfg["figure"]
    if figure not in FIGURES:
        raise InvalidInputError(
            f"unknown figure id {figure!r}; valid ids: {', '.join(FIGURES)}"
        )
    arch = "ex1" if figure in ("fig2", "fig3", "fig7") else "ex2"
    tdef = presets.train_defaults(arch)
    seed = tdef["seed"] if cfg["seed"] is None else cfg["seed"]
    cfg.update(seed=seed)
    out_dir = cfg["out_dir"] if cfg["out_dir"] is not None else figure
    os.makedirs(out_dir, exist_ok=True)
    _write_run_cfg(out_dir, "repro", {**cfg, "figure": figure, "out_dir": out_dir})
    threads = cfg["threads"]
    fcfg = presets.flow_config()
    bounds = _parse_bounds(DEFAULT_BOUNDS)
    res = cfg["res"]
    ds = make_moons(cfg["n"], noise=0.1, seed=cfg["data_seed"])
    save_csv(ds, os.path.join(out_dir, "data.csv"))
    data = split(ds, presets.DEFAULT_TEST_FRACTION, seed=cfg["data_seed"])

    base, base_log = _repro_train(arch, False, cfg["epochs"], seed, data, fcfg)
    save_checkpoint(base, os.path.join(out_dir, "baseline.ckpt"))
    base_log.to_csv(os.path.join(out_dir, "baseline_log.csv"), zero_seconds=True)

    if figure in ("fig2", "fig6"):
        _, _, entries = _analysis_bundle(base, bounds, res, fcfg, 0.1, 3,
                                         threads, False, out_dir)
        report = {"figure": figure, "test_acc": accuracy(base, data[1], fcfg),
                  **entries}
    elif figure == "fig3":
        field = _repro_field_frames(base, bounds, res, "growing", fcfg,
                                    out_dir, "growing", threads)
        report = {"figure": figure, "frames": len(field.frames)}
    elif figure in ("fig4", "fig5"):
        mode = "subinterval" if figure == "fig4" else "shrinking"
        field = _repro_field_frames(base, bounds, res, mode, fcfg, out_dir,
                                    mode, threads)
        report = {"figure": figure, "frames": len(field.frames)}
    else:  # fig7 / fig8: paired baseline and regularized runs, shared init
        reg, reg_log = _repro_train(arch, True, cfg["epochs"], seed, data, fcfg)
        save_checkpoint(reg, os.path.join(out_dir, "regularized.ckpt"))
        reg_log.to_csv(os.path.join(out_dir, "regularized_log.csv"),
                       zero_seconds=True)
        _, bmask, bent = _analysis_bundle(base, bounds, res, fcfg, 0.1, 3,
                                          threads, False, out_dir, "baseline_")
        _, rmask, rent = _analysis_bundle(reg, bounds, res, fcfg, 0.1, 3,
                                          threads, False, out_dir, "regularized_")
        probes = data[1].points[: cfg["probes"]]
        report = {
            "figure": figure,
            "baseline_test_acc": accuracy(base, data[1], fcfg),
            "regularized_test_acc": accuracy(reg, data[1], fcfg),
            "baseline_margin_area": bent["margin_area"],
            "regularized_margin_area": rent["margin_area"],
            "margin_area_ratio": (
                rent["margin_area"] / bent["margin_area"]
                if bent["margin_area"] > 0 else None
            ),
            "baseline_mean_lmax": bent["mean_lmax_grid"],
            "regularized_mean_lmax": rent["mean_lmax_grid"],
            "baseline_overlap": bent["overlap"],
            "regularized_overlap": rent["overlap"],
            "baseline_adversarial_rate": analysis.adversarial_success_rate(
                base, probes, 0.1, fcfg
            ),
            "regularized_adversarial_rate": analysis.adversarial_success_rate(
                reg, probes, 0.1, fcfg
            ),
        }

    text = analysis.format_report(report)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="ascii") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_bench(cfg: dict) -> int:
    from .integrator import step_blocks

    model = presets.build_model(cfg["arch"], seed=cfg["seed"],
                                t_end=cfg["t_end"])
    fcfg = FlowConfig(dt=cfg["dt"], t_end=cfg["t_end"])
    points = ftle.grid_points(_parse_bounds(DEFAULT_BOUNDS), cfg["res"])
    kidx = step_blocks(model.field, 0.0, fcfg.dt, fcfg.n_steps)
    record = np.array([fcfg.n_steps], dtype=np.int64)

    backends = ["python"]
    if _backend.has_compiled():
        backends.append("compiled")
    lines = [f"arch={cfg['arch']} points={points.shape[0]} steps={fcfg.n_steps}"]
    results = {}
    for name in backends:
        _backend.use(name)
        try:
            for kernel in ("flow", "tangent"):
                fn = _backend.flow_batch if kernel == "flow" else _backend.tangent_batch
                fn(model.field, points[:64], fcfg.dt, kidx, record)  # warm up
                best = float("inf")
                for _ in range(cfg["repeats"]):
                    tic = time.perf_counter()
                    fn(model.field, points, fcfg.dt, kidx, record)
                    best = min(best, time.perf_counter() - tic)
                results[(name, kernel)] = best
                lines.append(f"{name}_{kernel}_seconds={best:.6f}")
        finally:
            _backend.use(None)
    for kernel in ("flow", "tangent"):
        if ("compiled", kernel) in results:
            speedup = results[("python", kernel)] / results[("compiled", kernel)]
            lines.append(f"{kernel}_speedup={speedup:.3f}")
    if not _backend.has_compiled():
        lines.append("compiled_backend=unavailable")

    out_dir = cfg["out_dir"]
    _write_run_cfg(out_dir, "bench", cfg)
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, cfg["out"]), "w", encoding="ascii") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftlenode",
        description="Euler-flow classifiers with stretching-field diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data", help="sample the two-moons dataset")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)

    p = sub.add_parser("train", help="train a classifier")
    _add_common(p)
    p.add_argument("--arch", choices=presets.PRESETS)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reg-dt", dest="reg_dt", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--data", help="dataset CSV (default: sample internally)")
    p.add_argument("--out")
    p.add_argument("--log")

    p = sub.add_parser("evolve", help="dump one trajectory as CSV")
    _add_common(p)
    p.add_argument("--ckpt")
    p.add_argument("--x0", help="start point, e.g. 0.3:0.4")
    p.add_argument("--t0", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--out")

    p = sub.add_parser("ftle", help="stretching-exponent field of a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt")
    p.add_argument("--mode", choices=ftle.MODES)
    p.add_argument("--exponent", type=int, choices=(1, 2))
    p.add_argument("--bounds", help="x0:x1:y0:y1")
    p.add_argument("--res", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--sample-every", dest="sample_every", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--ppm", action=argparse.BooleanOptionalAction)
    p.add_argument("--prefix")

    p = sub.add_parser("analyze", help="margins, ridges, coherence, attacks")
    _add_common(p)
    p.add_argument("--ckpt")
    p.add_argument("--baseline", help="second checkpoint for area ratios")
    p.add_argument("--bounds")
    p.add_argument("--res", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--tol", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--skip-ridges", dest="skip_ridges",
                   action=argparse.BooleanOptionalAction)
    p.add_argument("--coherence", action=argparse.BooleanOptionalAction)
    p.add_argument("--coherence-samples", dest="coherence_samples", type=int)
    p.add_argument("--adversarial", action=argparse.BooleanOptionalAction)
    p.add_argument("--budget", type=float)
    p.add_argument("--probes", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("repro", help="full pipeline for one figure")
    _add_common(p)
    p.add_argument("figure", nargs="?")
    p.add_argument("--epochs", type=int)
    p.add_argument("--res", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--probes", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)

    p = sub.add_parser("bench", help="time the python and compiled kernels")
    _add_common(p)
    p.add_argument("--arch", choices=presets.PRESETS)
    p.add_argument("--res", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")

    return parser


_HANDLERS = {
    "data": cmd_data,
    "train": cmd_train,
    "evolve": cmd_evolve,
    "ftle": cmd_ftle,
    "analyze": cmd_analyze,
    "repro": cmd_repro,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _effective(args.command, args)
        return _HANDLERS[args.command](cfg)
    except (InvalidInputError, OutOfDomainError, AlignmentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, TrainingDivergedError, DegenerateTangentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ModeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
