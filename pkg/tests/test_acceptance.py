"""Acceptance gate: the quantitative guarantees the package ships with.

One test per criterion. Each prints a single
`CRITERION NN [PASS|FAIL] ...` line with the measured numbers (visible even
under capture) and then asserts, so a red run names exactly what broke.
Tolerances are pinned here and nowhere else.
"""

import time

import numpy as np

from ftlenode import analysis, ftle, presets
from ftlenode.analysis import ScalarGrid
from ftlenode.cli import main
from ftlenode.integrator import (
    FlowConfig,
    flow,
    resnet_step_equivalence,
    tangent_flow,
)
from ftlenode.training import (
    accuracy,
    grad_mse,
    grad_reg,
    load_train_log,
    mse_loss,
    reg_term,
)
from ftlenode.vecfield import LinearField

BOUNDS = ((-2.0, 2.0), (-1.5, 1.5))
GRID_RES = 200
MARGIN_EPS = 0.1
OVERLAP_TOL_CELLS = 3
ADV_BUDGET = 0.1
ADV_PROBES = 500


def _verdict(capsys, num, ok, text):
    line = f"CRITERION {num:02d} [{'PASS' if ok else 'FAIL'}] {text}"
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert ok, line


def _fd_worst(value_fn, grad, theta, mask, h):
    """Largest |analytic - central difference| over max(|fd|, floor)."""
    worst = 0.0
    for i in np.nonzero(mask)[0]:
        keep = theta[i]
        theta[i] = keep + h
        up = value_fn()
        theta[i] = keep - h
        dn = value_fn()
        theta[i] = keep
        fd = (up - dn) / (2.0 * h)
        worst = max(worst, abs(grad[i] - fd) / max(abs(fd), 1e-7))
    return worst


_BUNDLES = {}


def _bundle(model):
    """Margin mask/area and top-exponent frame on the shared 200x200 grid."""
    key = id(model)
    if key not in _BUNDLES:
        cfg = presets.flow_config()
        grid = analysis.pred_grid(model, BOUNDS, GRID_RES, cfg)
        mask, area = analysis.decision_margin(grid, MARGIN_EPS)
        field = ftle.ftle_field(
            model.field, BOUNDS, GRID_RES, "full", which_exponent=1, cfg=cfg
        )
        _BUNDLES[key] = (mask, area, field.frames[0])
    return _BUNDLES[key]


def test_gradient_finite_difference_oracles(capsys):
    tic = time.perf_counter()
    cfg = FlowConfig(dt=0.1, t_end=1.0)
    ds, _ = presets.moons_split(n=64, seed=11)
    worst_mse = 0.0
    worst_reg = 0.0
    for arch in ("ex1", "ex2"):
        model = presets.build_model(arch, t_end=1.0)
        mask = model.layout.trainable_mask() > 0.0
        x, y = ds.points[:8], ds.labels[:8]
        _, g = grad_mse(model, x, y, cfg)
        worst_mse = max(worst_mse, _fd_worst(
            lambda: mse_loss(model, x, y, cfg), g, model.theta, mask, 1e-6
        ))
        xr = ds.points[:6]
        _, gr = grad_reg(model, xr, delta=0.01, t1=1.0, cfg=cfg)
        worst_reg = max(worst_reg, _fd_worst(
            lambda: reg_term(model, xr, delta=0.01, t1=1.0, cfg=cfg),
            gr, model.theta, mask, 1e-6,
        ))
    elapsed = time.perf_counter() - tic
    ok = worst_mse <= 1e-4 and worst_reg <= 1e-3 and elapsed < 30.0
    _verdict(capsys, 1, ok,
             f"gradient oracles: mse_err={worst_mse:.2e} (<=1e-4) "
             f"reg_err={worst_reg:.2e} (<=1e-3) in {elapsed:.1f}s (<30s)")


def test_tangent_jacobian_matches_flow_derivative(capsys, ex1_base):
    tic = time.perf_counter()
    model, _ = ex1_base
    cfg = presets.flow_config()
    rng = np.random.default_rng(7)
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        x0 = np.array([rng.uniform(-2.0, 2.0), rng.uniform(-1.5, 1.5)])
        jac = tangent_flow(model.field, x0, (0.0, 10.0), cfg).final_jacobian
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            up = flow(model.field, x0 + e, (0.0, 10.0), cfg).states[-1]
            dn = flow(model.field, x0 - e, (0.0, 10.0), cfg).states[-1]
            fd = (up - dn) / (2.0 * h)
            err = np.abs(jac[:, j] - fd) / np.maximum(np.abs(fd), 1e-7)
            worst = max(worst, float(err.max()))
    elapsed = time.perf_counter() - tic
    ok = worst <= 1e-4 and elapsed < 10.0
    _verdict(capsys, 2, ok,
             f"tangent vs flow derivative on trained model: err={worst:.2e} "
             f"(<=1e-4) over 50 points in {elapsed:.1f}s (<10s)")


def test_linear_field_closed_form_exponents(capsys):
    want = np.array([np.log(1.1) / 0.1, np.log(0.9) / 0.1])
    lf = LinearField(np.diag([1.0, -1.0]), t_end=10.0)
    cfg = FlowConfig(dt=0.1, t_end=10.0)
    res = tangent_flow(lf, np.array([0.4, -0.2]), (0.0, 10.0), cfg)
    got = ftle.spectrum_from_tangent(res.final_jacobian, (0.0, 10.0)).exponents
    err = float(np.abs(got - want).max())
    ok = err <= 1e-10
    _verdict(capsys, 3, ok,
             f"linear closed form: exponents=({got[0]:.6f}, {got[1]:.6f}) "
             f"err={err:.1e} (<=1e-10)")


def test_cauchy_green_eigen_consistency(capsys):
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(2, 4))
        y = rng.standard_normal((d, d))
        spec = ftle.spectrum_from_tangent(y, (0.0, 2.0)).exponents
        cg = ftle.cauchy_green(y, (0.0, 2.0))
        lam = np.log(cg.eigenvalues) / (2.0 * 2.0)
        worst = max(worst, float(np.abs(lam - spec).max()))
    ok = worst <= 1e-9
    _verdict(capsys, 4, ok,
             f"eigenvalue route equals singular route: err={worst:.2e} "
             f"(<=1e-9) over 1000 tangents")


def test_unit_step_euler_equals_residual_recursion(capsys):
    model = presets.build_model("ex2")
    rng = np.random.default_rng(34)
    bad = 0
    for _ in range(100):
        x0 = rng.uniform(-2.0, 2.0, 2)
        if not resnet_step_equivalence(model.field, x0, 10):
            bad += 1
    ok = bad == 0
    _verdict(capsys, 5, ok,
             f"dt=1 Euler equals residual recursion bit for bit: "
             f"{100 - bad}/100 inputs")


def test_baseline_training_reaches_99_percent(capsys, tmp_path):
    results = []
    ok = True
    for arch in ("ex1", "ex2"):
        out = tmp_path / arch
        tic = time.perf_counter()
        rc = main(["train", "--arch", arch, "--gamma", "0",
                   "--out-dir", str(out)])
        elapsed = time.perf_counter() - tic
        acc = float("nan")
        if rc == 0:
            log = load_train_log(out / "train_log.csv")
            acc = float(log.column("test_acc")[-1])
        ok = ok and rc == 0 and acc >= 0.99 and elapsed < 300.0
        results.append(f"{arch}: acc={acc:.4f} in {elapsed:.0f}s")
    _verdict(capsys, 6, ok,
             "default training reaches 99% held-out inside 5 minutes: "
             + "; ".join(results))


def test_ridges_align_with_decision_boundary(capsys, ex1_base, ex2_base):
    results = []
    ok = True
    for arch, (model, _) in (("ex1", ex1_base), ("ex2", ex2_base)):
        mask, _, lmax = _bundle(model)
        grid = ScalarGrid(bounds=BOUNDS, resolution=GRID_RES, values=lmax)
        ridges = analysis.extract_ridges(grid)
        overlap = analysis.ridge_boundary_overlap(
            ridges, mask, OVERLAP_TOL_CELLS
        )
        good = overlap is not None and overlap >= 0.8
        ok = ok and good
        shown = "none" if overlap is None else f"{overlap:.3f}"
        results.append(f"{arch}: overlap={shown} on {ridges.n_nodes} nodes")
    _verdict(capsys, 7, ok,
             f"ridge set matches margin band within {OVERLAP_TOL_CELLS} cells "
             f"(>=0.8): " + "; ".join(results))


def test_suppression_regularizer_effects(capsys, ex1_base, ex1_reg,
                                         ex2_base, ex2_reg, moons4000):
    _, test_ds = moons4000
    probes = test_ds.points[:ADV_PROBES]
    cfg = presets.flow_config()
    results = []
    ok = True
    for arch, (base, _), (reg, _) in (
        ("ex1", ex1_base, ex1_reg), ("ex2", ex2_base, ex2_reg)
    ):
        _, base_area, base_lmax = _bundle(base)
        _, reg_area, reg_lmax = _bundle(reg)
        mean_base = float(np.nanmean(base_lmax))
        mean_reg = float(np.nanmean(reg_lmax))
        acc_reg = accuracy(reg, test_ds, cfg)
        rate_base = analysis.adversarial_success_rate(
            base, probes, ADV_BUDGET, cfg
        )
        rate_reg = analysis.adversarial_success_rate(
            reg, probes, ADV_BUDGET, cfg
        )
        part_a = mean_reg < mean_base
        part_b = reg_area > base_area
        part_c = acc_reg >= 0.98
        part_d = rate_reg <= 0.9 * rate_base
        ok = ok and part_a and part_b and part_c and part_d
        results.append(
            f"{arch}: lmax {mean_base:.3f}->{mean_reg:.3f}"
            f"[{'ok' if part_a else 'BAD'}] "
            f"area {base_area:.3f}->{reg_area:.3f}"
            f"[{'ok' if part_b else 'BAD'}] "
            f"acc={acc_reg:.4f}[{'ok' if part_c else 'BAD'}] "
            f"attack {rate_base:.3f}->{rate_reg:.3f}"
            f"[{'ok' if part_d else 'BAD'}]"
        )
    _verdict(capsys, 8, ok,
             "suppression lowers stretching, widens the margin, keeps "
             "accuracy, hardens attacks: " + "; ".join(results))


def test_full_horizon_regularizer_is_inert(capsys, ex1_base, ex1_null,
                                           ex2_base, ex2_null, moons4000):
    _, test_ds = moons4000
    cfg = presets.flow_config()
    results = []
    ok = True
    for arch, (base, _), (null, _) in (
        ("ex1", ex1_base, ex1_null), ("ex2", ex2_base, ex2_null)
    ):
        acc_base = accuracy(base, test_ds, cfg)
        acc_null = accuracy(null, test_ds, cfg)
        gap = abs(acc_null - acc_base)
        ok = ok and gap < 0.01
        results.append(f"{arch}: base={acc_base:.4f} full-horizon="
                       f"{acc_null:.4f} gap={gap:.4f}")
    _verdict(capsys, 9, ok,
             "suppressing over the whole horizon leaves accuracy within "
             "1 point: " + "; ".join(results))


def test_regularizer_cost_scales_superlinearly(capsys):
    model = presets.build_model("ex2")
    cfg = presets.flow_config()
    ds, _ = presets.moons_split(n=256, seed=13)
    x = ds.points[:128]
    times = {}
    for t1 in (1.0, 2.0, 4.0, 8.0):
        best = float("inf")
        for _ in range(5):
            tic = time.perf_counter()
            grad_reg(model, x, delta=0.05, t1=t1, cfg=cfg)
            best = min(best, time.perf_counter() - tic)
        times[t1] = best
    ordered = [times[t] for t in (1.0, 2.0, 4.0, 8.0)]
    monotone = all(a < b for a, b in zip(ordered, ordered[1:]))
    ratio = times[8.0] / times[4.0]
    ok = monotone and ratio > 1.8
    detail = " ".join(f"t({t:g})={times[t] * 1e3:.1f}ms" for t in times)
    _verdict(capsys, 10, ok,
             f"gradient cost grows with the horizon: {detail} "
             f"ratio(8/4)={ratio:.2f} (>1.8) monotone={monotone}")


def test_randomized_invariant_suites(capsys):
    import test_analysis
    import test_data
    import test_ftle
    import test_integrator
    import test_training
    import test_vecfield

    checks = (
        ("exponent ordering", test_ftle.test_exponent_ordering_property),
        ("volume identity", test_ftle.test_volume_identity),
        ("tangent cocycle", test_integrator.test_cocycle_property_of_tangents),
        ("flow semigroup", test_integrator.test_semigroup_property_bitwise),
        ("margin monotonicity",
         test_analysis.test_decision_margin_monotone_in_epsilon),
        ("training determinism",
         test_training.test_train_determinism_many_instances),
        ("data determinism", test_data.test_make_moons_determinism),
        ("field determinism", test_vecfield.test_field_evaluation_deterministic),
    )
    failures = []
    for name, fn in checks:
        try:
            fn()
        except AssertionError:
            failures.append(name)
    ok = not failures
    _verdict(capsys, 11, ok,
             "invariant suites at 200+ seeded instances each: "
             + (f"failed {failures}" if failures else
                f"all {len(checks)} suites pass"))
