"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a ``criterion N: PASS|FAIL ...`` line; the lines are
printed together at the end of the pytest run.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from spurcorr import (
    Activation,
    CovarianceModel,
    GroundTruth,
    RFConfig,
    SyntheticFamilyParams,
    aggregate,
    build_synthetic,
    c_bounds,
    c_sigma,
    c_sigma_schur,
    effective_lambda,
    equivalence_gap,
    hermite_stats,
    l_sigma,
    normalized_spurious_cov,
    ood_loss_empirical,
    ood_lower_bound,
    random_block_model,
    redraw_noise,
    rf_fit,
    rf_spurious_cov,
    ridge_fit,
    sample_dataset,
    solve_tau,
    spurious_cov_exact,
    thresholds,
    trial_sweep,
)
from spurcorr.detequiv import shape_ratio_condition, tau_residual
from spurcorr.rfmodel import derive_seed


def record(num, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {num}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def default(d=400):
    return build_synthetic(SyntheticFamilyParams(d, 2.0, 0.5)), GroundTruth.first_basis(d, 0.25)


# -- 1 ----------------------------------------------------------------------
def test_criterion_01_fixed_point():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_rel = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 51))
        n = int(rng.integers(2, 20 * d + 1))
        lam = float(10 ** rng.uniform(-6, 3))
        m = CovarianceModel(np.eye(2 * d))
        b = 1 - lam - 2 * d / n
        # numerically stable positive root of tau^2 + b tau - lam = 0
        root = (-b + math.sqrt(b * b + 4 * lam)) / 2 if b <= 0 else 2 * lam / (b + math.sqrt(b * b + 4 * lam))
        worst_rel = max(worst_rel, abs(solve_tau(m, n, lam) - root) / root)
    worst_res = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 31))
        m = random_block_model(rng, d, min_eig=float(rng.uniform(0.01, 0.5)))
        n = int(rng.integers(2, 20 * d + 1))
        lam = float(10 ** rng.uniform(-6, 3))
        worst_res = max(worst_res, abs(tau_residual(m, n, lam, solve_tau(m, n, lam))))
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-10 and worst_res <= 1e-12 and elapsed < 5
    record(1, ok, f"max rel err {worst_rel:.2e} (<=1e-10), max residual {worst_res:.2e} (<=1e-12), {elapsed:.1f}s (<5s)")
    assert ok


# -- 2, 3 -------------------------------------------------------------------
@pytest.fixture(scope="module")
def random_suite():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    cells = []
    for _ in range(100):
        d = int(rng.integers(2, 51))
        m = random_block_model(rng, d, min_eig=float(rng.uniform(0.02, 0.5)))
        gt = GroundTruth.from_vector(rng.standard_normal(d), float(rng.uniform(0, 1)))
        n = int(rng.integers(d, 20 * d))
        for lam in 10 ** rng.uniform(-4, 2, size=5):
            tau = solve_tau(m, n, lam)
            cells.append(
                (
                    c_sigma(m, gt, n, lam, tau=tau),
                    c_sigma_schur(m, gt, n, lam, tau=tau),
                    min(c_bounds(m, gt, n, lam, tau=tau)),
                )
            )
    return cells, time.perf_counter() - t0


def test_criterion_02_dual_path(random_suite):
    cells, elapsed = random_suite
    worst = max(abs(a - b) for a, b, _ in cells)
    ok = len(cells) == 500 and worst <= 1e-9 and elapsed < 30
    record(2, ok, f"{len(cells)} cells, max |c_sigma - c_sigma_schur| {worst:.2e} (<=1e-9), {elapsed:.1f}s (<30s)")
    assert ok


def test_criterion_03_bounds(random_suite):
    cells, _ = random_suite
    violations = sum(abs(c) > b for c, _, b in cells)
    tightest = min(b - abs(c) for c, _, b in cells)
    ok = violations == 0
    record(3, ok, f"{violations} violations in {len(cells)} cells, min slack {tightest:.3e}")
    assert ok


# -- 4 ----------------------------------------------------------------------
def test_criterion_04_eigenvalue_ordering():
    rng = np.random.default_rng(404)
    worst = math.inf
    for i in range(200):
        d = int(rng.integers(1, 41))
        # include badly conditioned draws as well as benign ones
        min_eig = float(10 ** rng.uniform(-6, -0.5))
        m = random_block_model(rng, d, min_eig=min_eig)
        worst = min(worst, float(m.eigenvalues_schur[0]) - m.lambda_min)
    ok = worst >= -1e-10
    record(4, ok, f"min over 200 models of lambda_min(S_x) - lambda_min(Sigma) = {worst:.3e} (>=-1e-10)")
    assert ok


# -- 5 ----------------------------------------------------------------------
def test_criterion_05_concentration():
    t0 = time.perf_counter()
    model, gt = default()
    grid = [0.05, 0.5, 5.0]
    rows = aggregate(trial_sweep(model, gt, 2000, grid, range(10)))
    parts, ok = [], True
    for lam, row in zip(grid, rows):
        se_c = row["c_std"] / math.sqrt(row["n_seeds"])
        se_l = row["l_std"] / math.sqrt(row["n_seeds"])
        zc = (row["c_mean"] - c_sigma(model, gt, 2000, lam)) / se_c
        zl = (row["l_mean"] - l_sigma(model, gt, 2000, lam)) / se_l
        ok &= abs(zc) <= 3 and abs(zl) <= 3
        parts.append(f"lam={lam:g}: zC={zc:+.2f} zL={zl:+.2f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    record(5, ok, "; ".join(parts) + f" (|z|<=3), {elapsed:.1f}s (<120s)")
    assert ok


# -- 6 ----------------------------------------------------------------------
def test_criterion_06_ridgeless_null():
    t0 = time.perf_counter()
    model, gt = default(100)
    base = sample_dataset(model, gt, 800, 0)
    cs = np.array(
        [spurious_cov_exact(ridge_fit(redraw_noise(base, gt, 1000 + k), 1e-10), model, gt) for k in range(50)]
    )
    mean, se = cs.mean(), cs.std(ddof=1) / math.sqrt(cs.size)
    cap = 5 * math.log(100) / math.sqrt(100)
    elapsed = time.perf_counter() - t0
    ok = abs(mean) <= 3 * se and np.abs(cs).max() <= cap and elapsed < 60
    record(6, ok, f"mean {mean:+.2e} (SE {se:.2e}, |z|={abs(mean) / se:.2f}<=3), max|C| {np.abs(cs).max():.3f} (<={cap:.3f}), {elapsed:.1f}s")
    assert ok


# -- 7 ----------------------------------------------------------------------
def _tradeoff_checks(model, gt, n):
    th = thresholds(model, gt, n)
    lc, ll = th.lambda_C, th.lambda_L
    window = np.geomspace(lc * 1e-4, lc, 50)
    cs = [c_sigma(model, gt, n, lam) for lam in window]
    c_mono = all(b >= a for a, b in zip(cs, cs[1:]))
    l_left = l_sigma(model, gt, n, window[1]) < l_sigma(model, gt, n, window[0])
    right = np.geomspace(ll, 1e3, 60)
    ls = [l_sigma(model, gt, n, lam) for lam in right]
    l_up = all(b > a for a, b in zip(ls, ls[1:]))
    wide = np.geomspace(1e-6, 1e3, 600)
    argmin = float(wide[int(np.argmin([l_sigma(model, gt, n, lam) for lam in wide]))])
    return th, c_mono, l_left, l_up, argmin


def test_criterion_07_tradeoff_window():
    t0 = time.perf_counter()
    model, gt = default()
    # smallest n for which the shape-ratio condition holds on the default model
    kappa = model.lambda_max / model.lambda_min
    rhs = model.lambda_min / 4 * min(1.0, (2 * model.lambda_max / gt.sigma2) / (kappa + 1) ** 2)
    n = math.ceil(2 * model.d / rhs)
    assert shape_ratio_condition(2 * model.d / n, model.lambda_min, model.lambda_max, gt.sigma2)
    th, c_mono, l_left, l_up, argmin = _tradeoff_checks(model, gt, n)
    elapsed = time.perf_counter() - t0
    ok = th.condition_holds and c_mono and l_left and l_up and 0 < argmin <= th.lambda_C and elapsed < 10
    record(
        7,
        ok,
        f"n={n} (condition_holds={th.condition_holds}): C nondecreasing={c_mono}, L falls at left edge={l_left}, "
        f"L increasing beyond lambda_L={l_up}, argmin L={argmin:.4g} <= lambda_C={th.lambda_C:.4g}, {elapsed:.1f}s (<10s)",
    )
    assert ok


def test_tradeoff_properties_at_default_n():
    # informational companion: at n = 2000 the condition fails but the properties still hold
    model, gt = default()
    th, c_mono, l_left, l_up, argmin = _tradeoff_checks(model, gt, 2000)
    assert not th.condition_holds
    assert c_mono and l_left and l_up and argmin <= th.lambda_C


# -- 8 ----------------------------------------------------------------------
def test_criterion_08_effective_regularization():
    tanh = hermite_stats(Activation.tanh(), 200)
    phi1 = hermite_stats(Activation.hermite_mix(1.0, 0.1), 200)
    lt_tanh = effective_lambda(tanh, 400, 2000, 10**9, 0.0)
    lt_phi1 = effective_lambda(phi1, 400, 2000, 10**9, 0.0)
    ok_tanh = 0.03 <= lt_tanh <= 0.06
    ok_phi1 = 0.003 <= lt_phi1 <= 0.006
    ok_ratio = abs(phi1.ratio - 0.01) <= 1e-8
    ok = ok_tanh and ok_phi1 and ok_ratio
    record(
        8,
        ok,
        f"tanh lambda_tilde={lt_tanh:.5f} in [0.03,0.06]: {ok_tanh} (ratio {tanh.ratio:.6f}); "
        f"phi1 lambda_tilde={lt_phi1:.5f} in [0.003,0.006]: {ok_phi1}; phi1 ratio err {abs(phi1.ratio - 0.01):.1e}: {ok_ratio}",
    )
    assert ok


# -- 9 ----------------------------------------------------------------------
def test_criterion_09_rf_equivalence_trend():
    t0 = time.perf_counter()
    d, n = 100, 400
    model, gt = default(d)
    act = Activation.tanh()
    stats = hermite_stats(act)
    seeds = range(5)
    means = []
    for p in (2000, 8000, 32000):
        gaps = []
        for s in seeds:
            ds = sample_dataset(model, gt, n, s)
            cfg = RFConfig.draw(p, 2 * d, derive_seed(s, p, 1))
            test = np.random.default_rng(derive_seed(s, p, 2)).standard_normal((100, 2 * d)) @ model.sqrt
            gaps.append(equivalence_gap(ds, cfg, act, 0.0, test, stats=stats)[1])
        means.append(sum(gaps) / len(gaps))
    decreasing = all(b < a for a, b in zip(means, means[1:]))

    ident = Activation.identity()
    id_gap = 0.0
    for s in seeds:
        ds = sample_dataset(model, gt, 2 * d, s)
        cfg = RFConfig.draw(2000, 2 * d, derive_seed(s, 2000, 1))
        test = np.random.default_rng(derive_seed(s, 2000, 2)).standard_normal((100, 2 * d)) @ model.sqrt
        id_gap = max(id_gap, equivalence_gap(ds, cfg, ident, 0.0, test)[0])
    elapsed = time.perf_counter() - t0
    ok = decreasing and id_gap <= 1e-6 and elapsed < 300
    record(
        9,
        ok,
        "mean gap p=2000/8000/32000: " + "/".join(f"{g:.4f}" for g in means)
        + f" strictly decreasing={decreasing}; identity max gap {id_gap:.1e} (<=1e-6, n=2d); {elapsed:.0f}s (<300s)",
    )
    assert ok


# -- 10 ---------------------------------------------------------------------
def test_criterion_10_rf_spurious_correlation():
    t0 = time.perf_counter()
    d, n, p = 200, 1000, 32000
    model, gt = default(d)
    seeds = range(5)
    parts, ok = [], True
    for name in ("tanh", "phi1"):
        act = Activation.from_name(name)
        stats = hermite_stats(act)
        lam_t = effective_lambda(stats, d, n, p, 0.0)
        target = c_sigma(model, gt, n, lam_t)
        vals = []
        for s in seeds:
            ds = sample_dataset(model, gt, n, s)
            cfg = RFConfig.draw(p, 2 * d, derive_seed(s, p, 1))
            theta = rf_fit(ds, cfg, act, 0.0)
            vals.append(rf_spurious_cov(theta, cfg, act, model, gt, stats=stats, m=10_000, seed=derive_seed(s, p, 3))[0])
        vals = np.array(vals)
        mean, se = vals.mean(), vals.std(ddof=1) / math.sqrt(vals.size)
        z = (mean - target) / se
        this = abs(z) <= 3
        if name == "tanh":
            this &= mean > 3 * se
        ok &= this
        parts.append(f"{name}: C_RF={mean:.4f}+-{se:.4f} vs c_sigma({lam_t:.4f})={target:.4f} z={z:+.2f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    record(10, ok, "; ".join(parts) + f"; {elapsed:.0f}s (<300s)")
    assert ok


# -- 11 ---------------------------------------------------------------------
def test_criterion_11_ood_bound():
    model, gt = default()
    ds = sample_dataset(model, gt, 2000, 0)
    worst = math.inf
    for i, lam in enumerate(np.geomspace(0.01, 10, 20)):
        est = ridge_fit(ds, lam)
        c = normalized_spurious_cov(est, model, gt)
        loss, se = ood_loss_empirical(est, model, gt, 20_000, 500 + i, normalize=True, return_stderr=True)
        worst = min(worst, (loss - ood_lower_bound(c)) / se)
    ok = worst >= -5
    record(11, ok, f"min (OOD loss - bound)/SE over 20 models = {worst:.2f} (>=-5)")
    assert ok


# -- 12 ---------------------------------------------------------------------
def test_criterion_12_simplicity():
    t0 = time.perf_counter()
    n = 2000

    def sweep(key, values):
        cs, ls = [], []
        for v in values:
            kw = {"ev_max_yy": 2.0, "beta": 0.5, key: v}
            m = build_synthetic(SyntheticFamilyParams(400, kw["ev_max_yy"], kw["beta"]))
            gt = GroundTruth.first_basis(400, 0.25)
            cs.append(c_sigma(m, gt, n, 1.0))
            ls.append(l_sigma(m, gt, n, 1.0))
        return cs, ls

    up = lambda xs: all(b > a for a, b in zip(xs, xs[1:]))  # noqa: E731
    down = lambda xs: all(b < a for a, b in zip(xs, xs[1:]))  # noqa: E731
    c_ev, l_ev = sweep("ev_max_yy", [1.5, 2.0, 3.0, 5.0])
    c_b, l_b = sweep("beta", [0.1, 0.3, 0.5, 0.7])
    elapsed = time.perf_counter() - t0
    ok = up(c_ev) and down(l_ev) and down(c_b) and up(l_b) and elapsed < 30
    record(
        12,
        ok,
        "ev_max_yy: C " + "/".join(f"{x:.4f}" for x in c_ev) + ", L " + "/".join(f"{x:.4f}" for x in l_ev)
        + "; beta: C " + "/".join(f"{x:.4f}" for x in c_b) + ", L " + "/".join(f"{x:.4f}" for x in l_b)
        + f"; {elapsed:.1f}s (<30s)",
    )
    assert ok
