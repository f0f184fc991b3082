"""Acceptance criteria, one test per criterion.

Each test records ``(passed, detail)`` in ``RESULTS``; the conftest prints
one PASS/FAIL line per criterion at the end of the run, and running this
file directly prints the same lines.
"""

import math
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest

from ldsb.analysis import effective_rank, mixing_metrics, optimize_projector, top_subspace
from ldsb.datasets import IfmSpec, LabeledDataset, gen_ifm, gen_pointmass_d, load_dataset, make_splits, save_dataset
from ldsb.linalg import RngState, orthonormalize
from ldsb.model import MLP, forward, init_rich, load_checkpoint, loss_and_grad, save_checkpoint
from ldsb.ntk import (
    build_setup,
    closed_form_alpha,
    dense_duals,
    kappa,
    margin_fn_neg,
    margin_fn_pos,
    nustar_network,
    rich_margin_of_nustar,
    rich_maximizer_check,
    rich_thetas,
    rich_dual_value,
)
from ldsb.orthop import diversity_report, orthop_train, robustness_sweep, with_noise
from ldsb.training import evaluate, fit_network, preset

RESULTS = {}
SEEDS = (0, 1, 2)


def record(num, ok, detail):
    RESULTS[num] = (bool(ok), detail)
    assert ok, f"criterion {num}: {detail}"


# 1 -------------------------------------------------------------------------------


def test_criterion_01_support_vector_identity():
    t0 = time.perf_counter()
    worst_margin = worst_dual = 0.0
    for d in range(4, 15):
        for gamma in (1.0, 3.0, 7.0):
            s = build_setup(d, gamma)
            ds, K, alpha = dense_duals(d, gamma)
            closed = closed_form_alpha(s)
            y = 2.0 * ds.y - 1.0
            # y f(x) on every point of the dataset, using the closed-form duals
            worst_margin = max(worst_margin, float(np.max(np.abs(y * (K @ closed) - 1.0))))
            worst_dual = max(worst_dual, float(np.max(np.abs(closed - alpha) / np.abs(alpha))))
    elapsed = time.perf_counter() - t0
    ok = worst_margin <= 1e-7 and worst_dual <= 1e-7 and elapsed < 10
    record(1, ok, f"max|yf-1|={worst_margin:.2e} max dual rel err={worst_dual:.2e} time={elapsed:.1f}s")


# 2 -------------------------------------------------------------------------------


def test_criterion_02_large_d_thresholds():
    t0 = time.perf_counter()
    g = 7.0
    s = build_setup(10**5, g)
    n73, n0 = margin_fn_neg(s, 0.73), margin_fn_neg(s, 0.0)
    p95 = margin_fn_pos(s, -0.95 * g)
    p_g = margin_fn_pos(s, g)
    target = 1.0 / math.sqrt(10**5 + g * g)
    rel = abs(p_g - target) / target
    elapsed = time.perf_counter() - t0
    ok = n73 > 0 and n0 < 0 and p95 < 0 and rel <= 1e-7 and elapsed < 5
    record(2, ok, f"neg(0.73)={n73:.4g} neg(0)={n0:.4g} pos(-0.95g)={p95:.4g} pos(g) rel err={rel:.1e} time={elapsed:.2f}s")


# 3 -------------------------------------------------------------------------------


def test_criterion_03_xi_bracket():
    lo, hi = 2 / math.pi - 1 / math.pi**2 - 0.05, 2.05
    xis = {(d, g): build_setup(d, g).xi for d in (10**3, 10**4, 10**5) for g in (7.0, 20.0)}
    ok = all(lo <= v <= hi for v in xis.values())
    record(3, ok, f"xi range [{min(xis.values()):.4f}, {max(xis.values()):.4f}] within [{lo:.4f}, {hi}]")


# 4 -------------------------------------------------------------------------------


def test_criterion_04_rich_max_margin():
    d = 8
    problems = []
    for gamma in (1.0, 2.0, 5.0):
        target = math.sqrt(gamma * gamma + 1) / 4
        th = rich_thetas(gamma, d)
        g1 = rich_dual_value(*th.theta1, gamma)
        g2 = rich_dual_value(*th.theta2, gamma)
        if abs(g1 - target) > 1e-9 or abs(g2 - target) > 1e-9:
            problems.append(f"g(theta) off at gamma={gamma}")
        rep = rich_maximizer_check(gamma, d, num_random=100_000, rng=RngState(0, f"acc4/{gamma}"))
        if not rep.max_random < g1:
            problems.append(f"random point reached {rep.max_random} at gamma={gamma}")
        ds = gen_pointmass_d(d, gamma)
        margin = rich_margin_of_nustar(gamma, ds)
        yf = (2.0 * ds.y - 1.0) * forward(nustar_network(gamma, d), ds.X)[:, 0]
        if abs(margin - target) > 1e-9 or np.ptp(yf) > 1e-9:
            problems.append(f"nu* margin {margin} spread {np.ptp(yf):.1e} at gamma={gamma}")
    record(4, not problems, "; ".join(problems) or "g(theta1)=g(theta2)=sqrt(1+g^2)/4, random points below, nu* margin exact")


# 5 and 7 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def rich_runs():
    splits = make_splits(IfmSpec(d=20, gamma=1.5), "ifm")
    runs = []
    for seed in SEEDS:
        net, log = fit_network(splits["train"], "rich", preset("rich", seed=seed))
        runs.append((net, log))
    return splits, runs


def test_criterion_05_rich_rank_collapse(rich_runs):
    t0 = time.perf_counter()
    splits, runs = rich_runs
    te = splits["test"]
    rows = []
    for seed, (net, log) in zip(SEEDS, runs):
        er = log.column("effrank_W")
        P = top_subspace(net, 1)
        rep = mixing_metrics(net, te, P, rng=RngState(seed, "acc5"))
        rows.append(
            dict(
                ratio=er[-1] / er[0],
                cos=abs(P.Q[0, 0]),
                pperp_ra=rep.pperp_ra / rep.acc,
                p_ra=rep.p_ra,
                pperp_lc=rep.pperp_lc,
            )
        )
    med = {k: statistics.median(r[k] for r in rows) for k in rows[0]}
    ok = med["ratio"] < 0.35 and med["cos"] >= 0.9 and med["pperp_ra"] >= 0.95 and med["p_ra"] <= 0.65 and med["pperp_lc"] <= 0.15
    elapsed = time.perf_counter() - t0
    record(
        5,
        ok and elapsed < 180,
        "median effrank ratio={ratio:.3f} |cos|={cos:.4f} pperp_ra/acc={pperp_ra:.3f} p_ra={p_ra:.3f} pperp_lc={pperp_lc:.4f}".format(**med),
    )


def test_criterion_07_fproj_viable(rich_runs):
    splits, runs = rich_runs
    accs = []
    for seed, (net, _) in zip(SEEDS, runs):
        g, _, _ = orthop_train(net, splits["train"], 1, preset("rich", seed=seed + 2000))
        accs.append(evaluate(g, splits["test"]))
    record(7, min(accs) >= 0.95, f"f_proj test accuracy per seed {accs}")


# 6 ---------------------------------------------------------------------------------


def test_criterion_06_lazy_contrast():
    t0 = time.perf_counter()
    splits = make_splits(IfmSpec(d=20, gamma=1.5), "ifm")
    te = splits["test"]
    rows = []
    for seed in SEEDS:
        net, log = fit_network(splits["train"], "lazy", preset("lazy", seed=seed))
        er = log.column("effrank_W")
        P = optimize_projector(net, splits["train"], 1, lam=1.0, seed=seed)
        rep = mixing_metrics(net, te, P, rng=RngState(seed, "acc6"))
        rows.append(dict(ratio=er[-1] / er[0], pperp_ra=rep.pperp_ra / rep.acc, p_ra=rep.p_ra))
    med = {k: statistics.median(r[k] for r in rows) for k in rows[0]}
    elapsed = time.perf_counter() - t0
    ok = med["ratio"] >= 0.8 and med["pperp_ra"] >= 0.9 and med["p_ra"] <= 0.65 and elapsed < 300
    record(6, ok, "median effrank ratio={ratio:.3f} pperp_ra/acc={pperp_ra:.3f} p_ra={p_ra:.3f}".format(**med) + f" time={elapsed:.0f}s")


# 8 and 9 ---------------------------------------------------------------------------

COLLAGE = IfmSpec(d=20, gamma=1.0, num_nonlinear=18, num_noise=1)
SIGMAS = (0.25, 0.5, 1.0, 2.0)


@pytest.fixture(scope="module")
def collage_runs():
    out = []
    for seed in SEEDS:
        splits = make_splits(replace(COLLAGE, seed=seed), "collage-xor")
        tr, te = splits["train"], splits["test"]
        cfg = preset("rich", seed=seed)
        f, _ = fit_network(tr, "rich", cfg)
        f_ind, _ = fit_network(tr, "rich", replace(cfg, seed=seed + 1000))
        f_proj, _, _ = orthop_train(f, tr, 1, replace(cfg, seed=seed + 2000))
        noisy = with_noise(te, 1.0, RngState(seed, "acc/noise"))
        div_proj = diversity_report(f, f_proj, te, noisy)
        div_ind = diversity_report(f, f_ind, te, noisy)
        curve = robustness_sweep(
            {"ens_proj": (f, f_proj), "ens_ind": (f, f_ind)}, te, SIGMAS, trials=5, rng=RngState(seed, "acc/robust")
        )
        out.append((div_proj, div_ind, curve))
    return out


def test_criterion_08_diversity_direction(collage_runs):
    md_p = statistics.median(r[0].mist_div for r in collage_runs)
    md_i = statistics.median(r[1].mist_div for r in collage_runs)
    cc_p = statistics.median(r[0].cc_logit_corr for r in collage_runs)
    cc_i = statistics.median(r[1].cc_logit_corr for r in collage_runs)
    record(8, md_p > md_i and cc_p < cc_i, f"Mist-Div proj={md_p:.3f} ind={md_i:.3f}; CC-LogitCorr proj={cc_p:.3f} ind={cc_i:.3f}")


def test_criterion_09_robustness_direction(collage_runs):
    gaps = []
    for i, s in enumerate(SIGMAS):
        proj = statistics.median(r[2].accuracies["ens_proj"][i] for r in collage_runs)
        ind = statistics.median(r[2].accuracies["ens_ind"][i] for r in collage_runs)
        gaps.append(proj - ind)
    best = int(np.argmax(gaps))
    record(9, gaps[best] >= 0.02, "ens(f,f_proj) - ens(f,f_ind) by sigma: " + ", ".join(f"{s}:{g:+.3f}" for s, g in zip(SIGMAS, gaps)))


# 10 --------------------------------------------------------------------------------


def _grad_rel_err(net, X, y):
    _, g = loss_and_grad(net, X, y)
    worst = 0.0
    eps = 1e-5
    for name, grad in zip(("W", "b", "A"), g):
        P = getattr(net, name)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + eps
            lp = loss_and_grad(net, X, y)[0]
            P[idx] = old - eps
            lm = loss_and_grad(net, X, y)[0]
            P[idx] = old
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-3))
    return worst


def test_criterion_10_unit_oracles(tmp_path):
    problems = []
    if not (kappa(1.0) == 2.0 and kappa(0.0) == 1 / math.pi and kappa(-1.0) == 0.0):
        problems.append("kappa values")
    r = np.random.default_rng(0)
    for k in (1, 3, 6):
        Q = orthonormalize(r.standard_normal((10, k)))
        if abs(effective_rank(Q @ Q.T) - k) > 1e-9:
            problems.append(f"effective rank of rank-{k} projection")
    worst = 0.0
    checked = 0
    while checked < 5:
        m, d, c = r.integers(1, 9), r.integers(1, 7), r.integers(2, 4)
        net = MLP(r.standard_normal((m, d)), r.standard_normal(m), r.standard_normal((m, c)), 1.0 / m, "rich")
        X = r.standard_normal((6, d))
        if np.min(np.abs(X @ net.W.T + net.b)) < 1e-2:
            continue  # finite differences across the ReLU kink are meaningless
        worst = max(worst, _grad_rel_err(net, X, r.integers(c, size=6)))
        checked += 1
    if worst > 1e-6:
        problems.append(f"gradient rel err {worst:.1e}")
    ds = gen_ifm(IfmSpec(d=6, num_nonlinear=3, num_noise=2, n_train=100))
    save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    if not (back == ds and back.X.tobytes() == ds.X.tobytes()):
        problems.append("dataset round-trip")
    net = init_rich(17, 6, 3, RngState(3))
    save_checkpoint(net, tmp_path / "c.json")
    if not load_checkpoint(tmp_path / "c.json").params_equal(net):
        problems.append("checkpoint round-trip")
    record(10, not problems, "; ".join(problems) or f"kappa, effective rank, gradients (max rel err {worst:.1e}), round-trips")


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
