"""Acceptance criteria, one test per criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion.  Tolerances are pinned here, not calibrated elsewhere.
"""

import time

import numpy as np
import pytest

import lsagap as L
from lsagap import attention as att
from lsagap import rollout as ro
from lsagap.gap import GapConditioningError, compute_gap, multilayer_gap_profile, rate_fit
from lsagap.harness.cli import main as cli_main
from lsagap.harness.config import parse_config
from lsagap.harness.csvio import aggregate_rows, read_csv
from lsagap.harness.experiments import run_experiment
from lsagap.moments import (ar1_warm_start, ar1_warm_start_oracle,
                            exact_lifted_moments, exact_lifted_moments_naive,
                            mc_lifted_moments)
from lsagap.stochastic import (derive_seed, ols_fit, random_stable_coeffs,
                               sample_path, sample_windows, yule_walker_solve)


def _report(num, text):
    print(f"ACCEPTANCE {num}: PASS - {text}")


def _write(tmp_path, text):
    path = tmp_path / "config.ini"
    path.write_text(text)
    return str(path)


def test_criterion_01_strict_gap():
    """eigmin(Delta_n) > 0 and excess > 0 for 20 random stable processes."""
    t0 = time.time()
    cases = []
    rng_idx = 0
    for p in (1, 2, 3):
        span = list(range(p + 2, 31))
        picks = span[:: max(1, len(span) // 7)][:7]
        for n in picks:
            if len(cases) < 20:
                cases.append((p, n, rng_idx))
                rng_idx += 1
    assert len(cases) == 20
    degenerate_corners = 0
    for p, n, k in cases:
        rho = random_stable_coeffs(p, 7000 + k)
        proc = L.ArProcess(rho, 1.0)
        moments = exact_lifted_moments(proc, n, p)
        try:
            report = compute_gap(moments, rho)
        except GapConditioningError:
            # two masked windows with p >= 3 leave the lifted matrix exactly
            # rank deficient; the residual-covariance gap is still strict
            assert n == p + 2 and p >= 3
            degenerate_corners += 1
            report = compute_gap(moments, rho, pseudo=True)
        assert report.eigmin > 0, (p, n)
        assert report.excess > 0, (p, n)
    elapsed = time.time() - t0
    assert elapsed < 120
    _report(1, f"strict gap positive on 20 random AR(p) instances "
               f"({degenerate_corners} pseudo-inverse corner case(s), {elapsed:.1f}s)")


def test_criterion_02_one_over_n_rate():
    """AR(1) rho=0.9: log-log slope and n*excess stabilization."""
    t0 = time.time()
    proc = L.ArProcess([0.9], 1.0)
    fit = rate_fit(proc, 1, [10, 20, 40, 80, 160])
    assert -1.3 <= fit.slope <= -0.8
    assert 0.75 <= fit.last_ratio <= 1.25
    elapsed = time.time() - t0
    assert elapsed < 60
    _report(2, f"slope {fit.slope:.3f} in [-1.3, -0.8], "
               f"n*excess ratio {fit.last_ratio:.3f} in [0.75, 1.25] ({elapsed:.1f}s)")


def test_criterion_03_ar1_closed_forms():
    """N_n, D_n match the pairing oracle; alpha* approaches 1/sigma^2."""
    worst = 0.0
    for rho in (0.3, 0.6, 0.9):
        for n in (3, 5, 10, 50):
            ws = ar1_warm_start(rho, 1.0, n)
            n_o, d_o = ar1_warm_start_oracle(rho, 1.0, n)
            rel_n = abs(ws.n_n - n_o) / abs(n_o)
            rel_d = abs(ws.d_n - d_o) / abs(d_o)
            worst = max(worst, rel_n, rel_d)
            assert rel_n <= 1e-9 and rel_d <= 1e-9, (rho, n)
    # trend run at rho = 0.6 (the criterion leaves rho unpinned; 0.9 needs
    # n beyond 10^3 to come within 2 percent)
    scaled = [ar1_warm_start(0.6, 1.0, n) for n in (10, 100, 1000)]
    values = [w.alpha_star * w.sigma2 for w in scaled]
    assert values[0] < values[1] < values[2]
    assert abs(values[-1] - 1.0) < 0.02
    _report(3, f"closed forms match oracle (worst rel err {worst:.2e}); "
               f"alpha*sigma^2 -> {values[-1]:.4f} monotonically")


def test_criterion_04_moment_cross_check():
    """Exact moments vs 1e6-sample Monte Carlo; lag-reduced vs naive sums."""
    proc = L.ArProcess([0.9], 1.0)
    exact = exact_lifted_moments(proc, 10, 1)
    mc = mc_lifted_moments(proc, 10, 1, samples=1_000_000, seed=424242)
    z_s = np.abs(mc.s_tilde - exact.s_tilde) / np.where(mc.se_s > 0, mc.se_s, 1.0)
    z_r = np.abs(mc.r_tilde - exact.r_tilde) / np.where(mc.se_r > 0, mc.se_r, 1.0)
    assert z_s.max() < 4.0 and z_r.max() < 4.0

    worst = 0.0
    for rho, p in (([0.9], 1), ([0.5, 0.3], 2), ([-0.4, 0.25], 2)):
        for n in range(p + 2, 13):
            pr = L.ArProcess(rho, 0.8)
            fast = exact_lifted_moments(pr, n, p)
            slow = exact_lifted_moments_naive(pr, n, p)
            scale = max(np.abs(slow.s_tilde).max(), 1.0)
            dev = max(np.abs(fast.s_tilde - slow.s_tilde).max(),
                      np.abs(fast.r_tilde - slow.r_tilde).max())
            worst = max(worst, dev / scale)
            assert dev <= 1e-12 * scale, (rho, n)
    _report(4, f"MC agreement max |z| = {max(z_s.max(), z_r.max()):.2f} < 4; "
               f"lag-reduced == naive (worst rel dev {worst:.1e})")


def test_criterion_05_constructive_recovery():
    """b*' Gamma_{p+1} A* = rho' exactly; finite-n readout error shrinks."""
    for p in (1, 2, 3, 4, 5):
        for k in (0, 1, 2):
            rho = random_stable_coeffs(p, 900 + 10 * p + k)
            proc = L.ArProcess(rho, 1.0)
            tab = L.autocovariances(proc, p)
            params = att.constructive_params(tab, p)
            lhs = params.b @ tab.toeplitz_block(p + 1) @ params.a
            assert np.max(np.abs(lhs - rho)) <= 1e-10, (p, k)

    proc = L.ArProcess([0.5, 0.3], 1.0)
    params = att.constructive_params(L.autocovariances(proc, 2), 2)
    rel = []
    for n in (100, 1_000, 10_000):
        wins = sample_windows(proc, n, 300, seed=derive_seed(5, "cr", n))
        preds = att.predict_lsa(params, wins, 2)
        target = wins[:, -2:] @ np.array([0.5, 0.3])
        rel.append(float(np.sqrt(np.mean((preds - target) ** 2)
                                 / np.mean(target**2))))
    assert rel[0] > rel[1] > rel[2]
    assert rel[2] < 0.05
    _report(5, f"identity exact to 1e-10 for p <= 5; readout rel err "
               f"{rel[0]:.3f} -> {rel[1]:.3f} -> {rel[2]:.3f} (< 5%)")


AR5_TF_CONFIG = """
[experiment]
kind = train-eval-tf
out = {out}
[process]
p = 5
rho = draw
sigma_eps = 0.05
[grid]
n = 8
[data]
t = 50000
[rollout]
steps = 50
[seeds]
list = 1, 2, 3, 4, 5, 6, 7
"""

CONTEXT_SCAN_CONFIG = """
[experiment]
kind = context-scan
out = {out}
[process]
p = 5
p_list = 3, 5, 7
rho = draw
sigma_eps = 0.05
[grid]
n_offsets = 5, 25, 50, 100, 200
[data]
t = 50000
[seeds]
list = 1, 2, 3, 4, 5, 6, 7
"""


def test_criterion_06_training_dominance(tmp_path):
    """Trained LSA never beats OLS under teacher forcing; context scaling."""
    t0 = time.time()
    cfg = parse_config(_write(tmp_path, AR5_TF_CONFIG.format(out=tmp_path / "tf")),
                       fast=True)
    rows, _ = run_experiment(cfg)
    by_seed = {}
    for r in rows:
        if r["metric"] in ("lsa_tf_mse", "ols_tf_mse"):
            by_seed.setdefault(r["seed"], {})[r["metric"]] = r["value"]
    assert len(by_seed) == 7
    for seed, vals in by_seed.items():
        assert vals["lsa_tf_mse"] >= vals["ols_tf_mse"], seed

    cfg2 = parse_config(_write(tmp_path, CONTEXT_SCAN_CONFIG.format(out=tmp_path / "cs")),
                        fast=True)
    rows2, _ = run_experiment(cfg2)
    agg = aggregate_rows([{k: str(v) for k, v in r.items()} for r in rows2])
    for p in ("3", "5", "7"):
        lsa = sorted(((float(r["n"]), r["mean"], r["sem"]) for r in agg
                      if r["p"] == p and r["metric"] == "lsa_tf_mse"))
        ols = sorted(((float(r["n"]), r["mean"], r["sem"]) for r in agg
                      if r["p"] == p and r["metric"] == "ols_tf_mse"))
        assert len(lsa) == 5
        for (_, m1, _), (_, m2, _) in zip(lsa, lsa[1:]):
            assert m2 <= m1, (p, [v for _, v, _ in lsa])
        for (_, ml, _), (_, mo, so) in zip(lsa, ols):
            assert ml >= mo - 3 * so, p
    elapsed = time.time() - t0
    assert elapsed < 1800
    _report(6, f"TF dominance on every seed; context-scan LSA MSE "
               f"nonincreasing in n and >= OLS - 3 SEM ({elapsed:.0f}s)")


LAYER_SCAN_CONFIG = """
[experiment]
kind = layer-scan
out = {out}
[process]
p = 3
rho = draw
sigma_eps = 0.05
[grid]
n = 20
l = 1, 2, 3
[data]
t = 10000
[train]
learning_rate = 1e-3
batch_size = 512
max_epochs = 10
[seeds]
list = 1, 2, 3, 4, 5, 6, 7
"""


def test_criterion_07_depth_monotonicity(tmp_path):
    """MC trace gaps and trained depth scans never worsen with layers."""
    proc = L.ArProcess([0.5, 0.3], 1.0)
    profile = multilayer_gap_profile(proc, 2, 12, 3, samples=40_000, seed=11)
    traces = [g.trace for g in profile]
    assert traces[1] <= traces[0] + 1e-8
    assert traces[2] <= traces[1] + 1e-8

    cfg = parse_config(_write(tmp_path, LAYER_SCAN_CONFIG.format(out=tmp_path / "ls")),
                       fast=True)
    rows, _ = run_experiment(cfg)
    agg = aggregate_rows([{k: str(v) for k, v in r.items()} for r in rows])
    lsa = sorted(((int(r["L"]), r["mean"], r["sem"]) for r in agg
                  if r["metric"] == "lsa_tf_mse"))
    ols = [r for r in agg if r["metric"] == "ols_tf_mse"][0]
    assert len(lsa) == 3
    for (_, m1, s1), (_, m2, s2) in zip(lsa, lsa[1:]):
        assert m2 <= m1 + 3 * max(s1, s2), lsa
    for _, m, _ in lsa:
        assert m >= ols["mean"] - 3 * ols["sem"]
    _report(7, f"MC trace gaps {traces[0]:.4f} >= {traces[1]:.4f} >= "
               f"{traces[2]:.4f}; trained depth scan within 3 SEM of monotone "
               f"and never below OLS")


def test_criterion_08_cot_collapse_and_compounding():
    """Bayes decay rate, compounding curve values, horizonwise dominance."""
    sigma_eps = np.sqrt(0.19)
    proc = L.ArProcess([0.9], sigma_eps)
    sigma2 = 0.19 / (1 - 0.81)

    trace = ro.bayes_rollout(proc, sample_windows(proc, 8, 1, seed=1)[0], 60)
    diag = ro.collapse_diagnostics(trace, proc)
    assert abs(diag.beta_fit - 0.9) <= 1e-6

    bayes = ro.compounding_curve(proc, ro.LinearPredictor([0.9], tag="bayes"),
                                 [5, 10], samples=10_000, seed=2, history_len=10)
    for h, got, se in zip((5, 10), bayes.mse, bayes.stderr):
        want = sigma2 * (1 - 0.9 ** (2 * h))
        assert abs(got - want) <= 3 * se, (h, got, want, se)

    wins = sample_windows(proc, 13, 6_000, seed=3)
    params, _ = att.train_bilinear(wins[:, :12], wins[:, 12], 1,
                                   att.TrainConfig(seed=3))
    lsa = ro.compounding_curve(proc, ro.LsaPredictor(params), range(1, 51),
                               samples=10_000, seed=4, history_len=12)
    for h, mse, se in zip(lsa.horizons, lsa.mse, lsa.stderr):
        slack = 3 * se if np.isfinite(se) else 0.0
        assert mse >= L.bayes_multistep_mse(proc, h) - slack, h
    ratio5 = bayes.mse[0] / sigma2
    ratio10 = bayes.mse[1] / sigma2
    _report(8, f"beta_fit = 0.9 +- 1e-6; MSE(5)/s2 = {ratio5:.3f} ~ 0.651, "
               f"MSE(10)/s2 = {ratio10:.3f} ~ 0.878; LSA CoT dominated at all "
               f"h <= 50")


def test_criterion_09_failure_horizon():
    """Trained LSA reaches the large-error regime no later than Bayes."""
    taus = (0.3, 0.5, 0.7, 0.9)
    wins_by_tau = {tau: 0 for tau in taus}
    seeds = range(1, 8)
    for seed in seeds:
        rho = random_stable_coeffs(5, derive_seed(seed, "rho", 5))
        proc = L.ArProcess(rho, 0.05)
        gamma0 = L.autocovariances(proc, 0).gamma[0]
        train = sample_windows(proc, 9, 4_000, seed=derive_seed(seed, "train"))
        params, _ = att.train_bilinear(train[:, :8], train[:, 8], 5,
                                       att.TrainConfig(seed=seed))
        horizon_grid = range(1, 41)
        lsa = ro.compounding_curve(proc, ro.LsaPredictor(params), horizon_grid,
                                   samples=2_000, seed=derive_seed(seed, "mc"),
                                   history_len=8)
        bayes = ro.compounding_curve(proc, ro.LinearPredictor(rho, tag="bayes"),
                                     horizon_grid, samples=2_000,
                                     seed=derive_seed(seed, "mc"), history_len=8)
        for tau in taus:
            h_l = ro.failure_horizon(zip(horizon_grid, lsa.mse), tau, gamma0).horizon
            h_b = ro.failure_horizon(zip(horizon_grid, bayes.mse), tau, gamma0).horizon
            h_l = h_l if h_l is not None else 10**9
            h_b = h_b if h_b is not None else 10**9
            if h_l <= h_b:
                wins_by_tau[tau] += 1
    for tau, count in wins_by_tau.items():
        assert count >= 4, (tau, wins_by_tau)  # majority of 7 seeds, ties allowed
    _report(9, "H_tau(trained LSA) <= H_tau(Bayes) on a majority of seeds for "
               f"every tau in {taus}: counts {list(wins_by_tau.values())}")


def test_criterion_10_classical_estimators():
    """OLS consistency across path lengths; Yule-Walker round trips."""
    proc = L.ArProcess([0.9], 1.0)
    errs = []
    for T in (1_000, 10_000, 100_000):
        per_seed = []
        for seed in range(10):
            path = sample_path(proc, T, seed=derive_seed(seed, "ols", T))
            per_seed.append(abs(ols_fit(path, 1)[0] - 0.9))
        errs.append(float(np.mean(per_seed)))
    assert errs[0] > errs[1] > errs[2]

    for seed in range(20):
        p = 1 + seed % 4
        rho = random_stable_coeffs(p, 4000 + seed)
        tab = L.autocovariances(L.ArProcess(rho, 1.0), p)
        assert np.max(np.abs(yule_walker_solve(tab, p) - rho)) <= 1e-8
    _report(10, f"|ols - rho| strictly decreasing: {errs[0]:.4f} > "
                f"{errs[1]:.4f} > {errs[2]:.4f}; Yule-Walker round trip 1e-8")


def test_criterion_11_gradient_checks():
    """Analytic vs central finite-difference gradients, 20 random instances."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    checked = 0
    h = 1e-6
    for inst in range(20):
        p = int(rng.integers(1, 4))
        n = p + int(rng.integers(4, 8))
        bsz = int(rng.integers(3, 7))
        wins = rng.standard_normal((bsz, n))
        ys = rng.standard_normal(bsz)
        kind = ("full", "stack", "softmax")[inst % 3]
        if kind == "full":
            model = att.init_full(p, seed=inst, scale=0.5)
        elif kind == "softmax":
            model = att.init_softmax(p, seed=inst, scale=0.5)
        else:
            depth = 1 + inst % 3
            model = att.StackParams(tuple(
                att.LsaParams(b=rng.standard_normal(p + 1),
                              a=0.5 * rng.standard_normal((p + 1, p)))
                for _ in range(depth)))
        _, grads = att._value_and_grad(model, wins, ys, p)
        arrays = att._flatten_params(model)
        for ai, arr in enumerate(arrays):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                up = [x.copy() for x in arrays]
                dn = [x.copy() for x in arrays]
                up[ai][idx] += h
                dn[ai][idx] -= h
                num = (att.batch_loss(att._rebuild_params(model, up), wins, ys, p)
                       - att.batch_loss(att._rebuild_params(model, dn), wins, ys, p)) / (2 * h)
                den = max(abs(num), abs(grads[ai][idx]), 1e-8)
                rel = abs(num - grads[ai][idx]) / den
                worst = max(worst, rel)
                checked += 1
                assert rel < 1e-5, (kind, inst)
    _report(11, f"analytic gradients match finite differences on 20 instances "
                f"({checked} coordinates, worst rel err {worst:.1e})")


DETERMINISM_CONFIG = """
[experiment]
kind = train-eval-cot
out = {out}
[process]
p = 2
rho = 0.5, 0.3
sigma_eps = 0.1
[grid]
n = 7
[data]
t = 4000
[rollout]
steps = 12
replicates = 80
taus = 0.5
[seeds]
list = 3, 4
"""


def test_criterion_12_determinism(tmp_path):
    """Identical config and seeds give byte-identical results files."""
    path = _write(tmp_path, DETERMINISM_CONFIG.format(out=tmp_path / "one"))
    assert cli_main(["run", "--config", path]) == 0
    assert cli_main(["run", "--config", path, "--out", str(tmp_path / "two")]) == 0
    first = (tmp_path / "one" / "results.csv").read_bytes()
    second = (tmp_path / "two" / "results.csv").read_bytes()
    assert first == second
    assert (tmp_path / "one" / "traces.csv").read_bytes() == \
        (tmp_path / "two" / "traces.csv").read_bytes()
    _report(12, "byte-identical results.csv and traces.csv across reruns")
