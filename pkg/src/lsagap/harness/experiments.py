"""Experiment cell planning and execution.

Every experiment decomposes into independent cells (one per config point x
seed); cells are pure functions of (config, cell description) and can run
in parallel.  Rows are assembled in plan order, so the emitted CSV is
byte-identical regardless of the job count.
"""

from __future__ import annotations

import numpy as np

from .. import attention as att
from .. import rollout as ro
from ..gap import compute_gap, multilayer_gap_profile, rate_fit, uniform_gap_sweep
from ..hankel import feature_collapse_error
from ..moments import (ar1_warm_start, ar1_warm_start_oracle,
                       exact_lifted_moments, mc_lifted_moments)
from ..stochastic import (ArProcess, derive_seed, ols_fit, random_stable_coeffs,
                          sample_autocovariances, sample_path)
from .config import ExperimentConfig

ORACLE_MAX_N = 60


def _process_for(cfg: ExperimentConfig, p: int, seed: int) -> ArProcess:
    """Fixed coefficients when configured (and the order matches), else a
    seed-drawn stable vector."""
    if cfg.rho is not None and p == cfg.p:
        coeffs = np.asarray(cfg.rho)
    else:
        coeffs = random_stable_coeffs(p, derive_seed(seed, "rho", p))
    return ArProcess(coeffs=coeffs, noise_std=cfg.sigma_eps,
                     innovation_law=cfg.innovation)


def _splits(values: np.ndarray, fractions):
    t = values.shape[0]
    a = int(fractions[0] * t)
    b = int((fractions[0] + fractions[1]) * t)
    return values[:a], values[a:b], values[b:]


def _window_dataset(values: np.ndarray, n: int):
    if values.shape[0] <= n:
        raise ValueError("split too short for the requested history length")
    wins = np.lib.stride_tricks.sliding_window_view(values[:-1], n, axis=0)
    return wins, values[n:]


def _row(cfg, seed=None, p=None, n=None, L=None, step=None, metric="",
         value=None, stderr=None):
    return {"experiment": cfg.kind, "seed": seed, "p": p, "n": n, "L": L,
            "step": step, "metric": metric, "value": value, "stderr": stderr}


# ----------------------------------------------------------------------
# cell bodies, one per experiment kind
# ----------------------------------------------------------------------

def _cell_exact_gap(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    proc = _process_for(cfg, cfg.p, seed)
    report = compute_gap(exact_lifted_moments(proc, n, cfg.p), proc.coeffs)
    rows = [
        _row(cfg, seed, cfg.p, n, metric="eigmin_delta", value=report.eigmin),
        _row(cfg, seed, cfg.p, n, metric="excess", value=report.excess),
        _row(cfg, seed, cfg.p, n, metric="class_risk", value=report.class_risk),
        _row(cfg, seed, cfg.p, n, metric="s_eigmin", value=report.s_eigmin),
    ]
    return rows, []


def _cell_mc_gap(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    proc = _process_for(cfg, cfg.p, seed)
    moments = mc_lifted_moments(proc, n, cfg.p, samples=cfg.mc_samples,
                                seed=derive_seed(seed, "mc-gap"))
    report = compute_gap(moments, proc.coeffs)
    rows = [
        _row(cfg, seed, cfg.p, n, metric="excess", value=report.excess),
        _row(cfg, seed, cfg.p, n, metric="eigmin_delta", value=report.eigmin),
        _row(cfg, seed, cfg.p, n, metric="s_eigmin", value=report.s_eigmin),
        _row(cfg, seed, cfg.p, n, metric="samples", value=cfg.mc_samples),
    ]
    return rows, []


def _cell_rate(cfg: ExperimentConfig, cell):
    seed = cell["seed"]
    proc = _process_for(cfg, cfg.p, seed)
    fit = rate_fit(proc, cfg.p, cfg.n_values(cfg.p))
    rows = []
    for n, exc, nexc in zip(fit.grid, fit.excess, fit.n_excess):
        rows.append(_row(cfg, seed, cfg.p, n, metric="excess", value=exc))
        rows.append(_row(cfg, seed, cfg.p, n, metric="n_excess", value=nexc))
    rows.append(_row(cfg, seed, cfg.p, metric="loglog_slope", value=fit.slope))
    rows.append(_row(cfg, seed, cfg.p, metric="last_ratio", value=fit.last_ratio))
    return rows, []


def _cell_uniform_gap(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    report = uniform_gap_sweep(cfg.p, cfg.shell[0], cfg.shell[1], n,
                               resolution=cfg.resolution,
                               sigma_eps=cfg.sigma_eps, seed=seed)
    rows = [
        _row(cfg, seed, cfg.p, n, metric="min_excess", value=report.min_excess),
        _row(cfg, seed, cfg.p, n, metric="min_eigmin", value=report.min_eigmin),
        _row(cfg, seed, cfg.p, n, metric="bound_holds", value=float(report.bound_holds)),
        _row(cfg, seed, cfg.p, n, metric="evaluated", value=report.evaluated),
        _row(cfg, seed, cfg.p, n, metric="rejected", value=report.rejected),
    ]
    return rows, []


def _cell_multilayer(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    proc = _process_for(cfg, cfg.p, seed)
    max_depth = max(cfg.l_grid)
    profile = multilayer_gap_profile(proc, cfg.p, n, max_depth, cfg.mc_samples,
                                     seed=derive_seed(seed, "multilayer"))
    rows = []
    for gap in profile:
        if gap.depth in cfg.l_grid:
            rows.append(_row(cfg, seed, cfg.p, n, L=gap.depth,
                             metric="trace_delta", value=gap.trace))
            rows.append(_row(cfg, seed, cfg.p, n, L=gap.depth,
                             metric="eigmin_delta", value=gap.eigmin))
    traces = [profile[i].trace for i in range(len(profile))]
    mono = all(b <= a + 1e-8 for a, b in zip(traces, traces[1:]))
    rows.append(_row(cfg, seed, cfg.p, n, metric="trace_monotone", value=float(mono)))
    return rows, []


def _cell_ar1_warmstart(cfg: ExperimentConfig, cell):
    n = cell["n"]
    rho = cfg.rho[0] if cfg.rho is not None else 0.6
    ws = ar1_warm_start(rho, cfg.sigma_eps, n)
    rows = [
        _row(cfg, None, 1, n, metric="N_n", value=ws.n_n),
        _row(cfg, None, 1, n, metric="D_n", value=ws.d_n),
        _row(cfg, None, 1, n, metric="alpha_star", value=ws.alpha_star),
        _row(cfg, None, 1, n, metric="alpha_times_sigma2",
             value=ws.alpha_star * ws.sigma2),
        _row(cfg, None, 1, n, metric="restricted_min", value=ws.restricted_min),
    ]
    if n <= ORACLE_MAX_N:
        n_o, d_o = ar1_warm_start_oracle(rho, cfg.sigma_eps, n)
        rows.append(_row(cfg, None, 1, n, metric="oracle_rel_err_N",
                         value=abs(ws.n_n - n_o) / max(abs(n_o), 1e-300)))
        rows.append(_row(cfg, None, 1, n, metric="oracle_rel_err_D",
                         value=abs(ws.d_n - d_o) / max(abs(d_o), 1e-300)))
    return rows, []


def _trained_predictors(cfg: ExperimentConfig, proc: ArProcess, seed: int, n: int,
                        train_vals: np.ndarray):
    """One-layer LSA (alternating least squares, warm-started from sample
    autocovariances), OLS plug-in, and the true-coefficient predictor."""
    p = proc.p
    wins, targets = _window_dataset(train_vals, n)
    stab = sample_autocovariances(train_vals, min(n, train_vals.shape[0] - 1))
    params, _ = att.train_bilinear(
        wins, targets, p, att.TrainConfig(seed=derive_seed(seed, "als"),
                                          splits=cfg.splits),
        autocov=stab, restarts=cfg.als_restarts, max_sweeps=cfg.als_sweeps)
    ols_coeffs = ols_fit(train_vals, p)
    return (ro.LsaPredictor(params, tag="lsa"),
            ro.LinearPredictor(ols_coeffs, tag="ols"),
            ro.LinearPredictor(proc.coeffs, tag="bayes"))


def _cell_train_eval_tf(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    proc = _process_for(cfg, cfg.p, seed)
    path = sample_path(proc, cfg.T, seed=derive_seed(seed, "path")).values
    train_vals, _, test_vals = _splits(path, cfg.splits)
    predictors = _trained_predictors(cfg, proc, seed, n, train_vals)
    rows, trace_rows = [], []
    for pred in predictors:
        report = ro.teacher_forcing_eval(pred, test_vals, proc.p, n)
        rows.append(_row(cfg, seed, proc.p, n, metric=f"{pred.tag}_tf_mse",
                         value=report.mse))
        steps = min(cfg.steps, report.predictions.shape[0])
        trace = ro.RolloutTrace(
            predictions=report.predictions[:steps], tag=pred.tag,
            history=test_vals[:n], truth=report.truth[:steps],
            sq_errors=(report.predictions[:steps] - report.truth[:steps]) ** 2,
            cmse=report.cmse[:steps])
        trace_rows.extend(ro.trace_rows(trace, seed))
    return rows, trace_rows


def _cot_mse_curves(cfg: ExperimentConfig, proc: ArProcess, predictors, seed: int,
                    n: int, test_vals: np.ndarray):
    """Empirical CoT MSE(h) for each predictor over replicated test starts."""
    max_h = cfg.steps
    stride_len = n + max_h
    total = test_vals.shape[0] - stride_len + 1
    if total < 1:
        raise ValueError("test split too short for the rollout horizon")
    starts = np.linspace(0, total - 1, min(cfg.replicates, total)).astype(int)
    hists = np.stack([test_vals[s: s + n] for s in starts])
    futures = np.stack([test_vals[s + n: s + stride_len] for s in starts])
    curves = {}
    for pred in predictors:
        if hasattr(pred, "rollout_batch"):
            preds = pred.rollout_batch(hists, max_h)
        else:
            preds = np.stack([ro.cot_rollout(pred, h, max_h).predictions
                              for h in hists])
        errs = ro.squared_errors(preds, futures)
        curves[pred.tag] = (errs.mean(axis=0), ro.columnwise_sem(errs))
    return curves, hists[0], futures[0]


def _cell_train_eval_cot(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    proc = _process_for(cfg, cfg.p, seed)
    path = sample_path(proc, cfg.T, seed=derive_seed(seed, "path")).values
    train_vals, _, test_vals = _splits(path, cfg.splits)
    predictors = _trained_predictors(cfg, proc, seed, n, train_vals)
    curves, hist0, future0 = _cot_mse_curves(cfg, proc, predictors, seed, n, test_vals)
    variance = float(np.var(test_vals))
    rows, trace_rows = [], []
    rows.append(_row(cfg, seed, proc.p, n, metric="variance_ref", value=variance))
    for pred in predictors:
        mse, sem = curves[pred.tag]
        for h in range(1, cfg.steps + 1):
            rows.append(_row(cfg, seed, proc.p, n, step=h,
                             metric=f"{pred.tag}_cot_mse",
                             value=float(mse[h - 1]), stderr=float(sem[h - 1])))
        for tau in cfg.taus:
            report = ro.failure_horizon(
                zip(range(1, cfg.steps + 1), mse), tau, variance, tag=pred.tag)
            rows.append(_row(cfg, seed, proc.p, n,
                             metric=f"{pred.tag}_failure_horizon[tau={tau:g}]",
                             value=None if report.horizon is None
                             else float(report.horizon)))
        trace = ro.cot_rollout(pred, hist0, cfg.steps, truth=future0)
        trace_rows.extend(ro.trace_rows(trace, seed))
    return rows, trace_rows


def _cell_context_scan(cfg: ExperimentConfig, cell):
    seed, p = cell["seed"], cell["p"]
    proc = _process_for(cfg, p, seed)
    path = sample_path(proc, cfg.T, seed=derive_seed(seed, "path", p)).values
    train_vals, _, test_vals = _splits(path, cfg.splits)
    ols_coeffs = ols_fit(train_vals, p)
    # score every history length on the same targets so the scan is paired
    eval_start = max(cfg.n_values(p))
    rows = []
    for n in cfg.n_values(p):
        wins, targets = _window_dataset(train_vals, n)
        stab = sample_autocovariances(train_vals, min(n, train_vals.shape[0] - 1))
        params, _ = att.train_bilinear(
            wins, targets, p,
            att.TrainConfig(seed=derive_seed(seed, "als", p, n), splits=cfg.splits),
            autocov=stab, restarts=cfg.als_restarts, max_sweeps=cfg.als_sweeps)
        lsa = ro.teacher_forcing_eval(ro.LsaPredictor(params, tag="lsa"),
                                      test_vals, p, n, start=eval_start)
        ols = ro.teacher_forcing_eval(ro.LinearPredictor(ols_coeffs, tag="ols"),
                                      test_vals, p, n, start=eval_start)
        rows.append(_row(cfg, seed, p, n, L=1, metric="lsa_tf_mse", value=lsa.mse))
        rows.append(_row(cfg, seed, p, n, L=1, metric="ols_tf_mse", value=ols.mse))
    return rows, []


def _cell_layer_scan(cfg: ExperimentConfig, cell):
    seed, p = cell["seed"], cell["p"]
    proc = _process_for(cfg, p, seed)
    path = sample_path(proc, cfg.T, seed=derive_seed(seed, "path", p)).values
    train_vals, _, test_vals = _splits(path, cfg.splits)
    n = cfg.n_values(p)[0]
    wins, targets = _window_dataset(train_vals, n)
    ols_coeffs = ols_fit(train_vals, p)
    ols = ro.teacher_forcing_eval(ro.LinearPredictor(ols_coeffs, tag="ols"),
                                  test_vals, p, n)
    rows = [_row(cfg, seed, p, n, metric="ols_tf_mse", value=ols.mse)]
    train_cfg = att.TrainConfig(
        learning_rate=cfg.train.learning_rate, batch_size=cfg.train.batch_size,
        max_epochs=cfg.train.max_epochs, seed=derive_seed(seed, "stack", p),
        early_stop_tol=cfg.train.early_stop_tol, optimizer=cfg.train.optimizer,
        splits=cfg.splits)
    stack = att.init_stack(p, 1, seed=derive_seed(seed, "stack-init", p))
    best_losses = {}
    for depth in range(1, max(cfg.l_grid) + 1):
        stack, trace = att.train_gradient(stack, wins, targets, p, train_cfg)
        best_losses[depth] = min(trace)
        if depth in cfg.l_grid:
            report = ro.teacher_forcing_eval(
                ro.StackPredictor(stack, tag="lsa"), test_vals, p, n)
            rows.append(_row(cfg, seed, p, n, L=depth, metric="lsa_tf_mse",
                             value=report.mse))
            rows.append(_row(cfg, seed, p, n, L=depth, metric="train_loss",
                             value=best_losses[depth]))
        stack = att.append_zero_layer(stack)
    return rows, []


def _cell_softmax_compare(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    proc = _process_for(cfg, cfg.p, seed)
    p = proc.p
    path = sample_path(proc, cfg.T, seed=derive_seed(seed, "path")).values
    train_vals, _, test_vals = _splits(path, cfg.splits)
    wins, targets = _window_dataset(train_vals, n)
    train_cfg = att.TrainConfig(
        learning_rate=cfg.train.learning_rate, batch_size=cfg.train.batch_size,
        max_epochs=cfg.train.max_epochs, seed=derive_seed(seed, "grad"),
        early_stop_tol=cfg.train.early_stop_tol, optimizer=cfg.train.optimizer,
        splits=cfg.splits)
    lsa_params, _ = att.train_gradient(
        att.init_full(p, seed=derive_seed(seed, "init-lsa")), wins, targets, p,
        train_cfg)
    sm_params, _ = att.train_gradient(
        att.init_softmax(p, seed=derive_seed(seed, "init-sm")), wins, targets, p,
        train_cfg)
    ols_coeffs = ols_fit(train_vals, p)
    predictors = [ro.FullLsaPredictor(lsa_params, tag="lsa"),
                  ro.SoftmaxPredictor(sm_params, tag="softmax"),
                  ro.LinearPredictor(ols_coeffs, tag="ols"),
                  ro.LinearPredictor(proc.coeffs, tag="bayes")]
    rows = []
    for pred in predictors:
        report = ro.teacher_forcing_eval(pred, test_vals, p, n)
        rows.append(_row(cfg, seed, p, n, metric=f"{pred.tag}_tf_mse",
                         value=report.mse))
    return rows, []


def _cell_feature_collapse(cfg: ExperimentConfig, cell):
    seed, n = cell["seed"], cell["n"]
    proc = _process_for(cfg, cfg.p, seed)
    err = feature_collapse_error(proc, n, cfg.p, seed=derive_seed(seed, "collapse"),
                                 samples=min(cfg.replicates, 1000))
    return [_row(cfg, seed, cfg.p, n, metric="collapse_error", value=err)], []


_CELL_BODIES = {
    "exact-gap": _cell_exact_gap,
    "mc-gap": _cell_mc_gap,
    "rate": _cell_rate,
    "uniform-gap": _cell_uniform_gap,
    "multilayer": _cell_multilayer,
    "ar1-warmstart": _cell_ar1_warmstart,
    "train-eval-tf": _cell_train_eval_tf,
    "train-eval-cot": _cell_train_eval_cot,
    "context-scan": _cell_context_scan,
    "layer-scan": _cell_layer_scan,
    "softmax-compare": _cell_softmax_compare,
    "feature-collapse": _cell_feature_collapse,
}


def plan(cfg: ExperimentConfig) -> list[dict]:
    """Independent cells in deterministic order."""
    cells = []
    if cfg.kind in ("exact-gap", "mc-gap", "uniform-gap", "multilayer",
                    "feature-collapse"):
        for n in cfg.n_values(cfg.p):
            for seed in cfg.seeds:
                cells.append({"seed": seed, "n": n})
    elif cfg.kind == "rate":
        for seed in cfg.seeds:
            cells.append({"seed": seed})
    elif cfg.kind == "ar1-warmstart":
        for n in cfg.n_values(1):
            cells.append({"n": n})
    elif cfg.kind in ("train-eval-tf", "train-eval-cot", "softmax-compare"):
        n = cfg.n_values(cfg.p)[0]
        for seed in cfg.seeds:
            cells.append({"seed": seed, "n": n})
    elif cfg.kind in ("context-scan", "layer-scan"):
        for p in cfg.p_list:
            for seed in cfg.seeds:
                cells.append({"seed": seed, "p": p})
    else:
        raise ValueError(f"unknown experiment kind {cfg.kind!r}")
    return cells


def execute_cell(cfg: ExperimentConfig, cell: dict):
    return _CELL_BODIES[cfg.kind](cfg, cell)


def run_experiment(cfg: ExperimentConfig):
    """All cells, serially or via a process pool; deterministic row order."""
    cells = plan(cfg)
    if cfg.jobs > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outputs = list(pool.map(_execute_star, [(cfg, c) for c in cells]))
    else:
        outputs = [execute_cell(cfg, c) for c in cells]
    rows, traces = [], []
    for cell_rows, cell_traces in outputs:
        rows.extend(cell_rows)
        traces.extend(cell_traces)
    return rows, traces


def _execute_star(args):
    return execute_cell(*args)
