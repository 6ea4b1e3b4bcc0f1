"""Free-running (chain-of-thought) inference, collapse and compounding metrics.

Rollouts feed each prediction back as the newest series value and never
re-inject ground truth: at every step the predictor sees the extended
series, predicts at the zero label slot, the slot is overwritten, and a
fresh zero-slot column is appended.  Stable linear predictors therefore
decay exponentially to the mean, while their forecast error compounds to
the unconditional variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import LsaParams, SoftmaxParams, StackParams
from .hankel import build_hankel
from . import attention
from .stochastic import (ArProcess, bayes_multistep_mse, companion_matrix,
                         derive_seed, sample_windows, stationary_variance)


# ----------------------------------------------------------------------
# predictors
# ----------------------------------------------------------------------

class LinearPredictor:
    """Applies fixed lag weights (lag-1 first) to the most recent p values."""

    def __init__(self, coeffs, tag: str = "linear"):
        self.coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        self.tag = tag

    @property
    def p(self) -> int:
        return self.coeffs.shape[0]

    def predict_next(self, series: np.ndarray) -> float:
        recent = np.asarray(series, dtype=float)[::-1][: self.p]
        if recent.shape[0] < self.p:
            recent = np.pad(recent, (0, self.p - recent.shape[0]))
        return float(self.coeffs @ recent)

    def rollout_batch(self, histories: np.ndarray, steps: int) -> np.ndarray:
        h = np.asarray(histories, dtype=float)
        states = h[:, ::-1][:, : self.p].copy()  # newest first
        out = np.empty((h.shape[0], steps))
        for t in range(steps):
            pred = states @ self.coeffs
            out[:, t] = pred
            states[:, 1:] = states[:, :-1]
            states[:, 0] = pred
        return out


class LsaPredictor:
    """One-layer closed-form readout on the Hankel slice of the full series."""

    def __init__(self, params: LsaParams, tag: str = "lsa"):
        self.params = params
        self.tag = tag

    @property
    def p(self) -> int:
        return self.params.p

    def predict_next(self, series: np.ndarray) -> float:
        return attention.readout_closed_form(
            build_hankel(series, self.p), self.params)

    def rollout_batch(self, histories: np.ndarray, steps: int) -> np.ndarray:
        """Incremental Gram update: appending one value adds one window."""
        h = np.asarray(histories, dtype=float)
        bsz, n0 = h.shape
        p = self.p
        cols = np.lib.stride_tricks.sliding_window_view(h, p + 1, axis=1)
        k = np.einsum("bci,bcj->bij", cols, cols)  # unnormalized Gram sums
        tails = h[:, n0 - p:].copy()               # oldest first
        b, a = self.params.b, self.params.a
        out = np.empty((bsz, steps))
        length = n0
        # an unstable readout may overflow; downstream scoring treats
        # non-finite predictions as infinite error
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(steps):
                coef = np.einsum("i,bij,jk->bk", b, k, a) / length
                pred = np.einsum("bk,bk->b", coef, tails)
                out[:, t] = pred
                neww = np.concatenate([tails, pred[:, None]], axis=1)
                k += np.einsum("bi,bj->bij", neww, neww)
                tails[:, :-1] = tails[:, 1:]
                tails[:, -1] = pred
                length += 1
        return out


class StackPredictor:
    def __init__(self, stack: StackParams, tag: str = "lsa-stack"):
        self.stack = stack
        self.tag = tag

    @property
    def p(self) -> int:
        return self.stack.p

    def predict_next(self, series: np.ndarray) -> float:
        return attention.stack_forward(build_hankel(series, self.p), self.stack)


class FullLsaPredictor:
    """Unstructured one-layer (P, Q) readout at the prediction slot."""

    def __init__(self, params, tag: str = "lsa"):
        self.params = params
        self.tag = tag

    @property
    def p(self) -> int:
        return self.params.p

    def predict_next(self, series: np.ndarray) -> float:
        hs = build_hankel(series, self.p)
        return float(attention.lsa_forward_full(hs, self.params)[self.p, -1])


class SoftmaxPredictor:
    def __init__(self, params: SoftmaxParams, tag: str = "softmax"):
        self.params = params
        self.tag = tag

    @property
    def p(self) -> int:
        return self.params.p

    def predict_next(self, series: np.ndarray) -> float:
        return attention.softmax_forward(build_hankel(series, self.p), self.params)


# ----------------------------------------------------------------------
# traces
# ----------------------------------------------------------------------

def cmse_curve(sq_errors: np.ndarray) -> np.ndarray:
    sq = np.asarray(sq_errors, dtype=float)
    return np.cumsum(sq) / np.arange(1, sq.shape[0] + 1)


def squared_errors(predictions: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Elementwise squared error; an overflowed prediction counts as infinite
    error rather than propagating NaN."""
    preds = np.asarray(predictions, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        errs = (preds - np.asarray(truth, dtype=float)) ** 2
    return np.where(np.isfinite(preds), errs, np.inf)


def columnwise_sem(errs: np.ndarray) -> np.ndarray:
    """Standard error of the mean per column; infinite where any entry is."""
    out = np.full(errs.shape[1], np.inf)
    finite = np.isfinite(errs).all(axis=0)
    if finite.any():
        sub = errs[:, finite]
        with np.errstate(over="ignore"):
            sem = sub.std(axis=0, ddof=1) / np.sqrt(errs.shape[0])
        out[finite] = np.where(np.isfinite(sem), sem, np.inf)
    return out


@dataclass(frozen=True)
class RolloutTrace:
    predictions: np.ndarray
    tag: str
    history: np.ndarray
    truth: np.ndarray | None = None
    sq_errors: np.ndarray | None = None
    cmse: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.predictions.shape[0]


def _with_truth(predictions, tag, history, truth):
    predictions = np.asarray(predictions, dtype=float)
    if truth is None:
        return RolloutTrace(predictions=predictions, tag=tag,
                            history=np.asarray(history, dtype=float))
    truth = np.asarray(truth, dtype=float)[: predictions.shape[0]]
    if truth.shape[0] != predictions.shape[0]:
        raise ValueError("truth shorter than rollout")
    sq = (predictions - truth) ** 2
    return RolloutTrace(predictions=predictions, tag=tag,
                        history=np.asarray(history, dtype=float),
                        truth=truth, sq_errors=sq, cmse=cmse_curve(sq))


def cot_rollout(predictor, history, steps: int, truth=None) -> RolloutTrace:
    """Iterative inference feeding predictions back, never ground truth."""
    series = list(np.asarray(history, dtype=float))
    if len(series) < predictor.p + 1:
        raise ValueError("history must be at least p+1 long")
    preds = np.empty(steps)
    for t in range(steps):
        value = predictor.predict_next(np.asarray(series))
        preds[t] = value
        series.append(value)
    return _with_truth(preds, predictor.tag, history, truth)


def bayes_rollout(proc: ArProcess, history, steps: int, truth=None) -> RolloutTrace:
    """Recursive one-step application of the true coefficients."""
    trace = cot_rollout(LinearPredictor(proc.coeffs, tag="bayes"),
                        history, steps, truth)
    return trace


def companion_power_rollout(proc: ArProcess, history, steps: int) -> np.ndarray:
    """Same forecasts via e1' A(rho)^t s_n; cross-checks the recursion."""
    h = np.asarray(history, dtype=float)
    state = h[::-1][: proc.p]
    if state.shape[0] < proc.p:
        state = np.pad(state, (0, proc.p - state.shape[0]))
    a = companion_matrix(proc.coeffs)
    out = np.empty(steps)
    for t in range(steps):
        state = a @ state
        out[t] = state[0]
    return out


# ----------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CollapseDiagnostics:
    c_fit: float
    beta_fit: float
    stable: bool
    envelope_c: float          # tightest C with |pred_t| <= C beta^t |s_n|
    envelope_holds: bool
    used_points: int


def collapse_diagnostics(trace: RolloutTrace, proc: ArProcess,
                         min_abs: float = 1e-12) -> CollapseDiagnostics:
    """Least-squares fit of log |prediction| vs step.

    beta_fit below one certifies collapse toward the mean; above one flags a
    divergent predictor.  The envelope constant is measured against the
    euclidean norm of the initial p-state.
    """
    preds = trace.predictions
    t = np.arange(1, preds.shape[0] + 1, dtype=float)
    mask = np.abs(preds) > min_abs
    if mask.sum() < 2:
        raise ValueError("too few nonzero predictions to fit a decay rate")
    slope, intercept = np.polyfit(t[mask], np.log(np.abs(preds[mask])), 1)
    beta = float(np.exp(slope))
    state = trace.history[::-1][: proc.p]
    norm = float(np.linalg.norm(state))
    if norm == 0.0:
        norm = 1.0
    ratios = np.abs(preds[mask]) / (beta ** t[mask] * norm)
    env_c = float(np.max(ratios))
    c_fit = float(np.exp(intercept) / norm)
    holds = bool(np.all(np.abs(preds[mask]) <= env_c * beta ** t[mask] * norm * (1 + 1e-9)))
    return CollapseDiagnostics(c_fit=c_fit, beta_fit=beta, stable=beta < 1.0,
                               envelope_c=env_c, envelope_holds=holds,
                               used_points=int(mask.sum()))


@dataclass(frozen=True)
class CompoundingCurve:
    horizons: tuple[int, ...]
    mse: np.ndarray
    stderr: np.ndarray
    theory: np.ndarray          # Bayes MSE*(h) overlay
    variance: float
    samples: int
    tag: str


def compounding_curve(proc: ArProcess, predictor, horizons, samples: int,
                      seed: int = 0, history_len: int | None = None) -> CompoundingCurve:
    """Monte Carlo forecast MSE at each horizon with the Bayes overlay.

    Each replicate draws a fresh stationary stretch; the predictor rolls out
    from the first ``history_len`` values and is scored against the
    continuation.
    """
    horizons = tuple(int(h) for h in horizons)
    if min(horizons) < 1:
        raise ValueError("horizons must be >= 1")
    max_h = max(horizons)
    if history_len is None:
        history_len = max(3 * predictor.p + 1, predictor.p + 2)
    wins = sample_windows(proc, history_len + max_h, samples,
                          seed=derive_seed(seed, "compound"))
    hist = wins[:, :history_len]
    future = wins[:, history_len:]
    if hasattr(predictor, "rollout_batch"):
        preds = predictor.rollout_batch(hist, max_h)
    else:
        preds = np.empty((samples, max_h))
        for i in range(samples):
            preds[i] = cot_rollout(predictor, hist[i], max_h).predictions
    errs = squared_errors(preds, future)
    idx = [h - 1 for h in horizons]
    mse = errs[:, idx].mean(axis=0)
    stderr = columnwise_sem(errs[:, idx])
    theory = np.array([bayes_multistep_mse(proc, h) for h in horizons])
    return CompoundingCurve(horizons=horizons, mse=mse, stderr=stderr,
                            theory=theory, variance=stationary_variance(proc),
                            samples=samples, tag=predictor.tag)


@dataclass(frozen=True)
class HorizonReport:
    tau: float
    horizon: int | None         # None when never reached within the curve
    variance: float
    tag: str

    @property
    def reached(self) -> bool:
        return self.horizon is not None


def failure_horizon(mse_by_horizon, tau: float, variance: float,
                    tag: str = "") -> HorizonReport:
    """Smallest integer horizon with MSE(h) >= tau * variance."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    for h, value in sorted((int(h), float(v)) for h, v in mse_by_horizon):
        if value >= tau * variance:
            return HorizonReport(tau=tau, horizon=h, variance=variance, tag=tag)
    return HorizonReport(tau=tau, horizon=None, variance=variance, tag=tag)


def horizon_from_curve(curve: CompoundingCurve, tau: float) -> HorizonReport:
    return failure_horizon(zip(curve.horizons, curve.mse), tau,
                           curve.variance, tag=curve.tag)


# ----------------------------------------------------------------------
# teacher forcing
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TeacherForcingReport:
    mse: float
    cmse: np.ndarray
    predictions: np.ndarray
    truth: np.ndarray
    tag: str


def teacher_forcing_eval(predictor, test_values, p: int, n: int,
                         start: int | None = None) -> TeacherForcingReport:
    """One-step-ahead predictions with true history supplied at every step.

    ``start`` fixes the first predicted index (default n); passing the same
    start for several history lengths scores them on identical targets,
    which keeps scan comparisons paired.
    """
    x = np.asarray(test_values, dtype=float)
    if start is None:
        start = n
    if start < n:
        raise ValueError("start must be >= n")
    if x.shape[0] <= start:
        raise ValueError("test series shorter than one window")
    windows = np.lib.stride_tricks.sliding_window_view(x[start - n:-1], n, axis=0)
    truth = x[start:]
    if isinstance(predictor, LsaPredictor):
        preds = attention.predict_lsa(predictor.params, windows, p)
    elif isinstance(predictor, StackPredictor):
        preds = attention.predict_stack(predictor.stack, windows, p)
    elif isinstance(predictor, SoftmaxPredictor):
        preds = attention.predict_softmax(predictor.params, windows, p)
    elif isinstance(predictor, FullLsaPredictor):
        preds = attention.predict_full(predictor.params, windows, p)
    elif isinstance(predictor, LinearPredictor):
        preds = windows[:, ::-1][:, : predictor.p] @ predictor.coeffs
    else:
        preds = np.array([predictor.predict_next(w) for w in windows])
    sq = (preds - truth) ** 2
    return TeacherForcingReport(mse=float(sq.mean()), cmse=cmse_curve(sq),
                                predictions=preds, truth=truth, tag=predictor.tag)


def trace_rows(trace: RolloutTrace, seed: int) -> list[dict]:
    """Long-format rows (predictor, seed, t, prediction, truth, sq, cmse)."""
    rows = []
    for t in range(trace.steps):
        rows.append({
            "predictor": trace.tag,
            "seed": seed,
            "t": t + 1,
            "prediction": float(trace.predictions[t]),
            "truth": float(trace.truth[t]) if trace.truth is not None else "",
            "sq_error": float(trace.sq_errors[t]) if trace.sq_errors is not None else "",
            "cmse": float(trace.cmse[t]) if trace.cmse is not None else "",
        })
    return rows
