"""Finite-sample excess risk of the lifted attention class over linear prediction.

The class-optimal risk of the one-layer readout equals

    sigma_eps^2 + rho' Delta_n rho,   Delta_n = Gamma_p - r' S^{-1} r,

computed from the lifted moments.  S approaches a rank-one matrix as n
grows, so the solve goes through a symmetric eigendecomposition with an
explicit conditioning report instead of a blind inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import StackParams, constructive_params
from .moments import LiftedMoments, VechIndexer, exact_lifted_moments, mc_lifted_moments
from .stochastic import (ArProcess, autocovariances, check_stability,
                         derive_seed, sample_windows)

RELATIVE_EIG_CUTOFF = 1e-12
DEFAULT_EIGMIN_TOL = 1e-12


class GapConditioningError(RuntimeError):
    """The lifted second-moment matrix is numerically singular."""

    def __init__(self, message: str, eigmin: float, eigmax: float):
        super().__init__(message)
        self.eigmin = eigmin
        self.eigmax = eigmax


@dataclass(frozen=True)
class GapReport:
    delta: np.ndarray
    eigmin: float
    eigmax: float
    excess: float
    eta_star: np.ndarray
    noise_var: float
    class_risk: float          # sigma_eps^2 + excess
    s_eigmin: float
    s_eigmax: float
    n: int
    p: int
    mode: str

    @property
    def s_condition(self) -> float:
        return self.s_eigmax / self.s_eigmin if self.s_eigmin > 0 else np.inf


def _sym_solve(s: np.ndarray, pseudo: bool, eigmin_tol: float):
    vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
    eigmin, eigmax = float(vals[0]), float(vals[-1])
    if pseudo:
        cutoff = RELATIVE_EIG_CUTOFF * max(eigmax, 0.0)
        inv = np.where(vals > cutoff, 1.0 / np.where(vals > cutoff, vals, 1.0), 0.0)
    else:
        if eigmin <= eigmin_tol:
            raise GapConditioningError(
                f"lifted moment matrix nearly singular: eigmin={eigmin:.3e}, "
                f"eigmax={eigmax:.3e}; use pseudo=True for population-limit inputs",
                eigmin, eigmax)
        inv = 1.0 / vals

    def apply(mat):
        return vecs @ (inv[:, None] * (vecs.T @ mat))

    return apply, eigmin, eigmax


def compute_gap(moments: LiftedMoments, rho, pseudo: bool = False,
                eigmin_tol: float = DEFAULT_EIGMIN_TOL) -> GapReport:
    """Schur-complement gap and class-optimal risk for coefficient vector rho."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.shape[0] != moments.p:
        raise ValueError("rho length must match the context order of the moments")
    apply_inv, s_min, s_max = _sym_solve(moments.s_tilde, pseudo, eigmin_tol)
    sinv_r = apply_inv(moments.r_tilde)
    delta = moments.gamma_p - moments.r_tilde.T @ sinv_r
    delta = 0.5 * (delta + delta.T)
    vals = np.linalg.eigvalsh(delta)
    excess = float(rho @ delta @ rho)
    eta_star = sinv_r @ rho
    noise_var = moments.proc.noise_var
    return GapReport(delta=delta, eigmin=float(vals[0]), eigmax=float(vals[-1]),
                     excess=excess, eta_star=eta_star, noise_var=noise_var,
                     class_risk=noise_var + excess, s_eigmin=s_min, s_eigmax=s_max,
                     n=moments.n, p=moments.p, mode=moments.mode)


def lifted_risk(moments: LiftedMoments, eta, rho) -> float:
    """Population risk E[(eta' Z - x_{next})^2] from the moment matrices."""
    eta = np.asarray(eta, dtype=float)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    gamma0 = float(rho @ moments.gamma_p @ rho) + moments.proc.noise_var
    return float(eta @ moments.s_tilde @ eta
                 - 2.0 * eta @ (moments.r_tilde @ rho) + gamma0)


# ----------------------------------------------------------------------
# rate of the gap in n
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    grid: tuple[int, ...]
    excess: tuple[float, ...]
    slope: float
    n_excess: tuple[float, ...]

    @property
    def last_ratio(self) -> float:
        """Ratio of the final two n * excess products; ~1 under a 1/n law."""
        return self.n_excess[-1] / self.n_excess[-2]


def fit_loglog_slope(ns, values) -> float:
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise ValueError("log-log fit needs positive values")
    coeffs = np.polyfit(np.log(ns), np.log(values), 1)
    return float(coeffs[0])


def rate_fit(proc: ArProcess, p: int, grid, mode: str = "exact",
             samples: int = 100_000, seed: int = 0) -> RateFit:
    """Excess risk over an n-grid with its log-log slope and n * excess trail."""
    grid = tuple(int(n) for n in grid)
    if len(grid) < 4 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing with length >= 4")
    if mode not in ("exact", "mc"):
        raise ValueError("mode must be 'exact' or 'mc'")
    excess = []
    for n in grid:
        if mode == "exact":
            m = exact_lifted_moments(proc, n, p)
        else:
            m = mc_lifted_moments(proc, n, p, samples=samples,
                                  seed=derive_seed(seed, "rate", n))
        excess.append(compute_gap(m, proc.coeffs).excess)
    slope = fit_loglog_slope(grid, excess)
    n_excess = tuple(n * e for n, e in zip(grid, excess))
    return RateFit(grid=grid, excess=tuple(excess), slope=slope, n_excess=n_excess)


# ----------------------------------------------------------------------
# uniform gap over a coefficient shell
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SweepReport:
    min_excess: float
    min_eigmin: float
    r_inner: float
    r_outer: float
    evaluated: int
    rejected: int
    bound_holds: bool  # min excess >= min eigmin * r_inner^2


def uniform_gap_sweep(p: int, r_inner: float, r_outer: float, n: int,
                      resolution: int = 20, sigma_eps: float = 1.0,
                      seed: int = 0) -> SweepReport:
    """Minimum excess risk over stable rho with r_inner <= |rho| <= r_outer.

    Draws directions (signs for p = 1, seeded unit vectors otherwise) and a
    radius grid, rejecting unstable candidates, and evaluates the exact gap
    at each survivor.
    """
    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    radii = np.linspace(r_inner, r_outer, resolution)
    if p == 1:
        directions = [np.array([1.0]), np.array([-1.0])]
    else:
        rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "sweep-dirs")))
        directions = []
        for _ in range(resolution):
            v = rng.standard_normal(p)
            directions.append(v / np.linalg.norm(v))
    min_excess = np.inf
    min_eigmin = np.inf
    evaluated = rejected = 0
    for direction in directions:
        for radius in radii:
            rho = radius * direction
            if not check_stability(rho):
                rejected += 1
                continue
            proc = ArProcess(coeffs=rho, noise_std=sigma_eps)
            report = compute_gap(exact_lifted_moments(proc, n, p), rho)
            evaluated += 1
            min_excess = min(min_excess, report.excess)
            min_eigmin = min(min_eigmin, report.eigmin)
    if evaluated == 0:
        raise ValueError("no stable coefficients found on the shell")
    bound = min_excess >= min_eigmin * r_inner**2 - 1e-12
    return SweepReport(min_excess=float(min_excess), min_eigmin=float(min_eigmin),
                       r_inner=r_inner, r_outer=r_outer, evaluated=evaluated,
                       rejected=rejected, bound_holds=bool(bound))


# ----------------------------------------------------------------------
# multi-layer Moore-Penrose gap (Monte Carlo features)
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MultiLayerGap:
    depth: int
    delta: np.ndarray
    trace: float
    eigmin: float
    feature_dim: int
    samples: int


def pseudo_gap(s: np.ndarray, r: np.ndarray, gamma: np.ndarray,
               cutoff: float = 1e-10) -> np.ndarray:
    """Gamma - r' S^+ r with a relative eigenvalue cutoff pseudoinverse."""
    vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
    keep = vals > cutoff * max(float(vals[-1]), 0.0)
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    delta = gamma - r.T @ (vecs @ (inv[:, None] * (vecs.T @ r)))
    return 0.5 * (delta + delta.T)


def _stacked_features(proc: ArProcess, n: int, p: int, depth: int,
                      samples: int, seed: int, stack: StackParams | None,
                      batch: int = 20_000):
    """Monte Carlo draws of the per-layer lifted features and the label block.

    Returns (Z, X) with Z of shape (samples, depth * q * p); layer ell's
    block holds vech(G^(ell)) (x) x under the layered last-row update driven
    by ``stack`` (constructive parameters by default).
    """
    if stack is None:
        table = autocovariances(proc, p)
        layer = constructive_params(table, p)
        stack = StackParams(tuple(layer for _ in range(depth)))
    if stack.depth < depth:
        raise ValueError("stack shallower than requested depth")
    vix = VechIndexer(p + 1)
    q = vix.size
    rows = np.array([i for i, _ in vix.pairs])
    cols = np.array([j for _, j in vix.pairs])
    z_out = np.empty((samples, depth * q * p))
    x_out = np.empty((samples, p))
    done = 0
    chunk = 0
    while done < samples:
        count = min(batch, samples - done)
        wins = sample_windows(proc, n, count, seed=derive_seed(seed, "ml", chunk))
        chunk += 1
        ncols = n - p + 1
        colmat = np.zeros((count, p + 1, ncols))
        for i in range(p):
            colmat[:, i, :] = wins[:, i: i + ncols]
        colmat[:, p, :-1] = wins[:, p:]
        tops = np.swapaxes(colmat[:, :p, :], 1, 2)
        x = wins[:, ::-1][:, :p]
        for ell in range(depth):
            hm = colmat[:, :, :ncols - 1]
            grams = np.einsum("bij,bkj->bik", hm, hm) / n
            gv = grams[:, rows, cols]
            z_out[done:done + count, ell * q * p:(ell + 1) * q * p] = \
                (gv[:, :, None] * x[:, None, :]).reshape(count, q * p)
            layer = stack.layers[ell]
            r = np.einsum("ji,bjk,k->bi", layer.a, grams, layer.b)
            colmat[:, p, :] += np.einsum("bji,bi->bj", tops, r)
        x_out[done:done + count] = x
        done += count
    return z_out, x_out


def multilayer_gap_profile(proc: ArProcess, p: int, n: int, max_depth: int,
                           samples: int, seed: int = 0,
                           stack: StackParams | None = None,
                           cutoff: float = 1e-10) -> list[MultiLayerGap]:
    """Gaps for every depth 1..max_depth on one shared sample set.

    Shared samples make the per-depth feature spans nested, so the reported
    traces are nonincreasing up to the pseudoinverse cutoff.
    """
    q = (p + 1) * (p + 2) // 2
    if samples < max_depth * q * p:
        raise ValueError("not enough samples for a stable pseudoinverse "
                         f"(need >= {max_depth * q * p})")
    z, x = _stacked_features(proc, n, p, max_depth, samples, seed, stack)
    gamma_hat = x.T @ x / samples
    out = []
    for depth in range(1, max_depth + 1):
        zd = z[:, : depth * q * p]
        s = zd.T @ zd / samples
        r = zd.T @ x / samples
        delta = pseudo_gap(s, r, gamma_hat, cutoff=cutoff)
        vals = np.linalg.eigvalsh(delta)
        out.append(MultiLayerGap(depth=depth, delta=delta,
                                 trace=float(np.trace(delta)),
                                 eigmin=float(vals[0]),
                                 feature_dim=depth * q * p, samples=samples))
    return out


def multilayer_gap(proc: ArProcess, p: int, n: int, depth: int,
                   samples: int, seed: int = 0,
                   stack: StackParams | None = None) -> MultiLayerGap:
    return multilayer_gap_profile(proc, p, n, depth, samples, seed, stack)[-1]


# ----------------------------------------------------------------------
# risk ladder
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RiskLadder:
    bayes_risk: float
    linear_risk: float
    lsa_risk: float
    variance: float


def risk_decomposition(proc: ArProcess, p: int, n: int) -> RiskLadder:
    """Bayes risk, best p-lag linear risk, and the lifted class optimum.

    For p = order of the process the linear risk equals the Bayes risk
    exactly; everything sits strictly below the variance baseline.
    """
    table = autocovariances(proc, max(p, proc.p))
    gamma0 = table.gamma[0]
    gp = table.toeplitz_block(p)
    gvec = table.gamma[1:p + 1]
    linear = float(gamma0 - gvec @ np.linalg.solve(gp, gvec))
    report = compute_gap(exact_lifted_moments(proc, n, p), proc.coeffs)
    return RiskLadder(bayes_risk=proc.noise_var, linear_risk=linear,
                      lsa_risk=report.class_risk, variance=float(gamma0))
