"""Stable AR(p) processes: exact second-order structure, sampling, classical fits.

Conventions used throughout the package:

* Coefficients are stored lag-1 first, so the recursion reads
  ``x[t+1] = rho[0]*x[t] + rho[1]*x[t-1] + ... + noise``.
* The companion matrix has the coefficients in its top row and an identity
  subdiagonal; stability means its spectral radius is below ``1 - 1e-10``.
* All randomness flows from a counter-based Philox generator seeded with a
  64-bit integer; innovations are produced by a fixed inverse-CDF transform
  of the uniform stream, so identical seeds give identical paths on every
  platform.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov, toeplitz
from scipy.signal import lfilter
from scipy.special import ndtri

STABILITY_MARGIN = 1e-10

INNOVATION_LAWS = ("gaussian", "uniform", "laplace")


class UnstableProcessError(ValueError):
    """Raised when AR coefficients put a root on or inside the unit circle."""


def derive_seed(parent: int, *parts) -> int:
    """Stable 64-bit child seed from a parent seed and arbitrary labels.

    Uses SHA-256 over the textual representation, so derived streams are
    reproducible across platforms and independent across labels.
    """
    text = "|".join([str(int(parent))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    # random() yields k/2^53; the half-ulp shift keeps the stream inside (0,1)
    # so the inverse-CDF transforms below never see an endpoint.
    return rng.random(size) + 2.0**-54


def _innovations(rng: np.random.Generator, law: str, scale: float, size) -> np.ndarray:
    """Draw innovations with variance ``scale**2`` via inverse-CDF transforms."""
    u = _uniform_open(rng, size)
    if law == "gaussian":
        return scale * ndtri(u)
    if law == "uniform":
        return scale * math.sqrt(3.0) * (2.0 * u - 1.0)
    if law == "laplace":
        b = scale / math.sqrt(2.0)
        v = u - 0.5
        return -b * np.sign(v) * np.log1p(-2.0 * np.abs(v))
    raise ValueError(f"unknown innovation law {law!r}")


def companion_matrix(rho: np.ndarray) -> np.ndarray:
    """Companion matrix with top row ``rho`` and identity subdiagonal."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    p = rho.shape[0]
    a = np.zeros((p, p))
    a[0, :] = rho
    if p > 1:
        a[np.arange(1, p), np.arange(p - 1)] = 1.0
    return a


def spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def check_stability(rho) -> bool:
    """True iff all characteristic roots lie strictly outside the unit circle.

    Decided through companion eigenvalues with threshold
    ``spectral_radius < 1 - 1e-10`` so numerically marginal processes are
    rejected.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.size == 0:
        raise ValueError("coefficient vector must have length >= 1")
    return spectral_radius(companion_matrix(rho)) < 1.0 - STABILITY_MARGIN


@dataclass(frozen=True)
class ArProcess:
    """A stable AR(p) process: coefficients, noise scale, innovation law."""

    coeffs: np.ndarray
    noise_std: float = 1.0
    innovation_law: str = "gaussian"

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        if coeffs.size < 1:
            raise ValueError("order p must be >= 1")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if self.innovation_law not in INNOVATION_LAWS:
            raise ValueError(f"innovation_law must be one of {INNOVATION_LAWS}")
        if not check_stability(coeffs):
            raise UnstableProcessError(
                f"coefficients {coeffs.tolist()} give spectral radius "
                f"{spectral_radius(companion_matrix(coeffs)):.6f} >= 1 - 1e-10"
            )

    @property
    def p(self) -> int:
        return self.coeffs.shape[0]

    @property
    def noise_var(self) -> float:
        return self.noise_std**2


@dataclass(frozen=True)
class CompanionMatrix:
    a: np.ndarray

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.a)


def companion(proc: ArProcess) -> CompanionMatrix:
    return CompanionMatrix(companion_matrix(proc.coeffs))


@dataclass(frozen=True)
class AutocovTable:
    """Autocovariances gamma_0..gamma_K plus the correlations r_k."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float)).copy()
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        if g[0] <= 0:
            raise ValueError("gamma_0 must be positive")

    @property
    def r(self) -> np.ndarray:
        return self.gamma / self.gamma[0]

    def at(self, lag: int) -> float:
        """gamma at a (possibly negative) lag; symmetric in the sign."""
        return float(self.gamma[abs(int(lag))])

    def toeplitz_block(self, p: int) -> np.ndarray:
        """The p x p Toeplitz matrix with entries gamma_{|i-j|}."""
        if p > self.gamma.shape[0]:
            raise ValueError("table too short for requested block")
        return toeplitz(self.gamma[:p])


def autocovariances(proc: ArProcess, K: int) -> AutocovTable:
    """Stationary autocovariances gamma_0..gamma_K.

    Solves the discrete-time Lyapunov equation for the companion-state
    covariance (one solve gives every lag uniformly for any p), then reads
    gamma_k = e1' A^k Sigma e1.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    a = companion_matrix(proc.coeffs)
    p = proc.p
    q = np.zeros((p, p))
    q[0, 0] = proc.noise_var
    sigma = solve_discrete_lyapunov(a, q)
    if not np.all(np.isfinite(sigma)):
        raise ArithmeticError("Lyapunov solve produced non-finite covariance")
    gamma = np.empty(K + 1)
    v = sigma[:, 0].copy()  # Sigma e1
    gamma[0] = v[0]
    for k in range(1, K + 1):
        v = a @ v
        gamma[k] = v[0]
    return AutocovTable(gamma)


def stationary_variance(proc: ArProcess) -> float:
    return autocovariances(proc, 0).gamma[0]


def default_burn_in(proc: ArProcess) -> int:
    """Geometric-mixing heuristic: 10*p/(1 - spectral radius), capped at 1e5."""
    sr = spectral_radius(companion_matrix(proc.coeffs))
    return int(min(math.ceil(10.0 * proc.p / (1.0 - sr)), 100_000))


@dataclass(frozen=True)
class SeriesPath:
    """A simulated path, deterministic given (process, seed, T, burn_in)."""

    values: np.ndarray
    seed: int
    burn_in: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def sample_path(proc: ArProcess, T: int, burn_in: int | None = None,
                seed: int = 0) -> SeriesPath:
    """Simulate T values after discarding ``burn_in`` steps from a zero start."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if burn_in is None:
        burn_in = default_burn_in(proc)
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    rng = np.random.Generator(np.random.Philox(key=seed))
    eps = _innovations(rng, proc.innovation_law, proc.noise_std, burn_in + T)
    # the AR recursion is an IIR filter with zero initial state
    values = lfilter([1.0], np.concatenate(([1.0], -proc.coeffs)), eps)
    return SeriesPath(values=values[burn_in:].copy(), seed=seed, burn_in=burn_in)


def sample_windows(proc: ArProcess, n: int, count: int, seed: int = 0,
                   exact_init: bool | None = None) -> np.ndarray:
    """``count`` independent stationary windows of length n, shape (count, n).

    For Gaussian innovations the initial p-state is drawn exactly from the
    stationary law (Cholesky of the lag-0..p-1 Toeplitz block); otherwise a
    burn-in from a zero start is used, which is only approximately stationary.
    """
    if n < 1 or count < 1:
        raise ValueError("n and count must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))
    p = proc.p
    rho = proc.coeffs
    if exact_init is None:
        exact_init = proc.innovation_law == "gaussian"
    if exact_init and proc.innovation_law != "gaussian":
        raise ValueError("exact stationary initialization requires Gaussian innovations")

    if exact_init:
        gp = autocovariances(proc, p - 1).toeplitz_block(p)
        chol = np.linalg.cholesky(gp)
        # state vector ordered (x_t, ..., x_{t-p+1}); Toeplitz symmetry makes
        # the ordering immaterial for the draw
        z = ndtri(_uniform_open(rng, (count, p)))
        states = z @ chol.T
        steps = n
    else:
        burn = default_burn_in(proc)
        states = np.zeros((count, p))
        steps = burn + n

    out = np.empty((count, n))
    for t in range(steps):
        eps = _innovations(rng, proc.innovation_law, proc.noise_std, count)
        x = states @ rho + eps
        states[:, 1:] = states[:, :-1]
        states[:, 0] = x
        j = t - (steps - n)
        if j >= 0:
            out[:, j] = x
    return out


def random_stable_coeffs(p: int, seed: int, pacf_bound: float = 0.7) -> np.ndarray:
    """Draw stable AR coefficients through the partial-autocorrelation map.

    Reflection coefficients in (-1, 1) always map to a stable polynomial
    under the Levinson recursion, so no rejection is needed; the bound keeps
    draws away from the unit circle.
    """
    if not 0 < pacf_bound < 1:
        raise ValueError("pacf_bound must lie in (0, 1)")
    rng = np.random.Generator(np.random.Philox(key=seed))
    kappa = pacf_bound * (2.0 * _uniform_open(rng, p) - 1.0)
    phi = np.zeros(0)
    for k in range(1, p + 1):
        prev = phi
        phi = np.empty(k)
        phi[k - 1] = kappa[k - 1]
        if k > 1:
            phi[: k - 1] = prev - kappa[k - 1] * prev[::-1]
    return phi


def impulse_response(proc: ArProcess, K: int) -> np.ndarray:
    """Wold coefficients psi_0..psi_K via companion powers; psi_0 = 1."""
    if K < 0:
        raise ValueError("K must be >= 0")
    a = companion_matrix(proc.coeffs)
    psi = np.empty(K + 1)
    v = np.zeros(proc.p)
    v[0] = 1.0  # e1
    psi[0] = 1.0
    for k in range(1, K + 1):
        v = a @ v
        psi[k] = v[0]
    return psi


def bayes_multistep_mse(proc: ArProcess, h: int) -> float:
    """Optimal h-step forecast MSE: noise_var * sum_{k<h} psi_k^2.

    Nondecreasing in h with limit gamma_0.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    psi = impulse_response(proc, h - 1)
    return proc.noise_var * float(np.sum(psi**2))


def yule_walker_solve(table: AutocovTable, p: int) -> np.ndarray:
    """Solve the p x p Toeplitz system Gamma_p rho = (gamma_1..gamma_p)."""
    if table.gamma.shape[0] < p + 1:
        raise ValueError("need autocovariances up to lag p")
    gp = table.toeplitz_block(p)
    rhs = table.gamma[1:p + 1]
    try:
        return np.linalg.solve(gp, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular Toeplitz block: {exc}") from exc


def ols_fit(path: SeriesPath | np.ndarray, p: int) -> np.ndarray:
    """Least-squares AR coefficients from a path, lag-1 first.

    Regresses x_{t+1} on (x_t, ..., x_{t-p+1}); raises on a rank-deficient
    design.
    """
    x = path.values if isinstance(path, SeriesPath) else np.asarray(path, dtype=float)
    T = x.shape[0]
    if T <= 2 * p:
        raise ValueError("path length must exceed 2p")
    # row t = (x_{p+t-1}, ..., x_t), newest first
    design = np.column_stack([x[p - 1 - j: T - 1 - j] for j in range(p)])
    target = x[p:]
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < p:
        raise np.linalg.LinAlgError("rank-deficient design matrix in AR fit")
    return coef


def sample_autocovariances(x: np.ndarray, K: int) -> AutocovTable:
    """Biased (1/T) sample autocovariances of a zero-mean series."""
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    if K >= T:
        raise ValueError("K must be < len(x)")
    gamma = np.array([float(x[: T - k] @ x[k:]) / T for k in range(K + 1)])
    return AutocovTable(gamma)
