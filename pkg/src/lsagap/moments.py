"""Exact Gaussian moment machinery for the Kronecker-lifted features.

The lifted feature of a length-n window is Z = vech(G) (x) x, where G is the
masked Hankel Gram and x holds the last p values *newest first* (so the
recursion weights rho apply to x verbatim downstream).  This module computes

    S = E[Z Z'],   r = E[Z x'],   Gamma_p = E[x x']

exactly for Gaussian AR(p) processes via Isserlis pairings, with the double
sum over window positions collapsed into small precomputed tables:

* pairings internal to the two windows depend only on the lag h = m - m'
  and get the triangular weight (n - p - |h|);
* pairings tying the label block to one window reduce to single sums over
  that window's offset;
* pairings tying the label block to both windows reduce to truncated
  cross-correlations over the two offsets.

A naive double-sum implementation is kept alongside as the brute-force
oracle; both must agree to machine precision.

vech ordering is fixed: column-major lower triangle (row >= col).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stochastic import ArProcess, AutocovTable, autocovariances, sample_windows

EXACT_MAX_P = 7
EXACT_MAX_N = 512


class GuardExceededError(ValueError):
    """Inputs exceed the desk-scale exactness guard (p <= 7, n <= 512)."""


# ----------------------------------------------------------------------
# Isserlis pairings
# ----------------------------------------------------------------------

def perfect_matchings(count: int) -> list[tuple[tuple[int, int], ...]]:
    """All perfect matchings of {0..count-1}; empty for odd count."""
    if count % 2 == 1:
        return []
    if count == 0:
        return [()]
    items = list(range(count))

    def rec(remaining):
        if not remaining:
            return [()]
        first, rest = remaining[0], remaining[1:]
        out = []
        for pos, partner in enumerate(rest):
            tail = rest[:pos] + rest[pos + 1:]
            for match in rec(tail):
                out.append(((first, partner),) + match)
        return out

    return rec(items)


@dataclass(frozen=True)
class PairingSet:
    """Perfect matchings of an even number of variables (1/3/15 for 2/4/6)."""

    count: int
    matchings: tuple[tuple[tuple[int, int], ...], ...]

    @classmethod
    def of(cls, count: int) -> "PairingSet":
        return cls(count=count, matchings=tuple(perfect_matchings(count)))


def isserlis(cov: np.ndarray, indices) -> float:
    """Zero-mean Gaussian product moment E[X_{i1} ... X_{ik}] from pairings.

    ``indices`` is a multiset of variable positions into ``cov``; odd counts
    give 0.  Guarded to at most 8 factors.
    """
    cov = np.asarray(cov, dtype=float)
    idx = [int(i) for i in indices]
    if len(idx) > 8:
        raise ValueError("isserlis guard: at most 8 factors")
    d = cov.shape[0]
    for i in idx:
        if i < 0 or i >= d:
            raise IndexError(f"variable index {i} outside covariance of size {d}")
    if len(idx) % 2 == 1:
        return 0.0
    total = 0.0
    for match in perfect_matchings(len(idx)):
        prod = 1.0
        for a, b in match:
            prod *= cov[idx[a], idx[b]]
        total += prod
    return total


_SIX_MATCHINGS = perfect_matchings(6)
_FOUR_MATCHINGS = perfect_matchings(4)


# ----------------------------------------------------------------------
# vech indexing
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class VechIndexer:
    """Column-major lower-triangle order for vech of a d x d symmetric matrix."""

    d: int

    @property
    def size(self) -> int:
        return self.d * (self.d + 1) // 2

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """0-based (row, col) with row >= col, column-major."""
        return tuple((i, j) for j in range(self.d) for i in range(j, self.d))

    def vech(self, m: np.ndarray) -> np.ndarray:
        rows = np.array([i for i, _ in self.pairs])
        cols = np.array([j for _, j in self.pairs])
        return np.asarray(m)[..., rows, cols]

    def unvech(self, v: np.ndarray) -> np.ndarray:
        m = np.zeros((self.d, self.d))
        for idx, (i, j) in enumerate(self.pairs):
            m[i, j] = v[idx]
            m[j, i] = v[idx]
        return m

    def duplication(self) -> np.ndarray:
        """D with vec(M) = D vech(M) for symmetric M (column-major vec)."""
        d, q = self.d, self.size
        dup = np.zeros((d * d, q))
        for idx, (i, j) in enumerate(self.pairs):
            dup[j * d + i, idx] = 1.0
            dup[i * d + j, idx] = 1.0
        return dup


# ----------------------------------------------------------------------
# lifted moments container
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedMoments:
    """Second moments of (Z, x) with Z = vech(G) (x) x, label newest-first."""

    s_tilde: np.ndarray          # (q p, q p)
    r_tilde: np.ndarray          # (q p, p)
    gamma_p: np.ndarray          # (p, p)
    n: int
    p: int
    mode: str                    # "exact" or "monte-carlo"
    proc: ArProcess
    samples: int | None = None
    se_s: np.ndarray | None = None
    se_r: np.ndarray | None = None

    @property
    def q(self) -> int:
        return (self.p + 1) * (self.p + 2) // 2

    @property
    def lift_dim(self) -> int:
        return self.q * self.p

    def indexer(self) -> VechIndexer:
        return VechIndexer(self.p + 1)


def lift_coefficients(b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Map structured weights (b, A) to the lifted coefficient vector.

    Returns eta with eta' Z = b' G A x_window for every window, where
    x_window is the label block in its natural (oldest-first) order and Z
    uses the newest-first label convention of this module.
    """
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    p = b.shape[0] - 1
    vix = VechIndexer(p + 1)
    eta = np.zeros(vix.size * p)
    for ell, (i, j) in enumerate(vix.pairs):
        for s in range(p):
            k_col = p - 1 - s  # newest-first slot s reads window column p-1-s
            coef = b[j] * a[i, k_col]
            if i != j:
                coef += b[i] * a[j, k_col]
            eta[ell * p + s] = coef
    return eta


def label_newest_first(window: np.ndarray, p: int) -> np.ndarray:
    """The lift's label block: last p values of the window, newest first."""
    w = np.asarray(window, dtype=float)
    return w[::-1][:p].copy()


# ----------------------------------------------------------------------
# exact computation (lag-reduced tables)
# ----------------------------------------------------------------------

def _gamma_lookup(table: AutocovTable):
    g = table.gamma

    def at(idx):
        return g[np.abs(idx)]

    return at


def exact_lifted_moments(proc: ArProcess, n: int, p: int | None = None) -> LiftedMoments:
    """Exact S, r, Gamma_p for a Gaussian AR process at window length n.

    Entrywise sixth/fourth-order Isserlis sums with the window double sum
    reduced to O(n)-length tables; boundary weights are kept exact so the
    result matches the naive double sum to machine precision.
    """
    if proc.innovation_law != "gaussian":
        raise ValueError("exact lifted moments require Gaussian innovations")
    if p is None:
        p = proc.p
    if n < p + 1:
        raise ValueError("need n >= p+1")
    if p > EXACT_MAX_P or n > EXACT_MAX_N:
        raise GuardExceededError(
            f"exact mode limited to p <= {EXACT_MAX_P}, n <= {EXACT_MAX_N}")
    table = autocovariances(proc, n)
    gat = _gamma_lookup(table)
    w = n - p

    # offsets: label-vs-window arguments live in [-p, p-1]; window-vs-window
    # arguments in [-p, p]
    a_vals = np.arange(-p, p)           # length 2p
    c_vals = np.arange(-p, p + 1)       # length 2p+1

    u = np.arange(1, w + 1)
    vmat = gat(a_vals[:, None] + u[None, :])            # (2p, W)
    s2 = vmat @ vmat.T                                  # S2(A, B)

    h = np.arange(-(w - 1), w)
    wgt = (w - np.abs(h)).astype(float)
    umat = gat(c_vals[:, None] + h[None, :])            # (2p+1, 2W-1)
    tri = (umat * wgt) @ umat.T                         # TRI(P, Q)

    gc = gat(c_vals[:, None] + h[None, :])              # gamma(C + d)
    t3 = np.empty((2 * p, 2 * p, 2 * p + 1))
    for ai in range(2 * p):
        for bi in range(2 * p):
            x = np.convolve(vmat[ai], vmat[bi][::-1])   # X(d), d = -(W-1)..W-1
            t3[ai, bi, :] = gc @ x

    vix = VechIndexer(p + 1)
    pairs = vix.pairs
    q = vix.size
    gamma_p = table.toeplitz_block(p)
    sh = (p - 1) - np.arange(p)   # newest-first slot s reads offset p-1-s

    def a_idx(shift):
        return sh + shift + p

    def c_idx(val):
        return val + p

    r_t = np.empty((q * p, p))
    for ell, (i, j) in enumerate(pairs):
        block = w * gat(i - j) * gamma_p
        block = block + s2[np.ix_(a_idx(-i), a_idx(-j))]
        block = block + s2[np.ix_(a_idx(-j), a_idx(-i))]
        r_t[ell * p:(ell + 1) * p, :] = block / n

    def t3m(sa, sb, c):
        return t3[np.ix_(a_idx(sa), a_idx(sb))][:, :, c_idx(c)]

    s_t = np.empty((q * p, q * p))
    for ell in range(q):
        i, j = pairs[ell]
        for ell2 in range(ell, q):
            k, l = pairs[ell2]
            block = w * w * gat(i - j) * gat(k - l) * gamma_p
            block = block + (tri[c_idx(k - i), c_idx(l - j)]
                             + tri[c_idx(l - i), c_idx(k - j)]) * gamma_p
            s2a = s2[np.ix_(a_idx(-i), a_idx(-j))] + s2[np.ix_(a_idx(-j), a_idx(-i))]
            s2b = s2[np.ix_(a_idx(-k), a_idx(-l))] + s2[np.ix_(a_idx(-l), a_idx(-k))]
            block = block + w * gat(k - l) * s2a + w * gat(i - j) * s2b
            cross = (t3m(-i, -k, l - j) + t3m(-i, -l, k - j)
                     + t3m(-j, -k, l - i) + t3m(-j, -l, k - i))
            block = block + cross
            block = block + (t3m(-i, -k, l - j).T + t3m(-i, -l, k - j).T
                             + t3m(-j, -k, l - i).T + t3m(-j, -l, k - i).T)
            block = block / (n * n)
            s_t[ell * p:(ell + 1) * p, ell2 * p:(ell2 + 1) * p] = block
            if ell2 != ell:
                s_t[ell2 * p:(ell2 + 1) * p, ell * p:(ell + 1) * p] = block.T
    s_t = 0.5 * (s_t + s_t.T)
    return LiftedMoments(s_tilde=s_t, r_tilde=r_t, gamma_p=gamma_p,
                         n=n, p=p, mode="exact", proc=proc)


def exact_lifted_moments_naive(proc: ArProcess, n: int, p: int | None = None) -> LiftedMoments:
    """Brute-force oracle: direct Isserlis over every window pair.

    O(n^2) per matrix entry; intended for small n only.
    """
    if proc.innovation_law != "gaussian":
        raise ValueError("exact lifted moments require Gaussian innovations")
    if p is None:
        p = proc.p
    if n < p + 1:
        raise ValueError("need n >= p+1")
    table = autocovariances(proc, n)
    g = table.gamma

    def cv(t1, t2):
        return g[abs(t1 - t2)]

    w = n - p
    vix = VechIndexer(p + 1)
    pairs = vix.pairs
    q = vix.size
    gamma_p = table.toeplitz_block(p)
    label = [n - 1 - s for s in range(p)]  # newest first, 0-based times

    r_t = np.zeros((q * p, p))
    for ell, (i, j) in enumerate(pairs):
        for s in range(p):
            for t in range(p):
                acc = 0.0
                for m in range(w):
                    times = [m + i, m + j, label[s], label[t]]
                    acc += sum(math.prod(cv(times[a], times[b]) for a, b in match)
                               for match in _FOUR_MATCHINGS)
                r_t[ell * p + s, t] = acc / n

    s_t = np.zeros((q * p, q * p))
    for ell in range(q):
        i, j = pairs[ell]
        for ell2 in range(ell, q):
            k, l = pairs[ell2]
            for s in range(p):
                for t in range(p):
                    acc = 0.0
                    for m in range(w):
                        for m2 in range(w):
                            times = [m + i, m + j, m2 + k, m2 + l,
                                     label[s], label[t]]
                            acc += sum(
                                math.prod(cv(times[a], times[b]) for a, b in match)
                                for match in _SIX_MATCHINGS)
                    val = acc / (n * n)
                    s_t[ell * p + s, ell2 * p + t] = val
                    s_t[ell2 * p + t, ell * p + s] = val
    return LiftedMoments(s_tilde=s_t, r_tilde=r_t, gamma_p=gamma_p,
                         n=n, p=p, mode="exact", proc=proc)


# ----------------------------------------------------------------------
# Monte Carlo estimation
# ----------------------------------------------------------------------

def mc_lifted_moments(proc: ArProcess, n: int, p: int | None = None,
                      samples: int = 100_000, seed: int = 0,
                      batch: int = 50_000) -> LiftedMoments:
    """Sample averages of ZZ', Zx', xx' over independent stationary windows.

    Works for any innovation law.  Per-entry standard errors accompany the
    estimates.
    """
    if p is None:
        p = proc.p
    if n < p + 1:
        raise ValueError("need n >= p+1")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    vix = VechIndexer(p + 1)
    q = vix.size
    dim = q * p
    rows = np.array([i for i, _ in vix.pairs])
    cols = np.array([j for _, j in vix.pairs])

    s_sum = np.zeros((dim, dim))
    s_sq = np.zeros((dim, dim))
    r_sum = np.zeros((dim, p))
    r_sq = np.zeros((dim, p))
    g_sum = np.zeros((p, p))

    done = 0
    chunk_index = 0
    while done < samples:
        count = min(batch, samples - done)
        wins = sample_windows(proc, n, count, seed=seed + chunk_index)
        chunk_index += 1
        ncols = n - p
        grams = np.zeros((count, p + 1, p + 1))
        for i in range(p + 1):
            for j in range(i + 1):
                vals = np.einsum("bc,bc->b", wins[:, i:i + ncols], wins[:, j:j + ncols]) / n
                grams[:, i, j] = vals
                grams[:, j, i] = vals
        gv = grams[:, rows, cols]                     # (B, q)
        x = wins[:, ::-1][:, :p]                      # newest first
        z = (gv[:, :, None] * x[:, None, :]).reshape(count, dim)
        s_sum += z.T @ z
        s_sq += (z**2).T @ (z**2)
        r_sum += z.T @ x
        r_sq += (z**2).T @ (x**2)
        g_sum += x.T @ x
        done += count

    s_mean = s_sum / samples
    r_mean = r_sum / samples
    se_s = np.sqrt(np.maximum(s_sq / samples - s_mean**2, 0.0) / samples)
    se_r = np.sqrt(np.maximum(r_sq / samples - r_mean**2, 0.0) / samples)
    gamma_p = autocovariances(proc, max(p - 1, 0)).toeplitz_block(p)
    return LiftedMoments(s_tilde=0.5 * (s_mean + s_mean.T), r_tilde=r_mean,
                         gamma_p=gamma_p, n=n, p=p, mode="monte-carlo",
                         proc=proc, samples=samples, se_s=se_s, se_r=se_r)


def population_limit_moments(proc: ArProcess, p: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The rank-one population limit: S = (uu') (x) Gamma_p, r = u (x) Gamma_p."""
    if p is None:
        p = proc.p
    table = autocovariances(proc, p)
    vix = VechIndexer(p + 1)
    u = vix.vech(table.toeplitz_block(p + 1))
    gamma_p = table.toeplitz_block(p)
    s_inf = np.kron(np.outer(u, u), gamma_p)
    r_inf = np.kron(u[:, None], gamma_p)
    return s_inf, r_inf, gamma_p


def lifted_moments_to_csv(m: LiftedMoments) -> str:
    """Flat CSV with an index legend: block, row, col, value.

    Rows are labelled ``G(i,j)*x(s)`` with 1-based Gram pair (i, j) and
    newest-first label slot s.
    """
    vix = m.indexer()
    names = [f"G({i + 1},{j + 1})*x({s + 1})"
             for (i, j) in vix.pairs for s in range(m.p)]
    lines = ["block,row,col,value"]
    for a in range(m.lift_dim):
        for b in range(m.lift_dim):
            lines.append(f"S,{names[a]},{names[b]},{m.s_tilde[a, b]!r}")
    for a in range(m.lift_dim):
        for t in range(m.p):
            lines.append(f"r,{names[a]},x({t + 1}),{m.r_tilde[a, t]!r}")
    for s in range(m.p):
        for t in range(m.p):
            lines.append(f"Gamma,x({s + 1}),x({t + 1}),{m.gamma_p[s, t]!r}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# AR(1) warm start along the asymptotic ray
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Ar1WarmStart:
    """Closed-form restricted optimum for the AR(1) single-coefficient ray."""

    n: int
    rho: float
    sigma2: float          # stationary variance
    n_n: float             # E[x_n^2 S_n]
    d_n: float             # E[x_n^2 S_n^2]
    alpha_star: float
    restricted_min: float  # min over alpha of E[x_n^2 (alpha S_n - rho)^2]


def _geom_k(rho: float, m: int) -> float:
    """K_m = sum_{k=1..m} rho^{2k}."""
    if m <= 0:
        return 0.0
    r2 = rho * rho
    return r2 * (1.0 - r2**m) / (1.0 - r2)


def _geom_h(rho: float, m: int) -> float:
    """H_m = sum_{k=1..m} k rho^{2k}."""
    if m <= 0:
        return 0.0
    r2 = rho * rho
    return r2 * (1.0 - (m + 1) * r2**m + m * r2**(m + 1)) / (1.0 - r2) ** 2


def ar1_warm_start(rho: float, sigma_eps: float, n: int) -> Ar1WarmStart:
    """Evaluate the closed forms for N_n, D_n and the restricted optimum.

    The rho -> 0 singularity of the raw N_n expression (a 1/rho factor) is
    removable; the implementation uses the cancelled algebraic form.
    """
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    if n < 3:
        raise ValueError("need n >= 3")
    r2 = rho * rho
    sigma2 = sigma_eps**2 / (1.0 - r2)
    # (2/rho) K_{n-1} with the rho factor cancelled
    two_k_over_rho = 2.0 * rho * (1.0 - r2 ** (n - 1)) / (1.0 - r2)
    n_n = sigma2**2 / n * ((n - 1) * rho + two_k_over_rho)
    k1, k2 = _geom_k(rho, n - 1), _geom_k(rho, n - 2)
    h1, h2 = _geom_h(rho, n - 1), _geom_h(rho, n - 2)
    # the "+ 2" is the k = 0 term of the diagonal sum over rho^{2(n-i-1)};
    # without it the closed form undercounts E[x_n^2 S_n^2] by 2 sigma^6 / n^2
    d_n = sigma2**3 / n**2 * (
        (n - 1) * n * r2 + (n - 1) + 2.0
        + (4 * (n - 1) - 2) * k1 + (4 * (n - 1) + 2) * k2
        + 8 * h1 + 4 * h2
    )
    alpha = rho * n_n / d_n
    rmin = r2 * sigma2 - r2 * n_n**2 / d_n
    return Ar1WarmStart(n=n, rho=rho, sigma2=sigma2, n_n=n_n, d_n=d_n,
                        alpha_star=alpha, restricted_min=rmin)


def ar1_warm_start_oracle(rho: float, sigma_eps: float, n: int) -> tuple[float, float]:
    """(N_n, D_n) by direct pairing enumeration over window positions.

    No closed-form sums: every fourth/sixth moment is expanded through the
    generic matching list with gamma_k = sigma^2 rho^{|k|}.
    """
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    if n < 3:
        raise ValueError("need n >= 3")
    sigma2 = sigma_eps**2 / (1.0 - rho * rho)

    def cv(a, b):
        return sigma2 * rho ** abs(a - b)

    n_acc = 0.0
    for i in range(1, n):
        times = [n, n, i, i + 1]
        n_acc += sum(math.prod(cv(times[a], times[b]) for a, b in match)
                     for match in _FOUR_MATCHINGS)
    d_acc = 0.0
    for i in range(1, n):
        for j in range(1, n):
            times = [n, n, i, i + 1, j, j + 1]
            d_acc += sum(math.prod(cv(times[a], times[b]) for a, b in match)
                         for match in _SIX_MATCHINGS)
    return n_acc / n, d_acc / (n * n)
