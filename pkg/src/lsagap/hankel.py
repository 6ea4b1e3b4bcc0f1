"""Hankel inputs with a masked label slot, the normalized Gram, cubic features.

For a window ``(x_1, ..., x_n)`` and context order p, the input matrix is

    H[i, j] = x_{j+i}   (1-based),  H[p+1, n-p+1] = 0,

so each column is a sliding window of length p+1 and the bottom-right entry
is the zeroed prediction slot.  The masked Gram normalizes by 1/n (the
convention all closed forms downstream rely on), not by the number of
columns.  Storage is 0-based; reports use 1-based indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .stochastic import ArProcess, autocovariances, derive_seed, sample_windows


@dataclass(frozen=True)
class HankelSlice:
    h: np.ndarray  # (p+1) x (n-p+1)
    p: int
    n: int

    def __post_init__(self):
        m = np.asarray(self.h, dtype=float).copy()
        m.setflags(write=False)
        object.__setattr__(self, "h", m)

    @property
    def num_windows(self) -> int:
        return self.n - self.p

    @property
    def label_window(self) -> np.ndarray:
        """Top p entries of the last column, oldest first: x_{n-p+1..n}."""
        return self.h[:-1, -1]


@dataclass(frozen=True)
class GramMatrix:
    g: np.ndarray  # (p+1) x (p+1), symmetric PSD
    n: int

    def __post_init__(self):
        m = np.asarray(self.g, dtype=float).copy()
        m.setflags(write=False)
        object.__setattr__(self, "g", m)


def build_hankel(window, p: int) -> HankelSlice:
    """Sliding-window matrix with the zeroed label slot in the corner."""
    x = np.asarray(window, dtype=float)
    n = x.shape[0]
    if n < p + 1:
        raise ValueError(f"need n >= p+1, got n={n}, p={p}")
    h = np.zeros((p + 1, n - p + 1))
    for i in range(p):
        h[i, :] = x[i: i + n - p + 1]
    h[p, :-1] = x[p:]  # bottom-right label slot stays zero
    return HankelSlice(h=h, p=p, n=n)


def masked_gram(hs: HankelSlice) -> GramMatrix:
    """G = (1/n) H M H' with M = diag(I_{n-p}, 0); symmetric PSD."""
    hm = hs.h[:, : hs.num_windows]
    g = (hm @ hm.T) / hs.n
    return GramMatrix(g=0.5 * (g + g.T), n=hs.n)


def gram_from_window(window, p: int) -> GramMatrix:
    return masked_gram(build_hankel(window, p))


def cubic_features(window, p: int) -> np.ndarray:
    """All cubic coordinates, shape (p+1, p+1, p), 0-based [j, r, k].

    phi[j, r, k] = (1/n) sum_{i=1}^{n-p} x_{i+j} x_{i+r} x_{n-p+k+1}
    (with the stored indices shifted down by one).  The identity

        b' G A x  =  sum_{j,r,k} b_j A_{r,k} phi_{j,r,k}

    holds exactly for the masked Gram G and label window x.
    """
    x = np.asarray(window, dtype=float)
    n = x.shape[0]
    if n < p + 1:
        raise ValueError(f"need n >= p+1, got n={n}, p={p}")
    g = gram_from_window(x, p).g  # (1/n) sum_i x_{i+j-1} x_{i+r-1}
    tail = x[n - p:]
    return g[:, :, None] * tail[None, None, :]


class CubicFeature(NamedTuple):
    """One cubic coordinate, reported with 1-based indices."""

    j: int
    r: int
    k: int
    value: float


def iter_cubic_features(window, p: int) -> Iterator[CubicFeature]:
    phi = cubic_features(window, p)
    for j in range(p + 1):
        for r in range(p + 1):
            for k in range(p):
                yield CubicFeature(j + 1, r + 1, k + 1, float(phi[j, r, k]))


def feature_collapse_error(proc: ArProcess, n: int, p: int, seed: int,
                           samples: int = 400) -> float:
    """Worst-case sample L2 distance of the cubic coordinates from their limit.

    The limiting value of phi_{j,r,k} is gamma_{|j-r|} * x_{n-p+k}; the
    distance is estimated over ``samples`` independent stationary windows
    and maximized over (j, r, k).
    """
    table = autocovariances(proc, p)
    windows = sample_windows(proc, n, samples, seed=derive_seed(seed, "collapse", n))
    sq = np.zeros((p + 1, p + 1, p))
    for w in windows:
        phi = cubic_features(w, p)
        tail = w[n - p:]
        jr = np.fromfunction(
            lambda j, r: np.abs(j - r), (p + 1, p + 1), dtype=int
        )
        limit = table.gamma[jr][:, :, None] * tail[None, None, :]
        sq += (phi - limit) ** 2
    return float(np.sqrt(np.max(sq / samples)))
