"""Four-fold non-interactive robust mean estimator and the truncated-Laplace baseline.

The estimator splits 4n samples into four folds. Fold 1 feeds a private
histogram with bins of width M/3 over [-T - M/3, T + M/3); the highest bin whose
noisy frequency clears the threshold tau locates the data within a window of
width M. Folds 2-4 each release a clamped remainder, one per possible window
offset L in {0, 1, 2}; only the fold matching the selected L is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ldprobust.rngkit import InvalidParameterError, PrivacyBudget, Stream


def min_bin_width(k: float, eps: float = 0.0) -> float:
    """Smallest M with eps + (1 - eps)(6/M)^k <= 1/12; infinite when eps >= 1/12."""
    if eps >= 1 / 12:
        return math.inf
    return 6.0 * ((1 / 12 - eps) / (1 - eps)) ** (-1.0 / k)


def theory_bin_width(n: int, alpha: float, eps: float, k: float) -> float:
    """Bin width 6 * 12^(1/k) * min(eps^(-1/k), (n alpha^2)^(1/(2k))).

    The leading constant is the width that makes the threshold condition hold
    at eps = 0 for every n, so the rate-optimal scaling is kept without
    leaving the regime where the threshold is meaningful.
    """
    scale = (n * alpha**2) ** (1.0 / (2 * k))
    if eps > 0:
        scale = min(scale, eps ** (-1.0 / k))
    return 6.0 * 12 ** (1.0 / k) * scale


def _fit_width_to_range(T: float, M_target: float) -> tuple[float, float]:
    """Smallest M >= M_target with T/M integral; T is raised to M when T < M_target."""
    if T < M_target:
        return M_target, M_target
    m = math.floor(T / M_target + 1e-12)
    return T, T / m


@dataclass(frozen=True)
class MeanConfig:
    alpha: float
    eps_bound: float
    k: float
    T: float
    M: float
    n: int
    tau_override: Optional[float] = None

    def __post_init__(self):
        PrivacyBudget(self.alpha)
        if not self.M > 0:
            raise InvalidParameterError(f"bin width M must be positive, got {self.M}")
        ratio = self.T / self.M
        if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
            raise InvalidParameterError(f"T/M must be a positive integer, got T={self.T}, M={self.M}")
        if self.k <= 1:
            raise InvalidParameterError(f"moment order k must exceed 1, got {self.k}")
        if not 0 <= self.eps_bound <= 1:
            raise InvalidParameterError(f"eps must lie in [0, 1], got {self.eps_bound}")
        if self.n < 1:
            raise InvalidParameterError(f"per-fold sample count must be >= 1, got {self.n}")

    @classmethod
    def build(cls, alpha, eps, k, T, n, M=None, width_rule: str = "default", tau=None) -> "MeanConfig":
        """Resolve M from a rule and round it so that T/M is an integer.

        ``width_rule`` is ``"default"`` (the fixed minimal width 6 * 12^(1/k))
        or ``"theory"`` (see :func:`theory_bin_width`); an explicit ``M`` wins.
        """
        if M is None:
            if width_rule == "default":
                M = 6.0 * 12 ** (1.0 / k)
            elif width_rule == "theory":
                M = theory_bin_width(n, alpha, eps, k)
            else:
                raise InvalidParameterError(f"unknown width rule {width_rule!r}")
            T, M = _fit_width_to_range(float(T), M)
        return cls(float(alpha), float(eps), float(k), float(T), float(M), int(n), tau)

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.alpha)

    @property
    def ratio(self) -> int:
        return int(round(self.T / self.M))

    @property
    def j_min(self) -> int:
        return -3 * self.ratio

    @property
    def j_max(self) -> int:
        return 3 * self.ratio + 1

    @property
    def index_set(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    @property
    def delta(self) -> float:
        return 1.0 / (self.T**2 * self.n * self.alpha**2)

    @property
    def tau(self) -> float:
        if self.tau_override is not None:
            return self.tau_override
        na2 = self.n * self.alpha**2
        eps = self.eps_bound
        slack = 4.0 * math.sqrt(2.0 * math.log(12.0 * self.T / (self.M * self.delta)) / na2)
        return eps + (1 - eps) * (6.0 / self.M) ** self.k + slack

    def left_edge(self, j):
        """Left end point (j - 1) M / 3 of bin A_j."""
        return (np.asarray(j) - 1) * self.M / 3.0

    def bin_index(self, xs) -> np.ndarray:
        """Index j with x in A_j = [(j-1)M/3, jM/3), ignoring the finite range of the index set."""
        xs = np.asarray(xs, dtype=float)
        j = np.floor(xs / (self.M / 3.0)).astype(np.int64) + 1
        # repair floor() round-off so membership agrees with left_edge exactly
        j = np.where(self.left_edge(j) > xs, j - 1, j)
        j = np.where(self.left_edge(j + 1) <= xs, j + 1, j)
        return j


@dataclass(frozen=True)
class MeanFolds:
    histogram: np.ndarray
    remainders: tuple[np.ndarray, np.ndarray, np.ndarray]
    index_set: np.ndarray


def histogram_indicators(xs, cfg: MeanConfig) -> np.ndarray:
    """Pre-noise one-hot rows over the index set; rows outside [-T - M/3, T + M/3) are all zero."""
    xs = np.asarray(xs, dtype=float)
    j = cfg.bin_index(xs)
    rows = np.zeros((xs.size, cfg.index_set.size))
    inside = (j >= cfg.j_min) & (j <= cfg.j_max)
    rows[np.flatnonzero(inside), j[inside] - cfg.j_min] = 1.0
    return rows


def privatize_histogram_fold(xs, cfg: MeanConfig, stream: Stream) -> np.ndarray:
    rows = histogram_indicators(xs, cfg)
    return rows + stream.laplace(2.0 / cfg.alpha, rows.shape)


def raw_remainder(xs, ell: int, cfg: MeanConfig) -> np.ndarray:
    """Distance from x to the nearest eligible left end point at or below it (inf if none).

    Eligible end points are (j - 1) M / 3 for j in the index set with j = ell (mod 3).
    """
    if ell not in (0, 1, 2):
        raise InvalidParameterError(f"ell must be 0, 1 or 2, got {ell}")
    xs = np.asarray(xs, dtype=float)
    jcap = np.minimum(cfg.bin_index(xs), cfg.j_max)
    j = jcap - np.mod(jcap - ell, 3)
    out = xs - cfg.left_edge(j)
    return np.where(j >= cfg.j_min, out, np.inf)


def compute_remainder(x, ell: int, cfg: MeanConfig):
    out = np.clip(raw_remainder(x, ell, cfg), 0.0, cfg.M)
    return out if out.ndim else float(out)


def privatize_remainder_fold(xs, ell: int, cfg: MeanConfig, stream: Stream) -> np.ndarray:
    r = np.atleast_1d(compute_remainder(xs, ell, cfg))
    return r + stream.laplace(cfg.M / cfg.alpha, r.shape)


def select_bin(zbar, cfg: MeanConfig) -> Optional[tuple[int, int]]:
    """Return (J, L) from the column means of the histogram fold, or None when no bin clears tau."""
    zbar = np.asarray(zbar, dtype=float)
    hits = np.flatnonzero(zbar >= cfg.tau)
    if hits.size == 0:
        return None
    J = int(cfg.index_set[hits.max()]) - 1
    return J, J % 3


def privatize_folds(xs, cfg: MeanConfig, stream: Stream) -> MeanFolds:
    n = cfg.n
    xs = np.asarray(xs, dtype=float)
    if xs.size < 4 * n:
        raise InvalidParameterError(f"need 4n = {4 * n} samples, got {xs.size}")
    hist = privatize_histogram_fold(xs[:n], cfg, stream)
    rems = tuple(privatize_remainder_fold(xs[(ell + 1) * n : (ell + 2) * n], ell, cfg, stream) for ell in range(3))
    return MeanFolds(hist, rems, cfg.index_set)


def estimate_from_folds(folds: MeanFolds, cfg: MeanConfig) -> float:
    sel = select_bin(folds.histogram.mean(axis=0), cfg)
    if sel is None:
        return 0.0
    J, L = sel
    return float(folds.remainders[L].mean() + (J - 1) * cfg.M / 3.0)


def robust_mean_estimate(xs, cfg: MeanConfig, stream: Stream) -> float:
    """Private robust mean from 4 * cfg.n samples; any excess samples are dropped."""
    return estimate_from_folds(privatize_folds(xs, cfg, stream), cfg)


def baseline_truncation(D: float, n: int, alpha: float, k: float, eps: float = 0.0) -> float:
    """M = D^(1/k) * min(eps^(-1/k), (n alpha^2)^(1/(2k)))."""
    scale = (n * alpha**2) ** (1.0 / (2 * k))
    if eps > 0:
        scale = min(scale, eps ** (-1.0 / k))
    return D ** (1.0 / k) * scale


def duchi_truncated_mean(xs, M_trunc: float, budget: PrivacyBudget, stream: Stream) -> float:
    """Average of [x]_M + (2M/alpha) W with [.]_M the clamp to [-M, M]."""
    if not M_trunc > 0:
        raise InvalidParameterError(f"truncation level must be positive, got {M_trunc}")
    xs = np.asarray(xs, dtype=float)
    z = np.clip(xs, -M_trunc, M_trunc) + stream.laplace(2.0 * M_trunc / budget.alpha, xs.shape)
    return float(z.mean())
