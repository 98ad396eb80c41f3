"""Sequentially interactive private SGD for the median."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ldprobust.models import Distribution
from ldprobust.rngkit import InvalidParameterError, PrivacyBudget, Stream


@dataclass(frozen=True)
class MedianConfig:
    r: float
    alpha: float
    theta1: float = 0.0
    eta: Optional[Sequence[float]] = None  # None means the constant alpha * r / sqrt(n)

    def __post_init__(self):
        if not self.r > 0:
            raise InvalidParameterError(f"radius r must be positive, got {self.r}")
        PrivacyBudget(self.alpha)
        if abs(self.theta1) > self.r:
            raise InvalidParameterError(f"theta1={self.theta1} lies outside [-r, r]")

    def steps(self, n: int) -> np.ndarray:
        if self.eta is None:
            return np.full(n, self.alpha * self.r / math.sqrt(n))
        eta = np.asarray(self.eta, dtype=float)
        if eta.size < n:
            raise InvalidParameterError(f"step schedule has {eta.size} entries, need {n}")
        eta = eta[:n]
        if np.any(eta <= 0) or np.any(np.diff(eta) > 0):
            raise InvalidParameterError("step sizes must be positive and nonincreasing")
        return eta


@dataclass(frozen=True)
class SgdTrace:
    thetas: np.ndarray  # theta_1..theta_{n+1}
    grads: np.ndarray  # Z_1..Z_n
    theta_hat: float


def private_sgd_median(ys, cfg: MedianConfig, stream: Stream) -> SgdTrace:
    """Projected SGD on E|X - theta| with randomized-response gradients.

    At step i only (Y_i, theta_i) enter the released Z_i, and theta_{i+1}
    depends on Z_1..Z_i only. The output averages theta_1..theta_n with the
    step sizes as weights.
    """
    ys = np.asarray(ys, dtype=float).ravel()
    n = ys.size
    if n < 1:
        raise InvalidParameterError("need at least one observation")
    budget = PrivacyBudget(cfg.alpha)
    scale = budget.debias
    eta = cfg.steps(n)
    # the privatizing coin W_i and the tie-break coin for step i are drawn per step
    u = stream.uniform((n, 2))
    w = np.where(u[:, 0] <= budget.keep_prob, 1.0, -1.0).tolist()
    tie = np.where(u[:, 1] <= 0.5, 1.0, -1.0).tolist()
    r = cfg.r
    thetas = [0.0] * (n + 1)
    grads = [0.0] * n
    theta = float(cfg.theta1)
    y_list = ys.tolist()
    eta_list = eta.tolist()
    for i in range(n):
        thetas[i] = theta
        d = theta - y_list[i]
        s = 1.0 if d > 0 else (-1.0 if d < 0 else tie[i])
        z = scale * w[i] * s
        grads[i] = z
        theta = theta - eta_list[i] * z
        if theta > r:
            theta = r
        elif theta < -r:
            theta = -r
    thetas[n] = theta
    th = np.asarray(thetas)
    theta_hat = float(np.dot(eta, th[:n]) / eta.sum())
    return SgdTrace(th, np.asarray(grads), min(max(theta_hat, -r), r))


def excess_risk(truth: Distribution, theta_hat: float) -> float:
    """E|X - theta_hat| - E|X - med| under the inlier law."""
    return max(0.0, truth.absolute_risk(theta_hat) - truth.absolute_risk(truth.median()))
