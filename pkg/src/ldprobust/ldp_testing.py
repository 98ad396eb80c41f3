"""Privatized Scheffe two-point test and randomized-response calibration for Renyi privacy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ldprobust.models import ScheffeEvent
from ldprobust.rngkit import InvalidParameterError, PrivacyBudget, Stream


class InvalidEventError(ValueError):
    pass


class InfeasibleRegimeError(ValueError):
    pass


class InfiniteDivergenceError(ValueError):
    pass


@dataclass(frozen=True)
class TestStatistic:
    n_hat0: int
    n_tilde0: float
    n: int

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class RdpLevel:
    gamma: float
    alpha_sq: float
    p: float
    saturated: bool = False


def randomized_response(bits, keep_prob: float, stream: Stream) -> np.ndarray:
    """Keep each bit when u <= keep_prob, flip it otherwise."""
    bits = np.asarray(bits, dtype=np.int8)
    keep = stream.uniform(bits.shape) <= keep_prob
    return np.where(keep, bits, 1 - bits).astype(np.int8)


def privatize_scheffe_bits(xs, A: ScheffeEvent, budget: PrivacyBudget, stream: Stream, keep_prob=None) -> np.ndarray:
    """Release Z_i = RR(1{x_i not in A}).

    ``keep_prob`` overrides the calibrated e^a/(1+e^a), e.g. with 1.0 for the no-flip limit.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if xs.size < 1:
        raise InvalidParameterError("need at least one sample")
    y = (~A.contains(xs)).astype(np.int8)
    p = budget.keep_prob if keep_prob is None else keep_prob
    return randomized_response(y, p, stream)


def debiased_count(zs, budget: PrivacyBudget) -> TestStatistic:
    zs = np.asarray(zs)
    n = int(zs.size)
    n_hat0 = int(np.count_nonzero(zs == 0))
    n_tilde0 = budget.debias * (n_hat0 - n / (math.exp(budget.alpha) + 1.0))
    return TestStatistic(n_hat0, n_tilde0, n)


def _check_event(p0A, p1A):
    if p0A < p1A:
        raise InvalidEventError(f"P0(A)={p0A} < P1(A)={p1A}: A is not the Scheffe set of (P0, P1)")


def scheffe_test(stat: TestStatistic, p0A: float, p1A: float) -> int:
    """1 (reject H0) iff 2 N~0 / n < P0(A) + P1(A); ties keep H0."""
    _check_event(p0A, p1A)
    return int(2 * stat.n_tilde0 / stat.n < p0A + p1A)


def scheffe_test_known_eps(stat: TestStatistic, p0A: float, p1A: float, eps: float) -> int:
    """Variant with the critical value shifted to (1 - eps)(P0(A) + P1(A)) + eps."""
    _check_event(p0A, p1A)
    if not 0.0 <= eps < 0.5:
        raise InfeasibleRegimeError(f"known-eps test needs eps in [0, 1/2), got {eps}")
    return int(2 * stat.n_tilde0 / stat.n < (1 - eps) * (p0A + p1A) + eps)


def renyi_rr_divergence(gamma: float, p: float) -> float:
    """Order-gamma Renyi divergence between the two output laws of binary randomized response."""
    if gamma < 2:
        raise InvalidParameterError(f"gamma must be >= 2, got {gamma}")
    if not 0.5 <= p <= 1.0:
        raise InvalidParameterError(f"keep probability must lie in [1/2, 1], got {p}")
    if p == 1.0:
        raise InfiniteDivergenceError("randomized response without flips has infinite divergence")
    q = 1.0 - p
    # log-sum-exp for stability when p is close to 1
    a = gamma * math.log(p) + (1 - gamma) * math.log(q)
    b = gamma * math.log(q) + (1 - gamma) * math.log(p)
    hi = max(a, b)
    return (hi + math.log(math.exp(a - hi) + math.exp(b - hi))) / (gamma - 1)


P_CAP = 1.0 - 1e-9


def rdp_rr_flip_prob(gamma: float, alpha_sq: float, tol: float = 1e-12) -> RdpLevel:
    """Largest keep probability p for which randomized response is (gamma, alpha_sq)-RDP.

    Found by bisection, the divergence being increasing in p on [1/2, 1).
    """
    if gamma < 2:
        raise InvalidParameterError(f"gamma must be >= 2, got {gamma}")
    if alpha_sq < 0:
        raise InvalidParameterError(f"alpha_sq must be nonnegative, got {alpha_sq}")
    if alpha_sq == 0:
        return RdpLevel(gamma, alpha_sq, 0.5)
    if renyi_rr_divergence(gamma, P_CAP) <= alpha_sq:
        return RdpLevel(gamma, alpha_sq, P_CAP, saturated=True)
    lo, hi = 0.5, P_CAP
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if renyi_rr_divergence(gamma, mid) <= alpha_sq:
            lo = mid
        else:
            hi = mid
    return RdpLevel(gamma, alpha_sq, lo)
