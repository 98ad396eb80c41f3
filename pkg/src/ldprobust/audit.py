"""Exact privacy audits for every shipped mechanism.

Discrete channels are audited by computing the full output pmf for each probe
input and taking the worst log-ratio. Laplace releases are audited through the
sensitivity-to-scale ratio, which is the exact sup of their density log-ratio.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Hashable, Iterable, Optional, Sequence

import numpy as np

from ldprobust import ldp_density, ldp_mean
from ldprobust.ldp_testing import renyi_rr_divergence
from ldprobust.rngkit import PrivacyBudget

TOL = 1e-10
MECHANISMS = ("rr", "duchi-linf", "mean-hist", "mean-rem", "wavelet", "sgd-median")


class UnsupportedChannelError(ValueError):
    pass


@dataclass(frozen=True)
class AuditReport:
    mechanism: str
    declared: float
    measured: float
    passed: bool
    worst_pair: Optional[tuple] = None
    gamma: Optional[float] = None

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        d["measured"] = d["measured"] if math.isfinite(d["measured"]) else "inf"
        if d["worst_pair"] is not None:
            d["worst_pair"] = [_jsonable(p) for p in d["worst_pair"]]
        if d["gamma"] is None:
            del d["gamma"]
        return d


def _jsonable(x):
    if isinstance(x, (np.ndarray, tuple, list)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _report(mechanism, declared, measured, worst, gamma=None) -> AuditReport:
    return AuditReport(mechanism, declared, measured, bool(measured <= declared + TOL), worst, gamma)


def audit_discrete_mechanism(
    channel: Callable[[Any], dict],
    inputs: Iterable,
    alpha: float,
    mechanism: str = "custom",
) -> AuditReport:
    """Worst |log P(z|x) / P(z|x')| over probe pairs and outputs.

    ``channel(x)`` returns a mapping output -> probability over a finite support.
    Zero against zero is fine; positive against zero is an infinite ratio.
    """
    inputs = list(inputs)
    pmfs = []
    for x in inputs:
        pmf = channel(x)
        if not hasattr(pmf, "items"):
            raise UnsupportedChannelError("channel must return a finite output -> probability mapping")
        pmfs.append(dict(pmf))
    worst, worst_pair = 0.0, None
    for a, b in itertools.combinations(range(len(inputs)), 2):
        for z in set(pmfs[a]) | set(pmfs[b]):
            pa, pb = pmfs[a].get(z, 0.0), pmfs[b].get(z, 0.0)
            if pa == 0 and pb == 0:
                continue
            val = math.inf if pa == 0 or pb == 0 else abs(math.log(pa) - math.log(pb))
            if val > worst:
                worst, worst_pair = val, (inputs[a], inputs[b], z)
    return _report(mechanism, alpha, worst, worst_pair)


def audit_laplace_release(clamp_width: float, noise_scale: float, alpha: float, mechanism: str = "laplace") -> AuditReport:
    """Pass iff sensitivity / scale <= alpha (the sup of the Laplace density log-ratio)."""
    if clamp_width < 0 or not noise_scale > 0:
        raise ValueError("need clamp_width >= 0 and noise_scale > 0")
    return _report(mechanism, alpha, clamp_width / noise_scale, None)


def audit_rdp(gamma: float, p: float, alpha_sq: float) -> AuditReport:
    measured = renyi_rr_divergence(gamma, p) if p < 1 else math.inf
    return _report("rr-rdp", alpha_sq, measured, None, gamma)


# --- channels for the shipped mechanisms ----------------------------------


def rr_channel(alpha: float) -> Callable[[int], dict]:
    keep = PrivacyBudget(alpha).keep_prob
    return lambda y: {y: keep, 1 - y: 1 - keep}


def duchi_linf_channel(cfg: ldp_density.TrigConfig) -> Callable[[tuple], dict]:
    def channel(v):
        corners, probs = ldp_density.corner_pmf(np.asarray(v, dtype=float), cfg)
        return {tuple(c): p for c, p in zip(corners.tolist(), probs)}

    return channel


def sgd_median_channel(alpha: float) -> Callable[[str], dict]:
    """Law of Z_i given the ordering of (theta_i, Y_i): 'above', 'below' or 'tie'."""
    b = PrivacyBudget(alpha)
    up = {"above": b.keep_prob, "below": 1 - b.keep_prob, "tie": 0.5}
    return lambda case: {b.debias: up[case], -b.debias: 1 - up[case]}


def _max_l1_gap(rows: np.ndarray) -> tuple[float, tuple]:
    gaps = np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=2)
    a, b = np.unravel_index(np.argmax(gaps), gaps.shape)
    return float(gaps[a, b]), (int(a), int(b))


def _real_probes(lo: float, hi: float, m: int = 97) -> np.ndarray:
    """Grid over [lo, hi], both boundaries, midpoints, and points outside the range."""
    span = hi - lo
    grid = np.linspace(lo, hi, m)
    extra = [lo - span, lo - 1e-9, hi + 1e-9, hi + span, 0.5 * (lo + hi)]
    return np.unique(np.concatenate([grid, extra]))


def audit_mechanism(mechanism: str, alpha: float, gamma: Optional[float] = None, dims: Sequence[int] = (1, 2, 3, 4, 5)):
    """Audit a shipped mechanism at its default configuration.

    Returns one :class:`AuditReport`; for ``duchi-linf`` the worst one over ``dims``.
    With ``gamma`` set, ``rr`` is audited for Renyi privacy at level alpha^2
    using the calibrated keep probability.
    """
    PrivacyBudget(alpha)
    if mechanism == "rr":
        if gamma is not None:
            from ldprobust.ldp_testing import rdp_rr_flip_prob

            lvl = rdp_rr_flip_prob(gamma, alpha**2)
            return audit_rdp(gamma, lvl.p, alpha**2)
        return audit_discrete_mechanism(rr_channel(alpha), [0, 1], alpha, "rr")
    if mechanism == "duchi-linf":
        reports = []
        for d in dims:
            cfg = ldp_density.TrigConfig(d, alpha)
            probes = list(itertools.product([-cfg.B0, 0.0, cfg.B0], repeat=d))
            reports.append(audit_discrete_mechanism(duchi_linf_channel(cfg), probes, alpha, "duchi-linf"))
        return max(reports, key=lambda r: r.measured)
    if mechanism == "mean-hist":
        cfg = ldp_mean.MeanConfig.build(alpha, 0.0, 2.0, T=6 * 12**0.5 * 2, n=1024)
        rows = ldp_mean.histogram_indicators(_real_probes(-cfg.T, cfg.T + cfg.M / 3), cfg)
        sens, pair = _max_l1_gap(rows)
        rep = audit_laplace_release(sens, 2.0 / alpha, alpha, "mean-hist")
        return AuditReport(rep.mechanism, rep.declared, rep.measured, rep.passed, pair)
    if mechanism == "mean-rem":
        cfg = ldp_mean.MeanConfig.build(alpha, 0.0, 2.0, T=6 * 12**0.5 * 2, n=1024)
        probes = _real_probes(-cfg.T, cfg.T + cfg.M / 3)
        width = 0.0
        for ell in range(3):
            r = np.atleast_1d(ldp_mean.compute_remainder(probes, ell, cfg))
            width = max(width, float(r.max() - r.min()))
        return audit_laplace_release(width, cfg.M / alpha, alpha, "mean-rem")
    if mechanism == "wavelet":
        J = 4
        rows = ldp_density.haar_design(_real_probes(0.0, 1.0, 2 ** (J + 3) + 1).clip(0, 1), J)
        sens, pair = _max_l1_gap(rows)
        rep = audit_laplace_release(sens, ldp_density.haar_sigma(J, alpha), alpha, "wavelet")
        return AuditReport(rep.mechanism, rep.declared, rep.measured, rep.passed, pair)
    if mechanism == "sgd-median":
        return audit_discrete_mechanism(sgd_median_channel(alpha), ["above", "below", "tie"], alpha, "sgd-median")
    raise UnsupportedChannelError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")
