"""Experiment orchestration: contaminated data -> private estimator -> loss, replicated.

Every (n, trial) cell gets its own stream derived from ``(seed, task id, n index,
trial)``, so results do not depend on how cells are spread over workers.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ldprobust import ldp_density, ldp_mean, ldp_median, ldp_testing
from ldprobust.models import (
    ContaminatedSource,
    Discrete,
    Distribution,
    distribution_from_dict,
    point_mass,
    sample_contaminated,
    scheffe_set,
)
from ldprobust.rngkit import InvalidParameterError, PrivacyBudget, StreamKey, derive_stream

log = logging.getLogger(__name__)

TASKS = {"test": 1, "mean": 2, "density": 3, "median": 4}
CSV_HEADER = ("task", "n", "trial", "alpha", "eps", "loss")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    n_grid: tuple[int, ...]
    trials: int
    alpha: float
    eps: float = 0.0
    params: dict = field(default_factory=dict)
    seed: int = 0
    check: Optional[dict] = None

    @classmethod
    def from_dict(cls, raw: dict, seed: Optional[int] = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("$", "config must be a JSON object")
        raw = dict(raw)
        task = raw.pop("task", None)
        if task not in TASKS:
            raise ConfigError("task", f"expected one of {sorted(TASKS)}, got {task!r}")
        try:
            n_grid = tuple(int(n) for n in raw.pop("n_grid"))
        except (KeyError, TypeError, ValueError):
            raise ConfigError("n_grid", "expected a list of integers") from None
        if not n_grid or any(n < 1 for n in n_grid) or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
            raise ConfigError("n_grid", "must be a non-empty, strictly increasing list of positive integers")
        trials = _pop_number(raw, "trials", int)
        if trials < 1:
            raise ConfigError("trials", "must be >= 1")
        alpha = _pop_number(raw, "alpha", float)
        if not alpha > 0:
            raise ConfigError("alpha", "must be positive")
        eps = _pop_number(raw, "eps", float, 0.0)
        if not 0 <= eps <= 1:
            raise ConfigError("eps", "must lie in [0, 1]")
        cfg_seed = _pop_number(raw, "seed", int, 0)
        check = raw.pop("check", None)
        raw.pop("output", None)
        cfg = cls(task, n_grid, trials, alpha, eps, raw, cfg_seed if seed is None else int(seed), check)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = {"task": self.task, "n_grid": list(self.n_grid), "trials": self.trials, "alpha": self.alpha, "eps": self.eps}
        d.update(self.params)
        d["seed"] = self.seed
        if self.check is not None:
            d["check"] = self.check
        return d

    def dist(self, key: str, default=None) -> Optional[Distribution]:
        spec = self.params.get(key, default)
        if spec is None:
            return None
        try:
            return distribution_from_dict(spec)
        except (InvalidParameterError, TypeError) as e:
            raise ConfigError(key, str(e)) from None

    def validate(self):
        """Resolve everything that can fail up front so that errors carry a field path."""
        p = self.params
        if self.task == "test":
            P0, P1 = self.dist("p0"), self.dist("p1")
            if P0 is None or P1 is None:
                raise ConfigError("p0" if P0 is None else "p1", "test task needs p0 and p1")
            rule = p.get("rule", "plain")
            if rule not in ("plain", "known_eps"):
                raise ConfigError("rule", "expected 'plain' or 'known_eps'")
            A = scheffe_set(P0, P1)
            if rule == "plain" and not A.tv > 2 * self.eps:
                raise ConfigError("eps", f"TV(P0, P1) = {A.tv:.4g} must exceed 2 eps = {2 * self.eps:.4g}")
            if rule == "known_eps" and not (self.eps < 0.5 and A.tv > self.eps / (1 - self.eps)):
                raise ConfigError("eps", "known-eps test needs eps < 1/2 and TV(P0, P1) > eps / (1 - eps)")
            contaminant = p.get("contaminant", "adversarial")
            if contaminant != "adversarial" and self.eps > 0:
                self.dist("contaminant")
        elif self.task == "mean":
            if self.dist("inlier") is None:
                raise ConfigError("inlier", "mean task needs an inlier distribution")
            if p.get("estimator", "robust") not in ("robust", "baseline", "sample_mean"):
                raise ConfigError("estimator", "expected 'robust', 'baseline' or 'sample_mean'")
            if p.get("estimator", "robust") == "robust":
                if "T" not in p:
                    raise ConfigError("T", "robust mean estimator needs the range cap T")
                try:
                    self.mean_config(self.n_grid[0])
                except InvalidParameterError as e:
                    raise ConfigError("M", str(e)) from None
        elif self.task == "density":
            if p.get("estimator", "trig") not in ("trig", "haar"):
                raise ConfigError("estimator", "expected 'trig' or 'haar'")
            if p.get("loss", "L2sq") not in ("L2sq", "Linf"):
                raise ConfigError("loss", "expected 'L2sq' or 'Linf'")
            truth = self.dist("truth")
            if truth is None or not truth.continuous_on_unit:
                raise ConfigError("truth", "density task needs a truth with a density on [0, 1]")
            if "beta" not in p and ("k_trunc" not in p and "J" not in p):
                raise ConfigError("beta", "give beta or an explicit k_trunc / J")
        elif self.task == "median":
            if self.dist("inlier") is None:
                raise ConfigError("inlier", "median task needs an inlier distribution")
            if not float(p.get("r", 1.0)) > 0:
                raise ConfigError("r", "must be positive")
        if self.eps > 0 and self.task != "test" and self.dist("contaminant") is None:
            raise ConfigError("contaminant", "eps > 0 needs a contaminant distribution")

    def mean_config(self, n: int) -> ldp_mean.MeanConfig:
        """Estimator settings for per-fold count n (the estimator consumes 4n samples)."""
        p = self.params
        k = float(p.get("k", 2.0))
        eps_bound = float(p.get("eps_bound", self.eps))
        return ldp_mean.MeanConfig.build(
            self.alpha,
            eps_bound,
            k,
            T=float(p["T"]),
            n=n,
            M=p.get("M"),
            width_rule=p.get("width_rule", "default"),
            tau=p.get("tau"),
        )


def _pop_number(raw, key, kind, default=None):
    if key not in raw:
        if default is None:
            raise ConfigError(key, "missing required field")
        return default
    try:
        return kind(raw.pop(key))
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {raw.get(key)!r}") from None


def adversarial_contaminants(P0: Distribution, P1: Distribution) -> tuple[Distribution, Distribution]:
    """Point masses that push P(X in A) the wrong way: in A^c under H0, in A under H1."""
    A = scheffe_set(P0, P1)
    if A.atoms is not None:
        support = sorted({v for v, _ in P0.atoms} | {v for v, _ in P1.atoms})
        in_a = [v for v in support if v in A.atoms]
        out_a = [v for v in support if v not in A.atoms]
        bad0 = out_a[0] if out_a else max(support) + 1.0
        bad1 = in_a[0] if in_a else max(support) + 1.0
        return point_mass(bad0), point_mass(bad1)
    grid = (np.arange(A.mask.size) + 0.5) / A.mask.size
    bad0 = grid[~A.mask][0] if (~A.mask).any() else 1.0
    bad1 = grid[A.mask][0] if A.mask.any() else 1.0
    return point_mass(bad0), point_mass(bad1)


def run_trial(cfg: ExperimentConfig, n_index: int, trial: int) -> float:
    """Loss of one replicate; raises on estimator precondition failure."""
    n = cfg.n_grid[n_index]
    stream = derive_stream(StreamKey(cfg.seed, (TASKS[cfg.task], n_index, trial)))
    p = cfg.params
    contaminant = None if cfg.task == "test" else cfg.dist("contaminant")

    if cfg.task == "test":
        P0, P1 = cfg.dist("p0"), cfg.dist("p1")
        A = scheffe_set(P0, P1)
        if p.get("contaminant", "adversarial") == "adversarial":
            G0, G1 = adversarial_contaminants(P0, P1)
        else:
            G0 = G1 = cfg.dist("contaminant")
        budget = PrivacyBudget(cfg.alpha)
        errors = 0
        for truth, G, wrong in ((P0, G0, 1), (P1, G1, 0)):
            xs = sample_contaminated(ContaminatedSource(truth, G, cfg.eps), n, stream)
            stat = ldp_testing.debiased_count(ldp_testing.privatize_scheffe_bits(xs, A, budget, stream), budget)
            if p.get("rule", "plain") == "known_eps":
                decision = ldp_testing.scheffe_test_known_eps(stat, A.p0_mass, A.p1_mass, cfg.eps)
            else:
                decision = ldp_testing.scheffe_test(stat, A.p0_mass, A.p1_mass)
            errors += int(decision == wrong)
        return float(errors)

    if cfg.task == "mean":
        # n is the per-fold count: every mean estimator sees the same 4n samples
        inlier = cfg.dist("inlier")
        xs = sample_contaminated(ContaminatedSource(inlier, contaminant, cfg.eps), 4 * n, stream)
        est = p.get("estimator", "robust")
        if est == "robust":
            mu_hat = ldp_mean.robust_mean_estimate(xs, cfg.mean_config(n), stream)
        elif est == "baseline":
            D = float(p.get("D", max(1.0, abs(inlier.mean()))))
            M = float(p.get("M_trunc", ldp_mean.baseline_truncation(D, 4 * n, cfg.alpha, float(p.get("k", 2.0)))))
            mu_hat = ldp_mean.duchi_truncated_mean(xs, M, PrivacyBudget(cfg.alpha), stream)
        else:
            mu_hat = float(np.mean(xs))
        return (mu_hat - inlier.mean()) ** 2

    if cfg.task == "density":
        truth = cfg.dist("truth")
        xs = sample_contaminated(ContaminatedSource(truth, contaminant, cfg.eps), n, stream)
        beta = float(p.get("beta", 1.0))
        if p.get("estimator", "trig") == "trig":
            k = int(p.get("k_trunc") or ldp_density.default_trig_k(n, cfg.alpha, beta, cfg.eps))
            fhat = ldp_density.trig_density_estimate(xs, ldp_density.TrigConfig(k, cfg.alpha), stream)
        else:
            J = int(p["J"]) if p.get("J") is not None else ldp_density.default_haar_level(n, cfg.alpha, beta, cfg.eps)
            fhat = ldp_density.wavelet_density_estimate(xs, J, cfg.alpha, stream, tight=bool(p.get("tight", False)))
        return ldp_density.density_loss(fhat, truth, p.get("loss", "L2sq"))

    if cfg.task == "median":
        inlier = cfg.dist("inlier")
        ys = sample_contaminated(ContaminatedSource(inlier, contaminant, cfg.eps), n, stream)
        mcfg = ldp_median.MedianConfig(float(p.get("r", 1.0)), cfg.alpha, float(p.get("theta1", 0.0)))
        trace = ldp_median.private_sgd_median(ys, mcfg, stream)
        return ldp_median.excess_risk(inlier, trace.theta_hat)

    raise ConfigError("task", f"unknown task {cfg.task!r}")


def _run_cell(args) -> tuple[int, int, float, Optional[str]]:
    cfg, n_index, trial = args
    try:
        return n_index, trial, run_trial(cfg, n_index, trial), None
    except (InvalidParameterError, ValueError, ArithmeticError) as e:
        return n_index, trial, math.nan, f"{type(e).__name__}: {e}"


@dataclass
class ExperimentReport:
    config: dict
    seed: int
    rows: list  # (n, trial, loss, error)
    per_n: list  # dicts with n, risk, se, count, failed
    slope: Optional[float]
    intercept: Optional[float]
    r2: Optional[float]
    runtime_s: float
    failed: int

    def risks(self) -> dict:
        return {d["n"]: d["risk"] for d in self.per_n}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        task, alpha, eps = self.config["task"], self.config["alpha"], self.config["eps"]
        for n, trial, loss, _ in self.rows:
            w.writerow((task, n, trial, repr(alpha), repr(eps), "nan" if math.isnan(loss) else repr(loss)))
        return buf.getvalue()

    def summary(self) -> dict:
        """Deterministic summary (wall-clock time is left out so reruns are byte-identical)."""
        return {
            "config": self.config,
            "seed": self.seed,
            "per_n": self.per_n,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "failed": self.failed,
            "errors": sorted({e for *_, e in self.rows if e}),
        }


def resolve_jobs(jobs: Optional[int]) -> int:
    if jobs is None:
        jobs = int(os.environ.get("LDPROBUST_JOBS", "1"))
    return max(1, int(jobs))


def run_experiment(cfg: ExperimentConfig, jobs: Optional[int] = None) -> ExperimentReport:
    start = time.perf_counter()
    cells = [(cfg, i, t) for i in range(len(cfg.n_grid)) for t in range(cfg.trials)]
    jobs = resolve_jobs(jobs)
    if jobs == 1:
        results = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * jobs))))
    results.sort(key=lambda r: (r[0], r[1]))

    rows, per_n = [], []
    for i, n in enumerate(cfg.n_grid):
        mine = [r for r in results if r[0] == i]
        losses = np.array([r[2] for r in mine if r[3] is None])
        failed = sum(1 for r in mine if r[3] is not None)
        rows.extend((n, r[1], r[2], r[3]) for r in mine)
        if failed:
            warnings.warn(f"n={n}: {failed} trial(s) failed and were excluded from the risk", RuntimeWarning)
        risk = float(losses.mean()) if losses.size else math.nan
        se = float(losses.std(ddof=1) / math.sqrt(losses.size)) if losses.size > 1 else math.nan
        per_n.append({"n": n, "risk": risk, "se": se, "count": int(losses.size), "failed": failed})

    slope = intercept = r2 = None
    usable = [(d["n"], d["risk"]) for d in per_n if math.isfinite(d["risk"])]
    if len(usable) >= 3:
        try:
            slope, intercept, r2 = fit_rate_slope(usable)
        except InsufficientDataError:
            pass
    elapsed = time.perf_counter() - start
    log.info("task=%s cells=%d jobs=%d wall=%.2fs", cfg.task, len(cells), jobs, elapsed)
    return ExperimentReport(
        cfg.to_dict(), cfg.seed, rows, per_n, slope, intercept, r2, elapsed, sum(d["failed"] for d in per_n)
    )


def fit_rate_slope(points) -> tuple[float, float, float]:
    """Least-squares line through (log n, log risk); returns (slope, intercept, r^2)."""
    pts = [(float(n), float(r)) for n, r in points]
    kept = [(n, r) for n, r in pts if r > 0 and n > 0]
    if len(kept) < len(pts):
        warnings.warn(f"dropped {len(pts) - len(kept)} point(s) with nonpositive risk", RuntimeWarning)
    if len(kept) < 3:
        raise InsufficientDataError(f"need at least 3 positive points, have {len(kept)}")
    x = np.log([n for n, _ in kept])
    y = np.log([r for _, r in kept])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def rates_from_rows(rows) -> list[dict]:
    """Group CSV rows by (task, alpha, eps) and fit one slope per group."""
    groups: dict[tuple, dict[int, list[float]]] = {}
    for row in rows:
        loss = float(row["loss"])
        if math.isnan(loss):
            continue
        key = (row["task"], float(row["alpha"]), float(row["eps"]))
        groups.setdefault(key, {}).setdefault(int(row["n"]), []).append(loss)
    out = []
    for (task, alpha, eps), by_n in sorted(groups.items()):
        pts = [(n, float(np.mean(v))) for n, v in sorted(by_n.items())]
        try:
            slope, intercept, r2 = fit_rate_slope(pts)
        except InsufficientDataError:
            slope = intercept = r2 = math.nan
        out.append({"task": task, "alpha": alpha, "eps": eps, "slope": slope, "intercept": intercept, "r2": r2, "points": len(pts)})
    return out
