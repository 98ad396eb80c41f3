"""End-to-end acceptance checks, one test group per criterion.

Each test records a pass/fail line that the conftest hook prints at the end of
the session. Seeds are fixed; worker count is min(8, CPU count).
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from ldprobust import audit, ldp_density, ldp_mean, ldp_median
from ldprobust.harness import ExperimentConfig, run_experiment
from ldprobust.ldp_density import TrigConfig, default_trig_k, haar_design, trig_density_estimate, wavelet_density_estimate
from ldprobust.ldp_testing import debiased_count, rdp_rr_flip_prob, renyi_rr_divergence
from ldprobust.models import Discrete, SobolevTrig, scheffe_set
from ldprobust.rngkit import PrivacyBudget, ScriptedStream, StreamKey, derive_stream

pytestmark = pytest.mark.slow

SEED = 20240501
JOBS = min(8, os.cpu_count() or 1)
TRIG_TRUTH = {"kind": "sobolev_trig", "coefs": [1, 0.3, 0.2, 0.1, -0.1, 0.05], "beta": 1, "radius": 1.5}


def _run(raw):
    return run_experiment(ExperimentConfig.from_dict(raw, seed=SEED), jobs=JOBS)


def _risks(rep):
    return [d["risk"] for d in rep.per_n]


# 1 -------------------------------------------------------------------------


def test_c1_privacy_audit(record):
    t0 = time.perf_counter()
    reports = [audit.audit_mechanism(m, a) for m in audit.MECHANISMS for a in (0.2, 0.5, 1.0)]
    all_pass = all(r.passed for r in reports)
    rr_err = max(abs(audit.audit_mechanism("rr", a).measured - a) for a in (0.2, 0.5, 1.0))
    worst_ratio = 0.0
    for d in range(1, 6):
        for a in (0.2, 0.5, 1.0):
            cfg = TrigConfig(d, a)
            grid = itertools.product([-cfg.B0, 0.0, cfg.B0], repeat=d)
            P = np.array([ldp_density.corner_pmf(np.array(v), cfg)[1] for v in grid])
            worst_ratio = max(worst_ratio, (P.max(axis=0) / P.min(axis=0)).max() - math.exp(a))
    elapsed = time.perf_counter() - t0
    ok = all_pass and rr_err <= 1e-12 and worst_ratio <= 1e-10 and elapsed < 10
    record(1, "audit", ok, f"18 audits pass={all_pass}, |rr-alpha|={rr_err:.1e}, max ratio-e^a={worst_ratio:.1e}, {elapsed:.1f}s")
    assert all_pass
    assert rr_err <= 1e-12
    assert worst_ratio <= 1e-10
    assert elapsed < 10


# 2 -------------------------------------------------------------------------


def test_c2_testing_risk_decay(record):
    t0 = time.perf_counter()
    rep = _run(
        {
            "task": "test",
            "n_grid": [100, 400, 1600],
            "trials": 1000,
            "alpha": 0.8,
            "eps": 0.1,
            "p0": {"kind": "bernoulli", "p": 0.15},
            "p1": {"kind": "bernoulli", "p": 0.85},
            "contaminant": "adversarial",
        }
    )
    elapsed = time.perf_counter() - t0
    # two-sided risk = P(error | H0) + P(error | H1); each trial's loss counts both errors
    per_n = rep.per_n
    mono = all(b["risk"] <= a["risk"] + 2 * math.hypot(a["se"], b["se"]) for a, b in zip(per_n, per_n[1:]))
    r400 = rep.risks()[400]
    ok = mono and r400 < 0.05 and elapsed < 60
    record(2, "test risk", ok, f"risks={[round(r, 4) for r in _risks(rep)]}, n=400 risk={r400:.4f}, {elapsed:.1f}s")
    assert mono
    assert r400 < 0.05
    assert elapsed < 60


# 3 -------------------------------------------------------------------------


def test_c3_mean_rate(record):
    t0 = time.perf_counter()
    rep = _run(
        {
            "task": "mean",
            "n_grid": [2**k for k in range(12, 18)],
            "trials": 100,
            "alpha": 1.0,
            "eps": 0.0,
            "k": 2,
            "T": 1,
            "width_rule": "theory",
            "inlier": {"kind": "gaussian", "mu": 0.0, "sigma": 1.0},
        }
    )
    elapsed = time.perf_counter() - t0
    ok = rep.slope is not None and -0.7 <= rep.slope <= -0.3 and elapsed < 300
    record(3, "mean slope", ok, f"slope={rep.slope:.3f}, failed={rep.failed}, {elapsed:.1f}s")
    assert -0.7 <= rep.slope <= -0.3
    assert elapsed < 300


# 4 -------------------------------------------------------------------------


def test_c4_mean_plateau_and_location(record):
    t0 = time.perf_counter()
    M = ldp_mean.MeanConfig.build(1.0, 0.2, 2.0, T=1.0, n=1).M  # default width 6 sqrt(12)
    T = 24 * M
    n = 2**14
    base = {"task": "mean", "n_grid": [n], "trials": 100, "alpha": 1.0, "k": 2}
    mid_bin = M / 6  # centre of A_1 = [0, M/3)
    contaminated = dict(
        base,
        eps=0.2,
        T=T,
        inlier={"kind": "gaussian", "mu": mid_bin, "sigma": 1.0},
        contaminant={"kind": "point_mass", "v": T / 2},
    )
    robust = _risks(_run(contaminated))[0]
    raw = _risks(_run(dict(contaminated, estimator="sample_mean")))[0]
    envelope = 25 * 0.2**2 * M**2
    far = T / 2 - mid_bin >= 10 * M
    ok_a = far and robust <= envelope and raw >= 5 * envelope
    record(4, "plateau", ok_a, f"robust MSE={robust:.3g} <= {envelope:.3g}, raw MSE={raw:.3g}")

    mus = (0.0, 50.0, 100.0)
    rob, lap = [], []
    for mu in mus:
        cfg = dict(base, eps=0.0, T=120, inlier={"kind": "gaussian", "mu": mu, "sigma": 1.0})
        rob.append(_risks(_run(cfg))[0])
        lap.append(_risks(_run(dict(cfg, estimator="baseline")))[0])
    agree = max(rob) <= 2 * min(rob)
    growing = lap[0] < lap[1] < lap[2]
    elapsed = time.perf_counter() - t0
    ok_b = agree and growing and elapsed < 300
    record(4, "D-independence", ok_b, f"robust={[f'{r:.3g}' for r in rob]}, baseline={[f'{r:.3g}' for r in lap]}, {elapsed:.1f}s")
    assert far and robust <= envelope and raw >= 5 * envelope
    assert agree and growing
    assert elapsed < 300


# 5 -------------------------------------------------------------------------


def test_c5_zero_noise_traces(record):
    t0 = time.perf_counter()
    cfg = ldp_mean.MeanConfig.build(1.0, 0.0, 2.0, T=6.0, n=4, M=3.0, tau=0.5)
    xs = np.full(16, 3.7)
    folds = ldp_mean.privatize_folds(xs, cfg, ScriptedStream([0.5]))
    sel = ldp_mean.select_bin(folds.histogram.mean(axis=0), cfg)
    mu_hat = ldp_mean.estimate_from_folds(folds, cfg)
    mean_ok = sel == (3, 0) and abs(folds.remainders[0][0] - 1.7) < 1e-12 and abs(mu_hat - 3.7) < 1e-12

    mcfg = ldp_median.MedianConfig(1.0, math.log(3), theta1=0.0)
    tr = ldp_median.private_sgd_median([0.5], mcfg, ScriptedStream([0.5]))
    med_ok = abs(tr.grads[0] + 2.0) < 1e-12 and tr.thetas[1] == 1.0
    elapsed = time.perf_counter() - t0
    ok = mean_ok and med_ok and elapsed < 1
    record(5, "traces", ok, f"(J, L)={sel}, mu_hat={mu_hat!r}, theta_2={tr.thetas[1]!r}, {elapsed:.3f}s")
    assert mean_ok and med_ok
    assert elapsed < 1


# 6 -------------------------------------------------------------------------


def test_c6_density_l2_rate(record):
    t0 = time.perf_counter()
    rep = _run(
        {
            "task": "density",
            "n_grid": [2**k for k in range(12, 17)],
            "trials": 100,
            "alpha": 1.0,
            "eps": 0.0,
            "beta": 1,
            "estimator": "trig",
            "loss": "L2sq",
            "truth": TRIG_TRUTH,
        }
    )
    slope_ok = rep.slope is not None and -0.7 <= rep.slope <= -0.3

    # unbiasedness of the released coefficients at the largest n
    n = 2**16
    k = default_trig_k(n, 1.0, 1.0)
    cfg = TrigConfig(k, 1.0)
    truth = SobolevTrig(tuple(TRIG_TRUTH["coefs"]), 1.0, 1.5)
    s = derive_stream(StreamKey(SEED, (99,)))
    xs = truth.sample(n, s)
    Z = ldp_density.duchi_linf_privatize(ldp_density.trig_design(xs, k), cfg, s)
    theta = np.zeros(k)
    theta[: len(truth.coefs)] = truth.coefs
    z_score = np.abs(Z.mean(axis=0) - theta) / (Z.std(axis=0, ddof=1) / math.sqrt(n))
    unbiased = bool(np.all(z_score <= 3))
    elapsed = time.perf_counter() - t0
    ok = slope_ok and unbiased and elapsed < 600
    record(6, "density L2", ok, f"slope={rep.slope:.3f}, max |z| over j<={k}: {z_score.max():.2f}, {elapsed:.1f}s")
    assert slope_ok
    assert unbiased
    assert elapsed < 600


# 7 -------------------------------------------------------------------------


def test_c7_wavelet(record):
    t0 = time.perf_counter()
    J = 5
    s = derive_stream(StreamKey(SEED, (7,)))
    xs = SobolevTrig(tuple(TRIG_TRUTH["coefs"]), 1.0, 1.5).sample(3000, s)
    est = wavelet_density_estimate(xs, J, 1.0, ScriptedStream([0.5]))
    emp = haar_design(xs, J).mean(axis=0)
    cells = (np.arange(2 ** (J + 1)) + 0.5) / 2 ** (J + 1)  # estimate is constant on these cells
    projection = haar_design(cells, J) @ emp
    proj_gap = float(np.max(np.abs(est(cells) - projection)))
    parseval_gap = abs(float(np.mean(est(cells) ** 2)) - float(np.sum(est.coefs**2)))
    stub_ok = proj_gap <= 1e-10 and parseval_gap <= 1e-10

    rep = _run(
        {
            "task": "density",
            "n_grid": [2**12, 2**16],
            "trials": 100,
            "alpha": 1.0,
            "eps": 0.0,
            "beta": 1,
            "estimator": "haar",
            "loss": "Linf",
            "truth": TRIG_TRUTH,
        }
    )
    r_small, r_large = _risks(rep)
    factor = r_small / r_large
    elapsed = time.perf_counter() - t0
    ok = stub_ok and factor >= 1.5 and elapsed < 600
    record(7, "wavelet", ok, f"projection gap={proj_gap:.1e}, Parseval gap={parseval_gap:.1e}, Linf {r_small:.3g} -> {r_large:.3g} (x{factor:.2f}), {elapsed:.1f}s")
    assert stub_ok
    assert factor >= 1.5
    assert elapsed < 600


# 8 -------------------------------------------------------------------------

MEDIAN_BASE = {"task": "median", "alpha": 1.0, "r": 1, "inlier": {"kind": "laplace", "mu": 0.3, "b": 1}}


@pytest.mark.xfail(
    strict=True,
    reason="excess risk of a smooth inlier decays like 1/n (measured slope near -1); see README, known deviations",
)
def test_c8_median_rate(record):
    t0 = time.perf_counter()
    rep = _run(dict(MEDIAN_BASE, n_grid=[2**k for k in range(10, 17)], trials=200, eps=0.0))
    elapsed = time.perf_counter() - t0
    ok = rep.slope is not None and -0.7 <= rep.slope <= -0.3 and elapsed < 300
    record(8, "median slope", ok, f"slope={rep.slope:.3f} (target [-0.7, -0.3]), {elapsed:.1f}s")
    assert -0.7 <= rep.slope <= -0.3
    assert elapsed < 300


def test_c8_median_plateau(record):
    t0 = time.perf_counter()
    risks = []
    for eps in (0.05, 0.1, 0.2):
        cfg = dict(MEDIAN_BASE, n_grid=[2**14], trials=200, eps=eps, contaminant={"kind": "point_mass", "v": 1.0})
        risks.append(_risks(_run(cfg))[0])
    elapsed = time.perf_counter() - t0
    ok = risks[0] < risks[1] < risks[2] and elapsed < 300
    record(8, "median plateau", ok, f"excess risk at eps=0.05/0.1/0.2: {[f'{r:.3g}' for r in risks]}, {elapsed:.1f}s")
    assert risks[0] < risks[1] < risks[2]
    assert elapsed < 300


# 9 -------------------------------------------------------------------------


def _best_subset(P0, P1):
    support = sorted({v for v, _ in P0.atoms} | {v for v, _ in P1.atoms})
    subsets = (S for r in range(len(support) + 1) for S in itertools.combinations(support, r))
    return max(((sum(P0.pmf(v) - P1.pmf(v) for v in S), S) for S in subsets), key=lambda t: t[0])


def test_c9_oracle_equivalences(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    scheffe_ok = True
    for m in range(1, 13):
        w0, w1 = rng.random(m) + 0.01, rng.random(m) + 0.01
        vals = [float(v) for v in range(m)]
        P0 = Discrete(tuple(zip(vals, w0 / w0.sum())))
        P1 = Discrete(tuple(zip(vals, w1 / w1.sum())))
        A = scheffe_set(P0, P1)
        best_tv, best = _best_subset(P0, P1)
        scheffe_ok &= A.atoms == best and abs(A.tv - best_tv) <= 1e-12
    count_err = 0.0
    for n in (1, 4, 8, 12):
        for qA, alpha in ((0.3, 1.0), (0.85, 0.4)):
            b = PrivacyBudget(alpha)
            p0 = qA * b.keep_prob + (1 - qA) * (1 - b.keep_prob)
            total = 0.0
            for z in itertools.product((0, 1), repeat=n):
                zs = np.array(z)
                zeros = int(np.sum(zs == 0))
                total += p0**zeros * (1 - p0) ** (n - zeros) * debiased_count(zs, b).n_tilde0 / n
            count_err = max(count_err, abs(total - qA))
    rdp_err = 0.0
    for gamma in (2.0, 3.0, 8.0):
        for p in (0.55, 0.75, 0.9, 0.99):
            rdp_err = max(rdp_err, abs(rdp_rr_flip_prob(gamma, renyi_rr_divergence(gamma, p)).p - p))
    elapsed = time.perf_counter() - t0
    ok = scheffe_ok and count_err <= 1e-12 and rdp_err <= 1e-6 and elapsed < 30
    record(9, "oracles", ok, f"Scheffe exact={scheffe_ok}, count err={count_err:.1e}, RDP err={rdp_err:.1e}, {elapsed:.1f}s")
    assert scheffe_ok
    assert count_err <= 1e-12
    assert rdp_err <= 1e-6
    assert elapsed < 30
