"""Private projection density estimators on [0, 1].

Two variants:

* trigonometric basis, each sample's coefficient vector released through the
  l-infinity ball mechanism (corners of {-B, B}^k), tuned for squared-L2 loss;
* periodized Haar wavelets with additive Laplace noise, tuned for sup-norm loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from ldprobust.models import Distribution, trig_basis, trig_design
from ldprobust.rngkit import InvalidParameterError, PrivacyBudget, Stream

B0_TRIG = math.sqrt(2.0)
LOSS_GRID = 2**12
MAX_CORNER_DIM = 20


class InvalidIndexError(ValueError):
    pass


def trig_basis_eval(j: int, x):
    return trig_basis(j, x)


@lru_cache(maxsize=None)
def cd_constant(d: int) -> float:
    """Constant C_d = 2^(d-1) / binom(d-1, floor((d-1)/2)) making the corner mechanism unbiased.

    Matches the half-weighted tie rule used by :func:`duchi_linf_privatize`.
    """
    if d < 1:
        raise InvalidParameterError(f"dimension must be >= 1, got {d}")
    return 2.0 ** (d - 1) / math.comb(d - 1, (d - 1) // 2)


@lru_cache(maxsize=None)
def cd_constant_tie_inclusive(d: int) -> float:
    """Constant for the variant whose two half-cubes both contain the tie corners.

    That variant is unbiased but, for even d, only log(1 + e^alpha)-private; it is
    kept for the audit tests that demonstrate the failure.
    """
    if d < 1:
        raise InvalidParameterError(f"dimension must be >= 1, got {d}")
    if d % 2 == 1:
        return cd_constant(d)
    return (2**d + math.comb(d, d // 2)) / (2.0 * math.comb(d - 1, d // 2))


@dataclass(frozen=True)
class TrigConfig:
    k_trunc: int
    alpha: float
    B0: float = B0_TRIG

    def __post_init__(self):
        if self.k_trunc < 1:
            raise InvalidParameterError(f"k_trunc must be >= 1, got {self.k_trunc}")
        PrivacyBudget(self.alpha)

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.alpha)

    @property
    def Cd(self) -> float:
        return cd_constant(self.k_trunc)

    @property
    def B(self) -> float:
        return self.B0 * self.Cd * self.budget.debias


def default_trig_k(n: int, alpha: float, beta: float, eps: float = 0.0) -> int:
    """k = max(1, round(min((n alpha^2)^(1/(2 beta + 2)), eps^(-2/(2 beta + 1)))))."""
    k = (n * alpha**2) ** (1.0 / (2 * beta + 2))
    if eps > 0:
        k = min(k, eps ** (-2.0 / (2 * beta + 1)))
    return max(1, int(round(k)))


def default_haar_level(n: int, alpha: float, beta: float, eps: float = 0.0) -> int:
    """J with 2^J closest (in log scale) to min((log(n a^2)/(n a^2))^(-1/(2 beta + 1)), eps^(-2/(2 beta + 1)))."""
    na2 = n * alpha**2
    target = (math.log(na2) / na2) ** (-1.0 / (2 * beta + 1)) if na2 > math.e else 1.0
    if eps > 0:
        target = min(target, eps ** (-2.0 / (2 * beta + 1)))
    return max(0, int(round(math.log2(max(target, 1.0)))))


def duchi_linf_privatize(v, cfg: TrigConfig, stream: Stream) -> np.ndarray:
    """Release one or many vectors with sup-norm <= B0 as random corners of {-B, B}^d.

    ``v`` is a vector of length d or an (n, d) matrix with one vector per row.
    Step 1 rounds each coordinate to +-B0 keeping its mean; step 2 picks a corner
    uniformly from the half-cube agreeing (T = 1) or disagreeing (T = 0) with the
    rounded vector, so that E[Z | v] = v. Corners orthogonal to the rounded
    vector (even d only) are accepted with probability 1/2 under either coin,
    which keeps every output probability within a factor e^alpha.
    """
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    n, d = V.shape
    if d != cfg.k_trunc:
        raise InvalidParameterError(f"vector length {d} does not match k_trunc={cfg.k_trunc}")
    if d > MAX_CORNER_DIM:
        raise InvalidParameterError(f"corner sampling supports d <= {MAX_CORNER_DIM}, got {d}")
    if np.any(np.abs(V) > cfg.B0 * (1 + 1e-12)):
        raise InvalidParameterError("input vector exceeds the sup-norm bound B0")
    plus = stream.uniform((n, d)) <= 0.5 + V / (2 * cfg.B0)
    vt = np.where(plus, 1, -1).astype(np.int64)
    agree = stream.bernoulli(cfg.budget.keep_prob, n).astype(bool)
    z = _sample_corners(vt, agree, stream)
    out = cfg.B * z
    return out[0] if single else out


def _sample_corners(vt: np.ndarray, agree: np.ndarray, stream: Stream) -> np.ndarray:
    """Sign vectors z with <z, vt> > 0 where agree, < 0 otherwise, ties at half weight.

    Rejection from the uniform law on the cube; each round accepts at least half
    of the proposals in expectation.
    """
    n, d = vt.shape
    z = np.zeros((n, d), dtype=np.int64)
    todo = np.arange(n)
    while todo.size:
        u = stream.uniform((todo.size, d + 1))
        prop = np.where(u[:, :d] <= 0.5, 1, -1)
        dot = np.einsum("ij,ij->i", prop, vt[todo])
        ok = np.where(agree[todo], dot > 0, dot < 0) | ((dot == 0) & (u[:, d] <= 0.5))
        z[todo[ok]] = prop[ok]
        todo = todo[~ok]
    return z


def corner_pmf(v, cfg: TrigConfig, ties: str = "half") -> tuple[np.ndarray, np.ndarray]:
    """Exact output law of :func:`duchi_linf_privatize` for one input vector.

    Returns ``(corners, probs)`` with corners as a (2^d, d) array of +-B values.
    Enumerates all 2^d rounded vectors and both values of the agreement coin.
    ``ties="both"`` gives the law of the tie-inclusive variant instead, scaled
    by :func:`cd_constant_tie_inclusive`.
    """
    v = np.asarray(v, dtype=float)
    d = v.size
    signs = _all_signs(d)
    p_plus = 0.5 + v / (2 * cfg.B0)
    # P(vt | v) for every sign pattern vt
    p_vt = np.prod(np.where(signs > 0, p_plus, 1 - p_plus), axis=1)
    dots = signs @ signs.T  # dots[a, b] = <corner a, vt b>
    tie_weight = {"half": 0.5, "both": 1.0}[ties]
    pos = (dots > 0) + tie_weight * (dots == 0)
    neg = (dots < 0) + tie_weight * (dots == 0)
    keep = cfg.budget.keep_prob
    per_vt = keep * pos / pos.sum(axis=0) + (1 - keep) * neg / neg.sum(axis=0)
    probs = per_vt @ p_vt
    B = cfg.B if ties == "half" else cfg.B0 * cd_constant_tie_inclusive(d) * cfg.budget.debias
    return B * signs.astype(float), probs


@lru_cache(maxsize=None)
def _all_signs_cached(d: int) -> np.ndarray:
    grid = np.array(np.meshgrid(*([[-1, 1]] * d), indexing="ij")).reshape(d, -1).T
    grid.setflags(write=False)
    return grid


def _all_signs(d: int) -> np.ndarray:
    return _all_signs_cached(d)


@dataclass
class DensityEstimate:
    """Linear combination of basis functions on [0, 1]."""

    basis: str
    coefs: np.ndarray
    level: Optional[int] = None
    sigma: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        if self.basis == "trig":
            vals = trig_design(flat, self.coefs.size) @ self.coefs
        elif self.basis == "haar":
            vals = haar_design(flat, self.level) @ self.coefs
        else:
            raise InvalidParameterError(f"unknown basis {self.basis!r}")
        vals = vals.reshape(x.shape)
        return vals if vals.ndim else float(vals)

    def on_grid(self, m: int = LOSS_GRID) -> np.ndarray:
        if m not in self._cache:
            self._cache[m] = self(loss_grid(m))
        return self._cache[m]

    def scaled(self, c: float) -> "DensityEstimate":
        return DensityEstimate(self.basis, c * self.coefs, self.level, self.sigma)


def trig_density_estimate(xs, cfg: TrigConfig, stream: Stream) -> DensityEstimate:
    """Average privatized basis vectors and expand them in the trigonometric basis."""
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise InvalidParameterError("need at least one sample")
    if np.any((xs < 0) | (xs > 1)):
        raise InvalidParameterError("trigonometric density estimation needs samples in [0, 1]")
    z = duchi_linf_privatize(trig_design(xs, cfg.k_trunc), cfg, stream)
    return DensityEstimate("trig", np.atleast_2d(z).mean(axis=0))


# --- Haar wavelets ---------------------------------------------------------

HAAR_A = 1
HAAR_PSI_SUP = 1.0


def haar_eval(j: int, k: int, x):
    """Periodized Haar function psi_jk on [0, 1]; j = -1 is the father wavelet."""
    x = np.asarray(x, dtype=float)
    if j == -1:
        if k != 0:
            raise InvalidIndexError(f"father wavelet has only shift 0, got {k}")
        out = np.where((x >= 0) & (x <= 1), 1.0, 0.0)
    else:
        if j < -1 or not 0 <= k < 2**j:
            raise InvalidIndexError(f"shift {k} out of range for level {j}")
        t = 2.0**j * x - k
        out = 2.0 ** (j / 2) * np.where((t >= 0) & (t < 0.5), 1.0, np.where((t >= 0.5) & (t < 1), -1.0, 0.0))
        # periodized: x = 1 is identified with x = 0
        if k == 0:
            out = np.where(x == 1.0, 2.0 ** (j / 2), out)
    return out if out.ndim else float(out)


def haar_index(J: int) -> list[tuple[int, int]]:
    """Coefficient ordering: (-1, 0), then (j, k) for j = 0..J and k = 0..2^j - 1."""
    return [(-1, 0)] + [(j, k) for j in range(J + 1) for k in range(2**j)]


def haar_design(xs, J: int) -> np.ndarray:
    """Matrix [psi_jk(x_i)] of shape (len(xs), 2^(J+1)) in :func:`haar_index` order.

    Each row has one nonzero entry per level.
    """
    xs = np.asarray(xs, dtype=float)
    m = xs.size
    out = np.zeros((m, 2 ** (J + 1)))
    out[:, 0] = 1.0
    xw = np.where(xs >= 1.0, 0.0, xs)  # periodize the right end point
    for j in range(J + 1):
        t = xw * 2**j
        k = np.clip(np.floor(t).astype(np.int64), 0, 2**j - 1)
        sign = np.where(t - k < 0.5, 1.0, -1.0)
        out[np.arange(m), 2**j + k] = 2.0 ** (j / 2) * sign
    return out


def haar_sigma_constant(A: float = HAAR_A, psi_sup: float = HAAR_PSI_SUP) -> float:
    """C = (8 ceil(A) + 4) * ||psi||_inf * sqrt(2) / (sqrt(2) - 1)."""
    return (8 * math.ceil(A) + 4) * psi_sup * math.sqrt(2) / (math.sqrt(2) - 1)


def haar_l1_sensitivity(J: int) -> float:
    """Largest l1 distance between two Haar coefficient vectors: 2 * sum_{j=0..J} 2^(j/2)."""
    return 2.0 * sum(2.0 ** (j / 2) for j in range(J + 1))


def haar_sigma(J: int, alpha: float, tight: bool = False) -> float:
    """Laplace scale for the wavelet release.

    The default is C * 2^(J/2) / alpha. ``tight=True`` uses the exact Haar l1
    sensitivity instead (smaller, same order in J).
    """
    PrivacyBudget(alpha)
    if tight:
        return haar_l1_sensitivity(J) / alpha
    return haar_sigma_constant() * 2.0 ** (J / 2) / alpha


def wavelet_density_estimate(xs, J: int, alpha: float, stream: Stream, tight: bool = False) -> DensityEstimate:
    xs = np.asarray(xs, dtype=float)
    if J < 0:
        raise InvalidParameterError(f"level J must be >= 0, got {J}")
    if xs.size == 0:
        raise InvalidParameterError("need at least one sample")
    if np.any((xs < 0) | (xs > 1)):
        raise InvalidParameterError("wavelet density estimation needs samples in [0, 1]")
    sigma = haar_sigma(J, alpha, tight)
    design = haar_design(xs, J)
    noisy = design + sigma * stream.laplace(1.0, design.shape)
    return DensityEstimate("haar", noisy.mean(axis=0), level=J, sigma=sigma)


# --- losses ----------------------------------------------------------------


def loss_grid(m: int = LOSS_GRID) -> np.ndarray:
    return (np.arange(m) + 0.5) / m


def density_loss(est, truth, loss: str = "L2sq", m: int = LOSS_GRID) -> float:
    """Squared L2 (Riemann sum) or sup-norm (grid max) distance on m cell midpoints.

    ``est`` may be a :class:`DensityEstimate` or any callable; ``truth`` a
    distribution with a density or a callable.
    """
    x = loss_grid(m)
    f_est = est.on_grid(m) if isinstance(est, DensityEstimate) else np.asarray(est(x), dtype=float)
    f_true = truth.pdf(x) if isinstance(truth, Distribution) else np.asarray(truth(x), dtype=float)
    diff = f_est - f_true
    if loss == "L2sq":
        return float(np.mean(diff**2))
    if loss == "Linf":
        return float(np.max(np.abs(diff)))
    raise InvalidParameterError(f"unknown loss {loss!r}; expected 'L2sq' or 'Linf'")
