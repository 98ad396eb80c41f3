"""Data-generating distributions, Huber mixtures, Scheffe sets and risk functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import compress
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from ldprobust.rngkit import InvalidParameterError, Stream

SCHEFFE_GRID = 2**14


class DivergentMomentError(ValueError):
    pass


class UnsupportedPairError(ValueError):
    pass


class Distribution:
    """Base class. Subclasses are frozen dataclasses and safe to share across workers."""

    kind: str = "abstract"
    continuous_on_unit = False

    def sample(self, n: int, stream: Stream) -> np.ndarray:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def median(self) -> float:
        raise NotImplementedError

    def central_moment(self, k: float) -> float:
        raise NotImplementedError

    def absolute_risk(self, t: float) -> float:
        raise NotImplementedError

    def pdf(self, x):
        raise UnsupportedPairError(f"{self.kind} has no density on [0, 1]")

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_moment_order(k: float):
    if not math.isfinite(k):
        raise DivergentMomentError(f"moment of order {k} does not exist")
    if k < 1:
        raise InvalidParameterError(f"moment order must be >= 1, got {k}")


@dataclass(frozen=True)
class Discrete(Distribution):
    atoms: tuple[tuple[float, float], ...]
    kind = "discrete"

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        if not atoms:
            raise InvalidParameterError("discrete distribution needs at least one atom")
        probs = np.array([p for _, p in atoms])
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("atom probabilities must be nonnegative and sum to 1")
        if len({v for v, _ in atoms}) != len(atoms):
            raise InvalidParameterError("atom values must be distinct")
        object.__setattr__(self, "atoms", atoms)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    def pmf(self, x: float) -> float:
        for v, p in self.atoms:
            if v == x:
                return p
        return 0.0

    def sample(self, n, stream):
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, stream.uniform(n), side="left")
        return self.values[idx]

    def mean(self):
        return float(np.dot(self.values, self.probs))

    def median(self):
        order = np.argsort(self.values)
        cdf = np.cumsum(self.probs[order])
        return float(self.values[order][np.searchsorted(cdf, 0.5 - 1e-15)])

    def central_moment(self, k):
        _check_moment_order(k)
        return float(np.dot(np.abs(self.values - self.mean()) ** k, self.probs))

    def absolute_risk(self, t):
        return float(np.dot(np.abs(self.values - t), self.probs))

    def to_dict(self):
        return {"kind": "discrete", "atoms": [list(a) for a in self.atoms]}


def bernoulli(p: float) -> Discrete:
    atoms = [(v, q) for v, q in ((0.0, 1.0 - p), (1.0, p)) if q > 0]
    return Discrete(tuple(atoms))


def point_mass(v: float) -> Discrete:
    return Discrete(((float(v), 1.0),))


def two_point_heavy(D: float, eta: float, k: float) -> Discrete:
    """Heavy-tailed two-point law: mass 1-eta at D-1 and eta at D-1+(2 eta)^(-1/k).

    Its mean lies in [-D, D] and its k-th central moment is at most 1.
    """
    if not 0 < eta < 1:
        raise InvalidParameterError(f"eta must lie in (0, 1), got {eta}")
    if k <= 1:
        raise InvalidParameterError(f"k must exceed 1, got {k}")
    far = D - 1 + (2 * eta) ** (-1.0 / k)
    return Discrete(((D - 1.0, 1.0 - eta), (far, eta)))


@dataclass(frozen=True)
class Gaussian(Distribution):
    mu: float = 0.0
    sigma: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameterError("sigma must be positive")

    def sample(self, n, stream):
        return self.mu + self.sigma * special.ndtri(stream.uniform(n))

    def mean(self):
        return self.mu

    def median(self):
        return self.mu

    def central_moment(self, k):
        _check_moment_order(k)
        return self.sigma**k * 2 ** (k / 2) * math.gamma((k + 1) / 2) / math.sqrt(math.pi)

    def absolute_risk(self, t):
        d = (t - self.mu) / self.sigma
        return self.sigma * (2 * stats.norm.pdf(d) + d * (2 * stats.norm.cdf(d) - 1))

    def to_dict(self):
        return {"kind": "gaussian", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Laplace(Distribution):
    mu: float = 0.0
    b: float = 1.0
    kind = "laplace"

    def __post_init__(self):
        if not self.b > 0:
            raise InvalidParameterError("Laplace scale b must be positive")

    def sample(self, n, stream):
        return self.mu + stream.laplace(self.b, n)

    def mean(self):
        return self.mu

    def median(self):
        return self.mu

    def central_moment(self, k):
        _check_moment_order(k)
        return self.b**k * math.gamma(k + 1)

    def absolute_risk(self, t):
        s = abs(t - self.mu)
        return s + self.b * math.exp(-s / self.b)

    def to_dict(self):
        return {"kind": "laplace", "mu": self.mu, "b": self.b}


@dataclass(frozen=True)
class Uniform(Distribution):
    a: float = 0.0
    b: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not self.b > self.a:
            raise InvalidParameterError("uniform needs a < b")

    @property
    def continuous_on_unit(self):
        return self.a >= 0 and self.b <= 1

    def sample(self, n, stream):
        return self.a + (self.b - self.a) * stream.uniform(n)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x < self.b), 1.0 / (self.b - self.a), 0.0)

    def mean(self):
        return 0.5 * (self.a + self.b)

    def median(self):
        return self.mean()

    def central_moment(self, k):
        _check_moment_order(k)
        return (0.5 * (self.b - self.a)) ** k / (k + 1)

    def absolute_risk(self, t):
        a, b = self.a, self.b
        if t <= a or t >= b:
            return abs(t - self.mean())
        return ((t - a) ** 2 + (b - t) ** 2) / (2 * (b - a))

    def to_dict(self):
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Beta(Distribution):
    """Beta(a, b) on [0, 1]; beta(2, 1) is the density 2x."""

    a: float = 1.0
    b: float = 1.0
    kind = "beta"
    continuous_on_unit = True

    def sample(self, n, stream):
        return special.betaincinv(self.a, self.b, stream.uniform(n))

    def pdf(self, x):
        return stats.beta.pdf(x, self.a, self.b)

    def mean(self):
        return self.a / (self.a + self.b)

    def median(self):
        return float(special.betaincinv(self.a, self.b, 0.5))

    def central_moment(self, k):
        _check_moment_order(k)
        return _quad_moment(self.pdf, self.mean(), k, 0.0, 1.0)

    def absolute_risk(self, t):
        return _quad_abs_risk(self.pdf, t, 0.0, 1.0)

    def to_dict(self):
        return {"kind": "beta", "a": self.a, "b": self.b}


def trig_basis(j: int, x):
    """Trigonometric orthonormal basis of L2[0, 1], indexed from 1."""
    if j < 1:
        raise InvalidParameterError(f"trigonometric basis index must be >= 1, got {j}")
    x = np.asarray(x, dtype=float)
    if j == 1:
        out = np.ones_like(x)
    elif j % 2 == 0:
        out = math.sqrt(2) * np.cos(2 * math.pi * (j // 2) * x)
    else:
        out = math.sqrt(2) * np.sin(2 * math.pi * (j // 2) * x)
    return out if out.ndim else float(out)


def trig_design(xs, k: int) -> np.ndarray:
    """Matrix [phi_j(x_i)] of shape (len(xs), k)."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty((xs.size, k))
    out[:, 0] = 1.0
    for j in range(2, k + 1):
        m = j // 2
        arg = 2 * math.pi * m * xs
        out[:, j - 1] = math.sqrt(2) * (np.cos(arg) if j % 2 == 0 else np.sin(arg))
    return out


@dataclass(frozen=True)
class SobolevTrig(Distribution):
    """Density 1 + sum_{j>=2} theta_j phi_j on [0, 1].

    ``coefs`` holds theta_1..theta_m with theta_1 = 1 (the density integrates to one).
    When ``beta`` and ``radius`` are given the ellipsoid bound
    sum_j j^(2 beta) theta_j^2 <= radius^2 is enforced.
    """

    coefs: tuple[float, ...]
    beta: Optional[float] = None
    radius: Optional[float] = None
    kind = "sobolev_trig"
    continuous_on_unit = True

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefs)
        if not coefs or abs(coefs[0] - 1.0) > 1e-12:
            raise InvalidParameterError("theta_1 must equal 1 for a probability density")
        object.__setattr__(self, "coefs", coefs)
        if self.beta is not None and self.radius is not None:
            if self.ellipsoid_norm(self.beta) > self.radius**2 + 1e-12:
                raise InvalidParameterError("coefficients violate the Sobolev ellipsoid bound")
        grid = (np.arange(SCHEFFE_GRID) + 0.5) / SCHEFFE_GRID
        if np.min(self.pdf(grid)) < 0:
            raise InvalidParameterError("trigonometric density is negative somewhere on [0, 1]")

    def ellipsoid_norm(self, beta: float) -> float:
        j = np.arange(1, len(self.coefs) + 1)
        return float(np.sum(j ** (2 * beta) * np.square(self.coefs)))

    @property
    def sup_bound(self) -> float:
        return 1.0 + math.sqrt(2) * float(np.sum(np.abs(self.coefs[1:])))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = trig_design(x.ravel(), len(self.coefs)) @ np.asarray(self.coefs)
        inside = (x.ravel() >= 0) & (x.ravel() <= 1)
        out = np.where(inside, out, 0.0).reshape(x.shape)
        return out if out.ndim else float(out)

    def sample(self, n, stream):
        # rejection from the uniform proposal under the envelope sup_bound
        out = np.empty(0)
        bound = self.sup_bound
        while out.size < n:
            need = n - out.size
            m = max(16, int(1.2 * need * bound))
            x = stream.uniform(m)
            u = stream.uniform(m)
            out = np.concatenate([out, x[u * bound <= self.pdf(x)]])
        return out[:n]

    def mean(self):
        return float(integrate.quad(lambda x: x * self.pdf(x), 0, 1, limit=200)[0])

    def median(self):
        from scipy.optimize import brentq

        return brentq(lambda t: integrate.quad(self.pdf, 0, t, limit=200)[0] - 0.5, 0.0, 1.0, xtol=1e-12)

    def central_moment(self, k):
        _check_moment_order(k)
        return _quad_moment(self.pdf, self.mean(), k, 0.0, 1.0)

    def absolute_risk(self, t):
        return _quad_abs_risk(self.pdf, t, 0.0, 1.0)

    def to_dict(self):
        d = {"kind": "sobolev_trig", "coefs": list(self.coefs)}
        if self.beta is not None:
            d["beta"] = self.beta
        if self.radius is not None:
            d["radius"] = self.radius
        return d

    @classmethod
    def random(cls, beta: float, radius: float, m: int, stream: Stream, max_tries: int = 1000) -> "SobolevTrig":
        """Draw theta_2..theta_m uniformly inside the ellipsoid slice left after theta_1 = 1.

        Draws producing a negative density on the grid are rejected and redrawn.
        """
        if radius <= 1:
            raise InvalidParameterError("radius must exceed 1 since theta_1 = 1 already uses 1 of the budget")
        j = np.arange(2, m + 1)
        budget = radius**2 - 1.0
        for _ in range(max_tries):
            g = stream.normal(m - 1)
            direction = g / np.linalg.norm(g)
            rad = math.sqrt(budget) * stream.uniform() ** (1.0 / (m - 1))
            theta = rad * direction / j**beta
            try:
                return cls((1.0,) + tuple(theta), beta, radius)
            except InvalidParameterError:
                continue
        raise InvalidParameterError("could not draw a nonnegative Sobolev density")


def _quad_moment(pdf, mu, k, a, b):
    val = integrate.quad(lambda x: abs(x - mu) ** k * pdf(x), a, b, points=[mu], limit=200, epsabs=1e-13)[0]
    return float(val)


def _quad_abs_risk(pdf, t, a, b):
    pts = [t] if a < t < b else None
    return float(integrate.quad(lambda x: abs(x - t) * pdf(x), a, b, points=pts, limit=200, epsabs=1e-13)[0])


@dataclass(frozen=True)
class ContaminatedSource:
    """Huber mixture (1 - eps) P + eps G."""

    inlier: Distribution
    contaminant: Optional[Distribution] = None
    eps: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise InvalidParameterError(f"eps must lie in [0, 1], got {self.eps}")
        if self.eps > 0 and self.contaminant is None:
            raise InvalidParameterError("eps > 0 needs a contaminant distribution")


def sample_contaminated(src: ContaminatedSource, n: int, stream: Stream) -> np.ndarray:
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    flags = stream.uniform(n) < src.eps
    out = src.inlier.sample(n, stream)
    n_bad = int(flags.sum())
    if n_bad:
        out = np.asarray(out, dtype=float).copy()
        out[flags] = src.contaminant.sample(n_bad, stream)
    return out


@dataclass(frozen=True)
class ScheffeEvent:
    """A = {x : p0(x) > p1(x)} with its masses under both hypotheses.

    For discrete pairs ``atoms`` lists the values in A. For densities on [0, 1]
    ``mask`` flags the grid cells (midpoints of ``SCHEFFE_GRID`` equal cells) in A.
    """

    p0_mass: float
    p1_mass: float
    atoms: Optional[tuple[float, ...]] = None
    mask: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def tv(self) -> float:
        return self.p0_mass - self.p1_mass

    def contains(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if self.atoms is not None:
            return np.isin(xs, np.asarray(self.atoms, dtype=float))
        cells = np.clip(np.floor(xs * self.mask.size).astype(np.int64), 0, self.mask.size - 1)
        inside = (xs >= 0) & (xs <= 1)
        return inside & self.mask[cells]


def scheffe_set(P0: Distribution, P1: Distribution) -> ScheffeEvent:
    if isinstance(P0, Discrete) and isinstance(P1, Discrete):
        support = sorted({v for v, _ in P0.atoms} | {v for v, _ in P1.atoms})
        diffs = [P0.pmf(v) - P1.pmf(v) for v in support]
        chosen = [d > 0 for d in diffs]
        atoms = tuple(compress(support, chosen))
        p0 = sum(P0.pmf(v) for v in atoms)
        p1 = sum(P1.pmf(v) for v in atoms)
        return ScheffeEvent(p0, p1, atoms=atoms)
    if P0.continuous_on_unit and P1.continuous_on_unit:
        h = 1.0 / SCHEFFE_GRID
        grid = (np.arange(SCHEFFE_GRID) + 0.5) * h
        f0, f1 = P0.pdf(grid), P1.pdf(grid)
        mask = f0 > f1
        return ScheffeEvent(float(f0[mask].sum() * h), float(f1[mask].sum() * h), mask=mask)
    raise UnsupportedPairError(f"cannot build a Scheffe set for {P0.kind} vs {P1.kind}")


def central_moment(d: Distribution, k: float) -> float:
    return d.central_moment(k)


def absolute_risk(d: Distribution, t: float) -> float:
    return d.absolute_risk(t)


_KINDS = {
    "gaussian": lambda s: Gaussian(float(s.get("mu", 0.0)), float(s.get("sigma", 1.0))),
    "laplace": lambda s: Laplace(float(s.get("mu", 0.0)), float(s.get("b", 1.0))),
    "uniform": lambda s: Uniform(float(s.get("a", 0.0)), float(s.get("b", 1.0))),
    "beta": lambda s: Beta(float(s["a"]), float(s["b"])),
    "point_mass": lambda s: point_mass(float(s["v"])),
    "bernoulli": lambda s: bernoulli(float(s["p"])),
    "discrete": lambda s: Discrete(tuple(tuple(a) for a in s["atoms"])),
    "two_point_heavy": lambda s: two_point_heavy(float(s["D"]), float(s["eta"]), float(s["k"])),
    "sobolev_trig": lambda s: SobolevTrig(tuple(s["coefs"]), s.get("beta"), s.get("radius")),
}


def distribution_from_dict(spec: dict) -> Distribution:
    """Build a distribution from its JSON form, e.g. ``{"kind": "gaussian", "mu": 0, "sigma": 1}``."""
    try:
        kind = spec["kind"]
    except (KeyError, TypeError):
        raise InvalidParameterError(f"distribution spec needs a 'kind': {spec!r}") from None
    if kind not in _KINDS:
        raise InvalidParameterError(f"unknown distribution kind {kind!r}; expected one of {sorted(_KINDS)}")
    try:
        return _KINDS[kind](spec)
    except KeyError as e:
        raise InvalidParameterError(f"distribution {kind!r} is missing parameter {e}") from None
