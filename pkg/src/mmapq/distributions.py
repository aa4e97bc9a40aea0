"""Concrete distribution families for service times, sojourns and resources.

Every family has a closed-form CDF, mean and Laplace-Stieltjes transform,
so the analytic engine never needs numerical transforms of the laws
themselves.  CDFs are right-continuous (``P(X <= t)``); ``cdf_left`` gives
``P(X < t)`` and is used wherever a jump has to be handled explicitly.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import optimize, special, stats

from .errors import BadDistribution

FAMILIES = ("deterministic", "exponential", "erlang", "hyperexponential", "uniform")

_PARAMS = {
    "deterministic": ("value",),
    "exponential": ("rate",),
    "erlang": ("shape", "rate"),
    "hyperexponential": ("probs", "rates"),
    "uniform": ("low", "high"),
}


def _positive(name, x):
    if not (isinstance(x, (int, float)) and math.isfinite(x) and x > 0):
        raise BadDistribution(f"{name} must be a positive finite number, got {x!r}")
    return float(x)


@dataclass(frozen=True)
class DistributionSpec:
    """A nonnegative random variable from one of :data:`FAMILIES`.

    Build instances with :func:`make_distribution` or the family helpers
    (:func:`exponential`, :func:`erlang`, ...); the constructor validates
    the parameters and raises :class:`BadDistribution` on violation.
    """

    family: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BadDistribution(f"unknown family {self.family!r}")
        expected = set(_PARAMS[self.family])
        got = set(self.params)
        if got != expected:
            raise BadDistribution(
                f"{self.family} expects parameters {sorted(expected)}, got {sorted(got)}"
            )
        p = dict(self.params)
        if self.family == "deterministic":
            p["value"] = _positive("value", p["value"])
        elif self.family == "exponential":
            p["rate"] = _positive("rate", p["rate"])
        elif self.family == "erlang":
            shape = p["shape"]
            if isinstance(shape, bool) or not isinstance(shape, (int, float)):
                raise BadDistribution(f"erlang shape must be an integer, got {shape!r}")
            if shape != int(shape) or shape < 1:
                raise BadDistribution(f"erlang shape must be a positive integer, got {shape!r}")
            p["shape"] = int(shape)
            p["rate"] = _positive("rate", p["rate"])
        elif self.family == "hyperexponential":
            probs = tuple(float(x) for x in p["probs"])
            rates = tuple(_positive("rate", x) for x in p["rates"])
            if len(probs) == 0 or len(probs) != len(rates):
                raise BadDistribution("hyperexponential needs equally many probs and rates")
            if any(x < 0 for x in probs) or abs(sum(probs) - 1.0) > 1e-10:
                raise BadDistribution(f"hyperexponential probs must be a probability vector, got {probs}")
            p["probs"], p["rates"] = probs, rates
        elif self.family == "uniform":
            low, high = float(p["low"]), float(p["high"])
            if not (0.0 <= low < high < math.inf):
                raise BadDistribution(f"uniform needs 0 <= low < high, got ({low}, {high})")
            p["low"], p["high"] = low, high
        object.__setattr__(self, "params", p)

    # -- distribution functions -------------------------------------------

    def cdf(self, t):
        """Right-continuous distribution function ``P(X <= t)``."""
        t = np.asarray(t, dtype=float)
        p = self.params
        f = self.family
        if f == "deterministic":
            out = (t >= p["value"]).astype(float)
        elif f == "exponential":
            out = -np.expm1(-p["rate"] * np.maximum(t, 0.0))
        elif f == "erlang":
            out = special.gammainc(p["shape"], p["rate"] * np.maximum(t, 0.0))
        elif f == "hyperexponential":
            tt = np.maximum(t, 0.0)[..., None]
            out = np.sum(np.asarray(p["probs"]) * -np.expm1(-np.asarray(p["rates"]) * tt), axis=-1)
        else:
            out = np.clip((t - p["low"]) / (p["high"] - p["low"]), 0.0, 1.0)
        return out

    def cdf_left(self, t):
        """Left limit ``P(X < t)``; differs from :meth:`cdf` only at atoms."""
        if self.family == "deterministic":
            t = np.asarray(t, dtype=float)
            return (t > self.params["value"]).astype(float)
        return self.cdf(t)

    def survival(self, t):
        return 1.0 - self.cdf(t)

    def survival_left(self, t):
        return 1.0 - self.cdf_left(t)

    @property
    def mean(self) -> float:
        p = self.params
        f = self.family
        if f == "deterministic":
            return p["value"]
        if f == "exponential":
            return 1.0 / p["rate"]
        if f == "erlang":
            return p["shape"] / p["rate"]
        if f == "hyperexponential":
            return float(sum(q / r for q, r in zip(p["probs"], p["rates"])))
        return 0.5 * (p["low"] + p["high"])

    def lst(self, s):
        """Laplace-Stieltjes transform ``E[exp(-s X)]``; accepts complex ``s``."""
        s = np.asarray(s)
        p = self.params
        f = self.family
        if f == "deterministic":
            return np.exp(-s * p["value"])
        if f == "exponential":
            return p["rate"] / (p["rate"] + s)
        if f == "erlang":
            return (p["rate"] / (p["rate"] + s)) ** p["shape"]
        if f == "hyperexponential":
            ss = s[..., None]
            rates = np.asarray(p["rates"])
            return np.sum(np.asarray(p["probs"]) * rates / (rates + ss), axis=-1)
        low, width = p["low"], p["high"] - p["low"]
        ws = s * width
        small = np.abs(ws) < 1e-8
        safe = np.where(small, 1.0, ws)
        ratio = np.where(small, 1.0 - ws / 2.0, -np.expm1(-safe) / safe)
        return np.exp(-s * low) * ratio

    def atoms(self) -> tuple[float, ...]:
        """Locations of jumps of the CDF."""
        if self.family == "deterministic":
            return (self.params["value"],)
        return ()

    def tail_point(self, eps: float = 1e-10) -> float:
        """Smallest ``t`` with ``P(X > t) <= eps``."""
        p = self.params
        f = self.family
        if f == "deterministic":
            return p["value"]
        if f == "exponential":
            return math.log(1.0 / eps) / p["rate"]
        if f == "erlang":
            return float(stats.gamma.isf(eps, a=p["shape"], scale=1.0 / p["rate"]))
        if f == "uniform":
            return p["high"]
        hi = math.log(1.0 / eps) / min(p["rates"])
        return float(optimize.brentq(lambda t: float(self.survival(t)) - eps, 0.0, hi))

    # -- sampling ---------------------------------------------------------

    def sampler(self, rng):
        """Return a zero-argument callable drawing from this law with ``rng``.

        ``rng`` is a :class:`random.Random` instance.
        """
        p = self.params
        f = self.family
        if f == "deterministic":
            value = p["value"]
            return lambda: value
        if f == "exponential":
            rate = p["rate"]
            return lambda: rng.expovariate(rate)
        if f == "erlang":
            shape, scale = p["shape"], 1.0 / p["rate"]
            return lambda: rng.gammavariate(shape, scale)
        if f == "hyperexponential":
            cum = list(np.cumsum(p["probs"]))
            cum[-1] = 1.0
            rates = p["rates"]

            def draw():
                return rng.expovariate(rates[bisect.bisect_right(cum, rng.random())])

            return draw
        low, high = p["low"], p["high"]
        return lambda: rng.uniform(low, high)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family}
        for k in _PARAMS[self.family]:
            v = self.params[k]
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def sample(dist: DistributionSpec, rng) -> float:
    """Draw one value of ``dist`` from the ``random.Random`` stream ``rng``."""
    return dist.sampler(rng)()


def make_distribution(spec: Mapping[str, Any]) -> DistributionSpec:
    """Build a distribution from a ``{"family": ..., <params>}`` mapping."""
    if isinstance(spec, DistributionSpec):
        return spec
    if not isinstance(spec, Mapping) or "family" not in spec:
        raise BadDistribution(f"distribution must be a mapping with a 'family' key, got {spec!r}")
    params = {k: v for k, v in spec.items() if k != "family"}
    return DistributionSpec(spec["family"], params)


def deterministic(value):
    return DistributionSpec("deterministic", {"value": value})


def exponential(rate):
    return DistributionSpec("exponential", {"rate": rate})


def erlang(shape, rate):
    return DistributionSpec("erlang", {"shape": shape, "rate": rate})


def hyperexponential(probs, rates):
    return DistributionSpec("hyperexponential", {"probs": tuple(probs), "rates": tuple(rates)})


def uniform(low, high):
    return DistributionSpec("uniform", {"low": low, "high": high})
