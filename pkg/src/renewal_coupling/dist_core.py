"""Renewal-period laws and their derived conditional and stationary laws.

A law object represents an absolutely continuous distribution on [0, inf)
through its distribution function, density and hazard rate, and offers
moments, the moment generating function, quantiles and inverse-CDF sampling.
Three concrete inter-event families are provided:

* ``ExponentialLaw`` with everything in closed form,
* ``ExpParetoLaw`` for hazard ``rate + shape/(1+s)``, i.e. survival
  ``exp(-rate*s) * (1+s)**(-shape)``, the minimum of an exponential and a
  Pareto variable,
* ``HazardTableLaw`` for a piecewise-linear hazard given by knots, with
  constant extrapolation past the last knot.

Derived laws are ``ForwardLaw`` (remaining time to the next event given the
elapsed age) and ``StationaryBackwardLaw`` (the long-run law of the age,
density ``survival(u) / mean``).

Law objects are immutable after construction; all evaluations are pure, and
sampling takes an explicit generator and consumes exactly one uniform per
draw, so callers control reproducibility.
"""

from __future__ import annotations

from functools import cached_property
from typing import Any

import numpy as np
from scipy import integrate, special

from . import numerics
from .errors import (ConditioningError, DivergentIntegralError,
                     DivergentMGFError, DivergentMomentError, ValidationError)

ArrayLike = Any


class RenewalLaw:
    """Base class: generic numerics on top of pdf/cdf/survival primitives.

    Subclasses must implement ``pdf``, ``survival`` and
    ``mgf_divergence_rate``; everything else has a generic implementation
    driven by windowed quadrature and bisection.
    """

    # Overlap structure of (density, forward density) pairs, used by the
    # simulation harness to pick a vectorized coupling routine:
    #   "memoryless"       forward law equals the law itself,
    #   "single-crossover" the densities cross exactly once,
    #   None               nothing guaranteed, generic scan required.
    coupling_structure: str | None = None

    # -- primitives ---------------------------------------------------------

    def pdf(self, s: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def survival(self, s: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def mgf_divergence_rate(self) -> float:
        """Smallest rate at which the MGF is infinite (inf if none)."""
        raise NotImplementedError

    def spec_dict(self) -> dict:
        """JSON-ready description of the law (family + parameters)."""
        raise NotImplementedError

    # -- pointwise evaluation -----------------------------------------------

    def cdf(self, s: ArrayLike) -> ArrayLike:
        return 1.0 - self.survival(s)

    def hazard(self, s: ArrayLike) -> ArrayLike:
        f = np.asarray(self.pdf(s), dtype=float)
        surv = np.asarray(self.survival(s), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(surv > 0.0, f / np.where(surv > 0.0, surv, 1.0), np.inf)
        return out if out.ndim else float(out)

    def evaluate(self, s: float) -> tuple[float, float, float]:
        """Return (cdf, pdf, hazard) at a single point.

        Negative arguments are a domain error; where the distribution
        function has numerically reached 1 the hazard is reported as +inf.
        """
        s = float(s)
        if s < 0.0:
            raise ValueError(f"law is supported on [0, inf); got s={s!r}")
        F = float(self.cdf(s))
        lam = float(self.hazard(s)) if F < 1.0 else np.inf
        return F, float(self.pdf(s)), lam

    # -- quantiles and sampling ---------------------------------------------

    @cached_property
    def _tail_cutoff(self) -> float:
        hi = numerics.grow_bracket(
            lambda x: -float(self.survival(x)), -numerics.SURVIVAL_FLOOR,
            start=1.0, increasing=True)
        return hi

    def tail_cutoff(self) -> float:
        """Point beyond which the survival is below 1e-14 (integration stop)."""
        return self._tail_cutoff

    def quantile(self, u: ArrayLike) -> ArrayLike:
        """Inverse distribution function by bracketing bisection."""
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError("quantile argument must lie in [0, 1)")
        out = numerics.invert_monotone(self.cdf, arr, 0.0, self.tail_cutoff())
        out = np.where(arr == 0.0, 0.0, out)
        return float(out) if np.ndim(u) == 0 else out

    def isf(self, p: ArrayLike) -> ArrayLike:
        """Inverse survival function (accurate deep in the tail)."""
        arr = np.asarray(p, dtype=float)
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValueError("inverse survival argument must lie in (0, 1]")
        out = numerics.invert_monotone(self.survival, arr, 0.0,
                                       self.tail_cutoff(), increasing=False)
        out = np.where(arr == 1.0, 0.0, out)
        return float(out) if np.ndim(p) == 0 else out

    def sample(self, rng: np.random.Generator, size: int | None = None) -> ArrayLike:
        """Inverse-CDF draw(s); one uniform consumed per value."""
        return self.quantile(rng.random(size))

    # -- integral functionals -------------------------------------------------

    def moment(self, order: float) -> float:
        """E xi**order via order * integral of s**(order-1) * survival."""
        if order < 0:
            raise ValueError("moment order must be nonnegative")
        if order == 0:
            return 1.0
        try:
            val = numerics.windowed_tail_integral(
                lambda s: self.survival(s) * s ** (order - 1.0))
        except DivergentIntegralError as exc:
            raise DivergentMomentError(order, str(exc)) from exc
        return order * val

    def mean(self) -> float:
        return self._mean

    @cached_property
    def _mean(self) -> float:
        return self.moment(1.0)

    def mgf(self, rate: float) -> float:
        """E exp(rate * xi) = 1 + rate * integral of exp(rate s) survival(s)."""
        if rate < 0:
            raise ValueError("mgf rate must be nonnegative")
        if rate == 0.0:
            return 1.0
        limit = self.mgf_divergence_rate()
        if rate >= limit:
            raise DivergentMGFError(rate, limit)
        try:
            val = numerics.windowed_tail_integral(
                lambda s: np.exp(rate * s) * self.survival(s),
                first_width=max(1.0, 1.0 / max(limit - rate, 1e-12)))
        except DivergentMGFError:
            raise
        except DivergentIntegralError as exc:
            raise DivergentMGFError(rate, limit) from exc
        return 1.0 + rate * val

    # -- derived laws ---------------------------------------------------------

    def forward_law(self, elapsed: float) -> "RenewalLaw":
        """Law of the remaining time to the next event given elapsed age."""
        if elapsed == 0.0:
            return self
        return ForwardLaw(self, elapsed)

    def stationary_backward(self) -> "StationaryBackwardLaw":
        """Long-run law of the age, density survival(u)/mean."""
        return StationaryBackwardLaw(self)


class ExponentialLaw(RenewalLaw):
    """Memoryless law with constant hazard."""

    coupling_structure = "memoryless"

    def __init__(self, rate: float):
        if not rate > 0:
            raise ValueError(f"rate must be positive, got {rate!r}")
        self.rate = float(rate)

    def __repr__(self):
        return f"ExponentialLaw(rate={self.rate!r})"

    def pdf(self, s):
        return self.rate * np.exp(-self.rate * np.asarray(s, dtype=float))

    def survival(self, s):
        return np.exp(-self.rate * np.asarray(s, dtype=float))

    def cdf(self, s):
        return -np.expm1(-self.rate * np.asarray(s, dtype=float))

    def hazard(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.rate)

    def quantile(self, u):
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError("quantile argument must lie in [0, 1)")
        out = -np.log1p(-arr) / self.rate
        return float(out) if np.ndim(u) == 0 else out

    def isf(self, p):
        arr = np.asarray(p, dtype=float)
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValueError("inverse survival argument must lie in (0, 1]")
        out = -np.log(arr) / self.rate
        return float(out) if np.ndim(p) == 0 else out

    def moment(self, order):
        if order < 0:
            raise ValueError("moment order must be nonnegative")
        return float(special.gamma(order + 1.0)) / self.rate ** order

    def mgf(self, rate):
        if rate < 0:
            raise ValueError("mgf rate must be nonnegative")
        if rate >= self.rate:
            raise DivergentMGFError(rate, self.rate)
        return self.rate / (self.rate - rate)

    def mgf_divergence_rate(self):
        return self.rate

    def tail_cutoff(self):
        return -np.log(numerics.SURVIVAL_FLOOR) / self.rate

    def forward_law(self, elapsed):
        if elapsed < 0:
            raise ValueError("elapsed age must be nonnegative")
        return self  # memoryless

    def spec_dict(self):
        return {"family": "exponential", "params": {"rate": self.rate}}


class ExpParetoLaw(RenewalLaw):
    """Law with hazard rate + shape/(1+s).

    Survival factorizes as exp(-rate*s) * (1+s)**(-shape): the variable is
    the minimum of a rate-`rate` exponential and a Pareto variable with
    distribution function 1 - (1+s)**(-shape).  The hazard exceeds `rate`
    everywhere, so the MGF is finite exactly below `rate`.
    """

    coupling_structure = "single-crossover"

    def __init__(self, rate: float, shape: float):
        if not rate > 0:
            raise ValueError(f"rate must be positive, got {rate!r}")
        if not shape > 0:
            raise ValueError(f"shape must be positive, got {shape!r}")
        self.rate = float(rate)
        self.shape = float(shape)

    def __repr__(self):
        return f"ExpParetoLaw(rate={self.rate!r}, shape={self.shape!r})"

    def _log_survival(self, s):
        s = np.asarray(s, dtype=float)
        return -(self.rate * s + self.shape * np.log1p(s))

    def survival(self, s):
        return np.exp(self._log_survival(s))

    def cdf(self, s):
        return -np.expm1(self._log_survival(s))

    def hazard(self, s):
        s = np.asarray(s, dtype=float)
        return self.rate + self.shape / (1.0 + s)

    def pdf(self, s):
        return self.hazard(s) * self.survival(s)

    def quantile(self, u):
        # solve rate*s + shape*log1p(s) = -log1p(-u); the left side grows at
        # least like rate*s, which gives the bisection bracket
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError("quantile argument must lie in [0, 1)")
        y = -np.log1p(-arr)
        out = numerics.invert_monotone(
            lambda s: self.rate * s + self.shape * np.log1p(s), y,
            0.0, y / self.rate)
        out = np.where(arr == 0.0, 0.0, out)
        return float(out) if np.ndim(u) == 0 else out

    def isf(self, p):
        arr = np.asarray(p, dtype=float)
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValueError("inverse survival argument must lie in (0, 1]")
        y = -np.log(arr)
        out = numerics.invert_monotone(
            lambda s: self.rate * s + self.shape * np.log1p(s), y,
            0.0, np.maximum(y, 0.0) / self.rate)
        out = np.where(arr == 1.0, 0.0, out)
        return float(out) if np.ndim(p) == 0 else out

    def mgf_divergence_rate(self):
        return self.rate

    def tail_cutoff(self):
        y = -np.log(numerics.SURVIVAL_FLOOR)
        return float(numerics.invert_monotone(
            lambda s: self.rate * s + self.shape * np.log1p(s), y, 0.0, y / self.rate))

    def spec_dict(self):
        return {"family": "exp-pareto",
                "params": {"rate": self.rate, "shape": self.shape}}


class HazardTableLaw(RenewalLaw):
    """Law specified by hazard-rate knots with linear interpolation.

    The hazard is linear between consecutive knots and constant past the
    last knot; the cumulative hazard is therefore piecewise quadratic and
    is accumulated exactly, no quadrature involved.
    """

    def __init__(self, knots):
        pts = np.asarray(knots, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError("knots must be a nonempty list of (s, hazard) pairs")
        s, lam = pts[:, 0], pts[:, 1]
        if s[0] != 0.0:
            raise ValueError("first knot must be at s = 0")
        if np.any(np.diff(s) <= 0.0):
            raise ValueError("knot locations must be strictly increasing")
        if np.any(lam < 0.0):
            raise ValueError("hazard values must be nonnegative")
        if not lam[-1] > 0.0:
            raise ValueError("final hazard value must be positive")
        self.knot_s = s
        self.knot_rate = lam
        # exact cumulative hazard at the knots (trapezoid is exact for a
        # piecewise-linear integrand)
        self.knot_cumhaz = np.concatenate(
            [[0.0], np.cumsum(0.5 * (lam[1:] + lam[:-1]) * np.diff(s))])

    def __repr__(self):
        return f"HazardTableLaw({np.c_[self.knot_s, self.knot_rate].tolist()!r})"

    def hazard(self, s):
        s = np.asarray(s, dtype=float)
        out = np.interp(s, self.knot_s, self.knot_rate)
        return out if out.ndim else float(out)

    def cumulative_hazard(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.searchsorted(self.knot_s, s, side="right") - 1,
                      0, len(self.knot_s) - 1)
        s0 = self.knot_s[idx]
        lam0 = self.knot_rate[idx]
        lam_here = np.interp(s, self.knot_s, self.knot_rate)
        out = self.knot_cumhaz[idx] + 0.5 * (lam0 + lam_here) * (s - s0)
        return out if out.ndim else float(out)

    def survival(self, s):
        return np.exp(-self.cumulative_hazard(s))

    def cdf(self, s):
        return -np.expm1(-self.cumulative_hazard(s))

    def pdf(self, s):
        return self.hazard(s) * self.survival(s)

    def quantile(self, u):
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError("quantile argument must lie in [0, 1)")
        y = -np.log1p(-arr)
        hi = self._cumhaz_bracket(np.max(y) if arr.size else 0.0)
        out = numerics.invert_monotone(self.cumulative_hazard, y, 0.0, hi)
        out = np.where(arr == 0.0, 0.0, out)
        return float(out) if np.ndim(u) == 0 else out

    def isf(self, p):
        arr = np.asarray(p, dtype=float)
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValueError("inverse survival argument must lie in (0, 1]")
        y = -np.log(arr)
        hi = self._cumhaz_bracket(np.max(y) if arr.size else 0.0)
        out = numerics.invert_monotone(self.cumulative_hazard, y, 0.0, hi)
        out = np.where(arr == 1.0, 0.0, out)
        return float(out) if np.ndim(p) == 0 else out

    def _cumhaz_bracket(self, y: float) -> float:
        # past the table the cumulative hazard is linear with the final rate
        end = self.knot_cumhaz[-1]
        if y <= end:
            return float(self.knot_s[-1])
        return float(self.knot_s[-1] + (y - end) / self.knot_rate[-1] + 1.0)

    def tail_cutoff(self):
        return self._cumhaz_bracket(-np.log(numerics.SURVIVAL_FLOOR))

    def mgf_divergence_rate(self):
        # tail integrability is governed by the extrapolated constant hazard
        return float(self.knot_rate[-1])

    def spec_dict(self):
        return {"family": "hazard-table",
                "params": {"knots": np.c_[self.knot_s, self.knot_rate].tolist()}}


class ForwardLaw(RenewalLaw):
    """Remaining time to the next event given elapsed age ``elapsed``.

    Survival is base.survival(elapsed + s) / base.survival(elapsed); the
    quantile reduces exactly to the base inverse survival, so no extra
    bisection layer is introduced.
    """

    def __init__(self, base: RenewalLaw, elapsed: float):
        if elapsed < 0:
            raise ValueError("elapsed age must be nonnegative")
        surv = float(base.survival(elapsed))
        # survival ratios stay well conditioned down to the underflow edge,
        # so only an exactly-zero survival is unusable
        if not surv > 0.0:
            raise ConditioningError(
                f"survival is numerically zero at age {elapsed!r}; "
                "cannot condition on living past it")
        self.base = base
        self.elapsed = float(elapsed)
        self._surv_elapsed = surv

    def __repr__(self):
        return f"ForwardLaw({self.base!r}, elapsed={self.elapsed!r})"

    def survival(self, s):
        s = np.asarray(s, dtype=float)
        return self.base.survival(self.elapsed + s) / self._surv_elapsed

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return self.base.pdf(self.elapsed + s) / self._surv_elapsed

    def hazard(self, s):
        s = np.asarray(s, dtype=float)
        return self.base.hazard(self.elapsed + s)

    def quantile(self, u):
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError("quantile argument must lie in [0, 1)")
        out = self.base.isf(self._surv_elapsed * (1.0 - arr)) - self.elapsed
        out = np.maximum(out, 0.0)
        out = np.where(arr == 0.0, 0.0, out)
        return float(out) if np.ndim(u) == 0 else out

    def isf(self, p):
        arr = np.asarray(p, dtype=float)
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValueError("inverse survival argument must lie in (0, 1]")
        out = np.maximum(self.base.isf(self._surv_elapsed * arr) - self.elapsed, 0.0)
        return float(out) if np.ndim(p) == 0 else out

    def mgf_divergence_rate(self):
        return self.base.mgf_divergence_rate()

    def tail_cutoff(self):
        return max(float(self.base.isf(
            max(numerics.SURVIVAL_FLOOR * self._surv_elapsed, 1e-300)))
            - self.elapsed, 1.0)

    def forward_law(self, elapsed):
        if elapsed == 0.0:
            return self
        return ForwardLaw(self.base, self.elapsed + elapsed)

    def spec_dict(self):
        return {"family": "forward", "base": self.base.spec_dict(),
                "elapsed": self.elapsed}


class StationaryBackwardLaw(RenewalLaw):
    """Long-run law of the age: density survival(u) / mean.

    The distribution function has no closed form in general, so it is
    tabulated once on a dense grid by cumulative Simpson integration; the
    quantile is the exact inverse of that piecewise-linear table.  Moments
    and the MGF go through quadrature like any other law.
    """

    _GRID_POINTS = 2 ** 15 + 1

    def __init__(self, base: RenewalLaw):
        self.base = base
        self._base_mean = base.mean()
        if not np.isfinite(self._base_mean) or self._base_mean <= 0:
            raise ValueError("base law must have a positive finite mean")

    def __repr__(self):
        return f"StationaryBackwardLaw({self.base!r})"

    def pdf(self, s):
        return self.base.survival(s) / self._base_mean

    @cached_property
    def _table(self) -> tuple[np.ndarray, np.ndarray]:
        hi = self.base.tail_cutoff()
        grid = np.linspace(0.0, hi, self._GRID_POINTS)
        dens = self.pdf(grid)
        cum = integrate.cumulative_simpson(dens, x=grid, initial=0.0)
        cum = np.minimum.accumulate(np.minimum(cum[::-1], cum[-1]))[::-1]
        cum = np.maximum.accumulate(cum)
        return grid, cum

    def cdf(self, s):
        grid, cum = self._table
        s = np.asarray(s, dtype=float)
        out = np.interp(s, grid, cum, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    def survival(self, s):
        out = 1.0 - self.cdf(s)
        return out

    def quantile(self, u):
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError("quantile argument must lie in [0, 1)")
        grid, cum = self._table
        out = np.interp(np.minimum(arr, cum[-1]), cum, grid)
        return float(out) if np.ndim(u) == 0 else out

    def isf(self, p):
        arr = np.asarray(p, dtype=float)
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValueError("inverse survival argument must lie in (0, 1]")
        return self.quantile(np.maximum(1.0 - arr, 0.0))

    def moment(self, order):
        if order < 0:
            raise ValueError("moment order must be nonnegative")
        if order == 0:
            return 1.0
        try:
            return numerics.windowed_tail_integral(
                lambda s: s ** order * self.pdf(s))
        except DivergentIntegralError as exc:
            raise DivergentMomentError(order, str(exc)) from exc

    def mgf(self, rate):
        # integrate against the exact density (base survival over the mean),
        # not the interpolation table kept for sampling
        limit = self.mgf_divergence_rate()
        if rate >= limit:
            raise DivergentMGFError(rate, limit)
        if rate == 0.0:
            return 1.0
        return numerics.windowed_tail_integral(
            lambda s: float(np.exp(rate * s) * self.pdf(s)))

    def mgf_divergence_rate(self):
        return self.base.mgf_divergence_rate()

    def tail_cutoff(self):
        return self.base.tail_cutoff()

    def spec_dict(self):
        return {"family": "stationary-backward", "base": self.base.spec_dict()}


_FAMILIES = {"exponential", "exp-pareto", "hazard-table"}
# accepted on input for compatibility; spec_dict always emits the canonical name
_FAMILY_ALIASES = {"example": "exp-pareto"}


def law_from_spec(spec: dict) -> RenewalLaw:
    """Build a law from ``{"family": ..., "params": {...}}``.

    Raises ValidationError naming the offending field on any mismatch.
    """
    if not isinstance(spec, dict):
        raise ValidationError("law", "law spec must be a table/mapping")
    family = spec.get("family")
    family = _FAMILY_ALIASES.get(family, family)
    if family not in _FAMILIES:
        raise ValidationError(
            "law.family", f"unknown family {family!r}; "
            f"expected one of {sorted(_FAMILIES)}")
    params = spec.get("params", {})
    if not isinstance(params, dict):
        raise ValidationError("law.params", "params must be a table/mapping")
    try:
        if family == "exponential":
            return ExponentialLaw(rate=_req(params, "rate"))
        if family == "exp-pareto":
            return ExpParetoLaw(rate=_req(params, "rate"),
                              shape=_req(params, "shape"))
        return HazardTableLaw(knots=_req(params, "knots"))
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"law.params", str(exc)) from exc


def _req(params: dict, key: str):
    if key not in params:
        raise ValidationError(f"law.params.{key}", "missing required parameter")
    return params[key]
