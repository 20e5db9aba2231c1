"""Certified bounds on the coincidence epoch and total-variation convergence.

From a renewal law and an age threshold the engine derives

* the second-to-first moment ratio, which bounds the mean stationary age
  (Lorden's inequality),
* a lower bound on the probability that the partner process shows an age
  below the threshold when the leading process renews,
* the infimum, over ages up to the threshold, of the density overlap between
  a fresh renewal period and one observed from that age,

and multiplies the last two into a per-attempt coincidence probability.
Attempts recur after geometrically distributed failures, which gives closed
bounds on moments and exponential moments of the epoch at which the two
processes first coincide.  Integrating those bounds against the stationary
age law yields explicit, certified total-variation convergence curves.

Everything here is deterministic; Monte Carlo validation of the same
quantities lives in the simulation harness.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import optimize, special

from . import numerics
from .coupling_kernel import Minorant, overlap
from .dist_core import ExpParetoLaw, RenewalLaw
from .errors import (DivergentIntegralError, DivergentMGFError,
                     DivergentSeriesError, NoCouplingPossibleError,
                     NoExponentialRateError, RateInadmissibleError,
                     ThresholdTooSmallError)

DEFAULT_OVERLAP_GRID = 256
DEFAULT_RESIDUAL_GRID = 33
SERIES_TOL = 1e-12


@dataclass(frozen=True)
class CouplingParams:
    """Inputs of the geometric-recursion bounds, all certified directions.

    attempt_success underestimates the true per-attempt coincidence
    probability, so attempt_failure overestimates the failure probability;
    every bound built from these is conservative.
    """

    threshold: float
    lorden_ratio: float
    age_prob: float
    overlap_floor: float
    attempt_success: float
    attempt_failure: float

    def __post_init__(self):
        if not self.threshold > self.lorden_ratio:
            raise ThresholdTooSmallError(self.threshold, self.lorden_ratio)
        if not 0.0 < self.age_prob <= 1.0:
            raise ValueError(f"age probability {self.age_prob!r} outside (0, 1]")
        if not 0.0 < self.overlap_floor <= 1.0:
            raise ValueError(
                f"overlap floor {self.overlap_floor!r} outside (0, 1]")
        if not 0.0 <= self.attempt_failure < 1.0:
            raise ValueError(
                f"failure probability {self.attempt_failure!r} outside [0, 1)")


class RateLimit(NamedTuple):
    rate: float
    margin: float


def lorden_ratio(law: RenewalLaw) -> float:
    """Second moment over first moment: bounds the mean age at any time."""
    return law.moment(2) / law.mean()


def default_threshold(law: RenewalLaw) -> float:
    """Twice the Lorden ratio, putting the age probability at one half."""
    return 2.0 * lorden_ratio(law)


def coupling_params(law: RenewalLaw, threshold: float,
                    grid_size: int = DEFAULT_OVERLAP_GRID) -> CouplingParams:
    """Assemble the per-attempt success probability for a threshold.

    Raises ThresholdTooSmallError when the threshold does not exceed the
    Lorden ratio (the age probability bound would be vacuous).
    """
    ratio = lorden_ratio(law)
    if threshold <= ratio:
        raise ThresholdTooSmallError(threshold, ratio)
    age_prob = 1.0 - ratio / threshold
    floor = overlap_floor(law, threshold, grid_size)
    success = age_prob * floor
    return CouplingParams(threshold=float(threshold), lorden_ratio=ratio,
                          age_prob=age_prob, overlap_floor=floor,
                          attempt_success=success,
                          attempt_failure=1.0 - success)


def _overlap_at(law: RenewalLaw, elapsed: float) -> float:
    fwd = law.forward_law(elapsed)
    return 1.0 if fwd is law else overlap(law, fwd)


def overlap_floor(law: RenewalLaw, threshold: float,
                  grid_size: int = DEFAULT_OVERLAP_GRID,
                  refine_rounds: int = 2, refine_points: int = 17) -> float:
    """Infimum of overlap(fresh, age-elapsed) over ages in [0, threshold].

    Grid minimum with adaptive refinement around the running minimizer,
    minus a margin of the largest adjacent variation seen on the finest
    local grid, so the returned value is a defensible lower bound rather
    than an optimistic grid artifact.
    """
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    if law.coupling_structure == "memoryless":
        return 1.0
    thetas = np.linspace(0.0, threshold, max(int(grid_size), 1))
    kappas = np.array([_overlap_at(law, th) for th in thetas])
    best = float(kappas.min())
    for _ in range(refine_rounds):
        if thetas.size < 2:
            break
        j = int(np.argmin(kappas))
        lo = thetas[max(j - 1, 0)]
        hi = thetas[min(j + 1, thetas.size - 1)]
        if not hi > lo:
            break
        thetas = np.linspace(lo, hi, refine_points)
        kappas = np.array([_overlap_at(law, th) for th in thetas])
        best = min(best, float(kappas.min()))
    margin = float(np.max(np.abs(np.diff(kappas)))) if kappas.size > 1 else 0.0
    value = best - margin
    if value <= 1e-9:
        raise NoCouplingPossibleError(
            f"overlap infimum {best!r} (margin {margin!r}) is zero within "
            f"tolerance for threshold {threshold!r}")
    return value


def optimize_threshold(law: RenewalLaw, grid_size: int = 64,
                       span: tuple[float, float] = (1.05, 64.0)) -> float:
    """Threshold maximizing the attempt success probability.

    Bounded scalar search over multiples of the Lorden ratio; for a
    memoryless law the overlap term is constant, the success probability
    only grows with the threshold, and the top of the bracket is returned.
    """
    ratio = lorden_ratio(law)

    def negated_success(threshold: float) -> float:
        try:
            floor = overlap_floor(law, threshold, grid_size)
        except NoCouplingPossibleError:
            return 0.0
        return -(1.0 - ratio / threshold) * floor

    res = optimize.minimize_scalar(
        negated_success, bounds=(span[0] * ratio, span[1] * ratio),
        method="bounded", options={"xatol": 1e-3 * ratio})
    return float(res.x)


def geometric_moment_series(failure_prob: float, order: float,
                            tol: float = SERIES_TOL) -> float:
    """Sum of (i+1)^(order-1) * failure_prob^i over i >= 0.

    Terms are summed until a geometric remainder bound drops below tol of
    the running total; the remainder bound is then added, so the result is
    an upper value of the series (the conservative direction for every
    bound that multiplies it).
    """
    q = float(failure_prob)
    if q < 0.0:
        raise ValueError("failure probability must be nonnegative")
    if q >= 1.0:
        raise DivergentSeriesError(
            f"failure probability {q!r} is not below one")
    if order < 1.0:
        raise ValueError("order must be at least 1")
    if q == 0.0:
        return 1.0
    logq = math.log(q)
    total = 0.0
    start = 0
    chunk = 4096
    while start < 50_000_000:
        idx = np.arange(start, start + chunk, dtype=float)
        total += float(np.exp((order - 1.0) * np.log1p(idx) + idx * logq).sum())
        start += chunk
        # after the chunk, term ratios are below q*((n+2)/(n+1))^(order-1)
        ratio = q * ((start + 2.0) / (start + 1.0)) ** (order - 1.0)
        if ratio < 1.0:
            next_term = math.exp(
                (order - 1.0) * math.log(start + 1.0) + start * logq)
            remainder = next_term / (1.0 - ratio)
            if remainder < tol * max(total, 1.0):
                return total + remainder
    raise DivergentSeriesError(
        f"series for failure probability {q!r} converges too slowly")


def _moment_of(law: RenewalLaw, order: float) -> float:
    return 1.0 if order == 0 else law.moment(order)


def _sum_moment(first: RenewalLaw, second: RenewalLaw, order: float) -> float:
    """Moment of given order of the sum of two independent draws.

    Binomial expansion when the order is an integer, nested quadrature of
    (x+y)^order against both densities otherwise.
    """
    if float(order).is_integer():
        n = int(order)
        first_moments = [_moment_of(first, k) for k in range(n + 1)]
        second_moments = [_moment_of(second, k) for k in range(n + 1)]
        return float(sum(special.comb(n, k, exact=True)
                         * first_moments[k] * second_moments[n - k]
                         for k in range(n + 1)))

    def outer(x: float) -> float:
        inner = numerics.windowed_tail_integral(
            lambda y: (x + y) ** order * np.asarray(second.pdf(y)),
            tol=1e-10, gauss_order=64)
        return float(first.pdf(x)) * inner

    return numerics.windowed_tail_integral(outer, tol=1e-9)


def epoch_moment_bound(law: RenewalLaw, age_first: float, age_second: float,
                       threshold: float, order: float,
                       params: CouplingParams | None = None,
                       tol: float = SERIES_TOL) -> float:
    """Upper bound on the moment of the coincidence epoch.

    The epoch is bounded by the sum of the two initial forward times plus a
    geometric number of fresh renewal periods; Jensen-style regrouping gives
    sum-moment * series + fresh-moment * (1/(1-q)^2 + 1/(1-q)).
    """
    if params is None:
        params = coupling_params(law, threshold)
    fresh = law.moment(order)
    q = params.attempt_failure
    series = geometric_moment_series(q, order, tol)
    start = _sum_moment(law.forward_law(age_first),
                        law.forward_law(age_second), order)
    geo = 1.0 / (1.0 - q)
    return start * series + fresh * (geo * geo + geo)


@lru_cache(maxsize=16)
def _residual_table(law: RenewalLaw, threshold: float, grid_size: int):
    """Age grid with forward laws and overlap masses, cached per law object.

    Reused across the many rate evaluations of a bisection search.
    """
    thetas = np.linspace(0.0, float(threshold), int(grid_size))
    forwards = [law.forward_law(th) for th in thetas]
    kappas = np.array([1.0 if fwd is law else overlap(law, fwd)
                       for fwd in forwards])
    return thetas, forwards, kappas


def residual_mgf_bound(law: RenewalLaw, threshold: float, rate: float,
                       grid_size: int = DEFAULT_RESIDUAL_GRID) -> float:
    """Worst conditional MGF of one epoch increment given a failed attempt.

    A failure either leaves a fresh renewal period (partner age above the
    threshold) or a residual draw from the non-overlapping density parts;
    the bound takes the maximum over the fresh MGF and, on an age grid, the
    normalized MGFs of both residual parts.
    """
    if rate < 0.0:
        raise ValueError("rate must be nonnegative")
    if rate == 0.0:
        return 1.0
    worst = law.mgf(rate)
    if law.coupling_structure == "memoryless":
        return worst
    _, forwards, kappas = _residual_table(law, float(threshold), grid_size)
    for fwd, kappa in zip(forwards, kappas):
        resid_mass = 1.0 - float(kappa)
        if resid_mass <= 1e-9:
            continue
        for dens, other in ((law.pdf, fwd.pdf), (fwd.pdf, law.pdf)):
            part = numerics.windowed_tail_integral(
                lambda s: np.exp(rate * s)
                * np.maximum(np.asarray(dens(s)) - np.asarray(other(s)), 0.0),
                tol=1e-10, gauss_order=64)
            worst = max(worst, part / resid_mass)
    return worst


def residual_envelope_norm(law: ExpParetoLaw, threshold: float) -> float:
    """L2-type norm of the residual envelope for the exp-pareto family.

    Feeds the closed-form residual MGF bound; finite for every threshold
    because the envelope decays polynomially of order shape+1.
    """
    if not isinstance(law, ExpParetoLaw):
        raise TypeError("residual envelope norm is defined for the exp-pareto "
                        "hazard family only")
    rate, shape = law.rate, law.shape
    scale = (1.0 + threshold) ** shape

    def integrand(s):
        s = np.asarray(s, dtype=float)
        num = (rate + shape + rate * (s + threshold)) * scale - rate
        return num * num * (1.0 + s) ** (-2.0 * (shape + 1.0))

    value = numerics.windowed_tail_integral(integrand, tol=1e-11,
                                            gauss_order=64)
    return math.sqrt(value)


def analytic_residual_mgf_bound(law: ExpParetoLaw, threshold: float,
                                rate: float) -> float:
    """Closed Cauchy-Schwarz form of the residual MGF bound (exp-pareto family).

    Valid below the exponential hazard floor; generally much looser than
    the numeric bound but requires no quadrature over age.
    """
    if not isinstance(law, ExpParetoLaw):
        raise TypeError("analytic residual bound is defined for the exp-pareto "
                        "hazard family only")
    if rate >= law.rate:
        raise DivergentMGFError(rate, law.rate)
    return math.sqrt(0.5 / (law.rate - rate)) * residual_envelope_norm(
        law, threshold)


def exponential_rate_limit(law: RenewalLaw, threshold: float,
                           rate_max: float | None = None,
                           params: CouplingParams | None = None,
                           grid_size: int = DEFAULT_RESIDUAL_GRID,
                           rel_tol: float = 1e-6,
                           rate_floor: float = 1e-9) -> RateLimit:
    """Largest rate keeping the failure recursion a strict contraction.

    Bisection on rate for failure_prob * residual_mgf_bound < 1; the
    returned rate is the admissible (lower) end of the final bracket, and
    the margin re-evaluates the contraction gap just below it.
    """
    if params is None:
        params = coupling_params(law, threshold)
    q = params.attempt_failure
    cap = law.mgf_divergence_rate()
    hi = cap if rate_max is None else min(rate_max, cap)
    if hi <= 0.0:
        raise ValueError("rate search bracket is empty")
    if q == 0.0:
        return RateLimit(hi, 1.0)

    def admissible(rate: float) -> bool:
        try:
            return q * residual_mgf_bound(law, threshold, rate,
                                          grid_size) < 1.0
        except DivergentIntegralError:
            return False

    if not admissible(rate_floor):
        raise NoExponentialRateError(
            f"no admissible rate above {rate_floor!r}; failure probability "
            f"{q!r} is too close to one")
    lo = rate_floor
    if admissible(hi):
        lo = hi
    else:
        while hi - lo > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if admissible(mid):
                lo = mid
            else:
                hi = mid
    margin = 1.0 - q * residual_mgf_bound(
        law, threshold, lo * (1.0 - rel_tol), grid_size)
    return RateLimit(lo, margin)


def epoch_mgf_bound(law: RenewalLaw, age_first: float, age_second: float,
                    threshold: float, rate: float,
                    params: CouplingParams | None = None,
                    grid_size: int = DEFAULT_RESIDUAL_GRID) -> float:
    """Upper bound on the exponential moment of the coincidence epoch."""
    if params is None:
        params = coupling_params(law, threshold)
    q = params.attempt_failure
    if rate == 0.0:
        return 1.0 / (1.0 - q)
    worst = residual_mgf_bound(law, threshold, rate, grid_size)
    contraction = q * worst
    if contraction >= 1.0:
        raise RateInadmissibleError(
            f"rate {rate!r} gives contraction factor {contraction!r} >= 1; "
            f"reduce the rate below the admissible limit")
    first = law.forward_law(age_first).mgf(rate)
    second = law.forward_law(age_second).mgf(rate)
    fresh = law.mgf(rate)
    return first * second * fresh / (1.0 - contraction)


def tv_bound_curve(law: RenewalLaw, age: float, threshold: float,
                   t_grid, order: float | None = None,
                   rate: float | None = None,
                   params: CouplingParams | None = None,
                   grid_size: int = DEFAULT_RESIDUAL_GRID,
                   tol: float = SERIES_TOL) -> list[tuple[float, float]]:
    """Certified total-variation bound at each requested time.

    The epoch bound holds for every starting age of the partner process, so
    integrating it against the stationary age density (whose mixture of
    forward laws is again the stationary law) gives a time-independent
    scale; the curve is that scale times t^-order, or e^(-rate t), capped
    at one.
    """
    if (order is None) == (rate is None):
        raise ValueError("exactly one of order and rate must be given")
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise ValueError("time grid must be nonempty")
    if np.any(t <= 0.0):
        raise ValueError("time grid must be positive")
    if params is None:
        params = coupling_params(law, threshold)
    q = params.attempt_failure
    stationary = law.stationary_backward()
    start_law = law.forward_law(age)
    if order is not None:
        series = geometric_moment_series(q, order, tol)
        start = _sum_moment(start_law, stationary, order)
        fresh = law.moment(order)
        geo = 1.0 / (1.0 - q)
        scale = start * series + fresh * (geo * geo + geo)
        values = np.minimum(1.0, scale * t ** (-float(order)))
    else:
        worst = residual_mgf_bound(law, threshold, rate, grid_size)
        contraction = q * worst
        if contraction >= 1.0:
            raise RateInadmissibleError(
                f"rate {rate!r} gives contraction factor {contraction!r} >= 1")
        scale = (start_law.mgf(rate) * stationary.mgf(rate) * law.mgf(rate)
                 / (1.0 - contraction))
        values = np.minimum(1.0, scale * np.exp(-rate * t))
    return list(zip(t.tolist(), values.tolist()))


def exp_pareto_minorant(law: ExpParetoLaw, threshold: float) -> Minorant:
    """Closed-form density below every age-elapsed density up to threshold.

    rate*exp(-rate*s)*(1+s+threshold)^(-shape-1): its mass is a crude but
    analytic stand-in for the overlap floor.
    """
    if not isinstance(law, ExpParetoLaw):
        raise TypeError("closed-form minorant exists for the exp-pareto hazard "
                        "family only")
    rate, shape = law.rate, law.shape

    def pdf(s):
        s = np.asarray(s, dtype=float)
        return rate * np.exp(-rate * s) * (1.0 + s + threshold) ** (
            -shape - 1.0)

    return Minorant.from_pdf(pdf, law.tail_cutoff() + threshold)


def exp_pareto_diagnostics(law: ExpParetoLaw) -> dict[str, float]:
    """Closed-form moment bounds from the two-component factorization.

    The law is the minimum of an exponential and a polynomial-tail
    component, so componentwise moments bound the mixture's; reported for
    inspection only, never used in the certified pipeline (the bound
    directions are not the certified ones).
    """
    if not isinstance(law, ExpParetoLaw):
        raise TypeError("diagnostics exist for the exp-pareto hazard family only")
    rate, shape = law.rate, law.shape
    poly_mean = 1.0 / (shape - 1.0) if shape > 1.0 else math.inf
    mean_bound = min(1.0 / rate, poly_mean)
    if shape > 2.0:
        second = 2.0 / (rate * rate) + 2.0 / ((shape - 1.0) * (shape - 2.0))
    else:
        second = math.inf
    return {
        "mean_bound": mean_bound,
        "second_moment_bound": second,
        "ratio_bound": second / mean_bound,
    }


@dataclass(frozen=True)
class BoundReport:
    """Everything the bounds pipeline produced for one law and threshold."""

    law: dict
    age_first: float
    age_second: float
    params: CouplingParams
    moment_orders: tuple[float, ...]
    series_values: dict[float, float]
    moment_bounds: dict[float, float]
    rate_limit: RateLimit | None
    rates: tuple[float, ...]
    residual_mgfs: dict[float, float]
    mgf_bounds: dict[float, float]
    tv_moment_curves: dict[float, list[tuple[float, float]]] = field(
        default_factory=dict)
    tv_mgf_curves: dict[float, list[tuple[float, float]]] = field(
        default_factory=dict)
    envelope_norm: float | None = None
    analytic_residual_mgfs: dict[float, float] = field(default_factory=dict)
    diagnostics: dict[str, float] | None = None

    def to_dict(self) -> dict:
        def curve(points):
            return [[float(t), float(v)] for t, v in points]

        out = {
            "law": self.law,
            "age_first": self.age_first,
            "age_second": self.age_second,
            "params": {
                "threshold": self.params.threshold,
                "lorden_ratio": self.params.lorden_ratio,
                "age_prob": self.params.age_prob,
                "overlap_floor": self.params.overlap_floor,
                "attempt_success": self.params.attempt_success,
                "attempt_failure": self.params.attempt_failure,
            },
            "moment_orders": list(self.moment_orders),
            "series_values": {str(k): v for k, v in self.series_values.items()},
            "moment_bounds": {str(k): v for k, v in self.moment_bounds.items()},
            "rate_limit": (None if self.rate_limit is None else
                           {"rate": self.rate_limit.rate,
                            "margin": self.rate_limit.margin}),
            "rates": list(self.rates),
            "residual_mgfs": {str(k): v for k, v in self.residual_mgfs.items()},
            "mgf_bounds": {str(k): v for k, v in self.mgf_bounds.items()},
            "tv_moment_curves": {str(k): curve(v)
                                 for k, v in self.tv_moment_curves.items()},
            "tv_mgf_curves": {str(k): curve(v)
                              for k, v in self.tv_mgf_curves.items()},
        }
        if self.envelope_norm is not None:
            out["envelope_norm"] = self.envelope_norm
            out["analytic_residual_mgfs"] = {
                str(k): v for k, v in self.analytic_residual_mgfs.items()}
        if self.diagnostics is not None:
            # infinite moment bounds (heavy-tail shapes) serialize as null
            out["diagnostics"] = {k: (v if math.isfinite(v) else None)
                                  for k, v in self.diagnostics.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def bound_report(law: RenewalLaw, age_first: float = 0.0,
                 age_second: float = 0.0, threshold: float | None = None,
                 moment_orders=(1.0,), rates=None, t_grid=(),
                 overlap_grid: int = DEFAULT_OVERLAP_GRID,
                 residual_grid: int = DEFAULT_RESIDUAL_GRID) -> BoundReport:
    """Run the full bounds pipeline and collect the results.

    With rates=None a single rate at half the admissible limit is used;
    pass an empty sequence to skip the exponential side entirely.
    """
    if threshold is None:
        threshold = default_threshold(law)
    params = coupling_params(law, threshold, overlap_grid)
    orders = tuple(float(o) for o in moment_orders)
    series_values = {o: geometric_moment_series(params.attempt_failure, o)
                     for o in orders}
    moment_bounds = {o: epoch_moment_bound(law, age_first, age_second,
                                           threshold, o, params)
                     for o in orders}
    rate_limit = None
    if rates is None or len(tuple(rates)) > 0:
        try:
            rate_limit = exponential_rate_limit(law, threshold, params=params,
                                                grid_size=residual_grid)
        except NoExponentialRateError:
            rate_limit = None
    if rates is None:
        resolved_rates = (() if rate_limit is None
                          else (0.5 * rate_limit.rate,))
    else:
        resolved_rates = tuple(float(r) for r in rates)
    residual_mgfs = {r: residual_mgf_bound(law, threshold, r, residual_grid)
                     for r in resolved_rates}
    mgf_bounds = {r: epoch_mgf_bound(law, age_first, age_second, threshold,
                                     r, params, residual_grid)
                  for r in resolved_rates}
    tv_moment = {}
    tv_mgf = {}
    if len(tuple(t_grid)) > 0:
        tv_moment = {o: tv_bound_curve(law, age_first, threshold, t_grid,
                                       order=o, params=params)
                     for o in orders}
        tv_mgf = {r: tv_bound_curve(law, age_first, threshold, t_grid,
                                    rate=r, params=params,
                                    grid_size=residual_grid)
                  for r in resolved_rates}
    envelope = None
    analytic = {}
    diagnostics = None
    if isinstance(law, ExpParetoLaw):
        envelope = residual_envelope_norm(law, threshold)
        analytic = {r: analytic_residual_mgf_bound(law, threshold, r)
                    for r in resolved_rates if r < law.rate}
        diagnostics = exp_pareto_diagnostics(law)
    return BoundReport(
        law=law.spec_dict(), age_first=float(age_first),
        age_second=float(age_second), params=params, moment_orders=orders,
        series_values=series_values, moment_bounds=moment_bounds,
        rate_limit=rate_limit, rates=resolved_rates,
        residual_mgfs=residual_mgfs, mgf_bounds=mgf_bounds,
        tv_moment_curves=tv_moment, tv_mgf_curves=tv_mgf,
        envelope_norm=envelope, analytic_residual_mgfs=analytic,
        diagnostics=diagnostics)
