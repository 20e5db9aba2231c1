"""Monte Carlo side: simulate the coupled age processes and check the bounds.

The leading process is simulated openly.  The partner is simulated lazily:
between attempt times one uniform either certifies "no renewal up to the
inspection time" or pins the renewal location exactly, so its marginal law
is untouched while its age stays known at every attempt.

Two protocol decisions carry the correctness weight:

* a failed coincidence attempt reveals the partner's next renewal (the
  residual draw), so further attempts are deferred until that renewal has
  occurred; re-drawing the partner's forward time while a revealed renewal
  is pending would distort its marginal.
* an attempt conditions only on the partner's age and on "no renewal since",
  which is exactly the conditioning under which the age-elapsed forward law
  is the partner's true forward law.

For the supported families the deferral case is the only one: a failed
draw puts the leader's residual below the density crossover and the
partner's above it, so the revealed renewal never precedes the leader's.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .bound_engine import BoundReport, bound_report, lorden_ratio
from .coupling_kernel import coupled_sample, split
from .dist_core import RenewalLaw
from .errors import EventCapExceededError, ValidationError

# fixed sub-stream ids so every consumer of a seed gets its own counter keyset
PAIR_STREAM = 0
AGES_STREAM = 1
LORDEN_STREAM = 2
TV_STREAM_BASE = 3


def replica_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream), counter-based.

    Streams never overlap for distinct ids, so replicas may be simulated
    in any order or in parallel without changing their draws.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream id must be nonnegative")
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


# --------------------------------------------------------------------------
# scalar pair simulation (protocol-literal, one replica per call)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AttemptRecord:
    time: float
    partner_age: float
    eligible: bool       # partner age within threshold
    attempted: bool      # eligible and no revealed partner renewal pending
    coincided: bool


@dataclass
class CoupledState:
    """Joint state of the two age processes, resumable mid-run."""

    clock: float
    lead_last: float
    lead_next: float
    lag_last: float
    lag_checked: float
    lag_pending: float | None
    coupled_at: float | None = None
    events: int = 0
    attempt_log: list[AttemptRecord] = field(default_factory=list)

    @property
    def backward_first(self) -> float:
        return self.clock - self.lead_last

    @property
    def backward_second(self) -> float:
        if self.coupled_at is not None:
            return self.backward_first
        return self.clock - self.lag_last


def simulate_pair(law: RenewalLaw, age_first: float, age_second: float,
                  threshold: float, rng: np.random.Generator,
                  event_cap: int = 100_000) -> CoupledState:
    """Run one coupled pair until the processes coincide.

    Returns the final state with coupled_at set and the per-renewal attempt
    log.  Equal starting ages couple immediately at time zero.  Raises
    EventCapExceededError (with the partial state attached) if the cap on
    leader renewals is reached; resume with resume_pair.
    """
    if age_first < 0 or age_second < 0:
        raise ValueError("starting ages must be nonnegative")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if age_first == age_second:
        start = -float(age_first)
        return CoupledState(clock=0.0, lead_last=start, lead_next=0.0,
                            lag_last=start, lag_checked=0.0, lag_pending=None,
                            coupled_at=0.0)
    state = CoupledState(
        clock=0.0,
        lead_last=-float(age_first),
        lead_next=float(law.forward_law(age_first).sample(rng)),
        lag_last=-float(age_second),
        lag_checked=0.0,
        lag_pending=float(law.forward_law(age_second).sample(rng)),
    )
    return resume_pair(law, threshold, rng, state, event_cap)


def resume_pair(law: RenewalLaw, threshold: float, rng: np.random.Generator,
                state: CoupledState, event_cap: int = 100_000) -> CoupledState:
    """Continue a pair simulation from a partial state."""
    while state.coupled_at is None:
        if state.events >= event_cap:
            raise EventCapExceededError(state, state.events)
        state.events += 1
        t = state.lead_next
        state.clock = t
        if state.lag_pending is not None and state.lag_pending <= t:
            state.lag_last = state.lag_pending
            state.lag_checked = state.lag_last
            state.lag_pending = None
        if state.lag_pending is None:
            _advance_lag_censored(law, state, t, rng)
        blocked = state.lag_pending is not None
        theta = t - state.lag_last
        eligible = theta <= threshold
        attempted = eligible and not blocked
        coincided = False
        if attempted:
            spl = split(law, law.forward_law(theta))
            pair = coupled_sample(spl, rng.random(), rng.random(),
                                  rng.random())
            coincided = pair.coincided
            if coincided:
                state.coupled_at = t + pair.first
                state.clock = state.coupled_at
                state.lead_last = state.coupled_at
                state.lead_next = state.coupled_at
                state.lag_last = state.coupled_at
                state.lag_checked = state.coupled_at
            else:
                state.lead_last = t
                state.lead_next = t + pair.first
                state.lag_pending = t + pair.second
        else:
            state.lead_last = t
            state.lead_next = t + float(law.sample(rng))
        state.attempt_log.append(AttemptRecord(
            time=t, partner_age=theta, eligible=eligible,
            attempted=attempted, coincided=coincided))
    return state


def _advance_lag_censored(law: RenewalLaw, state: CoupledState, t: float,
                          rng: np.random.Generator) -> None:
    """Advance the partner's knowledge to time t revealing as little as possible.

    One uniform per step: either "no renewal up to t" (age keeps growing) or
    the exact renewal location below t (then the age resets and the loop
    continues with a fresh period).
    """
    while state.lag_checked < t:
        age = state.lag_checked - state.lag_last
        surv_age = float(law.survival(age))
        gap = t - state.lag_checked
        renew_prob = 1.0 - float(law.survival(age + gap)) / surv_age
        u = rng.random()
        if u >= renew_prob:
            state.lag_checked = t
        else:
            step = float(law.isf(surv_age * (1.0 - u))) - age
            state.lag_last = state.lag_checked + step
            state.lag_checked = state.lag_last


# --------------------------------------------------------------------------
# vectorized batch of pairs
# --------------------------------------------------------------------------

@dataclass
class BatchState:
    """Arrays of per-replica pair state; attachable to a cap error."""

    lead_last: np.ndarray
    lead_next: np.ndarray
    lag_last: np.ndarray
    lag_checked: np.ndarray
    lag_pending: np.ndarray        # nan = not revealed
    tau: np.ndarray                # nan until coupled
    done: np.ndarray
    events: np.ndarray
    renewals: int = 0
    eligible_events: int = 0
    attempts: int = 0
    coincidences: int = 0
    kappa_sum: float = 0.0


@dataclass(frozen=True)
class PairSample:
    """Coupling epochs plus attempt statistics (and ages in horizon mode)."""

    tau: np.ndarray
    renewals: int
    eligible_events: int
    attempts: int
    coincidences: int
    kappa_sum: float
    lead_age: np.ndarray | None = None
    lag_age: np.ndarray | None = None

    @property
    def attempt_success_rate(self) -> float:
        return self.coincidences / self.attempts if self.attempts else math.nan

    @property
    def eligible_fraction(self) -> float:
        return self.eligible_events / self.renewals if self.renewals else math.nan

    @property
    def mean_kappa(self) -> float:
        return self.kappa_sum / self.attempts if self.attempts else math.nan


def _single_crossover_ops(law: RenewalLaw):
    """Vectorized overlap split for (fresh, age-elapsed) density pairs.

    Valid when the age-elapsed density crosses the fresh one exactly once
    from below; the crossover location is found per replica by monotone
    bisection of the log density ratio.
    """
    cutoff = law.tail_cutoff()

    def log_ratio_fn(theta, log_surv_theta):
        def log_ratio(s):
            with np.errstate(divide="ignore"):
                num = np.log(np.asarray(law.pdf(theta + s), dtype=float))
                den = np.log(np.asarray(law.pdf(s), dtype=float))
            return num - log_surv_theta - den
        return log_ratio

    def crossing(theta):
        log_surv = np.log(np.asarray(law.survival(theta), dtype=float))
        return numerics.invert_monotone(
            log_ratio_fn(theta, log_surv), 0.0 * theta, 0.0, cutoff)

    def forward_cdf(theta, s):
        surv_theta = np.asarray(law.survival(theta), dtype=float)
        return 1.0 - np.asarray(law.survival(theta + s), dtype=float) / surv_theta

    def kappa(theta, s_star):
        return forward_cdf(theta, s_star) + np.asarray(
            law.survival(s_star), dtype=float)

    def common_draw(theta, s_star, mass):
        fw_star = forward_cdf(theta, s_star)
        surv_theta = np.asarray(law.survival(theta), dtype=float)
        out = np.empty_like(mass)
        below = mass <= fw_star
        if np.any(below):
            out[below] = law.isf(
                surv_theta[below] * (1.0 - mass[below])) - theta[below]
        above = ~below
        if np.any(above):
            target = np.asarray(law.cdf(s_star[above])) + (
                mass[above] - fw_star[above])
            out[above] = law.quantile(np.clip(target, 0.0, 1.0 - 1e-16))
        return out

    def residual_draws(theta, s_star, mass):
        fresh = numerics.invert_monotone(
            lambda s: np.asarray(law.cdf(s)) - forward_cdf(theta, s),
            mass, 0.0, s_star)
        fw_star = forward_cdf(theta, s_star)
        f_star = np.asarray(law.cdf(s_star))
        elapsed = numerics.invert_monotone(
            lambda s: forward_cdf(theta, s) - fw_star
            - np.asarray(law.cdf(s)) + f_star,
            mass, s_star, cutoff)
        return fresh, elapsed

    return crossing, kappa, common_draw, residual_draws


def _attempt_draws(law: RenewalLaw, theta: np.ndarray, u3: np.ndarray):
    """Coupled draws for a batch of attempts at ages theta.

    Returns (kappa, coincided, value_first, value_second); value_second is
    nan where the draw coincided.
    """
    n = theta.size
    structure = law.coupling_structure
    if structure == "memoryless":
        kap = np.ones(n)
        v = law.quantile(u3[:, 1])
        return kap, np.ones(n, dtype=bool), np.asarray(v, dtype=float), \
            np.full(n, np.nan)
    if structure == "single-crossover":
        crossing, kappa_of, common_draw, residual_draws = \
            _operations_cache(law)
        s_star = crossing(theta)
        kap = kappa_of(theta, s_star)
        coin = u3[:, 0] < kap
        first = np.empty(n)
        second = np.full(n, np.nan)
        if np.any(coin):
            first[coin] = common_draw(theta[coin], s_star[coin],
                                      kap[coin] * u3[coin, 1])
        rest = ~coin
        if np.any(rest):
            v1, v2 = residual_draws(theta[rest], s_star[rest],
                                    (1.0 - kap[rest]) * u3[rest, 2])
            first[rest] = v1
            second[rest] = v2
        return kap, coin, first, second
    # generic fallback: exact per-replica split (slow, small batches only)
    kap = np.empty(n)
    coin = np.empty(n, dtype=bool)
    first = np.empty(n)
    second = np.full(n, np.nan)
    for i in range(n):
        spl = split(law, law.forward_law(float(theta[i])))
        pair = coupled_sample(spl, u3[i, 0], u3[i, 1], u3[i, 2])
        kap[i] = spl.kappa
        coin[i] = pair.coincided
        first[i] = pair.first
        if not pair.coincided:
            second[i] = pair.second
    return kap, coin, first, second


@functools.lru_cache(maxsize=8)
def _operations_cache(law: RenewalLaw):
    return _single_crossover_ops(law)


def simulate_pairs(law: RenewalLaw, age_first: float, age_second: float,
                   threshold: float, rng: np.random.Generator, n: int,
                   event_cap: int = 100_000,
                   horizon: float | None = None) -> PairSample:
    """Vectorized batch of coupled pairs.

    Without a horizon, runs every replica to its coupling epoch and returns
    the epochs.  With a horizon, also evolves past coupling (the merged
    process is the leader's) and returns both ages at the horizon.
    """
    if n < 1:
        raise ValueError("need at least one replica")
    if age_first < 0 or age_second < 0:
        raise ValueError("starting ages must be nonnegative")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    n = int(n)
    if age_first == age_second:
        tau = np.zeros(n)
        if horizon is None:
            return PairSample(tau, 0, 0, 0, 0, 0.0)
        ages = _ages_at(law, age_first, horizon, n, rng)
        return PairSample(tau, 0, 0, 0, 0, 0.0, lead_age=ages,
                          lag_age=ages.copy())
    start_first = np.full(n, -float(age_first))
    state = BatchState(
        lead_last=start_first.copy(),
        lead_next=np.asarray(law.forward_law(age_first).sample(rng, n),
                             dtype=float),
        lag_last=np.full(n, -float(age_second)),
        lag_checked=np.zeros(n),
        lag_pending=np.asarray(law.forward_law(age_second).sample(rng, n),
                               dtype=float),
        tau=np.full(n, np.nan),
        done=np.zeros(n, dtype=bool),
        events=np.zeros(n, dtype=np.int64),
    )
    return resume_pairs(law, threshold, rng, state, event_cap, horizon)


def resume_pairs(law: RenewalLaw, threshold: float, rng: np.random.Generator,
                 state: BatchState, event_cap: int = 100_000,
                 horizon: float | None = None) -> PairSample:
    """Continue a batch simulation from a partial state."""
    s = state
    while True:
        if horizon is None:
            running = ~s.done
        else:
            running = s.lead_next <= horizon
        idx = np.nonzero(running)[0]
        if idx.size == 0:
            break
        if np.any(s.events[idx] >= event_cap):
            raise EventCapExceededError(s, int(s.events.max()))
        s.events[idx] += 1
        t = s.lead_next[idx]
        live = ~s.done[idx]          # merged replicas only move the leader

        fired = live & (s.lag_pending[idx] <= t)
        if np.any(fired):
            rows = idx[fired]
            s.lag_last[rows] = s.lag_pending[rows]
            s.lag_checked[rows] = s.lag_last[rows]
            s.lag_pending[rows] = np.nan
        unrevealed = live & np.isnan(s.lag_pending[idx])
        _advance_lags_censored(law, s, idx[unrevealed], t[unrevealed], rng)

        blocked = ~np.isnan(s.lag_pending[idx])
        theta = t - s.lag_last[idx]
        eligible = live & (theta <= threshold)
        attempt = eligible & ~blocked
        s.renewals += int(live.sum())
        s.eligible_events += int(eligible.sum())

        rows = idx[attempt]
        if rows.size:
            u3 = rng.random((rows.size, 3))
            kap, coin, first, second = _attempt_draws(law, theta[attempt], u3)
            s.attempts += rows.size
            s.kappa_sum += float(kap.sum())
            s.coincidences += int(coin.sum())
            hit = rows[coin]
            if hit.size:
                t_hit = t[attempt][coin]
                epoch = t_hit + first[coin]
                s.tau[hit] = epoch
                # the processes merge at the epoch, not at the attempt: when
                # the epoch falls past the horizon the pair is still split
                # there, so keep the pre-merge state for the age readout
                if horizon is not None:
                    late = epoch > horizon
                else:
                    late = np.zeros(hit.size, dtype=bool)
                merged = hit[~late]
                s.done[merged] = True
                s.lead_last[merged] = epoch[~late]
                s.lead_next[merged] = epoch[~late]
                s.lag_last[merged] = epoch[~late]
                s.lag_checked[merged] = epoch[~late]
                s.lag_pending[merged] = np.nan
                if horizon is not None:
                    # merged process keeps renewing as the leader
                    s.lead_next[merged] = epoch[~late] + np.asarray(
                        law.sample(rng, merged.size), dtype=float)
                    pending = hit[late]
                    s.lead_last[pending] = t_hit[late]
                    s.lead_next[pending] = epoch[late]
                    s.lag_pending[pending] = epoch[late]
            miss = rows[~coin]
            if miss.size:
                tm = t[attempt][~coin]
                s.lead_last[miss] = tm
                s.lead_next[miss] = tm + first[~coin]
                s.lag_pending[miss] = tm + second[~coin]
        rest = idx[~attempt]
        if rest.size:
            s.lead_last[rest] = s.lead_next[rest]
            s.lead_next[rest] = s.lead_next[rest] + np.asarray(
                law.sample(rng, rest.size), dtype=float)

    lead_age = lag_age = None
    if horizon is not None:
        live = ~s.done
        fired = live & (s.lag_pending <= horizon)
        if np.any(fired):
            rows = np.nonzero(fired)[0]
            s.lag_last[rows] = s.lag_pending[rows]
            s.lag_checked[rows] = s.lag_last[rows]
            s.lag_pending[rows] = np.nan
        unrevealed = np.nonzero(live & np.isnan(s.lag_pending))[0]
        _advance_lags_censored(law, s, unrevealed,
                               np.full(unrevealed.size, float(horizon)), rng)
        lead_age = horizon - s.lead_last
        lag_age = np.where(s.done, lead_age, horizon - s.lag_last)
    return PairSample(tau=s.tau, renewals=s.renewals,
                      eligible_events=s.eligible_events, attempts=s.attempts,
                      coincidences=s.coincidences, kappa_sum=s.kappa_sum,
                      lead_age=lead_age, lag_age=lag_age)


def _advance_lags_censored(law: RenewalLaw, s: BatchState, rows: np.ndarray,
                           until: np.ndarray, rng: np.random.Generator) -> None:
    """Vectorized censored advance of unrevealed partners to their times."""
    while rows.size:
        moving = s.lag_checked[rows] < until
        rows = rows[moving]
        until = until[moving]
        if rows.size == 0:
            break
        age = s.lag_checked[rows] - s.lag_last[rows]
        surv_age = np.asarray(law.survival(age), dtype=float)
        renew_prob = 1.0 - np.asarray(
            law.survival(until - s.lag_last[rows]), dtype=float) / surv_age
        u = rng.random(rows.size)
        renewed = u < renew_prob
        hold = rows[~renewed]
        s.lag_checked[hold] = until[~renewed]
        rows = rows[renewed]
        until = until[renewed]
        if rows.size:
            step = np.asarray(
                law.isf(surv_age[renewed] * (1.0 - u[renewed])),
                dtype=float) - age[renewed]
            s.lag_last[rows] = s.lag_checked[rows] + step
            s.lag_checked[rows] = s.lag_last[rows]


# --------------------------------------------------------------------------
# single-chain helpers
# --------------------------------------------------------------------------

def _ages_at(law: RenewalLaw, age_init: float, t: float, n: int,
             rng: np.random.Generator) -> np.ndarray:
    """Ages of n independent chains at time t, started from a fixed age."""
    last = np.full(int(n), -float(age_init))
    nxt = np.asarray(law.forward_law(age_init).sample(rng, int(n)),
                     dtype=float)
    active = nxt <= t
    while np.any(active):
        rows = np.nonzero(active)[0]
        last[rows] = nxt[rows]
        nxt[rows] = nxt[rows] + np.asarray(law.sample(rng, rows.size),
                                           dtype=float)
        active[rows] = nxt[rows] <= t
    return t - last


def pair_marginal_ages(law: RenewalLaw, age_first: float, age_second: float,
                       threshold: float, t: float, n: int,
                       rng: np.random.Generator,
                       attempts_enabled: bool = True):
    """Ages of both processes at time t, with or without coupling attempts.

    With attempts disabled the two chains are simulated independently; the
    coupling machinery must not change either marginal (checked by test).
    """
    if attempts_enabled:
        sample = simulate_pairs(law, age_first, age_second, threshold, rng,
                                n, horizon=t)
        return sample.lead_age, sample.lag_age
    lead = _ages_at(law, age_first, t, n, rng)
    lag = _ages_at(law, age_second, t, n, rng)
    return lead, lag


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------

def estimate_tau_functionals(samples, order: float | None = None,
                             rate: float | None = None):
    """Sample mean of tau^order or exp(rate*tau) with jackknife std-error."""
    if (order is None) == (rate is None):
        raise ValueError("exactly one of order and rate must be given")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if np.any(~np.isfinite(x)) or np.any(x < 0):
        raise ValueError("samples must be finite and nonnegative")
    if order is not None:
        vals = x ** float(order)
    else:
        if rate * float(x.max()) > 700.0:
            raise ValueError(
                "rate too large for a stable exponential-moment estimate "
                f"(rate*max sample = {rate * float(x.max()):.3g})")
        vals = np.exp(float(rate) * x)
    return numerics.jackknife_mean(vals)


@dataclass(frozen=True)
class TvEstimate:
    value: float
    bin_count: int
    bin_width: float
    noise_floor: float      # expected |noise| contribution at equilibrium
    std_error: float
    note: str


def histogram_tv_samples(first, second, bins: int | None = None) -> float:
    """Histogram L1/2 distance between two sample sets on a shared grid."""
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if bins is None:
        bins = int(math.ceil(min(a.size, b.size) ** (1.0 / 3.0)))
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    pa, _ = np.histogram(a, bins=edges)
    pb, _ = np.histogram(b, bins=edges)
    return 0.5 * float(np.abs(pa / a.size - pb / b.size).sum())


def empirical_tv(law: RenewalLaw, age_init: float, t: float, n: int,
                 rng: np.random.Generator,
                 bins: int | None = None) -> TvEstimate:
    """Histogram estimate of the TV distance of the age at t to stationarity.

    Bins are equal-width up to the stationary 99.9th percentile plus one
    tail bin.  The value is an estimate, not a certified quantity: it
    carries O(bin width) discretization bias plus sampling noise (reported
    as noise_floor and std_error).
    """
    if t <= 0:
        raise ValueError("time must be positive")
    n = int(n)
    if n < 1000:
        raise ValueError("need at least 1000 replicas for a stable estimate")
    ages = _ages_at(law, age_init, t, n, rng)
    stationary = law.stationary_backward()
    if bins is None:
        bins = int(math.ceil(n ** (1.0 / 3.0)))
    hi = float(stationary.isf(1e-3))
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(ages, bins=edges)
    empirical = np.append(counts / n, (ages > hi).sum() / n)
    cdf_vals = np.asarray(stationary.cdf(edges))
    target = np.append(np.diff(cdf_vals), 1.0 - cdf_vals[-1])
    value = 0.5 * float(np.abs(empirical - target).sum())
    spread = np.sqrt(np.maximum(target * (1.0 - target), 0.0) / n)
    noise_floor = 0.5 * math.sqrt(2.0 / math.pi) * float(spread.sum())
    std_error = 0.5 * float(np.sqrt((target * (1.0 - target) / n).sum()))
    return TvEstimate(
        value=value, bin_count=bins + 1, bin_width=float(edges[1] - edges[0]),
        noise_floor=noise_floor, std_error=std_error,
        note="histogram estimate; carries binning bias of order bin_width "
             "and a sampling noise floor even at equilibrium")


@dataclass(frozen=True)
class LordenReport:
    times: list[float]
    estimates: list[float]
    std_errors: list[float]
    ratio: float
    passed: bool


def lorden_check(law: RenewalLaw, horizon: float, n: int,
                 rng: np.random.Generator, grid_points: int = 17,
                 age_init: float = 0.0) -> LordenReport:
    """Check sup over a time grid of the mean age against the moment ratio.

    The mean age at any time is bounded by second moment over first moment;
    passes when the largest estimate stays within three standard errors.
    """
    if horizon <= 0 or n < 2:
        raise ValueError("horizon must be positive and n at least 2")
    ratio = lorden_ratio(law)
    grid = np.linspace(0.0, horizon, grid_points)
    last = np.full(int(n), -float(age_init))
    nxt = np.asarray(law.forward_law(age_init).sample(rng, int(n)),
                     dtype=float)
    estimates, errors = [], []
    for t in grid:
        active = nxt <= t
        while np.any(active):
            rows = np.nonzero(active)[0]
            last[rows] = nxt[rows]
            nxt[rows] = nxt[rows] + np.asarray(law.sample(rng, rows.size),
                                               dtype=float)
            active[rows] = nxt[rows] <= t
        mean, se = numerics.jackknife_mean(t - last)
        estimates.append(mean)
        errors.append(se)
    worst = int(np.argmax(estimates))
    passed = estimates[worst] <= ratio + 3.0 * errors[worst]
    return LordenReport(times=list(map(float, grid)), estimates=estimates,
                        std_errors=errors, ratio=ratio, passed=passed)


# --------------------------------------------------------------------------
# reports and the full experiment
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimReport:
    law: dict
    seed: int
    n_replicas: int
    age_first: float
    age_second: float
    threshold: float
    tau_count: int
    tau_mean: float
    tau_digest: str
    moments: dict[float, tuple[float, float]]
    mgfs: dict[float, tuple[float, float]]
    attempt_success_rate: float
    eligible_fraction: float
    mean_kappa: float
    empirical_tv: list[tuple[float, float]]

    def to_dict(self) -> dict:
        def stat(value):
            # attempt statistics are undefined (nan) when nothing attempted
            return value if math.isfinite(value) else None

        return {
            "law": self.law,
            "seed": self.seed,
            "n_replicas": self.n_replicas,
            "age_first": self.age_first,
            "age_second": self.age_second,
            "threshold": self.threshold,
            "tau": {"count": self.tau_count, "mean": self.tau_mean,
                    "digest": self.tau_digest},
            "moments": {str(k): {"estimate": v[0], "std_error": v[1]}
                        for k, v in self.moments.items()},
            "mgfs": {str(k): {"estimate": v[0], "std_error": v[1]}
                     for k, v in self.mgfs.items()},
            "attempt_success_rate": stat(self.attempt_success_rate),
            "eligible_fraction": stat(self.eligible_fraction),
            "mean_kappa": stat(self.mean_kappa),
            "empirical_tv": [[float(t), float(v)]
                             for t, v in self.empirical_tv],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def tau_samples_csv(tau) -> str:
    """One-column CSV of the coupling epochs."""
    lines = ["tau"]
    lines.extend(f"{float(v):.17g}" for v in np.asarray(tau, dtype=float))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ExperimentResult:
    bounds: BoundReport
    sim: SimReport
    verdicts: dict[str, dict]
    tau: np.ndarray | None = None      # raw epochs, not serialized

    @property
    def all_passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts.values())


def run_experiment(law: RenewalLaw, age_first: float, age_second: float,
                   threshold: float, moment_orders=(1.0,), rates=(),
                   t_grid=(), n_replicas: int = 10_000, seed: int = 0,
                   overlap_grid: int = 256, residual_grid: int = 33,
                   event_cap: int = 100_000,
                   tv_bins: int | None = None) -> ExperimentResult:
    """Bounds and simulation side by side, with dominance verdicts.

    Deterministic for a fixed argument set: all randomness flows from
    counter-based streams keyed by the seed.
    """
    if n_replicas < 1:
        raise ValidationError("n_replicas", "need at least one replica")
    bounds = bound_report(law, age_first, age_second, threshold,
                          moment_orders=moment_orders, rates=rates,
                          t_grid=t_grid, overlap_grid=overlap_grid,
                          residual_grid=residual_grid)
    sample = simulate_pairs(law, age_first, age_second,
                            bounds.params.threshold,
                            replica_rng(seed, PAIR_STREAM), n_replicas,
                            event_cap=event_cap)
    verdicts: dict[str, dict] = {}
    moments = {}
    for order in bounds.moment_orders:
        est, se = estimate_tau_functionals(sample.tau, order=order)
        moments[order] = (est, se)
        bound = bounds.moment_bounds[order]
        verdicts[f"moment:{order:g}"] = {
            "passed": bool(est <= bound + 3.0 * se),
            "estimate": est, "std_error": se, "bound": bound,
        }
    mgfs = {}
    for rate in bounds.rates:
        est, se = estimate_tau_functionals(sample.tau, rate=rate)
        mgfs[rate] = (est, se)
        bound = bounds.mgf_bounds[rate]
        verdicts[f"mgf:{rate:g}"] = {
            "passed": bool(est <= bound + 3.0 * se),
            "estimate": est, "std_error": se, "bound": bound,
        }
    tv_points: list[tuple[float, float]] = []
    curves = list(bounds.tv_moment_curves.values()) + list(
        bounds.tv_mgf_curves.values())
    for j, t in enumerate(t_grid):
        est = empirical_tv(law, age_first, float(t), n_replicas,
                           replica_rng(seed, TV_STREAM_BASE + j), bins=tv_bins)
        tv_points.append((float(t), est.value))
        if curves:
            bound = min(curve[j][1] for curve in curves)
            margin = est.noise_floor + 3.0 * est.std_error
            verdicts[f"tv:{t:g}"] = {
                "passed": bool(est.value <= bound + margin),
                "estimate": est.value, "margin": margin, "bound": bound,
            }
    tau = np.asarray(sample.tau, dtype=float)
    sim = SimReport(
        law=law.spec_dict(), seed=int(seed), n_replicas=int(n_replicas),
        age_first=float(age_first), age_second=float(age_second),
        threshold=bounds.params.threshold,
        tau_count=int(tau.size), tau_mean=float(tau.mean()),
        tau_digest=hashlib.sha256(tau.tobytes()).hexdigest(),
        moments=moments, mgfs=mgfs,
        attempt_success_rate=sample.attempt_success_rate,
        eligible_fraction=sample.eligible_fraction,
        mean_kappa=sample.mean_kappa,
        empirical_tv=tv_points)
    return ExperimentResult(bounds=bounds, sim=sim, verdicts=verdicts, tau=tau)
