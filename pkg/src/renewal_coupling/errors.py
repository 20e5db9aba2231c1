"""Exception types shared across the package.

Every error that a caller can meaningfully react to gets its own class;
plain misuse of an API (bad argument values) raises ValueError directly.
"""

from __future__ import annotations


class RenewalCouplingError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(RenewalCouplingError):
    """A configuration value failed validation.

    Carries the offending field name so command-line output can point at it.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DivergentIntegralError(RenewalCouplingError):
    """A semi-infinite integral failed to converge (tail not decaying)."""


class DivergentSeriesError(RenewalCouplingError):
    """A geometric-type series was requested outside its convergence region."""


class DivergentMomentError(DivergentIntegralError):
    def __init__(self, order: float, detail: str = ""):
        self.order = order
        msg = f"moment of order {order} diverges"
        super().__init__(msg + (f": {detail}" if detail else ""))


class DivergentMGFError(DivergentIntegralError):
    """MGF requested at or above its divergence threshold."""

    def __init__(self, rate: float, threshold: float):
        self.rate = rate
        self.threshold = threshold
        super().__init__(
            f"moment generating function diverges at rate {rate!r}; "
            f"finite only below {threshold!r}"
        )


class ConditioningError(RenewalCouplingError):
    """Conditioning on an event of (numerically) zero probability."""


class NoCommonPartError(RenewalCouplingError):
    """The two densities have zero overlap, so no coupling draw can coincide."""


class ThresholdTooSmallError(RenewalCouplingError):
    """Age threshold does not exceed the mean-overshoot ratio."""

    def __init__(self, threshold: float, ratio: float):
        self.threshold = threshold
        self.ratio = ratio
        super().__init__(
            f"threshold {threshold!r} must exceed the second-to-first moment "
            f"ratio {ratio!r}"
        )


class NoExponentialRateError(RenewalCouplingError):
    """No exponential rate satisfies the geometric-contraction condition."""


class RateInadmissibleError(RenewalCouplingError):
    """Requested exponential rate violates the contraction condition."""


class NoCouplingPossibleError(RenewalCouplingError):
    """Overlap infimum is zero within tolerance; attempts cannot succeed."""


class EventCapExceededError(RenewalCouplingError):
    """Simulation exceeded its event cap before the processes coincided.

    The partial state is attached so the run can be resumed.
    """

    def __init__(self, state, events: int):
        self.state = state
        self.events = events
        super().__init__(f"event cap reached after {events} events; run is resumable")
