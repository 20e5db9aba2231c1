"""Overlap decomposition of two densities and the joint coincidence sampler.

Two absolutely continuous laws on [0, inf) are decomposed into a common part
(the pointwise minimum of the densities, or any supplied minorant of it) and
two residual parts.  Drawing from the decomposition with three uniforms
produces a pair of variables with the prescribed marginals that are exactly
equal whenever the first uniform falls below the overlap mass.

The exact-minimum decomposition is represented piecewise: crossover points
of the two densities are located by a sign-change scan plus root refinement,
and between crossovers the common part coincides with one of the two input
laws.  Its distribution function and quantile therefore reduce to the owner
law's, which keeps the sampler exact and fast; only residual quantiles need
bisection, and those are bracketed inside a single segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, optimize

from . import numerics
from .dist_core import RenewalLaw
from .errors import NoCommonPartError, RenewalCouplingError

_SCAN_CELLS = 2048
_FULL_OVERLAP = 1.0 - 1e-12


class CoupledPair(NamedTuple):
    first: float
    second: float
    coincided: bool


@dataclass(frozen=True)
class Minorant:
    """A sub-minimal common density: pdf(s) <= min(f1(s), f2(s)) pointwise.

    The cumulative table must cover the support; mass is the table total.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    grid: np.ndarray
    cumulative: np.ndarray
    mass: float

    @classmethod
    def from_pdf(cls, pdf: Callable, cutoff: float, points: int = 2 ** 14 + 1):
        grid = np.linspace(0.0, float(cutoff), points)
        dens = np.asarray(pdf(grid), dtype=float)
        if np.any(dens < 0.0):
            raise ValueError("minorant density must be nonnegative")
        cum = integrate.cumulative_simpson(dens, x=grid, initial=0.0)
        cum = np.maximum.accumulate(cum)
        return cls(pdf=pdf, grid=grid, cumulative=cum, mass=float(cum[-1]))


class OverlapSplit:
    """Common/residual decomposition of two laws.

    Not constructed directly; use :func:`split`.
    """

    def __init__(self, law1: RenewalLaw, law2: RenewalLaw, kappa: float,
                 crossings: np.ndarray, owners: np.ndarray,
                 cutoff: float, minorant: Minorant | None = None):
        self.law1 = law1
        self.law2 = law2
        self.kappa = kappa
        self.crossings = crossings
        self.owners = owners
        self.cutoff = cutoff
        self.minorant = minorant
        self._laws = (law1, law2)
        if minorant is None:
            lefts = np.concatenate([[0.0], crossings])
            self._lefts = lefts
            f_left = np.where(owners == 0, law1.cdf(lefts), law2.cdf(lefts))
            rights = np.concatenate([crossings, [np.inf]])
            f_right = np.where(
                np.isinf(rights), 1.0,
                np.where(owners == 0, law1.cdf(rights), law2.cdf(rights)))
            seg_mass = np.maximum(f_right - f_left, 0.0)
            self._f_left = f_left
            self._prefix = np.cumsum(seg_mass)
            self._prefix_lo = self._prefix - seg_mass
            self._rights = rights
            self._res_cum = []
            for i, law in enumerate(self._laws):
                fi_left = law.cdf(lefts)
                fi_right = np.where(np.isinf(rights), 1.0, law.cdf(rights))
                res = np.maximum((fi_right - fi_left) - seg_mass, 0.0)
                cum = np.cumsum(res)
                if cum[-1] > 0:
                    # pin the total so targets (1-kappa)*u never overshoot
                    cum = cum * ((1.0 - kappa) / cum[-1])
                self._res_cum.append(cum)

    # -- common part ----------------------------------------------------------

    @property
    def residuals_empty(self) -> bool:
        return 1.0 - self.kappa < 1e-12

    def common_cdf(self, s):
        """Mass of the common part below s (ranges over [0, kappa])."""
        s = np.asarray(s, dtype=float)
        if self.minorant is not None:
            out = np.interp(s, self.minorant.grid, self.minorant.cumulative,
                            right=self.minorant.mass)
            return out if out.ndim else float(out)
        k = np.searchsorted(self.crossings, s, side="right")
        f1 = self.law1.cdf(s)
        f2 = self.law2.cdf(s)
        fo = np.where(self.owners[k] == 0, f1, f2)
        out = self._prefix_lo[k] + fo - self._f_left[k]
        return out if out.ndim else float(out)

    def common_quantile(self, m):
        """Inverse of common_cdf for target masses in [0, kappa)."""
        m = np.asarray(m, dtype=float)
        if self.minorant is not None:
            out = np.interp(m, self.minorant.cumulative, self.minorant.grid)
            return out if out.ndim else float(out)
        scalar = m.ndim == 0
        m = np.atleast_1d(m)
        k = np.searchsorted(self._prefix, m, side="left")
        k = np.minimum(k, len(self._prefix) - 1)
        target = self._f_left[k] + (m - self._prefix_lo[k])
        target = np.clip(target, 0.0, 1.0 - 1e-16)
        out = np.empty_like(target)
        first_owned = self.owners[k] == 0
        if np.any(first_owned):
            out[first_owned] = self.law1.quantile(target[first_owned])
        if np.any(~first_owned):
            out[~first_owned] = self.law2.quantile(target[~first_owned])
        return float(out[0]) if scalar else out

    # -- residual parts --------------------------------------------------------

    def residual_cdf(self, which: int, s):
        """Mass of residual part `which` below s (ranges over [0, 1-kappa])."""
        law = self._laws[which]
        s = np.asarray(s, dtype=float)
        out = np.maximum(law.cdf(s) - self.common_cdf(s), 0.0)
        return out if out.ndim else float(out)

    def residual_quantile(self, which: int, m):
        if self.residuals_empty:
            raise RenewalCouplingError(
                "residual parts are empty (laws fully overlap)")
        law = self._laws[which]
        m = np.asarray(m, dtype=float)
        scalar = m.ndim == 0
        m = np.atleast_1d(m)
        if self.minorant is None:
            cum = self._res_cum[which]
            k = np.searchsorted(cum, m, side="left")
            k = np.minimum(k, len(cum) - 1)
            lo = self._lefts[k]
            hi = np.where(np.isinf(self._rights[k]), self.cutoff,
                          self._rights[k])
        else:
            lo = np.zeros_like(m)
            hi = np.full_like(m, self.cutoff)
        out = numerics.invert_monotone(
            lambda s: self.residual_cdf(which, s), m, lo, hi)
        return float(out[0]) if scalar else out


def _crossing_structure(law1: RenewalLaw, law2: RenewalLaw,
                        cells: int = _SCAN_CELLS):
    """Crossover points of the two densities and the owner of each segment.

    The owner of a segment is the law whose density is the smaller one
    there, i.e. the law the common part locally coincides with.  Ownership
    comes from the sign of f1 - f2 carried across exact-zero plateaus, not
    from a point comparison: where both densities underflow to zero a
    midpoint probe cannot tell the laws apart.
    """
    cutoff = max(law1.tail_cutoff(), law2.tail_cutoff())
    grid = np.linspace(0.0, cutoff, cells + 1)
    diff = np.asarray(law1.pdf(grid) - law2.pdf(grid), dtype=float)
    dfun = lambda s: float(law1.pdf(s) - law2.pdf(s))
    carried = np.sign(diff)
    for i in range(1, carried.size):
        if carried[i] == 0:
            carried[i] = carried[i - 1]
    flips = np.nonzero(carried[1:] * carried[:-1] < 0)[0]
    crossings: list[float] = []
    pre_signs: list[float] = []
    for i in flips:
        lo, hi = float(grid[i]), float(grid[i + 1])
        if diff[i] == 0.0:
            root = lo
        elif diff[i + 1] == 0.0:
            root = hi
        else:
            root = optimize.brentq(dfun, lo, hi, xtol=1e-13)
        if root > 0.0 and (not crossings or root - crossings[-1] > 1e-12):
            crossings.append(root)
            pre_signs.append(float(carried[i]))
    seg_signs = np.concatenate([pre_signs, [carried[-1]]])
    # diff > 0 on a segment means f2 is the minimum there
    owners = np.where(seg_signs > 0, 1, 0)
    return np.asarray(crossings, dtype=float), owners, cutoff


def overlap(law1: RenewalLaw, law2: RenewalLaw, cells: int = _SCAN_CELLS) -> float:
    """Mass of the pointwise minimum of the two densities, in [0, 1].

    Crossovers are located first so each segment integrates a single law's
    density exactly through its distribution function.
    """
    if law1 is law2:
        return 1.0
    crossings, owners, _ = _crossing_structure(law1, law2, cells)
    lefts = np.concatenate([[0.0], crossings])
    rights = np.concatenate([crossings, [np.inf]])
    laws = (law1, law2)
    total = 0.0
    for a, b, o in zip(lefts, rights, owners):
        fb = 1.0 if np.isinf(b) else float(laws[o].cdf(b))
        total += max(fb - float(laws[o].cdf(a)), 0.0)
    return min(total, 1.0)


def split(law1: RenewalLaw, law2: RenewalLaw,
          minorant: Minorant | None = None,
          cells: int = _SCAN_CELLS) -> OverlapSplit:
    """Build the common/residual decomposition of two laws.

    With `minorant` given, the common part is the supplied sub-minimal
    density instead of the exact minimum; it is validated pointwise on a
    grid before use.  Raises NoCommonPartError when the overlap mass is
    zero within tolerance.
    """
    if minorant is not None:
        probe = np.linspace(0.0, float(minorant.grid[-1]), 512)
        low = np.minimum(law1.pdf(probe), law2.pdf(probe))
        if np.any(np.asarray(minorant.pdf(probe)) > low + 1e-10):
            raise ValueError("minorant density exceeds the pointwise minimum")
        if minorant.mass <= 1e-12:
            raise NoCommonPartError("minorant carries no mass")
        cutoff = max(law1.tail_cutoff(), law2.tail_cutoff(),
                     float(minorant.grid[-1]))
        return OverlapSplit(law1, law2, kappa=minorant.mass,
                            crossings=np.empty(0), owners=np.zeros(1, int),
                            cutoff=cutoff, minorant=minorant)
    if law1 is law2:
        return OverlapSplit(law1, law2, kappa=1.0, crossings=np.empty(0),
                            owners=np.zeros(1, int), cutoff=law1.tail_cutoff())
    crossings, owners, cutoff = _crossing_structure(law1, law2, cells)
    spl = OverlapSplit(law1, law2, kappa=1.0, crossings=crossings,
                       owners=owners, cutoff=cutoff)
    kappa = float(spl._prefix[-1])
    if kappa <= 1e-12:
        raise NoCommonPartError("densities have zero overlap")
    return OverlapSplit(law1, law2, kappa=min(kappa, 1.0), crossings=crossings,
                        owners=owners, cutoff=cutoff)


def _draws_from_uniforms(spl: OverlapSplit, u: np.ndarray, u_common: np.ndarray,
                         u_resid: np.ndarray):
    """Vectorized constructive sampler: three uniform arrays in, pair out."""
    coincided = u < spl.kappa
    first = np.empty_like(u)
    second = np.empty_like(u)
    if np.any(coincided):
        v = spl.common_quantile(spl.kappa * u_common[coincided])
        first[coincided] = v
        second[coincided] = v
    rest = ~coincided
    if np.any(rest):
        m = (1.0 - spl.kappa) * u_resid[rest]
        first[rest] = spl.residual_quantile(0, m)
        second[rest] = spl.residual_quantile(1, m)
    return first, second, coincided


def coupled_sample(spl: OverlapSplit, u: float, u_common: float,
                   u_resid: float) -> CoupledPair:
    """One coupled draw from three uniforms in [0, 1).

    When u falls below the overlap mass both coordinates equal the common
    quantile at mass kappa*u_common; otherwise each coordinate is its own
    residual quantile at mass (1-kappa)*u_resid.  Either way the marginal
    law of coordinate i is law_i.
    """
    for name, val in (("u", u), ("u_common", u_common), ("u_resid", u_resid)):
        if not 0.0 <= val < 1.0:
            raise ValueError(f"{name} must lie in [0, 1), got {val!r}")
    first, second, coin = _draws_from_uniforms(
        spl, np.array([u]), np.array([u_common]), np.array([u_resid]))
    return CoupledPair(float(first[0]), float(second[0]), bool(coin[0]))


def coupled_sample_batch(spl: OverlapSplit, rng: np.random.Generator, n: int):
    """n coupled draws; returns (first, second, coincided) arrays.

    Consumes exactly 3n uniforms in draw order, matching n scalar calls.
    """
    u = rng.random((int(n), 3))
    return _draws_from_uniforms(spl, u[:, 0], u[:, 1], u[:, 2])
