"""Analyst-side estimation from debiased histograms and privatized reports.

Nothing in this module sees raw samples: inputs are debiased histograms,
sign tallies, and public plan parameters. The replay machinery in the
protocols module re-runs these functions from a transcript alone, which is
the executable proof of that boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

from ldpgauss.aggregation import (
    MalformedInputError,
    PairedHistogram,
    QuadHistogram,
    SignHistogram,
)
from ldpgauss.numerics import erf_inv
from ldpgauss.randomizers import LatticeSpec


@dataclass(frozen=True)
class LevelPlan:
    """Contiguous level range with the subgroup size and budgets behind it."""

    l_min: int
    l_max: int
    k: int
    beta: float
    eps: float

    def __post_init__(self):
        if self.l_max < self.l_min:
            raise ValueError(f"empty level range [{self.l_min}, {self.l_max}]")
        if self.k < 1:
            raise ValueError(f"subgroup size must be at least 1, got {self.k}")

    @property
    def levels(self) -> range:
        return range(self.l_min, self.l_max + 1)

    @property
    def count(self) -> int:
        return self.l_max - self.l_min + 1


def mean_search_threshold(eps: float, k: int, level_count: int, beta: float) -> float:
    """Concentration slack psi = ((eps+4)/(eps sqrt 2)) sqrt(k ln(8L/beta)).

    Written as (1 + 4/eps)/sqrt(2) so the no-randomization limit stays finite.
    """
    return ((1.0 + 4.0 / eps) / math.sqrt(2.0)) * math.sqrt(
        k * math.log(8.0 * level_count / beta)
    )


def variance_threshold(eps: float, k: int, level_count: int, beta: float) -> float:
    """Slack tau = sqrt(2k ln(2L/beta)) + (1 + 4/eps) sqrt(2k ln(8L/beta))."""
    return math.sqrt(2.0 * k * math.log(2.0 * level_count / beta)) + (
        1.0 + 4.0 / eps
    ) * math.sqrt(2.0 * k * math.log(8.0 * level_count / beta))


def _require_levels(hists: Mapping[int, object], plan: LevelPlan) -> None:
    missing = [j for j in plan.levels if j not in hists]
    if missing:
        raise MalformedInputError(f"histograms missing for levels {missing}")


def _argmax_pair(bins) -> Tuple[int, int]:
    """Largest and second-largest bin indices; ties go to the smaller index."""
    order = sorted(range(4), key=lambda a: (-bins[a], a))
    return order[0], order[1]


def _residue_match(lo: int, hi: int, residue: int):
    """The unique integer in [lo, hi] congruent to residue mod 4, if any."""
    for c in range(lo, hi + 1):
        if c % 4 == residue:
            return c
    return None


def est_mean(
    beta: float,
    eps: float,
    hists: Dict[int, QuadHistogram],
    k: int,
    plan: LevelPlan,
) -> float:
    """Rough mean estimate by modular binary search over the level histograms.

    Starting from the top level with interval [0, 2^l_max], descend while the
    current level's histogram concentrates (max bin at least 0.52k + psi):
    each step keeps the subinterval whose position matches the heaviest
    residue and halves the scale. At the stopping level, the estimate is the
    largest interval point whose residue matches one of the two heaviest
    bins. The heaviest residue is recomputed at every level of the descent.

    If no interval point matches the heaviest residue (three consecutive
    integers cover only three of the four residues), the descent stops there,
    which is the same as declaring the level unconcentrated.
    """
    _require_levels(hists, plan)
    psi = mean_search_threshold(eps, k, plan.count, beta)
    threshold = 0.52 * k + psi

    # Interval at the current level, in units of 2^level: [lo, hi] covers
    # [lo * 2^j, hi * 2^j]. Kept per level because the final step reads the
    # interval of the stopping level, not the last narrowing.
    intervals: Dict[int, Tuple[int, int]] = {plan.l_max: (0, 1)}
    j = plan.l_max
    while j >= plan.l_min and hists[j].max_bin() >= threshold:
        lo, hi = intervals[j]
        heaviest = hists[j].argmax_bin()
        c = _residue_match(lo, hi, heaviest)
        if c is None:
            break
        intervals[j - 1] = (2 * c, 2 * c + 2)
        j -= 1

    j_stop = max(j, plan.l_min)
    lo, hi = intervals[j_stop]
    m1, m2 = _argmax_pair(hists[j_stop].bins)
    candidates = [c for c in range(lo, hi + 1) if c % 4 in (m1, m2)]
    # Only the top level (two candidate residues) can fail to match; fall
    # back to the interval's upper point to keep the search total.
    c_star = max(candidates) if candidates else hi
    return c_star * 2.0 ** j_stop


def est_var(
    beta: float,
    eps: float,
    hists: Dict[int, PairedHistogram],
    k: int,
    plan: LevelPlan,
) -> float:
    """Bracket sigma by the lowest level above which every paired histogram
    is concentrated (minimum bin at most 0.03k + tau).

    Concentration at level j signals that the bin width 2^j dominates the
    data spread. If even the top level fails the test, the top scale is
    returned as the estimate.
    """
    _require_levels(hists, plan)
    threshold = 0.03 * k + variance_threshold(eps, k, plan.count, beta)
    if hists[plan.l_max].min_bin() > threshold:
        return 2.0 ** plan.l_max
    lowest_all_concentrated = plan.l_max
    for j in range(plan.l_max, plan.l_min - 1, -1):
        if hists[j].min_bin() <= threshold:
            lowest_all_concentrated = j
        else:
            break
    return 2.0 ** lowest_all_concentrated


def refine_known_sigma(
    hist: SignHistogram, count: int, center: float, sigma: float
) -> float:
    """Refined mean from the sign-response skew around a known center.

    Converts the debiased skew into a standardized shift via the inverse
    error function and rescales: center + sigma * sqrt(2) * erf_inv(skew),
    with the argument saturated by the inversion's clamping policy.
    """
    if count <= 0:
        raise MalformedInputError(f"report count must be positive, got {count}")
    skew = (hist.plus - hist.minus) / count
    return center + sigma * math.sqrt(2.0) * erf_inv(skew)


def select_subgroup_kv(
    mu_hat1: float, lattices: Mapping[int, LatticeSpec]
) -> Tuple[int, float]:
    """Pick the subgroup whose lattice comes closest to the rough estimate.

    Returns (subgroup key, nearest lattice point). Distance ties between
    subgroups go to the smaller key; within a lattice, ties go to the lower
    point.
    """
    if not lattices:
        raise ValueError("no candidate subgroups")
    best_key = best_point = None
    best_dist = math.inf
    for key in sorted(lattices):
        point = lattices[key].nearest_point(mu_hat1)
        dist = abs(point - mu_hat1)
        if dist < best_dist:
            best_key, best_point, best_dist = key, point, dist
    return best_key, best_point


def select_subgroup_uv(
    sigma_hat: float, mu_hat1: float, plan: LevelPlan, rho: int
) -> Tuple[int, int, float]:
    """Pick the scale level and offset subgroup for the one-round refinement.

    The scale level j1 is log2(sigma_hat), which must land inside the plan's
    level range. Offset subgroups m = 1..rho carry lattices
    {m * 2^j1 + b * rho * 2^j1}; the winner is the one with the point nearest
    mu_hat1 (ties to the smaller m). Returns (j1, m, nearest point); the
    union of the lattices is every multiple of 2^j1, so the nearest point is
    within sigma_hat / 2 of mu_hat1.
    """
    mantissa, exponent = math.frexp(sigma_hat)
    if mantissa != 0.5:
        raise ValueError(f"sigma_hat must be a power of two, got {sigma_hat}")
    j1 = exponent - 1
    if j1 not in plan.levels:
        raise ValueError(f"log2(sigma_hat) = {j1} outside levels [{plan.l_min}, {plan.l_max}]")
    spacing = rho * 2.0 ** j1
    lattices = {m: LatticeSpec(offset=m * 2.0 ** j1, spacing=spacing) for m in range(1, rho + 1)}
    m_star, point = select_subgroup_kv(mu_hat1, lattices)
    return j1, m_star, point
