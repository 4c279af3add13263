"""Per-site MinMax sampling: threshold solve, inclusion probabilities,
Poisson draws, and closed-form moments of the two point estimators.

A site holding ``x`` assigns each component the probability
``p = x**2 / (x**2 + C)`` where the threshold ``C`` is chosen so the
expected sample size equals ``n``.  Sampled components are always carried
as their raw value; the unbiased MinMax estimate ``x / p`` is formed on the
receiving side.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .exceptions import AssumptionError, ConfigError, DataError
from .rng import uniforms

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-308
SUM_RTOL = 1e-9
MAX_BISECT_ITER = 200


@dataclass
class SiteVector:
    """A site's local vector, dense or keyed.

    ``keys`` must be unique and strictly increasing.  For a dense vector
    ``dim == len(values)``; a sparse vector declares the size of its key
    space and every absent key is an implicit zero.
    """

    values: npt.NDArray[np.float64]
    keys: npt.NDArray[np.uint64] | None = None
    dim: int | None = None
    site_id: int = 0

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if self.keys is None:
            self.keys = np.arange(self.values.size, dtype=np.uint64)
        else:
            self.keys = np.ascontiguousarray(self.keys, dtype=np.uint64).ravel()
        if self.keys.shape != self.values.shape:
            raise DataError("keys and values differ in length")
        if self.keys.size > 1 and not np.all(self.keys[1:] > self.keys[:-1]):
            raise DataError("keys must be unique and strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite value in site vector")
        if self.dim is None:
            self.dim = int(self.values.size)
        if self.dim <= 0 or self.dim < self.values.size:
            raise DataError(f"dimension {self.dim} cannot hold {self.values.size} entries")

    @classmethod
    def dense(cls, values, site_id: int = 0) -> "SiteVector":
        return cls(np.asarray(values, dtype=np.float64), site_id=site_id)

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass
class SamplingPlan:
    """Inclusion probabilities aligned with a vector's entries."""

    threshold: float
    keys: npt.NDArray[np.uint64]
    probs: npt.NDArray[np.float64]
    target_n: float
    exact_mode: bool
    clamped: bool = False
    iterations: int = field(default=0, compare=False)

    @property
    def expected_size(self) -> float:
        return float(self.probs.sum())


@dataclass
class SampleDraw:
    """Realised Poisson sample: included keys with their raw values."""

    keys: npt.NDArray[np.uint64]
    values: npt.NDArray[np.float64]
    seed: int
    trial: int = 0

    @property
    def draw_count(self) -> int:
        return int(self.keys.size)


def assign_probabilities(values, threshold: float) -> npt.NDArray[np.float64]:
    """Return ``x**2 / (x**2 + C)`` elementwise.

    Zeros always get probability 0, including when ``C == 0``.  Nonzero
    entries are floored at ``PROB_FLOOR`` so that ``x / p`` stays finite;
    the coordinator calls this same function to rebuild ``p`` from a
    received value, which keeps both sides bit-identical.
    """
    x = np.asarray(values, dtype=np.float64)
    if threshold < 0 or not math.isfinite(threshold):
        raise ConfigError(f"threshold must be finite and >= 0, got {threshold}")
    nonzero = x != 0
    if threshold == 0:
        return nonzero.astype(np.float64)
    x2 = x * x
    p = x2 / (x2 + threshold)
    return np.where(nonzero, np.clip(p, PROB_FLOOR, 1.0), 0.0)


def _check_inputs(values, n: float) -> npt.NDArray[np.float64]:
    x = np.asarray(values, dtype=np.float64).ravel()
    if not (n > 0) or not math.isfinite(n):
        raise ConfigError(f"invalid sample size: {n}")
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise DataError(f"non-finite value at index {bad}")
    if not np.any(x != 0):
        raise DataError("no mass to sample")
    return x


def solve_threshold(values, n: float, keys=None) -> SamplingPlan:
    """Find ``C`` with ``sum(x**2 / (x**2 + C)) == n`` by bisection.

    The expected sample size is strictly decreasing in ``C``.  With ``m``
    nonzero entries it is at least ``n`` at ``C_lo = min(x**2) (m-n) / n``
    and at most ``n`` at ``C_hi = m max(x**2) / n``, so the bracket holds
    the unique root.  Bisection uses the geometric midpoint (the bracket
    can span hundreds of decades) and runs until the bracket can no longer
    be split in floating point, or 200 iterations.

    If ``n`` is at least the nonzero count every nonzero entry is sent with
    probability 1 (``exact_mode``) and ``C = 0``.

    Raises:
        ConfigError: ``n <= 0``.
        DataError: all-zero input or a non-finite value.
    """
    x = _check_inputs(values, n)
    key_arr = (
        np.arange(x.size, dtype=np.uint64)
        if keys is None
        else np.asarray(keys, dtype=np.uint64).ravel()
    )
    # solve in units of max|x| so squares stay inside float64 range
    scale = float(np.max(np.abs(x)))
    xs = x / scale
    nz = (xs * xs)[x != 0]
    m = nz.size
    if n >= m:
        return SamplingPlan(0.0, key_arr, assign_probabilities(x, 0.0), float(n), True)

    def excess(c: float) -> float:
        return float((nz / (nz + c)).sum()) - n

    # at lo every p >= n/m, at hi every p <= n/m
    lo = float(nz.min()) * (m - n) / n
    hi = m * float(nz.max()) / n
    f_lo, f_hi = excess(lo), excess(hi)
    it = 0
    while it < MAX_BISECT_ITER and f_lo != 0.0 and f_hi != 0.0:
        it += 1
        mid = math.sqrt(lo) * math.sqrt(hi)
        if not lo < mid < hi:
            break
        f_mid = excess(mid)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    c = (lo if abs(f_lo) <= abs(f_hi) else hi) * scale * scale
    if c == 0.0 or not math.isfinite(c):
        raise DataError("dynamic range of values exceeds float64; cannot solve threshold")

    x2 = x * x
    raw = x2 / (x2 + c)
    probs = assign_probabilities(x, c)
    clamped = bool(np.any((x != 0) & (raw < PROB_FLOOR)))
    if clamped:
        logger.warning("probabilities floored at %g for %d entries", PROB_FLOOR,
                       int(np.count_nonzero((x != 0) & (raw < PROB_FLOOR))))
    total = float(probs.sum())
    if abs(total - n) / n > SUM_RTOL:
        raise ArithmeticError(
            f"threshold solve missed tolerance: sum(p)={total!r}, n={n!r}"
        )
    return SamplingPlan(c, key_arr, probs, float(n), False, clamped, it)


def plan_for(vector: SiteVector, n: float) -> SamplingPlan:
    """Solve the threshold for ``vector`` with expected sample size ``n``."""
    return solve_threshold(vector.values, n, keys=vector.keys)


def sample_size_for_ratio(dim: int, ratio: float) -> float:
    """Expected sample size ``d / r`` for a compression ratio ``r``."""
    if not (ratio >= 1) or not math.isfinite(ratio):
        raise ConfigError(f"compression ratio must be >= 1, got {ratio}")
    return dim / ratio


def inclusion_mask(plan: SamplingPlan, seed: int, site_id: int, trial=0):
    """Boolean inclusion indicators; 2-d when ``trial`` is an array."""
    return uniforms(seed, site_id, trial, plan.keys) < plan.probs


def poisson_sample(
    vector: SiteVector, plan: SamplingPlan, seed: int, trial: int = 0
) -> SampleDraw:
    """Include each key independently with its probability.

    Included entries carry the raw value ``x`` (never ``x / p``).  The draw
    is a pure function of ``(seed, vector.site_id, trial)``.
    """
    if plan.keys.shape != vector.keys.shape or not np.array_equal(plan.keys, vector.keys):
        raise ConfigError("plan was not built for this vector")
    mask = inclusion_mask(plan, seed, vector.site_id, trial)
    return SampleDraw(vector.keys[mask], vector.values[mask], seed, trial)


def minmax_point_estimate(raw_value, p):
    """Unbiased estimate ``raw / p`` of a sampled component."""
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(p_arr <= 0):
        raise AssumptionError("a sampled value cannot have p = 0")
    est = np.asarray(raw_value, dtype=np.float64) / p_arr
    return float(est) if est.ndim == 0 else est


def analytic_minmax_mse(x, p):
    """MSE of the unbiased estimator, ``p*(x/p - x)**2 + (1-p)*x**2``.

    The expanded form is cross-checked against ``x**2 * (1-p) / p``.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise AssumptionError("undefined MSE for p = 0")
    expanded = p * (x / p - x) ** 2 + (1 - p) * x * x
    closed = x * x * (1 - p) / p
    if not np.allclose(expanded, closed, rtol=1e-12, atol=0.0):
        raise ArithmeticError("MinMax MSE forms disagree")
    return float(expanded) if expanded.ndim == 0 else expanded


def analytic_bminmax_moments(x, p):
    """Bias, variance and MSE of the raw-value (B-MinMax) estimator.

    Returns:
        ``(bias, variance, mse)`` with ``bias = x(p-1)``,
        ``variance = p (1-p) x**2`` and ``mse = x**2 (1-p)``.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    bias = x * (p - 1)
    variance = p * (1 - p) * x * x
    mse = x * x * (1 - p)
    if not np.allclose(mse, variance + bias * bias, rtol=1e-12, atol=0.0):
        raise ArithmeticError("bias-variance decomposition does not hold")
    if mse.ndim == 0:
        return float(bias), float(variance), float(mse)
    return bias, variance, mse


def mse_gap(x, p):
    """``MSE(unbiased) - MSE(raw) = x**2 (1-p)**2 / p``; positive on (0, 1).

    Requires ``x != 0`` and ``0 < p < 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(x == 0) or np.any(p <= 0) or np.any(p >= 1):
        raise AssumptionError("assumption violated: need x != 0 and 0 < p < 1")
    gap = x * x * (1 - p) ** 2 / p
    return float(gap) if gap.ndim == 0 else gap
