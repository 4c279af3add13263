"""Coordinator side: merge site payloads and pick an estimator.

Each site ships its sampled raw values, its threshold ``C`` and three
averaged scalars (:class:`SiteSummary`).  The coordinator rebuilds every
``p`` from ``(x, C)``, estimates the aggregate MSE of both decodings from
the summaries alone, and decodes with whichever is smaller.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .exceptions import ConfigError, PayloadError
from .sampling import SamplingPlan, SiteVector, assign_probabilities

if TYPE_CHECKING:
    from .wire import SitePayload

logger = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    BMINMAX = "bminmax"
    MINMAX = "minmax"


@dataclass(frozen=True)
class SiteSummary:
    """Per-site averages over all ``d`` local elements.

    Attributes:
        v_bar: mean variance of the raw-value estimator.
        b_bar: mean absolute bias of the raw-value estimator.
        v_bar_mm: mean variance of the unbiased estimator.
    """

    v_bar: float
    b_bar: float
    v_bar_mm: float

    def __post_init__(self) -> None:
        for name in ("v_bar", "b_bar", "v_bar_mm"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise PayloadError(f"summary field {name} must be finite and >= 0, got {value}")


@dataclass
class AggregateEstimate:
    estimates: dict[int, float]
    mode: Mode
    est_mse_bminmax: float
    est_mse_minmax: float
    sites_merged: int

    def dense(self, dim: int) -> np.ndarray:
        """Estimates as a length-``dim`` array; keys outside are dropped."""
        out = np.zeros(dim)
        for key, value in self.estimates.items():
            if key < dim:
                out[key] = value
        return out


def compute_site_summary(vector: SiteVector, plan: SamplingPlan) -> SiteSummary:
    """Average B-MinMax variance, |bias| and MinMax variance over ``d``.

    Absent (sparse) keys and zeros contribute nothing to the sums but still
    count in the denominator.
    """
    x, p = vector.values, plan.probs
    if x.shape != p.shape:
        raise ConfigError("plan was not built for this vector")
    x2 = x * x
    var_b = p * (1 - p) * x2
    abs_bias = np.abs(x * (p - 1))
    safe_p = np.where(p > 0, p, 1.0)
    var_mm = np.where(p > 0, x2 * (1 - p) / safe_p, 0.0)
    d = float(vector.dim)
    return SiteSummary(
        float(var_b.sum() / d), float(abs_bias.sum() / d), float(var_mm.sum() / d)
    )


def estimate_aggregate_mse(summaries: Sequence[SiteSummary]) -> tuple[float, float]:
    """Per-element MSE estimates ``(raw-value, unbiased)`` for a k-site sum.

    The raw-value side is ``sum(v_bar) + sum(b_bar)**2``; the unbiased side
    has no bias term and is ``sum(v_bar_mm)``.
    """
    if len(summaries) == 0:
        raise ConfigError("need at least one site summary")
    v = math.fsum(s.v_bar for s in summaries)
    b = math.fsum(s.b_bar for s in summaries)
    v_mm = math.fsum(s.v_bar_mm for s in summaries)
    return v + b * b, v_mm


def choose_mode(est_mse_bminmax: float, est_mse_minmax: float) -> Mode:
    # ties go to the raw-value decoding: same accuracy, no divisions
    return Mode.BMINMAX if est_mse_bminmax <= est_mse_minmax else Mode.MINMAX


def _contributions(payload: "SitePayload", mode: Mode) -> np.ndarray:
    values = payload.values
    if payload.prescaled:
        if mode is Mode.BMINMAX:
            raise PayloadError(
                f"site {payload.site_id} sent unbiased values; only minmax decoding is possible"
            )
        return values
    if mode is Mode.BMINMAX:
        return values
    p = assign_probabilities(values, payload.threshold)
    if np.any(p == 0):
        raise PayloadError(f"corrupt payload: zero probability for a value from site {payload.site_id}")
    return values / p


def _check_sites(payloads: Sequence["SitePayload"]) -> None:
    if len(payloads) == 0:
        raise ConfigError("no payloads to aggregate")
    ids = [pl.site_id for pl in payloads]
    if len(set(ids)) != len(ids):
        logger.warning("duplicate site ids among payloads: %s", sorted(ids))


def _merge(payloads: Iterable["SitePayload"], mode: Mode) -> dict[int, float]:
    keys, contrib = [], []
    for pl in payloads:
        keys.append(pl.keys)
        contrib.append(_contributions(pl, mode))
    all_keys = np.concatenate(keys) if keys else np.empty(0, np.uint64)
    all_vals = np.concatenate(contrib) if contrib else np.empty(0)
    uniq, inverse = np.unique(all_keys, return_inverse=True)
    sums = np.bincount(inverse, weights=all_vals, minlength=uniq.size)
    return dict(zip(uniq.tolist(), sums.tolist()))


def aggregate_fixed(payloads: Sequence["SitePayload"], mode: Mode | str) -> dict[int, float]:
    """Per-key sum under a fixed decoding.

    ``bminmax`` sums raw values; ``minmax`` divides each value by its
    probability rebuilt from the payload threshold.  Keys missing from a
    site contribute 0.
    """
    mode = Mode(mode)
    _check_sites(payloads)
    return _merge(payloads, mode)


def adaptive_aggregate(payloads: Sequence["SitePayload"]) -> AggregateEstimate:
    """Decode with whichever estimator has the smaller estimated MSE."""
    _check_sites(payloads)
    if any(pl.prescaled for pl in payloads):
        est_b, est_m = math.inf, estimate_aggregate_mse([pl.summary for pl in payloads])[1]
        logger.info("prescaled payload present; forcing minmax decoding")
    else:
        est_b, est_m = estimate_aggregate_mse([pl.summary for pl in payloads])
    mode = choose_mode(est_b, est_m)
    return AggregateEstimate(_merge(payloads, mode), mode, est_b, est_m, len(payloads))
