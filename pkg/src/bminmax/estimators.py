"""scikit-learn style front end.

``MinMaxSampler`` treats each row of ``X`` as one site's vector: ``fit``
solves the per-row thresholds, ``transform`` draws a Poisson sample.
``MinMaxAggregator`` merges the resulting payloads.  The two compose in a
:class:`sklearn.pipeline.Pipeline`::

    pipe = make_pipeline(MinMaxSampler(ratio=4, output="payloads"),
                         MinMaxAggregator(mode="adaptive"))
    estimate = pipe.fit_transform(X)      # shape (1, n_features)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .aggregation import (
    Mode,
    adaptive_aggregate,
    aggregate_fixed,
    compute_site_summary,
    estimate_aggregate_mse,
)
from .exceptions import ConfigError
from .sampling import SiteVector, plan_for, poisson_sample, sample_size_for_ratio
from .wire import build_payload


def _as_sites(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64) if not hasattr(X, "shape") else X
    if np.ndim(X) == 1:
        X = np.reshape(X, (1, -1))
    return check_array(X, dtype=np.float64, ensure_all_finite=True)


class MinMaxSampler(TransformerMixin, BaseEstimator):
    """Poisson-sample each row with ``p = x**2 / (x**2 + C_row)``.

    Parameters
    ----------
    ratio : float, default=4.0
        Compression ratio; the expected sample size is ``n_features / ratio``.
        Ignored when ``n_samples`` is given.
    n_samples : float, optional
        Expected sample size per row.
    seed, trial : int
        Coordinates of the draw; a given ``(seed, trial)`` is reproducible.
    unbiased : bool, default=False
        Emit ``x / p`` for sampled entries instead of the raw ``x``.
    output : {"dense", "payloads"}
        ``transform`` returns an array shaped like ``X`` or a list of
        :class:`~bminmax.wire.SitePayload`.
    """

    def __init__(self, ratio=4.0, n_samples=None, seed=42, trial=0, unbiased=False,
                 output="dense"):
        self.ratio = ratio
        self.n_samples = n_samples
        self.seed = seed
        self.trial = trial
        self.unbiased = unbiased
        self.output = output

    def fit(self, X, y=None):
        X = _as_sites(X)
        if self.output not in ("dense", "payloads"):
            raise ConfigError(f"output must be 'dense' or 'payloads', got {self.output!r}")
        n = self.n_samples if self.n_samples is not None else sample_size_for_ratio(X.shape[1], self.ratio)
        self.vectors_ = [SiteVector(row, site_id=i) for i, row in enumerate(X)]
        self.plans_ = [plan_for(v, n) for v in self.vectors_]
        self.thresholds_ = np.array([p.threshold for p in self.plans_])
        self.probabilities_ = np.vstack([p.probs for p in self.plans_])
        self.summaries_ = [compute_site_summary(v, p) for v, p in zip(self.vectors_, self.plans_)]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "plans_")
        X = _as_sites(X)
        if X.shape != self.probabilities_.shape:
            raise ConfigError(f"X has shape {X.shape}, sampler was fitted on {self.probabilities_.shape}")
        vectors = [SiteVector(row, site_id=i) for i, row in enumerate(X)]
        draws = [poisson_sample(v, p, self.seed, self.trial) for v, p in zip(vectors, self.plans_)]
        if self.output == "payloads":
            return [build_payload(v, p, dr, s, prescaled=self.unbiased)
                    for v, p, dr, s in zip(vectors, self.plans_, draws, self.summaries_)]
        out = np.zeros_like(X)
        for i, dr in enumerate(draws):
            idx = dr.keys.astype(np.intp)
            out[i, idx] = dr.values / self.probabilities_[i, idx] if self.unbiased else dr.values
        return out

    def estimated_mse(self):
        """``(raw-value, unbiased)`` per-element aggregate MSE estimates."""
        check_is_fitted(self, "summaries_")
        return estimate_aggregate_mse(self.summaries_)


class MinMaxAggregator(TransformerMixin, BaseEstimator):
    """Sum site payloads per key under a fixed or adaptive decoding."""

    def __init__(self, mode="adaptive", n_features=None):
        self.mode = mode
        self.n_features = n_features

    def fit(self, payloads, y=None):
        payloads = list(payloads)
        if self.mode == "adaptive":
            result = adaptive_aggregate(payloads)
            self.mode_ = result.mode
            self.est_mse_ = (result.est_mse_bminmax, result.est_mse_minmax)
            self.estimates_ = result.estimates
        else:
            self.mode_ = Mode(self.mode)
            self.est_mse_ = estimate_aggregate_mse([p.summary for p in payloads])
            self.estimates_ = aggregate_fixed(payloads, self.mode_)
        self.n_sites_ = len(payloads)
        self.n_features_in_ = self.n_features or max(p.dim for p in payloads)
        return self

    def transform(self, payloads=None):
        """Dense aggregate of shape ``(1, n_features)``.

        Payloads passed here are aggregated afresh; with ``None`` the
        fitted estimate is returned.
        """
        if payloads is not None:
            self.fit(payloads)
        check_is_fitted(self, "estimates_")
        out = np.zeros((1, self.n_features_in_))
        for key, value in self.estimates_.items():
            if key < self.n_features_in_:
                out[0, key] = value
        return out

    def fit_transform(self, payloads, y=None, **fit_params):
        return self.fit(payloads).transform(None)
