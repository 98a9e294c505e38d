"""Synthetic market environment with ground-truth list-wise externalities.

Click/conversion probabilities of a displayed item depend on the item itself
(a linear logit in its features), on its slot (position bias), and on its
immediate neighbours (a share of their mean logit). Reordering a slate
therefore changes outcomes whenever ``neighbor_weight`` is nonzero or the
position bias varies, which is exactly the effect a list-aware mechanism can
exploit and a pointwise one cannot.

Per-candidate pointwise priors are the externality-free probabilities
sigmoid(base logit), i.e. the best slot-independent estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .types import (
    AD,
    ORGANIC,
    Candidate,
    ConstraintSet,
    PageRequest,
    assert_feasible,
)


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


@dataclass
class GroundTruthModel:
    """Deterministic click/conversion generator behind the simulator."""

    position_bias: np.ndarray
    neighbor_weight: float
    ctr_weights: np.ndarray
    ctr_bias: float
    cvr_weights: np.ndarray
    cvr_bias: float

    def base_logit(self, candidate):
        return float(self.ctr_weights @ candidate.features + self.ctr_bias)

    def cvr_logit(self, candidate):
        return float(self.cvr_weights @ candidate.features + self.cvr_bias)

    def _list_probs(self, logits, k):
        logits = np.asarray(logits)
        neighbor = np.zeros(k)
        if k > 1:
            counts = np.full(k, 2.0)
            counts[0] = counts[-1] = 1.0
            sums = np.zeros(k)
            sums[:-1] += logits[1:]
            sums[1:] += logits[:-1]
            neighbor = sums / counts
        total = logits + self.position_bias[:k] + self.neighbor_weight * neighbor
        return _sigmoid(total)

    def list_ctr(self, candidates):
        return self._list_probs([self.base_logit(c) for c in candidates], len(candidates))

    def list_cvr(self, candidates):
        return self._list_probs([self.cvr_logit(c) for c in candidates], len(candidates))


def build_ground_truth(config):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    f = config.feature_dim
    k = config.slots
    span = config.position_bias_span
    position_bias = np.linspace(span / 2.0, -span / 2.0, k) if k > 1 else np.zeros(1)
    return GroundTruthModel(
        position_bias=position_bias,
        neighbor_weight=config.neighbor_weight,
        ctr_weights=rng.normal(0.0, 1.0 / np.sqrt(f), size=f),
        ctr_bias=config.ctr_bias,
        cvr_weights=rng.normal(0.0, 1.0 / np.sqrt(f), size=f),
        cvr_bias=config.cvr_bias,
    )


class MarketEnvironment:
    """Request sampler plus ground-truth scoring for one market config."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.model = build_ground_truth(config)
        self.constraints = ConstraintSet(
            min_ad_start=config.resolved_min_ad_start(),
            max_ads=config.resolved_max_ads(),
            brand_dedup=config.brand_dedup,
            organic_order_fixed=config.organic_order_fixed,
        )

    def sample_request(self, seed):
        return sample_request(self.config, seed, model=self.model, constraints=self.constraints)

    def sample_requests(self, base_seed, count):
        return [self.sample_request(request_seed(base_seed, i)) for i in range(count)]

    def true_list_ctr(self, items, request):
        return true_list_ctr(items, request, self.model)

    def true_list_cvr(self, items, request):
        return true_list_cvr(items, request, self.model)

    def simulate_feedback(self, items, request, seed):
        return simulate_feedback(items, request, self.model, seed)


def request_seed(base_seed, index):
    """A distinct request seed per (dataset seed, index) pair."""
    return base_seed * 1_000_003 + index


def sample_request(config, seed, model=None, constraints=None):
    """Draw one auction instance; byte-identical for identical (config, seed)."""
    if config.slots > config.n_ads + config.n_organics:
        raise ConfigError(
            f"slots={config.slots} exceeds pool {config.n_ads}+{config.n_organics}"
        )
    model = model or build_ground_truth(config)
    constraints = constraints or ConstraintSet(
        min_ad_start=config.resolved_min_ad_start(),
        max_ads=config.resolved_max_ads(),
        brand_dedup=config.brand_dedup,
        organic_order_fixed=config.organic_order_fixed,
    )
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, seed]))
    f = config.feature_dim
    n_brands = config.resolved_num_brands()
    candidates = []
    for i in range(config.n_ads):
        features = rng.normal(0.0, 1.0, size=f)
        value = float(rng.lognormal(config.value_log_mean, config.value_log_sigma))
        bid = value * float(rng.lognormal(0.0, config.bid_log_sigma))
        candidates.append(
            Candidate(
                id=f"ad-{i}",
                kind=AD,
                features=features,
                bid=bid,
                private_value=value,
                pointwise_ctr=float(_sigmoid(model.ctr_weights @ features + model.ctr_bias)),
                pointwise_cvr=float(_sigmoid(model.cvr_weights @ features + model.cvr_bias)),
                brand=f"brand-{rng.integers(0, n_brands)}",
            )
        )
    organics = []
    for j in range(config.n_organics):
        features = rng.normal(0.0, 1.0, size=f)
        organics.append(
            Candidate(
                id=f"org-{j}",
                kind=ORGANIC,
                features=features,
                bid=0.0,
                private_value=0.0,
                pointwise_ctr=float(_sigmoid(model.ctr_weights @ features + model.ctr_bias)),
                pointwise_cvr=float(_sigmoid(model.cvr_weights @ features + model.cvr_bias)),
                brand=f"org-brand-{j}",
            )
        )
    # Upstream ranking: organics ordered by expected order volume (ctr * cvr).
    organics.sort(key=lambda c: -c.pointwise_ctr * c.pointwise_cvr)
    for rank, cand in enumerate(organics):
        cand.organic_rank = rank
    return PageRequest(
        request_id=f"req-{seed}",
        candidates=candidates + organics,
        k=config.slots,
        constraints=constraints,
        seed=seed,
    )


def true_list_ctr(items, request, model):
    """Ground-truth CTR per slot for a feasible slate of candidate ids."""
    assert_feasible(items, request, context="true_list_ctr")
    return model.list_ctr([request.by_id(cid) for cid in items])


def true_list_cvr(items, request, model):
    assert_feasible(items, request, context="true_list_cvr")
    return model.list_cvr([request.by_id(cid) for cid in items])


def simulate_feedback(items, request, model, seed):
    """Bernoulli clicks and (click-gated) conversions; deterministic per seed.

    Both uniform draws happen unconditionally so the stream does not depend
    on realized clicks.
    """
    ctr = true_list_ctr(items, request, model)
    cvr = true_list_cvr(items, request, model)
    rng = np.random.default_rng(np.random.SeedSequence([2, seed]))
    u_click = rng.random(len(items))
    u_conv = rng.random(len(items))
    clicks = (u_click < ctr).astype(np.int64)
    conversions = ((u_conv < cvr) & (clicks == 1)).astype(np.int64)
    return clicks, conversions
