"""Shared test helpers: finite-difference gradient oracle, tiny markets."""

from __future__ import annotations

import numpy as np
import pytest

from slateauction import diffcore as dc
from slateauction.config import MarketConfig, ModelConfig
from slateauction.market import Candidate, ConstraintSet, MarketEnvironment, PageRequest


def make_candidate(cid, kind="ad", bid=1.0, value=1.0, ctr=0.5, cvr=0.5, brand=None, rank=None, features=None):
    return Candidate(
        id=cid,
        kind=kind,
        features=np.zeros(2) if features is None else np.asarray(features, dtype=float),
        bid=bid if kind == "ad" else 0.0,
        private_value=value if kind == "ad" else 0.0,
        pointwise_ctr=ctr,
        pointwise_cvr=cvr,
        brand=brand or cid,
        organic_rank=rank,
    )


def make_request(cands, k, constraints=None, request_id="r", seed=0):
    return PageRequest(
        request_id=request_id,
        candidates=cands,
        k=k,
        constraints=constraints or ConstraintSet(),
        seed=seed,
    )


def random_small_request(rng, max_items=6, max_k=3, feature_dim=3):
    """A random tiny instance with random constraints, for exhaustive oracles."""
    n_items = int(rng.integers(2, max_items + 1))
    k = int(rng.integers(1, min(max_k, n_items) + 1))
    n_ads = int(rng.integers(0, n_items + 1))
    cands = []
    for i in range(n_items):
        if i < n_ads:
            cands.append(
                make_candidate(
                    f"a{i}",
                    bid=float(rng.uniform(0.1, 3.0)),
                    value=float(rng.uniform(0.1, 3.0)),
                    ctr=float(rng.uniform(0.05, 0.9)),
                    cvr=float(rng.uniform(0.05, 0.9)),
                    brand=f"b{rng.integers(0, 3)}",
                    features=rng.normal(size=feature_dim),
                )
            )
        else:
            cands.append(
                make_candidate(
                    f"o{i}",
                    kind="organic",
                    ctr=float(rng.uniform(0.05, 0.9)),
                    cvr=float(rng.uniform(0.05, 0.9)),
                    rank=i - n_ads,
                    features=rng.normal(size=feature_dim),
                )
            )
    constraints = ConstraintSet(
        min_ad_start=int(rng.integers(1, k + 2)),
        max_ads=int(rng.integers(0, k + 1)),
        brand_dedup=bool(rng.integers(0, 2)),
        organic_order_fixed=bool(rng.integers(0, 2)),
    )
    return make_request(cands, k, constraints, request_id=f"r{rng.integers(1e6)}")


def numeric_vs_analytic(build_loss, params, h=1e-4, rtol=1e-4, max_entries=None, rng=None):
    """Central-difference check of d(build_loss)/d(param) for every tensor.

    ``build_loss`` recomputes the scalar loss from the params' current data,
    so each probe re-runs the whole graph. Checks every entry unless
    ``max_entries`` caps it (then a seeded random subset per tensor).
    Returns the worst relative error seen.
    """
    loss = build_loss()
    dc.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            assert rng is not None, "rng required when sampling entries"
            entries = rng.choice(n, size=max_entries, replace=False)
        else:
            entries = range(n)
        for idx in entries:
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(build_loss().data)
            flat[idx] = orig - h
            down = float(build_loss().data)
            flat[idx] = orig
            num = (up - down) / (2.0 * h)
            ana = analytic[name].reshape(-1)[idx]
            denom = max(1.0, abs(num), abs(ana))
            err = abs(num - ana) / denom
            worst = max(worst, err)
            assert err < rtol, f"{name}[{idx}]: analytic {ana} vs numeric {num} (rel {err:.2e})"
    return worst


@pytest.fixture
def tiny_market():
    """n=4 ads, m=3 organics, k=3: small enough for exhaustive oracles."""
    return MarketConfig(
        n_ads=4,
        n_organics=3,
        slots=3,
        feature_dim=4,
        min_ad_start=2,
        max_ads=2,
        seed=123,
    )


@pytest.fixture
def tiny_env(tiny_market):
    return MarketEnvironment(tiny_market)


@pytest.fixture
def small_model():
    return ModelConfig(d_model=8, blocks=1, heads=2, ffn_hidden=16, tower_hidden=8, alpha=1.0, seed=3)
