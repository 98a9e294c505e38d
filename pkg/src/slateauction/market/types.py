"""Auction domain types: candidates, requests, constraints, slates.

Slates are represented as ordered lists of candidate ids. Feasibility has two
layers:

* ``check_feasible(items, request)`` is the invariant every emitted slate must
  satisfy: k distinct ids, ad placement/count/brand rules, and organic items
  appearing in their fixed relative order.
* ``DecodeState`` is the stricter per-position filter used by the decoders:
  at any slot the only feasible organic is the lowest-ranked unused one, which
  makes decoded slates use an organic-ranking prefix.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import InfeasibleSlateError

AD = "ad"
ORGANIC = "organic"


@dataclass(eq=False)
class Candidate:
    id: str
    kind: str
    features: np.ndarray
    bid: float = 0.0
    private_value: float = 0.0
    pointwise_ctr: float = 0.0
    pointwise_cvr: float = 0.0
    brand: str = ""
    organic_rank: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.kind not in (AD, ORGANIC):
            raise ValueError(f"candidate kind must be '{AD}' or '{ORGANIC}', got {self.kind!r}")
        if self.kind == ORGANIC and (self.bid != 0.0 or self.private_value != 0.0):
            raise ValueError(f"organic candidate {self.id} must have zero bid and value")
        for name in ("pointwise_ctr", "pointwise_cvr"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{self.id}: {name}={p} outside [0, 1]")

    @property
    def is_ad(self):
        return self.kind == AD

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["features"] = self.features.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ConstraintSet:
    """Business constraints checkable per (position, partial slate, item).

    ``min_ad_start`` is 1-based; a value of k+1 bans ads outright.
    """

    min_ad_start: int = 1
    max_ads: int = 10**9
    brand_dedup: bool = True
    organic_order_fixed: bool = True

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(eq=False)
class PageRequest:
    request_id: str
    candidates: list[Candidate]
    k: int
    constraints: ConstraintSet
    seed: int = 0

    def __post_init__(self):
        if self.k > len(self.candidates):
            raise ValueError(
                f"{self.request_id}: k={self.k} exceeds {len(self.candidates)} candidates"
            )
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.request_id}: duplicate candidate ids")

    @property
    def n_candidates(self):
        return len(self.candidates)

    def index_of(self, cand_id):
        for i, c in enumerate(self.candidates):
            if c.id == cand_id:
                return i
        raise KeyError(f"{self.request_id}: unknown candidate id {cand_id!r}")

    def by_id(self, cand_id):
        return self.candidates[self.index_of(cand_id)]

    def ads(self):
        return [c for c in self.candidates if c.is_ad]

    def organics(self):
        return [c for c in self.candidates if not c.is_ad]

    def bids(self):
        return np.array([c.bid for c in self.candidates])

    def to_dict(self):
        return {
            "request_id": self.request_id,
            "k": self.k,
            "seed": self.seed,
            "constraints": self.constraints.to_dict(),
            "candidates": [c.to_dict() for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            request_id=d["request_id"],
            candidates=[Candidate.from_dict(c) for c in d["candidates"]],
            k=d["k"],
            constraints=ConstraintSet.from_dict(d["constraints"]),
            seed=d.get("seed", 0),
        )


def with_bid(request, cand_id, new_bid):
    """A copy of the request where one ad bids ``new_bid`` (others intact)."""
    idx = request.index_of(cand_id)
    cands = list(request.candidates)
    cands[idx] = dataclasses.replace(cands[idx], bid=float(new_bid))
    return PageRequest(
        request_id=request.request_id,
        candidates=cands,
        k=request.k,
        constraints=request.constraints,
        seed=request.seed,
    )


def without_candidate(request, cand_id):
    """A copy of the request with one candidate removed from the pool."""
    cands = [c for c in request.candidates if c.id != cand_id]
    return PageRequest(
        request_id=request.request_id,
        candidates=cands,
        k=request.k,
        constraints=request.constraints,
        seed=request.seed,
    )


@dataclass(eq=False)
class Slate:
    """An ordered display list with per-slot predictions and payments.

    Payments are per click, defined as bid * payment_ratio, so payment <= bid
    holds by construction and organics pay exactly 0.
    """

    items: list[str]
    list_ctr: np.ndarray
    list_cvr: np.ndarray
    payment_ratio: np.ndarray
    payments: np.ndarray

    def to_dict(self):
        return {
            "items": list(self.items),
            "list_ctr": np.asarray(self.list_ctr).tolist(),
            "list_cvr": np.asarray(self.list_cvr).tolist(),
            "payment_ratio": np.asarray(self.payment_ratio).tolist(),
            "payments": np.asarray(self.payments).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            items=list(d["items"]),
            list_ctr=np.array(d["list_ctr"]),
            list_cvr=np.array(d["list_cvr"]),
            payment_ratio=np.array(d["payment_ratio"]),
            payments=np.array(d["payments"]),
        )


# -- feasibility -------------------------------------------------------------


class RequestIndex:
    """Array views of a request used by the per-position decoders."""

    def __init__(self, request):
        self.request = request
        cands = request.candidates
        self.n = len(cands)
        self.is_ad = np.array([c.is_ad for c in cands])
        brands = {}
        self.brand_code = np.empty(self.n, dtype=np.int64)
        for i, c in enumerate(cands):
            self.brand_code[i] = brands.setdefault(c.brand, len(brands))
        self.n_brands = len(brands)
        organic_idx = [i for i, c in enumerate(cands) if not c.is_ad]
        organic_idx.sort(key=lambda i: cands[i].organic_rank)
        self.organic_order = np.array(organic_idx, dtype=np.int64)


class DecodeState:
    """Incremental feasibility filter over slot positions 1..k.

    ``mask(slot)`` marks the items selectable at that (1-based) slot given
    what was already placed; ``place(i)`` commits candidate index ``i``.
    """

    def __init__(self, request, index=None):
        self.idx = index or RequestIndex(request)
        self.constraints = request.constraints
        self.k = request.k
        self.chosen = np.zeros(self.idx.n, dtype=bool)
        self.brand_used = np.zeros(self.idx.n_brands, dtype=bool)
        self.ads_placed = 0
        self.organics_placed = 0
        self.items = []

    def clone(self):
        other = DecodeState.__new__(DecodeState)
        other.idx = self.idx
        other.constraints = self.constraints
        other.k = self.k
        other.chosen = self.chosen.copy()
        other.brand_used = self.brand_used.copy()
        other.ads_placed = self.ads_placed
        other.organics_placed = self.organics_placed
        other.items = list(self.items)
        return other

    def mask(self, slot):
        c = self.constraints
        idx = self.idx
        m = ~self.chosen
        if slot < c.min_ad_start or self.ads_placed >= c.max_ads:
            m = m & ~idx.is_ad
        if c.brand_dedup:
            m = m & ~self.brand_used[idx.brand_code]
        if c.organic_order_fixed and len(idx.organic_order) > 0:
            allowed = np.zeros(idx.n, dtype=bool)
            if self.organics_placed < len(idx.organic_order):
                allowed[idx.organic_order[self.organics_placed]] = True
            m = m & (idx.is_ad | allowed)
        return m

    def active_constraints(self, slot):
        names = []
        c = self.constraints
        if slot < c.min_ad_start:
            names.append(f"min_ad_start={c.min_ad_start}")
        if self.ads_placed >= c.max_ads:
            names.append(f"max_ads={c.max_ads}")
        if c.brand_dedup:
            names.append("brand_dedup")
        if c.organic_order_fixed:
            names.append("organic_order_fixed")
        names.append("no_duplicates")
        return names

    def place(self, i):
        self.chosen[i] = True
        self.brand_used[self.idx.brand_code[i]] = True
        if self.idx.is_ad[i]:
            self.ads_placed += 1
        else:
            self.organics_placed += 1
        self.items.append(i)


def check_feasible(items, request):
    """Return a list of human-readable violations; empty means feasible."""
    violations = []
    c = request.constraints
    if len(items) != request.k:
        violations.append(f"slate length {len(items)} != k={request.k}")
    if len(set(items)) != len(items):
        violations.append("duplicate items in slate")
    known = {cand.id: cand for cand in request.candidates}
    cands = []
    for cid in items:
        if cid not in known:
            violations.append(f"unknown candidate id {cid!r}")
        else:
            cands.append(known[cid])
    if len(cands) != len(items):
        return violations
    ads = [(j, cand) for j, cand in enumerate(cands, start=1) if cand.is_ad]
    for j, cand in ads:
        if j < c.min_ad_start:
            violations.append(f"ad {cand.id} at slot {j} before min_ad_start={c.min_ad_start}")
    if len(ads) > c.max_ads:
        violations.append(f"{len(ads)} ads exceed max_ads={c.max_ads}")
    if c.brand_dedup:
        seen = {}
        for j, cand in enumerate(cands, start=1):
            if cand.brand in seen:
                violations.append(
                    f"brand {cand.brand!r} duplicated at slots {seen[cand.brand]} and {j}"
                )
            else:
                seen[cand.brand] = j
    if c.organic_order_fixed:
        ranks = [cand.organic_rank for cand in cands if not cand.is_ad]
        if any(b <= a for a, b in zip(ranks, ranks[1:])):
            violations.append(f"organic ranks out of order: {ranks}")
    return violations


def assert_feasible(items, request, context=""):
    violations = check_feasible(items, request)
    if violations:
        where = f" in {context}" if context else ""
        raise InfeasibleSlateError(
            f"infeasible slate{where} for {request.request_id}: " + "; ".join(violations)
        )


def candidate_input_rows(request):
    """Raw per-candidate input rows for the neural models.

    Row = [features, log1p(bid), pointwise_ctr, pointwise_cvr, is_ad flag];
    width = feature_dim + 4.
    """
    rows = np.empty((request.n_candidates, request.candidates[0].features.size + 4))
    for i, cand in enumerate(request.candidates):
        rows[i, :-4] = cand.features
        rows[i, -4] = np.log1p(cand.bid)
        rows[i, -3] = cand.pointwise_ctr
        rows[i, -2] = cand.pointwise_cvr
        rows[i, -1] = 1.0 if cand.is_ad else 0.0
    return rows


def input_width(feature_dim):
    return feature_dim + 4
