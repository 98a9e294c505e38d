"""Classical baselines and the mechanism-agnostic incentive audit harness.

A mechanism is anything with ``name``, ``allocate(request) -> items`` and
``pay(request, items) -> per-slot payments``; ``run`` bundles the two. The
audits only use that surface, so learned and classical mechanisms are checked
by the same code:

* ``audit_ir`` flags any (request, ad) whose per-click payment exceeds its bid.
* ``audit_ic`` estimates per-advertiser ex-post regret by rerunning the
  mechanism over a grid of bid misreports, holding everyone else fixed, and
  aggregates the truthfulness metric (dataset mean of regret normalized by
  display-run utility). Utilities use ground-truth environment CTRs, not
  model predictions, so no mechanism grades itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSlateError
from .evaluator import select_winner
from .market import assert_feasible, with_bid

UTILITY_FLOOR = 1e-9
IR_TOLERANCE = 1e-12


class Mechanism:
    """Base class; subclasses fill in allocate/pay."""

    name = "mechanism"

    def allocate(self, request):
        raise NotImplementedError

    def pay(self, request, items):
        raise NotImplementedError

    def run(self, request):
        items = self.allocate(request)
        return items, self.pay(request, items)


# -- uGSP ----------------------------------------------------------------------


def ugsp_rank_scores(request, alpha):
    """Rank score bid*ctr + alpha*ctr*cvr for every ad, plus the sort order."""
    ads = request.ads()
    scores = np.array([c.bid * c.pointwise_ctr + alpha * c.pointwise_ctr * c.pointwise_cvr for c in ads])
    order = sorted(range(len(ads)), key=lambda i: (-scores[i], i))
    return ads, scores, order


def ugsp_allocate(request, alpha):
    """Rank ads by score; charge each the next score netted of its own
    quality term, clamped into [0, bid] (guarded when ctr is 0).

    Returns (ranked ads, per-rank per-click payments).
    """
    ads, scores, order = ugsp_rank_scores(request, alpha)
    if not ads:
        raise InfeasibleSlateError("uGSP needs at least one ad in the request")
    ranked = [ads[i] for i in order]
    payments = np.zeros(len(ranked))
    for r, cand in enumerate(ranked):
        next_score = scores[order[r + 1]] if r + 1 < len(order) else 0.0
        if cand.pointwise_ctr <= 0.0:
            payments[r] = 0.0
            continue
        price = (next_score - alpha * cand.pointwise_ctr * cand.pointwise_cvr) / cand.pointwise_ctr
        payments[r] = min(max(price, 0.0), cand.bid)
    return ranked, payments


def default_ad_slots(request):
    """Evenly spaced ad template: min_ad_start, +3, +3, ... capped by max_ads."""
    c = request.constraints
    slots = []
    j = c.min_ad_start
    while j <= request.k and len(slots) < c.max_ads:
        slots.append(j)
        j += 3
    return tuple(slots)


def fixed_slot_allocate(request, ad_slots, alpha):
    """uGSP-ranked ads at the template slots, organics in rank order elsewhere.

    Returns (items, per-slot payments).
    """
    ad_slots = tuple(sorted(ad_slots))
    if any(j < 1 or j > request.k for j in ad_slots):
        raise ValueError(f"ad_slots {ad_slots} outside 1..k={request.k}")
    organics = sorted(request.organics(), key=lambda c: c.organic_rank)
    n_organic_slots = request.k - len(ad_slots)
    if len(organics) < n_organic_slots:
        raise InfeasibleSlateError(
            f"{request.request_id}: {len(organics)} organics cannot fill "
            f"{n_organic_slots} non-ad slots"
        )
    if ad_slots:
        ranked, rank_payments = ugsp_allocate(request, alpha)
        if len(ranked) < len(ad_slots):
            raise InfeasibleSlateError(
                f"{request.request_id}: {len(ranked)} ads cannot fill "
                f"{len(ad_slots)} ad slots"
            )
    else:
        ranked, rank_payments = [], np.zeros(0)
    items = []
    payments = np.zeros(request.k)
    ad_i = org_i = 0
    for slot in range(1, request.k + 1):
        if slot in ad_slots:
            items.append(ranked[ad_i].id)
            payments[slot - 1] = rank_payments[ad_i]
            ad_i += 1
        else:
            items.append(organics[org_i].id)
            org_i += 1
    return items, payments


class UgspFixedSlot(Mechanism):
    """The classical comparator: fixed ad positions, uGSP pricing, pointwise
    priors only (no externality awareness)."""

    def __init__(self, alpha, ad_slots=None, name="ugsp-fixed"):
        self.alpha = alpha
        self.ad_slots = ad_slots
        self.name = name

    def _template(self, request):
        return self.ad_slots if self.ad_slots is not None else default_ad_slots(request)

    def allocate(self, request):
        items, _ = fixed_slot_allocate(request, self._template(request), self.alpha)
        return items

    def pay(self, request, items):
        _, payments = fixed_slot_allocate(request, self._template(request), self.alpha)
        return payments

    def run(self, request):
        return fixed_slot_allocate(request, self._template(request), self.alpha)


class NgaMechanism(Mechanism):
    """The learned mechanism: beam-decode candidate slates from one scoring
    pass, pick the reward argmax, charge the pay tower's bid ratios."""

    def __init__(self, generator_net, evaluator_net, beam_size=20, name="nga"):
        self.generator = generator_net
        self.evaluator = evaluator_net
        self.beam_size = beam_size
        self.name = name

    def run(self, request):
        slates, z_values = self.generator.generate(request, self.beam_size)
        _, winner, _ = select_winner(self.evaluator, request, slates, z_values)
        return winner.items, winner.payments

    def run_full(self, request):
        """Like run() but returns the full winning Slate and all rewards."""
        slates, z_values = self.generator.generate(request, self.beam_size)
        pos, winner, rewards = select_winner(self.evaluator, request, slates, z_values)
        return winner, rewards, slates, z_values, pos

    def allocate(self, request):
        return self.run(request)[0]

    def pay(self, request, items):
        # Payments come from the same forward pass as the allocation.
        ran_items, payments = self.run(request)
        if ran_items != list(items):
            raise ValueError("pay() called with items this mechanism did not allocate")
        return payments


# -- audits --------------------------------------------------------------------


@dataclass
class AdRegret:
    ad_id: str
    regret: float
    u_truth: float
    u_display: float
    display_slot: int | None
    best_multiplier: float | None


@dataclass
class RequestAudit:
    request_id: str
    per_ad: list[AdRegret]
    psi_terms: float
    excluded: int


@dataclass
class RegretReport:
    """Per-advertiser misreport-grid regrets plus the aggregate ratio.

    ``psi`` is the dataset mean over requests of sum_i regret_i / u_display_i
    for the ads allocated by the display run, excluding (and counting) slots
    whose display utility is at or below the floor.
    """

    grid: list[float]
    requests: list[RequestAudit] = field(default_factory=list)
    psi: float = 0.0
    excluded: int = 0

    def to_dict(self):
        return {
            "grid": list(self.grid),
            "psi": self.psi,
            "excluded": self.excluded,
            "requests": [
                {
                    "request_id": r.request_id,
                    "psi_terms": r.psi_terms,
                    "excluded": r.excluded,
                    "per_ad": [vars(a) for a in r.per_ad],
                }
                for r in self.requests
            ],
        }


def _utilities(mechanism, request, model):
    """Run the mechanism; ground-truth utility per ad id (unallocated -> absent)."""
    items, payments = mechanism.run(request)
    assert_feasible(items, request, context=f"{mechanism.name} audit run")
    ctr = model.list_ctr([request.by_id(cid) for cid in items])
    out = {}
    for slot, cid in enumerate(items):
        cand = request.by_id(cid)
        if cand.is_ad:
            out[cid] = (slot, (cand.private_value - payments[slot]) * ctr[slot])
    return items, payments, out


def audit_ic(mechanism, requests, grid, model):
    """Empirical ex-post regret of every ad under grid misreports.

    For each ad the truthful baseline reruns the mechanism with that ad
    bidding its private value (everyone else at their logged bids); each grid
    multiplier g reruns it with bid = g * value. Regret is the best
    improvement over truthful, floored at 0. The aggregate normalizes by the
    display run's utilities.
    """
    report = RegretReport(grid=list(grid))
    psi_sum = 0.0
    for request in requests:
        _, _, display_util = _utilities(mechanism, request, model)
        per_ad = []
        psi_terms = 0.0
        excluded = 0
        for cand in request.ads():
            truth_req = with_bid(request, cand.id, cand.private_value)
            _, _, truth_util = _utilities(mechanism, truth_req, model)
            u_truth = truth_util.get(cand.id, (None, 0.0))[1]
            best_mis = -np.inf
            best_g = None
            for g in grid:
                mis_req = with_bid(request, cand.id, g * cand.private_value)
                _, _, mis_util = _utilities(mechanism, mis_req, model)
                u_mis = mis_util.get(cand.id, (None, 0.0))[1]
                if u_mis > best_mis:
                    best_mis = u_mis
                    best_g = g
            regret = max(0.0, best_mis - u_truth)
            slot, u_display = display_util.get(cand.id, (None, None))
            per_ad.append(
                AdRegret(
                    ad_id=cand.id,
                    regret=regret,
                    u_truth=u_truth,
                    u_display=u_display if u_display is not None else 0.0,
                    display_slot=slot,
                    best_multiplier=best_g,
                )
            )
            if slot is not None:
                if u_display > UTILITY_FLOOR:
                    psi_terms += regret / u_display
                else:
                    excluded += 1
        psi_sum += psi_terms
        report.requests.append(
            RequestAudit(
                request_id=request.request_id,
                per_ad=per_ad,
                psi_terms=psi_terms,
                excluded=excluded,
            )
        )
        report.excluded += excluded
    report.psi = psi_sum / len(requests) if requests else 0.0
    return report


def audit_ir(mechanism, requests):
    """Every (request, ad) paying more than its bid, beyond float tolerance."""
    violations = []
    for request in requests:
        items, payments = mechanism.run(request)
        for slot, cid in enumerate(items):
            cand = request.by_id(cid)
            if cand.is_ad and payments[slot] > cand.bid + IR_TOLERANCE:
                violations.append(
                    {
                        "request_id": request.request_id,
                        "ad_id": cid,
                        "slot": slot + 1,
                        "payment": float(payments[slot]),
                        "bid": float(cand.bid),
                    }
                )
    return violations
