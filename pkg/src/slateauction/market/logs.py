"""Logged impression datasets: generation, JSONL persistence, subsets.

File layout (JSON-lines, documented for external consumers):

    line 1:  {"schema": "slateauction-log", "version": 1, "market": {...}}
    line 2+: {"request_id", "seed", "request": {...}, "slate": [ids...],
              "clicks": [...], "conversions": [...], "payments": [...]}

Records embed the full request (candidates with features/bids/values) so the
mechanism can be rerun from the file alone. Floats round-trip bit-exactly
through json.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .environment import request_seed, simulate_feedback
from .types import DecodeState, PageRequest, assert_feasible

SCHEMA = "slateauction-log"
VERSION = 1


@dataclass(eq=False)
class LogRecord:
    request: PageRequest
    items: list[str]
    clicks: np.ndarray
    conversions: np.ndarray
    payments: np.ndarray
    seed: int

    @property
    def clicked(self):
        return bool(np.any(self.clicks))

    def to_dict(self):
        return {
            "request_id": self.request.request_id,
            "seed": self.seed,
            "request": self.request.to_dict(),
            "slate": list(self.items),
            "clicks": np.asarray(self.clicks).tolist(),
            "conversions": np.asarray(self.conversions).tolist(),
            "payments": np.asarray(self.payments).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            request=PageRequest.from_dict(d["request"]),
            items=list(d["slate"]),
            clicks=np.array(d["clicks"], dtype=np.int64),
            conversions=np.array(d["conversions"], dtype=np.int64),
            payments=np.array(d["payments"], dtype=np.float64),
            seed=d["seed"],
        )


def clicked_subset(records):
    """Records with at least one click (the conversion-loss subset)."""
    return [r for r in records if r.clicked]


def write_log(path, records, market_config_dict=None):
    path = Path(path)
    header = {"schema": SCHEMA, "version": VERSION, "market": market_config_dict or {}}
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def read_log(path):
    """Returns (market_config_dict, records)."""
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != SCHEMA:
            raise ValueError(f"{path}: not a {SCHEMA} file")
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported log version {header.get('version')}")
        records = [LogRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    return header.get("market", {}), records


def random_feasible_arrangement(items, request, rng, attempts=20):
    """A random reordering of ``items`` that satisfies the request constraints.

    Draws items per slot uniformly from the feasible set; dead ends retry.
    Returns None when no arrangement was found within ``attempts``.
    """
    pool = [request.index_of(cid) for cid in items]
    for _ in range(attempts):
        state = DecodeState(request)
        ok = True
        for slot in range(1, request.k + 1):
            mask = state.mask(slot)
            options = [i for i in pool if mask[i] and not state.chosen[i]]
            if not options:
                ok = False
                break
            state.place(options[rng.integers(0, len(options))])
        if ok:
            return [request.candidates[i].id for i in state.items]
    return None


def generate_log_dataset(env, logging_policy, num_requests, seed, epsilon=0.2):
    """Serve ``num_requests`` seeded auctions through ``logging_policy``.

    ``logging_policy(request) -> (items, payments)`` must emit feasible
    slates. With probability ``epsilon`` per request, the displayed order is
    replaced by a random feasible rearrangement of the same items (payments
    follow their items), so the log explores permutations instead of a single
    deterministic ordering.
    """
    rng = np.random.default_rng(np.random.SeedSequence([3, seed]))
    records = []
    for i in range(num_requests):
        rseed = request_seed(seed, i)
        request = env.sample_request(rseed)
        items, payments = logging_policy(request)
        assert_feasible(items, request, context="logging policy")
        payments = np.asarray(payments, dtype=np.float64)
        if epsilon > 0.0 and rng.random() < epsilon:
            shuffled = random_feasible_arrangement(items, request, rng)
            if shuffled is not None:
                pay_by_id = dict(zip(items, payments))
                items = shuffled
                payments = np.array([pay_by_id[cid] for cid in items])
        clicks, conversions = env.simulate_feedback(items, request, rseed)
        records.append(
            LogRecord(
                request=request,
                items=list(items),
                clicks=clicks,
                conversions=conversions,
                payments=payments,
                seed=rseed,
            )
        )
    return records


def dataset_config_dict(config):
    return dataclasses.asdict(config)
