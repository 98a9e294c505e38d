"""Business metrics over served outcome logs.

A metrics row reports revenue per 1000 impressions, click and conversion
percentages, the incentive regret percentage, and the mean platform
objective. Offline comparisons feed it ground-truth *expected* clicks (one
float per slot) rather than sampled ones, which removes Monte Carlo noise and
keeps reruns byte-identical; the formulas accept either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class OutcomeRecord:
    """One served request: what was shown, what it earned."""

    request_id: str
    items: list[str]
    clicks: np.ndarray
    conversions: np.ndarray
    payments: np.ndarray
    objective: float = 0.0

    @property
    def impressions(self):
        return len(self.items)

    def to_dict(self):
        return {
            "request_id": self.request_id,
            "items": list(self.items),
            "clicks": np.asarray(self.clicks).tolist(),
            "conversions": np.asarray(self.conversions).tolist(),
            "payments": np.asarray(self.payments).tolist(),
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            request_id=d["request_id"],
            items=list(d["items"]),
            clicks=np.array(d["clicks"], dtype=np.float64),
            conversions=np.array(d["conversions"], dtype=np.float64),
            payments=np.array(d["payments"], dtype=np.float64),
            objective=float(d.get("objective", 0.0)),
        )


@dataclass
class MetricsRow:
    """One comparison-table row; ctr/cvr/psi are percentages."""

    mechanism: str
    rpm: float
    ctr_percent: float
    cvr_percent: float
    psi_percent: float | None = None
    reward: float | None = None
    rt_ms_median: float | None = None
    rt_ms_p99: float | None = None


def compute_metrics(outcome_log, mechanism="", psi_percent=None, rt_ms=None, log_name="outcome log"):
    """Aggregate a served outcome log into a MetricsRow.

    rpm  = sum(clicks * payments) / impressions * 1000
    ctr% = sum(clicks) / impressions * 100
    cvr% = sum(conversions) / sum(clicks) * 100  (0 when there are no clicks)
    """
    records = list(outcome_log)
    if not records:
        raise ValueError(f"cannot compute metrics: {log_name} is empty")
    impressions = sum(r.impressions for r in records)
    # fsum: exactly-rounded totals, so record order cannot change the result
    clicks = math.fsum(float(c) for r in records for c in np.asarray(r.clicks))
    conversions = math.fsum(float(c) for r in records for c in np.asarray(r.conversions))
    revenue = math.fsum(
        float(c) * float(p)
        for r in records
        for c, p in zip(np.asarray(r.clicks), np.asarray(r.payments))
    )
    rpm = revenue / impressions * 1000.0
    ctr = clicks / impressions * 100.0
    cvr = conversions / clicks * 100.0 if clicks > 0 else 0.0
    reward = math.fsum(r.objective for r in records) / len(records)
    rt_median, rt_p99 = rt_ms if rt_ms else (None, None)
    return MetricsRow(
        mechanism=mechanism,
        rpm=rpm,
        ctr_percent=ctr,
        cvr_percent=cvr,
        psi_percent=psi_percent,
        reward=reward,
        rt_ms_median=rt_median,
        rt_ms_p99=rt_p99,
    )


def psi_percent_from_terms(per_request_terms):
    """The truthfulness metric as a percentage.

    ``per_request_terms`` holds, per request, the sum over its allocated ads
    of regret / truthful-run-display utility. The metric is the dataset mean,
    scaled to percent.
    """
    terms = list(per_request_terms)
    if not terms:
        return 0.0
    return float(np.mean(terms)) * 100.0
