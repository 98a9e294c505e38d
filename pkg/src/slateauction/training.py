"""Two-stage training: scorer on logged feedback, then allocator against it.

Stage 1 fits the evaluator's click/order towers by (masked) cross-entropy on
the exposed/clicked logged slates and shapes the pay tower with an augmented
Lagrangian: maximize predicted revenue sum(bid*ratio*theta) while penalizing
empirical ex-post regret, estimated by rerunning the full mechanism (score ->
beam -> winner -> payments) over a grid of bid misreports. Multipliers grow
with observed regret and never go negative.

Stage 2 freezes the evaluator and trains the allocation model by policy
gradient: each winning item's reward is its marginal contribution (winner
reward minus the best alternative slate's reward with that item removed),
weighting the log of its allocation probability at its slot.

Logged bids are treated as the advertisers' true values throughout training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Adam, Tensor
from .errors import (
    ConfigError,
    ContractViolationError,
    InfeasibleSlateError,
    NumericError,
    TrainingDivergedError,
)
from .evaluator import self_exclusion_bids
from .generator import slate_z_entries
from .market import candidate_input_rows, with_bid, without_candidate
from .mechanisms import NgaMechanism

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MisreportGrid:
    """Bid multipliers probed by the regret estimator; must contain 1.0."""

    multipliers: tuple = tuple(round(0.2 * i, 2) for i in range(1, 16))

    def __post_init__(self):
        if not self.multipliers:
            raise ConfigError("misreport grid must not be empty")
        if any(g <= 0 for g in self.multipliers):
            raise ConfigError("misreport multipliers must be > 0")
        if not any(abs(g - 1.0) < 1e-12 for g in self.multipliers):
            raise ConfigError("misreport grid must contain the truthful point 1.0")


@dataclass
class LagrangianState:
    """Per-slot multipliers and the quadratic penalty weight."""

    lam: np.ndarray
    rho: float = 1.0
    multiplier_step: float = 0.1
    multiplier_period: int = 100

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if np.any(self.lam < 0):
            raise ConfigError("Lagrange multipliers must be >= 0")
        if self.rho <= 0:
            raise ConfigError("rho must be > 0")

    def update(self, mean_slot_regret):
        self.lam = np.maximum(self.lam + self.multiplier_step * mean_slot_regret, 0.0)


# -- losses ----------------------------------------------------------------------


def _validate_probs(pred, what):
    if np.any(pred.data <= 0.0) or np.any(pred.data >= 1.0):
        raise NumericError(f"{what} probabilities must lie strictly in (0, 1)")


def binary_cross_entropy(pred, labels, mask=None):
    """Weighted-mean BCE; returns None when the mask has no active terms."""
    pred = dc.as_tensor(pred)
    _validate_probs(pred, "predicted")
    labels = np.asarray(labels, dtype=np.float64)
    terms = -(
        Tensor(labels) * dc.log(pred) + Tensor(1.0 - labels) * dc.log(1.0 - pred)
    )
    if mask is None:
        return dc.tsum(terms) * (1.0 / terms.size)
    mask = np.asarray(mask, dtype=np.float64)
    total = mask.sum()
    if total == 0:
        return None
    return dc.tsum(terms * Tensor(mask)) * (1.0 / total)


def loss_pctr(theta, clicks):
    """Mean click cross-entropy over records and slots (exposed set)."""
    return binary_cross_entropy(theta, clicks)


def loss_pcvr(gamma, conversions, click_mask):
    """Conversion cross-entropy over clicked slots only.

    Returns None (a skip signal, not an error) when nothing was clicked.
    """
    return binary_cross_entropy(gamma, conversions, mask=click_mask)


# -- mechanism reruns --------------------------------------------------------------


@dataclass(eq=False)
class MechanismRun:
    """One no-grad run of the learned mechanism on a request."""

    request: object
    items: list[str]
    indices: list[int]
    z_values: np.ndarray
    theta: np.ndarray
    payments: np.ndarray
    reward: float

    def ad_outcome(self, ad_id):
        """(slot, theta, payment) for an allocated ad, else None."""
        if ad_id in self.items:
            slot = self.items.index(ad_id)
            return slot, self.theta[slot], self.payments[slot]
        return None


def run_mechanism(gen_net, eval_net, request, beam_size):
    mech = NgaMechanism(gen_net, eval_net, beam_size)
    winner, rewards, slates, z_values, pos = mech.run_full(request)
    return MechanismRun(
        request=request,
        items=list(winner.items),
        indices=list(slates[pos].indices),
        z_values=z_values,
        theta=np.asarray(winner.list_ctr),
        payments=np.asarray(winner.payments),
        reward=float(rewards[pos]),
    )


def _utility(run, ad_id, value):
    out = run.ad_outcome(ad_id)
    if out is None:
        return 0.0
    _, theta, payment = out
    return (value - payment) * theta


@dataclass
class AdRegretEstimate:
    ad_id: str
    regret: float
    u_truth: float
    best_multiplier: float
    truth_slot: int | None


@dataclass
class RegretEstimate:
    request_id: str
    per_ad: list[AdRegretEstimate]
    truth_run: MechanismRun

    def regret_by_id(self):
        return {a.ad_id: a.regret for a in self.per_ad}

    def slot_regrets(self):
        """Per-slot regrets of the truthful run's slate (organics are 0)."""
        k = self.truth_run.request.k
        out = np.zeros(k)
        by_id = self.regret_by_id()
        for slot, cid in enumerate(self.truth_run.items):
            out[slot] = by_id.get(cid, 0.0)
        return out


def estimate_regret(request, gen_net, eval_net, grid, beam_size):
    """Per-advertiser ex-post regret under the current learned mechanism.

    The request's logged bids are treated as true values, so the truthful run
    is the request as-is; each (ad, multiplier) pair reruns the full
    mechanism with that single bid scaled. Utilities come from the scorer's
    own click predictions and payments. All regrets are >= 0 and exactly 0
    when the grid is {1.0}.
    """
    grid = grid.multipliers if isinstance(grid, MisreportGrid) else tuple(grid)
    with dc.no_grad():
        truth_run = run_mechanism(gen_net, eval_net, request, beam_size)
        per_ad = []
        for cand in request.ads():
            value = cand.bid
            u_truth = _utility(truth_run, cand.id, value)
            out = truth_run.ad_outcome(cand.id)
            best_mis = -np.inf
            best_g = None
            for g in grid:
                mis_run = run_mechanism(
                    gen_net, eval_net, with_bid(request, cand.id, g * value), beam_size
                )
                u_mis = _utility(mis_run, cand.id, value)
                if u_mis > best_mis:
                    best_mis = u_mis
                    best_g = g
            per_ad.append(
                AdRegretEstimate(
                    ad_id=cand.id,
                    regret=max(0.0, best_mis - u_truth),
                    u_truth=u_truth,
                    best_multiplier=best_g,
                    truth_slot=out[0] if out else None,
                )
            )
    return RegretEstimate(request_id=request.request_id, per_ad=per_ad, truth_run=truth_run)


def mean_slate_regret(requests, gen_net, eval_net, grid, beam_size):
    """Mean over requests of the mean regret of the ads the truthful run
    allocates; the quantity the Lagrangian pushes down."""
    totals = []
    for request in requests:
        est = estimate_regret(request, gen_net, eval_net, grid, beam_size)
        slate_ads = [a for a in est.per_ad if a.truth_slot is not None]
        if slate_ads:
            totals.append(float(np.mean([a.regret for a in slate_ads])))
        else:
            totals.append(0.0)
    return float(np.mean(totals)) if totals else 0.0


# -- payment loss -------------------------------------------------------------------


def _taped_slate(eval_net, request, items, z_values, indices):
    z_entries = slate_z_entries(z_values, indices)
    return eval_net.forward_slate(request, items, z_entries)


def loss_pay(requests, gen_net, eval_net, lagrangian, grid, beam_size):
    """Augmented-Lagrangian payment loss over a batch of requests.

    Per request: -(sum_slots bid*ratio*theta - sum_slots lam*rgt
    - rho/2 * sum_slots rgt^2), averaged over the batch. Regrets flow
    gradients through the scorer outputs of the truthful run and of each ad's
    best counterfactual run (located no-grad, then recomputed on tape).

    Returns (loss Tensor, mean per-slot regret values, mean truthful revenue).
    """
    grid = grid.multipliers if isinstance(grid, MisreportGrid) else tuple(grid)
    if np.any(lagrangian.lam < 0) or lagrangian.rho <= 0:
        raise ConfigError("invalid Lagrangian state: lam must be >= 0 and rho > 0")
    total = None
    slot_regret_sum = np.zeros(len(lagrangian.lam))
    revenue_sum = 0.0
    for request in requests:
        with dc.no_grad():
            truth_run = run_mechanism(gen_net, eval_net, request, beam_size)
        taped_truth = _taped_slate(
            eval_net, request, truth_run.items, truth_run.z_values, truth_run.indices
        )
        bids = np.array([request.by_id(cid).bid for cid in truth_run.items])
        revenue = dc.tsum(taped_truth.theta * Tensor(bids) * taped_truth.ratio)
        revenue_sum += float(revenue.data)
        penalty = None
        for slot, cid in enumerate(truth_run.items):
            cand = request.by_id(cid)
            if not cand.is_ad:
                continue
            value = cand.bid
            u_truth = (value - taped_truth.payments[slot]) * taped_truth.theta[slot]
            best = None  # (u_mis value, run, slot)
            with dc.no_grad():
                for g in grid:
                    mis_run = run_mechanism(
                        gen_net, eval_net, with_bid(request, cid, g * value), beam_size
                    )
                    u_mis = _utility(mis_run, cid, value)
                    if best is None or u_mis > best[0]:
                        out = mis_run.ad_outcome(cid)
                        best = (u_mis, mis_run, out[0] if out else None, g)
            if best[2] is not None:
                mis_run = best[1]
                mis_req = with_bid(request, cid, best[3] * value)
                taped_mis = _taped_slate(
                    eval_net, mis_req, mis_run.items, mis_run.z_values, mis_run.indices
                )
                slot_mis = best[2]
                u_mis_t = (value - taped_mis.payments[slot_mis]) * taped_mis.theta[slot_mis]
            else:
                u_mis_t = Tensor(0.0)
            rgt = dc.relu(u_mis_t - u_truth)
            slot_regret_sum[slot] += float(rgt.data)
            term = rgt * float(lagrangian.lam[slot]) + (lagrangian.rho / 2.0) * rgt * rgt
            penalty = term if penalty is None else penalty + term
        objective = revenue if penalty is None else revenue - penalty
        contrib = -objective
        total = contrib if total is None else total + contrib
    n = max(1, len(requests))
    return total * (1.0 / n), slot_regret_sum / n, revenue_sum / n


# -- evaluator training ----------------------------------------------------------------


@dataclass
class EvaluatorTrainReport:
    epochs: list[dict] = field(default_factory=list)
    lam_final: list[float] = field(default_factory=list)
    pre_regret: float | None = None
    post_regret: float | None = None

    COLUMNS = (
        "epoch",
        "loss_pctr",
        "loss_pcvr",
        "loss_pay",
        "loss_total",
        "mean_regret",
        "holdout_pctr",
    )


def _record_arrays(records, eval_net):
    rows, bids, bminus, clicks, convs = [], [], [], [], []
    for rec in records:
        rows.append(eval_net.slate_input_rows(rec.request, rec.items))
        b = np.array([rec.request.by_id(cid).bid for cid in rec.items])
        bids.append(b)
        bminus.append(self_exclusion_bids(b))
        clicks.append(np.asarray(rec.clicks, dtype=np.float64))
        convs.append(np.asarray(rec.conversions, dtype=np.float64))
    return (
        np.stack(rows),
        np.stack(bids),
        np.stack(bminus),
        np.stack(clicks),
        np.stack(convs),
    )


def _batch_losses(eval_net, arrays, idx, w_pcvr, n_candidates):
    rows, bids, bminus, clicks, convs = arrays
    batch_rows = rows[idx]
    # Logged slates carry no allocation matrix; the neutral uniform
    # probability stands in for the per-slot entries.
    z = np.full(batch_rows.shape[:2], 1.0 / n_candidates)
    x = eval_net.encode_list(Tensor(batch_rows))
    out = eval_net.predict_towers(x, z, bminus[idx], bids[idx])
    l_ctr = loss_pctr(out.theta, clicks[idx])
    l_cvr = loss_pcvr(out.gamma, convs[idx], clicks[idx]) if w_pcvr > 0 else None
    return l_ctr, l_cvr


def holdout_pctr_loss(records, eval_net):
    """Click cross-entropy of the scorer on held-out logged slates."""
    if not records:
        return float("nan")
    arrays = _record_arrays(records, eval_net)
    rows, bids, bminus, clicks, _ = arrays
    z = np.full(rows.shape[:2], 1.0 / records[0].request.n_candidates)
    with dc.no_grad():
        x = eval_net.encode_list(Tensor(rows))
        out = eval_net.predict_towers(x, z, bminus, bids)
        return float(loss_pctr(out.theta, clicks).data)


def train_evaluator(records, gen_net, eval_net, cfg, measure_regret=True):
    """Stage-1 training; returns an EvaluatorTrainReport.

    ``records`` are logged impressions; the last ``holdout_fraction`` of them
    (by position) is held out for the report's generalization column. With
    ``w_pay == 0`` the pay tower is untouched (bit-identical parameters).
    """
    cfg.validate()
    if not records:
        raise ConfigError("train_evaluator needs a nonempty dataset")
    eval_net.unfreeze()
    k = eval_net.k
    n_hold = int(len(records) * cfg.holdout_fraction)
    train_recs = records[: len(records) - n_hold]
    holdout_recs = records[len(records) - n_hold :]
    arrays = _record_arrays(train_recs, eval_net)
    n_candidates = train_recs[0].request.n_candidates
    grid = MisreportGrid(tuple(cfg.regret_grid))
    lagr = LagrangianState(
        lam=np.full(k, cfg.lambda_init),
        rho=cfg.rho,
        multiplier_step=cfg.multiplier_step,
        multiplier_period=cfg.multiplier_period,
    )
    report = EvaluatorTrainReport()
    regret_eval = train_recs[: cfg.regret_eval_records]
    if cfg.w_pay > 0 and measure_regret:
        report.pre_regret = mean_slate_regret(
            [r.request for r in regret_eval], gen_net, eval_net, grid, cfg.mechanism_beam_size
        )
    opt = Adam(eval_net.parameters(), learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    step = 0
    regret_bucket = np.zeros(k)
    regret_bucket_n = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_recs))
        sums = {"pctr": 0.0, "pcvr": 0.0, "pay": 0.0, "total": 0.0, "regret": 0.0}
        counts = {"pctr": 0, "pcvr": 0, "pay": 0, "total": 0, "regret": 0}
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            l_ctr, l_cvr = _batch_losses(eval_net, arrays, idx, cfg.w_pcvr, n_candidates)
            loss = l_ctr * cfg.w_pctr
            sums["pctr"] += float(l_ctr.data)
            counts["pctr"] += 1
            if l_cvr is not None:
                loss = loss + l_cvr * cfg.w_pcvr
                sums["pcvr"] += float(l_cvr.data)
                counts["pcvr"] += 1
            if cfg.w_pay > 0:
                sub = idx[: cfg.pay_subsample]
                pay_requests = [train_recs[i].request for i in sub]
                l_pay, slot_regret, _ = loss_pay(
                    pay_requests, gen_net, eval_net, lagr, grid, cfg.mechanism_beam_size
                )
                loss = loss + l_pay * cfg.w_pay
                sums["pay"] += float(l_pay.data)
                counts["pay"] += 1
                sums["regret"] += float(slot_regret.sum())
                counts["regret"] += 1
                regret_bucket += slot_regret
                regret_bucket_n += 1
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    f"evaluator loss diverged at epoch {epoch} step {step}: {float(loss.data)}"
                )
            opt.zero_grad()
            dc.backward(loss)
            opt.step()
            sums["total"] += float(loss.data)
            counts["total"] += 1
            step += 1
            if cfg.w_pay > 0 and step % cfg.multiplier_period == 0 and regret_bucket_n > 0:
                lagr.update(regret_bucket / regret_bucket_n)
                regret_bucket = np.zeros(k)
                regret_bucket_n = 0
        report.epochs.append(
            {
                "epoch": epoch,
                "loss_pctr": sums["pctr"] / max(1, counts["pctr"]),
                "loss_pcvr": sums["pcvr"] / max(1, counts["pcvr"]),
                "loss_pay": sums["pay"] / max(1, counts["pay"]),
                "loss_total": sums["total"] / max(1, counts["total"]),
                "mean_regret": sums["regret"] / max(1, counts["regret"]),
                "holdout_pctr": holdout_pctr_loss(holdout_recs, eval_net),
            }
        )
    report.lam_final = lagr.lam.tolist()
    if cfg.w_pay > 0 and measure_regret:
        report.post_regret = mean_slate_regret(
            [r.request for r in regret_eval], gen_net, eval_net, grid, cfg.mechanism_beam_size
        )
    return report


# -- generator training ----------------------------------------------------------------


def marginal_contribution(request, run, gen_net, eval_net, beam_size):
    """Per-slot reward deltas: winner reward minus the best slate that the
    mechanism finds once that slot's item is removed from the pool."""
    r = np.zeros(len(run.items))
    for slot, cid in enumerate(run.items):
        if request.n_candidates - 1 < request.k:
            log.warning(
                "%s: removing %s leaves no feasible slate; alternative reward 0",
                request.request_id,
                cid,
            )
            alt_reward = 0.0
        else:
            try:
                with dc.no_grad():
                    alt = run_mechanism(
                        gen_net, eval_net, without_candidate(request, cid), beam_size
                    )
                alt_reward = alt.reward
            except InfeasibleSlateError:
                log.warning(
                    "%s: no feasible alternative without %s; alternative reward 0",
                    request.request_id,
                    cid,
                )
                alt_reward = 0.0
        r[slot] = run.reward - alt_reward
    return r


@dataclass
class GeneratorTrainReport:
    epochs: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "mean_winner_reward", "loss_pg")


def train_generator(requests, gen_net, eval_net, cfg):
    """Stage-2 policy gradient against the frozen scorer."""
    cfg.validate()
    if not eval_net.frozen:
        raise ContractViolationError(
            "train_generator requires a frozen evaluator (call eval_net.freeze())"
        )
    if not requests:
        raise ConfigError("train_generator needs a nonempty request set")
    opt = Adam(gen_net.parameters(), learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    report = GeneratorTrainReport()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(requests))
        reward_sum = 0.0
        loss_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_loss = None
            for i in idx:
                request = requests[i]
                with dc.no_grad():
                    run = run_mechanism(gen_net, eval_net, request, cfg.beam_size)
                reward_sum += run.reward
                r = marginal_contribution(request, run, gen_net, eval_net, cfg.beam_size)
                z = gen_net.allocation_matrix(request)
                z_sel = z[np.array(run.indices), np.arange(len(run.indices))]
                contrib = -dc.tsum(Tensor(r) * dc.log(z_sel))
                batch_loss = contrib if batch_loss is None else batch_loss + contrib
            batch_loss = batch_loss * (1.0 / len(idx))
            if not np.isfinite(batch_loss.data):
                raise TrainingDivergedError(
                    f"generator loss diverged at epoch {epoch}: {float(batch_loss.data)}"
                )
            opt.zero_grad()
            dc.backward(batch_loss)
            opt.step()
            loss_sum += float(batch_loss.data)
            n_batches += 1
        report.epochs.append(
            {
                "epoch": epoch,
                "mean_winner_reward": reward_sum / len(requests),
                "loss_pg": loss_sum / max(1, n_batches),
            }
        )
    return report


def requests_from_records(records):
    return [rec.request for rec in records]
