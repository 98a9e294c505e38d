"""Slate scorer: order-sensitive list encoder + three parallel output towers.

For a displayed list of k items the list encoder self-attends over the item
rows with additive slot embeddings (so order matters). Each slot row, with
that slot's allocation probability appended, feeds three independent sigmoid
towers:

* click tower  -> list-wise click probabilities (k,)
* order tower  -> list-wise conversion probabilities (k,)
* pay tower    -> payment ratios in (0,1); it additionally sees the
  self-exclusion bid profile (everyone else's bids, log1p-scaled).

Per-click payments are bid * ratio, so no winner can ever be charged above
its bid and zero-bid (organic) slots pay exactly 0. The slate reward
aggregates the towers as sum(theta * bid * ratio + alpha * theta * gamma);
the highest-reward candidate slate wins, ties resolved toward the earlier
candidate (higher generator log-probability).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor, nn
from .market import Slate, candidate_input_rows, input_width
from .generator import slate_z_entries


def self_exclusion_bids(bids):
    """(k, k-1) matrix: row i lists every other slot's bid in display order."""
    bids = np.asarray(bids, dtype=np.float64)
    k = len(bids)
    if k == 1:
        return np.zeros((1, 0))
    tiled = np.tile(bids, (k, 1))
    return tiled[~np.eye(k, dtype=bool)].reshape(k, k - 1)


@dataclass(eq=False)
class TowerOutputs:
    """Taped tower outputs for one slate (all Tensors; squeeze to (.., k))."""

    theta: Tensor
    gamma: Tensor
    ratio: Tensor
    payments: Tensor
    reward: Tensor


class EvaluatorNetwork:
    """All scorer parameters for a fixed (feature_dim, k) market shape."""

    def __init__(self, feature_dim, k, model_config):
        model_config.validate()
        self.feature_dim = feature_dim
        self.k = k
        self.model_config = model_config
        self.alpha = model_config.alpha
        d = model_config.d_model
        rng = np.random.default_rng(np.random.SeedSequence([model_config.seed, 20]))
        self.in_proj = nn.Linear(rng, input_width(feature_dim), d)
        self.slot_embed = nn.uniform_init(rng, (k, d), d)
        self.blocks = [
            nn.TransformerBlock(rng, d, model_config.heads, model_config.ffn_hidden)
            for _ in range(model_config.blocks)
        ]
        h = model_config.tower_hidden
        self.click_tower = nn.SigmoidMLP(rng, d + 1, h)
        self.order_tower = nn.SigmoidMLP(rng, d + 1, h)
        self.pay_tower = nn.SigmoidMLP(rng, d + 1 + (k - 1), h)
        self._trainable = True

    def parameters(self):
        params = self.in_proj.parameters("in_proj")
        params["slot_embed"] = self.slot_embed
        for i, block in enumerate(self.blocks):
            params.update(block.parameters(f"block{i}"))
        params.update(self.click_tower.parameters("click_tower"))
        params.update(self.order_tower.parameters("order_tower"))
        params.update(self.pay_tower.parameters("pay_tower"))
        return params

    def freeze(self):
        for p in self.parameters().values():
            p.requires_grad = False
        self._trainable = False

    def unfreeze(self):
        for p in self.parameters().values():
            p.requires_grad = True
        self._trainable = True

    @property
    def frozen(self):
        return not self._trainable

    # -- forward ----------------------------------------------------------------

    def slate_input_rows(self, request, items):
        """Raw (k, input_width) rows for the slate's items in display order."""
        if len(items) != self.k:
            raise ValueError(f"slate length {len(items)} != configured k={self.k}")
        rows = candidate_input_rows(request)
        idx = [request.index_of(cid) for cid in items]
        return rows[idx]

    def encode_list(self, rows):
        """Order-sensitive list encoding: (..., k, d) from raw slate rows.

        Accepts a single slate (k, width) or a batch (B, k, width).
        """
        rows = dc.as_tensor(rows)
        if rows.shape[-2] != self.k:
            raise ValueError(f"list length {rows.shape[-2]} != configured k={self.k}")
        if rows.shape[-1] != input_width(self.feature_dim):
            raise ValueError(
                f"input width {rows.shape[-1]} != expected {input_width(self.feature_dim)}"
            )
        x = self.in_proj(rows) + self.slot_embed
        for block in self.blocks:
            x = block(x)
        return x

    def predict_towers(self, x_list, z_entries, b_minus, bids):
        """Tower outputs for encoded slates.

        ``x_list``: (..., k, d); ``z_entries``/``bids``: (..., k);
        ``b_minus``: (..., k, k-1). All outputs are in (0, 1) elementwise and
        payments are bid * ratio. The three towers share no parameters.
        """
        x_list = dc.as_tensor(x_list)
        z = dc.as_tensor(z_entries)
        b_minus = dc.as_tensor(b_minus)
        bids = dc.as_tensor(bids)
        if b_minus.shape[-2:] != (self.k, self.k - 1):
            raise ValueError(
                f"self-exclusion bid profile shape {b_minus.shape[-2:]} != "
                f"({self.k}, {self.k - 1})"
            )
        z_col = dc.reshape(z, z.shape + (1,))
        ctx = dc.concat([x_list, z_col], axis=-1)
        theta = self.click_tower(ctx)
        gamma = self.order_tower(ctx)
        b_scaled = dc.log(b_minus + 1.0)
        pay_ctx = dc.concat([ctx, b_scaled], axis=-1)
        ratio = self.pay_tower(pay_ctx)
        theta = dc.reshape(theta, z.shape)
        gamma = dc.reshape(gamma, z.shape)
        ratio = dc.reshape(ratio, z.shape)
        payments = bids * ratio
        reward = list_reward(theta, gamma, ratio, bids, self.alpha)
        return TowerOutputs(theta, gamma, ratio, payments, reward)

    def forward_slate(self, request, items, z_entries=None):
        """Taped tower pass for one slate of candidate ids.

        ``z_entries`` are the slate's per-slot allocation probabilities; when
        the slate did not come from the allocation model (e.g. a logged
        display), the neutral uniform value 1/n_candidates is used.
        """
        if z_entries is None:
            z_entries = np.full(self.k, 1.0 / request.n_candidates)
        rows = self.slate_input_rows(request, items)
        bids = np.array([request.by_id(cid).bid for cid in items])
        x = self.encode_list(rows)
        return self.predict_towers(x, z_entries, self_exclusion_bids(bids), bids)


def list_reward(theta, gamma, ratio, bids, alpha):
    """Slate reward sum(theta*bid*ratio + alpha*theta*gamma) over the last axis."""
    theta = dc.as_tensor(theta)
    gamma = dc.as_tensor(gamma)
    ratio = dc.as_tensor(ratio)
    bids = dc.as_tensor(bids)
    return dc.tsum(theta * bids * ratio + alpha * (theta * gamma), axis=-1)


def build_slate(request, items, outputs):
    """Materialise a Slate record from tower outputs."""
    return Slate(
        items=list(items),
        list_ctr=outputs.theta.numpy(),
        list_cvr=outputs.gamma.numpy(),
        payment_ratio=outputs.ratio.numpy(),
        payments=outputs.payments.numpy(),
    )


def select_winner(net, request, slates, z_values):
    """Score every candidate slate and pick the reward argmax.

    ``slates`` is a nonempty list of BeamSlate (or anything with ``items`` and
    ``indices``); ``z_values`` the allocation matrix they were decoded from.
    All slates are scored in one stacked forward pass (the towers are pure
    per-row maps, so batching changes nothing). Returns (winner_position,
    winning Slate, rewards array); ties go to the earlier slate in the list.
    """
    if not slates:
        raise ValueError("select_winner needs at least one candidate slate")
    rows = np.stack([net.slate_input_rows(request, s.items) for s in slates])
    bids = np.stack([[request.by_id(cid).bid for cid in s.items] for s in slates])
    z = np.stack([slate_z_entries(z_values, s.indices) for s in slates])
    b_minus = np.stack([self_exclusion_bids(b) for b in bids])
    with dc.no_grad():
        x = net.encode_list(rows)
        out = net.predict_towers(x, z, b_minus, bids)
    rewards = np.atleast_1d(out.reward.numpy())
    best_pos = int(np.argmax(rewards))
    winner = Slate(
        items=list(slates[best_pos].items),
        list_ctr=out.theta.data[best_pos].copy(),
        list_cvr=out.gamma.data[best_pos].copy(),
        payment_ratio=out.ratio.data[best_pos].copy(),
        payments=out.payments.data[best_pos].copy(),
    )
    return best_pos, winner, rewards


def save_evaluator(net, path):
    meta = {
        "kind": "evaluator",
        "feature_dim": net.feature_dim,
        "k": net.k,
        "model": dataclasses.asdict(net.model_config),
    }
    dc.save_params(path, net.parameters(), meta)


def load_evaluator(path, model_config_cls):
    meta, arrays = dc.load_params(path)
    if meta.get("kind") != "evaluator":
        raise ValueError(f"{path}: checkpoint is not an evaluator (kind={meta.get('kind')!r})")
    cfg = model_config_cls(**meta["model"])
    net = EvaluatorNetwork(meta["feature_dim"], meta["k"], cfg)
    dc.restore_into(net.parameters(), arrays)
    return net
