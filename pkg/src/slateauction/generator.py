"""Allocation model: dual encoders, per-slot item distributions, decoding.

One scoring pass produces the full allocation probability matrix ``Z`` of
shape (n_candidates, slots): column ``j`` is a softmax over all candidates
for slot ``j``, with logits

    pointwise_ctr * bid + alpha * pointwise_ctr * pointwise_cvr + x_i . t_j

where ``x_i`` are item encodings (self-attention over the whole candidate
set, ads and organics jointly) and ``t_j`` are position encodings (learned
slot embeddings refined by self-attention plus cross-attention over the item
states). Decoding then never touches the network again: the greedy decoder
takes a feasibility-filtered argmax per slot, and the beam decoder keeps the
top partial slates by accumulated log Z. A per-slot sequential reference
decoder is kept solely as the latency benchmark's comparison point.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor, nn
from .errors import InfeasibleSlateError
from .market import DecodeState, RequestIndex, candidate_input_rows, input_width


@dataclass(eq=False)
class BeamSlate:
    """A decoded slate with its accumulated log allocation probability."""

    items: list[str]
    indices: list[int]
    log_prob: float


class GeneratorNetwork:
    """Holds all allocation-model parameters for a fixed market shape.

    ``scoring_passes`` counts position-encoder + scoring forward passes; the
    single-pass property of the production decode path is asserted against it.
    """

    def __init__(self, feature_dim, k_max, model_config):
        model_config.validate()
        self.feature_dim = feature_dim
        self.k_max = k_max
        self.model_config = model_config
        self.alpha = model_config.alpha
        d = model_config.d_model
        rng = np.random.default_rng(np.random.SeedSequence([model_config.seed, 10]))
        self.in_proj = nn.Linear(rng, input_width(feature_dim), d)
        self.item_blocks = [
            nn.TransformerBlock(rng, d, model_config.heads, model_config.ffn_hidden)
            for _ in range(model_config.blocks)
        ]
        self.pos_embed = nn.uniform_init(rng, (k_max, d), d)
        self.pos_blocks = [
            nn.TransformerBlock(rng, d, model_config.heads, model_config.ffn_hidden, cross=True)
            for _ in range(model_config.blocks)
        ]
        self.scoring_passes = 0

    # -- parameters ----------------------------------------------------------

    def parameters(self):
        params = self.in_proj.parameters("in_proj")
        for i, block in enumerate(self.item_blocks):
            params.update(block.parameters(f"item_block{i}"))
        params["pos_embed"] = self.pos_embed
        for i, block in enumerate(self.pos_blocks):
            params.update(block.parameters(f"pos_block{i}"))
        return params

    def reset_counter(self):
        self.scoring_passes = 0

    # -- forward pieces --------------------------------------------------------

    def encode_items(self, request):
        """One d-vector per candidate; no positional signal, so permuting the
        candidate order permutes the output rows identically."""
        rows = candidate_input_rows(request)
        if rows.shape[1] != input_width(self.feature_dim):
            raise ValueError(
                f"feature width {rows.shape[1]} does not match model input "
                f"{input_width(self.feature_dim)}"
            )
        x = self.in_proj(Tensor(rows))
        for block in self.item_blocks:
            x = block(x)
        return x

    def encode_positions(self, k, item_states, uniform_cross=False):
        """Slot states t_1..t_k attending over the item states."""
        if k > self.k_max:
            raise ValueError(f"k={k} exceeds configured maximum {self.k_max}")
        if item_states.shape[-2] == 0:
            raise ValueError("encode_positions needs a nonempty item set")
        t = dc.take(self.pos_embed, slice(0, k))
        for block in self.pos_blocks:
            t = block(t, kv=item_states, uniform_cross=uniform_cross)
        return t

    def base_scores(self, request):
        """The explicit value part of the logits: ctr*bid + alpha*ctr*cvr."""
        ctr = np.array([c.pointwise_ctr for c in request.candidates])
        cvr = np.array([c.pointwise_cvr for c in request.candidates])
        bid = np.array([c.bid for c in request.candidates])
        return ctr * bid + self.alpha * ctr * cvr

    def allocation_matrix(self, request, hidden=None, uniform_cross=False):
        """The full (n_candidates, k) matrix of per-slot allocation
        probabilities; every column sums to 1.

        ``hidden`` overrides the learned x_i . t_j score matrix (test hook).
        This is the network's single scoring pass per request.
        """
        self.scoring_passes += 1
        if hidden is None:
            x = self.encode_items(request)
            t = self.encode_positions(request.k, x, uniform_cross=uniform_cross)
            hidden = dc.matmul(x, dc.swapaxes(t, -1, -2))
        else:
            hidden = dc.as_tensor(hidden)
        base = Tensor(self.base_scores(request).reshape(-1, 1))
        logits = base + hidden
        dc.check_finite(logits, "allocation logits")
        return dc.softmax(logits, axis=0)

    def generate(self, request, beam_size=1):
        """Score once, decode many: returns (beam slates, Z values)."""
        with dc.no_grad():
            z = self.allocation_matrix(request)
        z_values = z.data
        slates = beam_generate(z_values, request, beam_size)
        return slates, z_values

    # -- sequential reference (benchmark only) ---------------------------------

    def sequential_decode(self, request):
        """Slot-by-slot reference decoder: one scoring pass per slot.

        At each slot the position encoder re-attends over the still-unplaced
        candidates, so every placement decision conditions on what was already
        placed. Identical parameters, k passes, same feasibility filters.
        """
        with dc.no_grad():
            x = self.encode_items(request)
        x_data = x.data
        base = self.base_scores(request)
        index = RequestIndex(request)
        state = DecodeState(request, index)
        for slot in range(1, request.k + 1):
            remaining = np.flatnonzero(~state.chosen)
            with dc.no_grad():
                self.scoring_passes += 1
                t = self.encode_positions(request.k, Tensor(x_data[remaining]))
                hidden = x_data[remaining] @ t.data.T
            logits = base[remaining] + hidden[:, slot - 1]
            shifted = np.exp(logits - logits.max())
            z_col = shifted / shifted.sum()
            mask = state.mask(slot)[remaining]
            if not mask.any():
                raise InfeasibleSlateError(
                    f"no feasible item for slot {slot}",
                    position=slot,
                    active_constraints=state.active_constraints(slot),
                )
            scores = np.where(mask, z_col, -np.inf)
            state.place(remaining[int(np.argmax(scores))])
        return [request.candidates[i].id for i in state.items]


# -- decoding ----------------------------------------------------------------


def constrained_decode(z, request, index=None):
    """Greedy per-slot argmax over the feasible set; returns candidate ids.

    Feasibility at slot j excludes already-placed items, ads before
    min_ad_start or beyond max_ads, brand repeats, and any organic other than
    the lowest-ranked unused one. Ties break toward the lower candidate index.
    """
    z = np.asarray(z)
    if z.shape != (request.n_candidates, request.k):
        raise ValueError(
            f"allocation matrix shape {z.shape} does not match request "
            f"({request.n_candidates}, {request.k})"
        )
    state = DecodeState(request, index)
    for slot in range(1, request.k + 1):
        mask = state.mask(slot)
        if not mask.any():
            raise InfeasibleSlateError(
                f"no feasible item for slot {slot}",
                position=slot,
                active_constraints=state.active_constraints(slot),
            )
        scores = np.where(mask, z[:, slot - 1], -np.inf)
        state.place(int(np.argmax(scores)))
    return [request.candidates[i].id for i in state.items]


def beam_generate(z, request, beam_size, index=None):
    """Beam search over slots with the same feasibility filters as greedy.

    Partial slates score by accumulated log Z; the result is sorted by that
    score descending (ties by item indices, so beam_size=1 reproduces the
    greedy decode exactly). All returned slates are distinct and feasible.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    z = np.asarray(z)
    if z.shape != (request.n_candidates, request.k):
        raise ValueError(
            f"allocation matrix shape {z.shape} does not match request "
            f"({request.n_candidates}, {request.k})"
        )
    log_z = np.log(np.maximum(z, 1e-300))
    index = index or RequestIndex(request)
    beam = [(0.0, DecodeState(request, index))]
    for slot in range(1, request.k + 1):
        expansions = []
        for logp, state in beam:
            mask = state.mask(slot)
            for i in np.flatnonzero(mask):
                expansions.append((logp + log_z[i, slot - 1], state, int(i)))
        if not expansions:
            raise InfeasibleSlateError(
                f"no feasible continuation at slot {slot}",
                position=slot,
                active_constraints=beam[0][1].active_constraints(slot) if beam else [],
            )
        expansions.sort(key=lambda e: (-e[0], tuple(e[1].items) + (e[2],)))
        beam = []
        for logp, state, i in expansions[:beam_size]:
            nxt = state.clone()
            nxt.place(i)
            beam.append((logp, nxt))
    return [
        BeamSlate(
            items=[request.candidates[i].id for i in state.items],
            indices=list(state.items),
            log_prob=float(logp),
        )
        for logp, state in beam
    ]


def slate_z_entries(z, indices):
    """The k per-slot probabilities Z[y_j, j] of a decoded slate."""
    z = np.asarray(z)
    return z[np.asarray(indices), np.arange(len(indices))]


# -- checkpoints ---------------------------------------------------------------


def save_generator(net, path):
    meta = {
        "kind": "generator",
        "feature_dim": net.feature_dim,
        "k_max": net.k_max,
        "model": dataclasses.asdict(net.model_config),
    }
    dc.save_params(path, net.parameters(), meta)


def load_generator(path, model_config_cls):
    meta, arrays = dc.load_params(path)
    if meta.get("kind") != "generator":
        raise ValueError(f"{path}: checkpoint is not a generator (kind={meta.get('kind')!r})")
    cfg = model_config_cls(**meta["model"])
    net = GeneratorNetwork(meta["feature_dim"], meta["k_max"], cfg)
    dc.restore_into(net.parameters(), arrays)
    return net
