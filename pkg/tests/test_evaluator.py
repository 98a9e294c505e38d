"""Slate scorer: list encoder, towers, payments, winner selection."""

import numpy as np
import pytest

from conftest import make_candidate, make_request, random_small_request
from slateauction import diffcore as dc
from slateauction.config import ModelConfig
from slateauction.evaluator import (
    EvaluatorNetwork,
    build_slate,
    list_reward,
    load_evaluator,
    save_evaluator,
    select_winner,
    self_exclusion_bids,
)
from slateauction.generator import BeamSlate
from slateauction.market import ConstraintSet


def small_eval(request, seed=0, alpha=1.0):
    cfg = ModelConfig(d_model=8, blocks=1, heads=2, ffn_hidden=12, tower_hidden=8, alpha=alpha, seed=seed)
    return EvaluatorNetwork(request.candidates[0].features.size, request.k, cfg)


def mixed_request(k=3, n_ads=3, n_org=3, seed=0, feature_dim=4):
    rng = np.random.default_rng(seed)
    cands = [
        make_candidate(
            f"a{i}", bid=float(rng.uniform(0.2, 3.0)), ctr=float(rng.uniform(0.1, 0.9)),
            cvr=float(rng.uniform(0.1, 0.9)), brand=f"b{i}", features=rng.normal(size=feature_dim),
        )
        for i in range(n_ads)
    ] + [
        make_candidate(
            f"o{j}", kind="organic", ctr=float(rng.uniform(0.1, 0.9)),
            cvr=float(rng.uniform(0.1, 0.9)), rank=j, features=rng.normal(size=feature_dim),
        )
        for j in range(n_org)
    ]
    return make_request(cands, k, ConstraintSet(min_ad_start=1, max_ads=k))


class TestSelfExclusionBids:
    def test_rows_drop_own_entry(self):
        b = self_exclusion_bids([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(b, [[2, 3], [1, 3], [1, 2]])

    def test_single_slot_is_empty(self):
        assert self_exclusion_bids([4.0]).shape == (1, 0)


class TestEncodeList:
    def test_singleton(self):
        req = mixed_request(k=1)
        net = small_eval(req)
        x = net.encode_list(net.slate_input_rows(req, ["a0"]))
        assert x.shape == (1, 8)

    def test_order_sensitivity(self):
        req = mixed_request(k=3)
        net = small_eval(req)
        a = net.encode_list(net.slate_input_rows(req, ["a0", "a1", "o0"])).data
        b = net.encode_list(net.slate_input_rows(req, ["a1", "a0", "o0"])).data
        assert np.abs(a - b).max() > 1e-8

    def test_identical_items_differ_only_by_slot_embedding(self):
        req = mixed_request(k=3)
        net = small_eval(req)
        rows = np.tile(net.slate_input_rows(req, ["a0", "a1", "o0"])[0], (3, 1))
        x = net.encode_list(rows).data
        assert np.abs(x[0] - x[1]).max() > 1e-10
        net.slot_embed.data = np.tile(net.slot_embed.data[0], (3, 1))
        x_flat = net.encode_list(rows).data
        np.testing.assert_array_equal(x_flat[0], x_flat[1])
        np.testing.assert_array_equal(x_flat[1], x_flat[2])

    def test_wrong_length_rejected(self):
        req = mixed_request(k=3)
        net = small_eval(req)
        with pytest.raises(ValueError):
            net.slate_input_rows(req, ["a0", "a1"])


class TestTowers:
    def test_outputs_strictly_in_unit_interval(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            req = mixed_request(k=3, seed=trial)
            net = small_eval(req, seed=trial)
            out = net.forward_slate(req, ["a0", "o0", "a1"])
            for t in (out.theta, out.gamma, out.ratio):
                assert np.all(t.data > 0.0) and np.all(t.data < 1.0)

    def test_organic_payment_exactly_zero(self):
        req = mixed_request(k=3)
        net = small_eval(req)
        out = net.forward_slate(req, ["a0", "o0", "o1"])
        assert out.payments.data[1] == 0.0
        assert out.payments.data[2] == 0.0

    def test_payments_never_exceed_bids(self):
        rng = np.random.default_rng(1)
        for trial in range(300):
            req = mixed_request(k=2, seed=trial)
            net = small_eval(req, seed=trial % 7)
            items = ["a0", "a1"]
            out = net.forward_slate(req, items)
            bids = np.array([req.by_id(c).bid for c in items])
            assert np.all(out.payments.data <= bids)

    def test_bad_self_exclusion_shape_rejected(self):
        req = mixed_request(k=3)
        net = small_eval(req)
        x = net.encode_list(net.slate_input_rows(req, ["a0", "a1", "a2"]))
        with pytest.raises(ValueError):
            net.predict_towers(x, np.full(3, 0.1), np.zeros((3, 3)), np.ones(3))

    def test_pay_tower_independent_of_click_order_towers(self):
        req = mixed_request(k=3)
        net = small_eval(req)
        items = ["a0", "a1", "o0"]
        before = net.forward_slate(req, items)
        for name, p in net.parameters().items():
            if name.startswith("pay_tower"):
                p.data = np.zeros_like(p.data)
        after = net.forward_slate(req, items)
        np.testing.assert_array_equal(before.theta.data, after.theta.data)
        np.testing.assert_array_equal(before.gamma.data, after.gamma.data)
        assert np.abs(before.ratio.data - after.ratio.data).max() > 1e-12

    def test_batched_forward_matches_single(self):
        req = mixed_request(k=3)
        net = small_eval(req)
        slates = [["a0", "a1", "o0"], ["o0", "a2", "a0"]]
        rows = np.stack([net.slate_input_rows(req, s) for s in slates])
        bids = np.stack([[req.by_id(c).bid for c in s] for s in slates])
        bminus = np.stack([self_exclusion_bids(b) for b in bids])
        z = np.full((2, 3), 0.2)
        batched = net.predict_towers(net.encode_list(rows), z, bminus, bids)
        for i, s in enumerate(slates):
            single = net.forward_slate(req, s, z_entries=np.full(3, 0.2))
            np.testing.assert_allclose(batched.theta.data[i], single.theta.data, atol=1e-12)
            np.testing.assert_allclose(batched.payments.data[i], single.payments.data, atol=1e-12)


class TestListReward:
    def test_single_slot_closed_form(self):
        r = list_reward([0.5], [0.9], [0.5], [2.0], alpha=0.0)
        assert float(r.data) == pytest.approx(0.5)

    def test_all_organic_zero_alpha(self):
        r = list_reward([0.4, 0.6], [0.5, 0.5], [0.3, 0.7], [0.0, 0.0], alpha=0.0)
        assert float(r.data) == 0.0

    def test_alpha_term_only(self):
        r = list_reward([1.0], [1.0], [0.37], [0.0], alpha=5.0)
        assert float(r.data) == pytest.approx(5.0)

    def test_monotone_in_components(self):
        base = dict(theta=[0.4, 0.5], gamma=[0.3, 0.2], ratio=[0.5, 0.6], bids=[1.0, 2.0])
        r0 = float(list_reward(base["theta"], base["gamma"], base["ratio"], base["bids"], 2.0).data)
        r_theta = float(list_reward([0.5, 0.5], base["gamma"], base["ratio"], base["bids"], 2.0).data)
        r_gamma = float(list_reward(base["theta"], [0.4, 0.2], base["ratio"], base["bids"], 2.0).data)
        r_ratio = float(list_reward(base["theta"], base["gamma"], [0.6, 0.6], base["bids"], 2.0).data)
        assert r_theta > r0 and r_gamma > r0 and r_ratio > r0


class TestSelectWinner:
    def _beams(self, req, item_lists):
        return [
            BeamSlate(items=s, indices=[req.index_of(c) for c in s], log_prob=-float(i))
            for i, s in enumerate(item_lists)
        ]

    def test_single_candidate_wins(self):
        req = mixed_request(k=2)
        net = small_eval(req)
        z = np.full((req.n_candidates, 2), 1.0 / req.n_candidates)
        slates = self._beams(req, [["a0", "o0"]])
        pos, winner, rewards = select_winner(net, req, slates, z)
        assert pos == 0 and winner.items == ["a0", "o0"]
        assert len(rewards) == 1

    def test_identical_slates_first_wins(self):
        req = mixed_request(k=2)
        net = small_eval(req)
        z = np.full((req.n_candidates, 2), 1.0 / req.n_candidates)
        slates = self._beams(req, [["a0", "o0"], ["a0", "o0"]])
        pos, _, rewards = select_winner(net, req, slates, z)
        assert pos == 0
        assert rewards[0] == rewards[1]

    def test_winner_has_max_reward_on_random_beams(self):
        rng = np.random.default_rng(2)
        trials = 0
        while trials < 200:
            req = random_small_request(rng, max_items=5, max_k=2)
            net = small_eval(req, seed=trials % 5)
            k = req.k
            ids = [c.id for c in req.candidates]
            lists = []
            for _ in range(4):
                pick = rng.choice(len(ids), size=k, replace=False)
                lists.append([ids[i] for i in pick])
            z = rng.random((req.n_candidates, k))
            z /= z.sum(axis=0, keepdims=True)
            slates = self._beams(req, lists)
            pos, _, rewards = select_winner(net, req, slates, z)
            assert rewards[pos] == rewards.max()
            assert pos == int(np.argmax(rewards))
            trials += 1

    def test_empty_candidate_list_rejected(self):
        req = mixed_request(k=2)
        net = small_eval(req)
        with pytest.raises(ValueError):
            select_winner(net, req, [], np.zeros((6, 2)))

    def test_permutation_of_candidates_keeps_winner_slate(self):
        req = mixed_request(k=2)
        net = small_eval(req)
        z = np.full((req.n_candidates, 2), 1.0 / req.n_candidates)
        lists = [["a0", "o0"], ["a1", "o1"], ["o0", "a2"]]
        slates = self._beams(req, lists)
        _, winner, rewards = select_winner(net, req, slates, z)
        perm = [2, 0, 1]
        slates_p = self._beams(req, [lists[i] for i in perm])
        _, winner_p, rewards_p = select_winner(net, req, slates_p, z)
        assert winner.items == winner_p.items
        np.testing.assert_allclose(sorted(rewards), sorted(rewards_p), atol=1e-12)


def test_build_slate_fields():
    req = mixed_request(k=2)
    net = small_eval(req)
    out = net.forward_slate(req, ["a0", "o0"])
    slate = build_slate(req, ["a0", "o0"], out)
    assert slate.items == ["a0", "o0"]
    assert slate.payments[1] == 0.0
    np.testing.assert_allclose(slate.payments, slate.payment_ratio * np.array([req.by_id("a0").bid, 0.0]))


def test_evaluator_checkpoint_roundtrip(tmp_path):
    req = mixed_request(k=2)
    net = small_eval(req, seed=13)
    path = tmp_path / "eval.json"
    save_evaluator(net, path)
    loaded = load_evaluator(path, ModelConfig)
    a = net.forward_slate(req, ["a0", "o0"]).reward.item()
    b = loaded.forward_slate(req, ["a0", "o0"]).reward.item()
    assert a == b
