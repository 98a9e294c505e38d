"""Tensor tape, layers, Adam, and checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numeric_vs_analytic
from slateauction import diffcore as dc
from slateauction.diffcore import Tensor, nn
from slateauction.errors import NumericError


def rand_tensor(rng, shape, requires_grad=True, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=requires_grad)


# -- softmax -------------------------------------------------------------------


class TestSoftmax:
    def test_symmetry(self):
        out = dc.softmax(Tensor([0.0, 0.0]), axis=0)
        assert out.data.tolist() == [0.5, 0.5]

    def test_closed_form(self):
        out = dc.softmax(Tensor([0.0, np.log(3)]), axis=0)
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 5))
        a = dc.softmax(Tensor(x), axis=1).data
        b = dc.softmax(Tensor(x + 7.3), axis=1).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    @given(
        st.lists(st.floats(min_value=-15, max_value=15), min_size=1, max_size=8),
        st.integers(min_value=0, max_value=1),
    )
    @settings(max_examples=100, deadline=None)
    def test_sums_to_one(self, values, axis_kind):
        # logit gaps beyond ~37 round the max entry to exactly 1.0 in float64,
        # so strict (0,1) bounds are only representable below that
        x = np.array(values).reshape(1, -1) if axis_kind else np.array(values)
        axis = -1
        out = dc.softmax(Tensor(x), axis=axis).data
        np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-6)
        assert np.all(out > 0)
        if len(values) > 1:
            assert np.all(out < 1)

    def test_sums_to_one_extreme_logits(self):
        out = dc.softmax(Tensor([[-500.0, 0.0, 800.0], [3.0, 2.0, 1.0]]), axis=1).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(np.isfinite(out))

    def test_invalid_axis(self):
        with pytest.raises(ValueError):
            dc.softmax(Tensor([1.0, 2.0]), axis=3)


# -- backward ------------------------------------------------------------------


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x
        dc.backward(y)
        assert x.grad == pytest.approx(6.0)

    def test_softmax_component(self):
        x = Tensor([0.0, 0.0], requires_grad=True)
        y = dc.softmax(x, axis=0)[0]
        dc.backward(y)
        np.testing.assert_allclose(x.grad, [0.25, -0.25], atol=1e-12)

    def test_scalar_required(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            dc.backward(x * x)

    def test_overwrites_between_calls(self):
        x = Tensor([2.0], requires_grad=True)
        loss = dc.tsum(x * x)
        dc.backward(loss)
        first = x.grad.copy()
        dc.backward(loss)
        np.testing.assert_array_equal(x.grad, first)

    def test_no_grad_blocks_tape(self):
        x = Tensor([1.0], requires_grad=True)
        with dc.no_grad():
            y = dc.tsum(x * x)
        assert not y.requires_grad
        dc.backward(dc.tsum(x))  # separate taped graph still works
        np.testing.assert_array_equal(x.grad, [1.0])


# -- per-op gradient oracle ------------------------------------------------------

OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b + 3.0),
    "neg": lambda a, b: -a + 0.0 * b,
    "pow": lambda a, b: dc.power(a + 3.0, 1.7) + 0.0 * b,
    "exp": lambda a, b: dc.exp(a) + 0.0 * b,
    "log": lambda a, b: dc.log(a + 3.0) + 0.0 * b,
    "tanh": lambda a, b: dc.tanh(a) + 0.0 * b,
    "sigmoid": lambda a, b: dc.sigmoid(a) + 0.0 * b,
    "softmax": lambda a, b: dc.softmax(a, axis=1) * b,
    "sum_axis": lambda a, b: dc.tsum(a * b, axis=0, keepdims=True),
    "mean_axis": lambda a, b: dc.tmean(a * b, axis=1),
    "reshape": lambda a, b: dc.reshape(a * b, (6,)),
    "swapaxes": lambda a, b: dc.swapaxes(a, 0, 1) * dc.swapaxes(b, 0, 1),
    "concat": lambda a, b: dc.concat([a, b], axis=1),
    "stack": lambda a, b: dc.stack([a, b], axis=0),
    "getitem": lambda a, b: (a * b)[np.array([0, 1, 1]), np.array([2, 0, 2])],
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(10))
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (2, 3))
    b = rand_tensor(rng, (2, 3))

    def build():
        out = OPS[name](a, b)
        # weight each output entry differently so no gradient path cancels
        return dc.tsum(out * Tensor(np.arange(1, out.size + 1, dtype=float).reshape(out.shape)))

    numeric_vs_analytic(build, {"a": a, "b": b})


@pytest.mark.parametrize("seed", range(10))
def test_matmul_gradients_including_batched(seed):
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (2, 3, 4))
    b = rand_tensor(rng, (4, 5))
    c = rand_tensor(rng, (2, 5, 3))

    def build():
        out = dc.matmul(dc.matmul(a, b), c)  # (2,3,3) with broadcast + batched
        return dc.tsum(out * Tensor(np.arange(1, out.size + 1, dtype=float).reshape(out.shape)))

    numeric_vs_analytic(build, {"a": a, "b": b, "c": c})


@pytest.mark.parametrize("seed", range(3))
def test_relu_gradient_away_from_kink(seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.2, 1.5, size=(3, 3)) * rng.choice([-1.0, 1.0], size=(3, 3))
    a = Tensor(raw, requires_grad=True)

    def build():
        return dc.tsum(dc.relu(a))

    numeric_vs_analytic(build, {"a": a})


@pytest.mark.parametrize("seed", range(5))
def test_layernorm_and_mlp_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    ln = nn.LayerNorm(6)
    mlp = nn.SigmoidMLP(rng, 6, 5)
    x = rand_tensor(rng, (4, 6))

    def build():
        return dc.tsum(mlp(ln(x)))

    params = {"x": x, **ln.parameters("ln"), **mlp.parameters("mlp")}
    numeric_vs_analytic(build, params)


@pytest.mark.parametrize("seed", range(3))
def test_attention_block_gradients(seed):
    rng = np.random.default_rng(200 + seed)
    block = nn.TransformerBlock(rng, 8, 2, 12, cross=True)
    x = rand_tensor(rng, (3, 8))
    kv = rand_tensor(rng, (5, 8))

    def build():
        out = block(x, kv=kv)
        return dc.tsum(out * Tensor(np.arange(1, out.size + 1, dtype=float).reshape(out.shape)))

    params = {"x": x, "kv": kv, **block.parameters("blk")}
    numeric_vs_analytic(
        build, params, max_entries=6, rng=np.random.default_rng(seed)
    )


# -- attention behaviour -----------------------------------------------------------


class TestAttention:
    def test_singleton_key_weight_is_exactly_one(self):
        rng = np.random.default_rng(1)
        mha = nn.MultiHeadAttention(rng, 8, 2)
        q = Tensor(rng.normal(size=(1, 8)))
        kv = Tensor(rng.normal(size=(1, 8)))
        _, weights = mha(q, kv, return_weights=True)
        np.testing.assert_array_equal(weights.data, np.ones_like(weights.data))

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(2)
        mha = nn.MultiHeadAttention(rng, 8, 2)
        q = Tensor(rng.normal(size=(3, 8)))
        kv = Tensor(rng.normal(size=(4, 8)))
        _, weights = mha(q, kv, return_weights=True)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_kv_permutation_invariance(self):
        rng = np.random.default_rng(3)
        mha = nn.MultiHeadAttention(rng, 8, 2)
        q = Tensor(rng.normal(size=(3, 8)))
        kv = rng.normal(size=(5, 8))
        out1 = mha(q, Tensor(kv)).data
        perm = rng.permutation(5)
        out2 = mha(q, Tensor(kv[perm])).data
        np.testing.assert_allclose(out1, out2, atol=1e-10)

    def test_block_self_attention_is_query_equals_kv(self):
        rng = np.random.default_rng(4)
        block = nn.TransformerBlock(rng, 8, 2, 12)
        x = Tensor(rng.normal(size=(4, 8)))
        out = block(x)
        assert out.shape == (4, 8)

    def test_shape_mismatch_raises(self):
        rng = np.random.default_rng(5)
        mha = nn.MultiHeadAttention(rng, 8, 2)
        with pytest.raises(ValueError):
            mha(Tensor(rng.normal(size=(3, 6))), Tensor(rng.normal(size=(3, 8))))


# -- Adam ----------------------------------------------------------------------


class TestAdam:
    def test_first_step_equals_learning_rate(self):
        p = Tensor([0.0], requires_grad=True)
        p.grad = np.array([1.0])
        opt = dc.Adam({"p": p}, learning_rate=0.1)
        opt.step()
        assert p.data[0] == pytest.approx(-0.1, abs=1e-8)
        assert opt.state.step == 1

    def test_zero_gradient_is_exact_noop(self):
        p = Tensor([1.5, -2.5], requires_grad=True)
        p.grad = np.zeros(2)
        opt = dc.Adam({"p": p}, learning_rate=0.1)
        before = p.data.copy()
        for _ in range(3):
            opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_twin_parameters_stay_identical(self):
        rng = np.random.default_rng(6)
        a = Tensor([0.3], requires_grad=True)
        b = Tensor([0.3], requires_grad=True)
        opt = dc.Adam({"a": a, "b": b}, learning_rate=0.05)
        for _ in range(25):
            g = rng.normal(size=1)
            a.grad = g.copy()
            b.grad = g.copy()
            opt.step()
        np.testing.assert_array_equal(a.data, b.data)

    def test_shape_mismatch_raises(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        state = dc.AdamState()
        with pytest.raises(ValueError):
            dc.adam_step(state, {"p": p}, {"p": np.zeros(3)})


# -- checkpoints ------------------------------------------------------------------


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        params = {
            "w": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
            "b": Tensor(rng.normal(size=4), requires_grad=True),
        }
        path = tmp_path / "ckpt.json"
        dc.save_params(path, params, meta={"note": "test"})
        meta, arrays = dc.load_params(path)
        assert meta == {"note": "test"}
        for name in params:
            np.testing.assert_array_equal(arrays[name], params[name].data)

    def test_restore_checks_names_and_shapes(self, tmp_path):
        params = {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}
        path = tmp_path / "ckpt.json"
        dc.save_params(path, params)
        _, arrays = dc.load_params(path)
        with pytest.raises(ValueError):
            dc.restore_into({"w": params["w"], "extra": params["w"]}, arrays)
        bad = {"w": np.zeros((3, 3))}
        with pytest.raises(ValueError):
            dc.restore_into(params, bad)


def test_check_finite_raises():
    with pytest.raises(NumericError):
        dc.check_finite(Tensor([np.nan]), "test tensor")


def test_ops_deterministic():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(4, 4))
    block = nn.TransformerBlock(np.random.default_rng(9), 4, 2, 8)
    out1 = block(Tensor(x)).data
    out2 = block(Tensor(x)).data
    np.testing.assert_array_equal(out1, out2)
