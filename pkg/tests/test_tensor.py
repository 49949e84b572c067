import numpy as np
import pytest

from activepc import tensor as tc
from activepc.nn import MLP, LayerNorm, TransformerEncoder
from activepc.tensor import Tensor

from .gradcheck import check_gradients


def test_matmul_identity_padded():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    eye = Tensor([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(tc.matmul(a, eye).data, [[1.0, 2.0], [4.0, 5.0]])


def test_softmax_symmetric():
    np.testing.assert_array_equal(tc.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_mean_of_constant():
    assert Tensor(np.full((2, 2), 3.0)).mean().item() == 3.0


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(tc.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 2\)"):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))
    with pytest.raises(tc.ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(4))


def test_sum_of_squares_grad():
    w = Tensor([1.0, 2.0], requires_grad=True)
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])


def test_max_subgradient_goes_to_argmax():
    x = Tensor([1.0, 2.0], requires_grad=True)
    x.max().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_max_tie_routes_to_lowest_index():
    x = Tensor([[3.0, 1.0, 3.0], [0.0, 5.0, 5.0]], requires_grad=True)
    x.max(axis=1).sum().backward()
    np.testing.assert_array_equal(x.grad, [[1, 0, 0], [0, 1, 0]])


def test_non_scalar_backward_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(tc.GraphError, match="scalar"):
        (x * 2.0).backward()


def test_second_backward_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(tc.GraphError, match="consumed"):
        loss.backward()


def test_intermediate_grads_released_unless_retained():
    x = Tensor([1.0, 2.0], requires_grad=True)
    h = x * 3.0
    k = (x * 2.0).retain_grad()
    (h.sum() + k.sum()).backward()
    assert h.grad is None
    np.testing.assert_array_equal(k.grad, [1.0, 1.0])
    np.testing.assert_array_equal(x.grad, [5.0, 5.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with tc.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_gather_and_scatter_add_are_adjoint():
    rng = np.random.default_rng(0)
    src = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    idx = np.array([[0, 4], [4, 2]])
    out = tc.gather(src, idx, axis=0)
    assert out.shape == (2, 2, 3)
    out.sum().backward()
    np.testing.assert_array_equal(src.grad[:, 0], [1, 0, 1, 0, 2])
    pooled = tc.scatter_add(Tensor(np.ones((4, 2))), np.array([0, 1, 1, 2]), 3)
    np.testing.assert_array_equal(pooled.data, [[1, 1], [2, 2], [1, 1]])


def _mlp_case(rng):
    with tc.precision(np.float32):
        mlp = MLP([3, 4, 2], rng)  # 3*4+4 + 4*2+2 = 26 parameters
    x = Tensor(rng.normal(size=(5, 3)))
    y = rng.integers(0, 2, 5)
    return mlp.parameters(), lambda: tc.cross_entropy(mlp(x), y)


def test_mlp_matches_finite_differences_float32():
    params, loss_fn = _mlp_case(np.random.default_rng(3))
    assert sum(p.data.size for p in params) <= 100
    worst = check_gradients(loss_fn, params, h=1e-3)
    assert worst <= 1e-3


def _random_graph(rng, n_params=60):
    """A composed graph touching every differentiable op."""
    w1 = Tensor(rng.normal(size=(4, 6)) * 0.5, requires_grad=True)
    w2 = Tensor(rng.normal(size=(6, 3)) * 0.5, requires_grad=True)
    g = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
    b = Tensor(rng.normal(size=6) * 0.1, requires_grad=True)
    s = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
    params = [w1, w2, g, b, s]
    assert sum(p.data.size for p in params) <= n_params
    x = Tensor(rng.normal(size=(2, 5, 4)))
    idx = rng.integers(0, 5, size=(2, 3))
    labels = rng.integers(0, 3, 2)

    def loss_fn():
        h = tc.layer_norm(tc.matmul(x, w1), g, b)
        h = tc.tanh(h) + tc.relu(h) * 0.5
        att = tc.softmax(tc.matmul(h, h.transpose(0, 2, 1)) * 0.3, axis=-1)
        h = tc.matmul(att, h)
        o = tc.matmul(h, w2)  # (2, 5, 3)
        picked = tc.concat([tc.gather(o[0], idx[0]), tc.gather(o[1], idx[1])], axis=0)
        logits = o.max(axis=1) + o.mean(axis=1) * tc.exp(tc.log(s)) + tc.sqrt(s * s + 1.0)
        logits = logits / (1.0 + picked.sum() ** 2 * 0.01)
        return tc.cross_entropy(logits, labels)

    return params, loss_fn


@pytest.mark.parametrize("seed", range(5))
def test_random_graph_gradients_float32(seed):
    params, loss_fn = _random_graph(np.random.default_rng(seed))
    assert check_gradients(loss_fn, params, h=1e-3) <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_random_graph_gradients_float64(seed):
    with tc.precision(np.float64):
        params, loss_fn = _random_graph(np.random.default_rng(seed))
        assert check_gradients(loss_fn, params, h=1e-6) <= 1e-6


def test_encoder_depth_zero_is_identity():
    enc = TransformerEncoder(8, 0, 2, 2, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(1, 4, 8)))
    assert enc(x) is x


def test_encoder_single_token_is_finite_and_deterministic():
    x = np.random.default_rng(1).normal(size=(1, 1, 8))
    outs = [TransformerEncoder(8, 1, 2, 2, np.random.default_rng(0))(Tensor(x)).data for _ in range(2)]
    assert np.isfinite(outs[0]).all()
    np.testing.assert_array_equal(outs[0], outs[1])


def test_encoder_matches_hand_composed_attention():
    rng = np.random.default_rng(7)
    enc = TransformerEncoder(16, 1, 4, 2, rng)
    x = rng.normal(size=(1, 8, 16)).astype(np.float32)
    got = enc(Tensor(x)).data

    def ln(v, w, b):
        mu = v.mean(-1, keepdims=True)
        var = ((v - mu) ** 2).mean(-1, keepdims=True)
        return (v - mu) / np.sqrt(var + 1e-5) * w + b

    blk = enc.blocks[0]
    h = ln(x[0], blk.norm1.weight.data, blk.norm1.bias.data)
    qkv = h @ blk.attn.qkv.weight.data + blk.attn.qkv.bias.data
    heads = []
    for i in range(4):
        q = qkv[:, i * 4:(i + 1) * 4]
        k = qkv[:, 16 + i * 4:16 + (i + 1) * 4]
        v = qkv[:, 32 + i * 4:32 + (i + 1) * 4]
        s = q @ k.T / 2.0
        s = np.exp(s - s.max(1, keepdims=True))
        heads.append((s / s.sum(1, keepdims=True)) @ v)
    y = x[0] + np.concatenate(heads, 1) @ blk.attn.proj.weight.data + blk.attn.proj.bias.data
    h2 = ln(y, blk.norm2.weight.data, blk.norm2.bias.data)
    l1, l2 = blk.mlp.layers
    y = y + np.maximum(h2 @ l1.weight.data + l1.bias.data, 0) @ l2.weight.data + l2.bias.data
    want = ln(y, enc.norm.weight.data, enc.norm.bias.data)
    np.testing.assert_allclose(got[0], want, rtol=1e-4, atol=1e-5)


def test_layer_norm_rejects_width_mismatch():
    with pytest.raises(tc.ShapeError, match="layer_norm"):
        LayerNorm(4)(Tensor(np.ones((2, 3))))


def test_forward_and_grads_deterministic():
    def run():
        params, loss_fn = _random_graph(np.random.default_rng(11))
        loss = loss_fn()
        loss.backward()
        return loss.data.copy(), [p.grad.copy() for p in params]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes()
    for a, b in zip(g1, g2):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "omega": np.array([0.5, -1.0, 2.0], np.float32),
              "scalar": np.array(1.5, np.float32)}
    path = tmp_path / "w.ptvw"
    tc.save_tensors(path, arrays)
    raw = path.read_bytes()
    assert raw[:4] == b"PTVW" and int.from_bytes(raw[4:8], "little") == 1
    back = tc.load_tensors(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes() and back[k].shape == arrays[k].shape


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX\x01\x00\x00\x00")
    with pytest.raises(tc.CheckpointError, match="magic"):
        tc.load_tensors(path)
