import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occurate.autodiff import Node, Parameter, backward, fd_check, fd_compare, load_checkpoint, ops, save_checkpoint
from occurate.autodiff import _conv_py
from occurate.autodiff.kernels import BACKEND


def param(rng, *shape, name="p"):
    return Parameter(rng.standard_normal(shape), name)


class TestForward:
    def test_sigmoid_zero(self):
        assert ops.sigmoid(Node(np.array(0.0))).value == 0.5

    def test_conv_delta_kernel_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 7, 5))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = ops.conv2d(Node(x), Node(w), padding=1).value
        np.testing.assert_array_equal(out, x)

    def test_conv_matches_direct_loop(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = ops.conv2d(Node(x), Node(w), Node(b), stride=2, padding=1).value
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 3, 3, 3))
        for n in range(2):
            for o in range(3):
                for i in range(3):
                    for j in range(3):
                        ref[n, o, i, j] = (xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]).sum() + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("axis", [0, 1, -1])
    def test_softmax_sums_to_one(self, axis):
        x = np.random.default_rng(2).standard_normal((4, 5, 6)) * 10
        s = ops.softmax(Node(x), axis=axis).value
        np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)

    def test_float32_stays_float32(self):
        x = Node(np.ones((2, 3), dtype=np.float32))
        w = Node(np.ones((3, 4), dtype=np.float32))
        assert ops.gelu(ops.matmul(x, w) * 2.0 + 1.0).dtype == np.float32

    def test_determinism(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
        a = ops.conv2d(Node(x), Node(w), padding=1).value
        b = ops.conv2d(Node(x.copy()), Node(w.copy()), padding=1).value
        assert a.tobytes() == b.tobytes()


class TestShapeErrors:
    @pytest.mark.parametrize(
        "fn, a, b",
        [
            (ops.matmul, (2, 3), (4, 5)),
            (ops.add, (2, 3), (4, 3)),
            (ops.mul, (2, 3), (3, 2)),
        ],
    )
    def test_binary_mismatch_names_shapes(self, fn, a, b):
        with pytest.raises(ValueError) as err:
            fn(Node(np.zeros(a)), Node(np.zeros(b)))
        msg = str(err.value)
        assert str(a) in msg and str(b) in msg and fn.__name__ in msg

    def test_conv_channel_mismatch(self):
        with pytest.raises(ValueError, match=r"conv2d.*\(1, 3, 5, 5\).*\(2, 4, 3, 3\)"):
            ops.conv2d(Node(np.zeros((1, 3, 5, 5))), Node(np.zeros((2, 4, 3, 3))))

    def test_concat_mismatch(self):
        with pytest.raises(ValueError, match="concat"):
            ops.concat([Node(np.zeros((2, 3))), Node(np.zeros((3, 4)))], axis=0)


class TestBackward:
    def test_sum_gives_ones(self):
        p = param(np.random.default_rng(0), 3, 4)
        g = backward(ops.sum(p))
        np.testing.assert_array_equal(g["p"], np.ones((3, 4)))

    def test_half_square_gives_identity(self):
        p = param(np.random.default_rng(1), 5)
        g = backward(ops.sum(p * p) * 0.5)
        np.testing.assert_allclose(g["p"], p.value, rtol=1e-15)

    def test_non_scalar_loss_rejected(self):
        p = param(np.random.default_rng(2), 3)
        with pytest.raises(ValueError, match="scalar"):
            backward(p * 2.0)

    def test_unused_parameter_gets_exact_zero(self):
        rng = np.random.default_rng(3)
        used, unused = param(rng, 3, name="used"), param(rng, 2, 2, name="unused")
        g = backward(ops.sum(ops.relu(used)), params=[used, unused])
        assert np.all(g["unused"] == 0.0) and g["unused"].shape == (2, 2)

    def test_repeat_backward_rezeroes(self):
        p = param(np.random.default_rng(4), 3)
        loss = ops.sum(p * p)
        first = backward(loss)["p"].copy()
        second = backward(loss)["p"]
        np.testing.assert_array_equal(first, second)

    @pytest.mark.parametrize("seed", range(5))
    def test_linearity(self, seed):
        rng = np.random.default_rng(seed)
        w1, w2 = param(rng, 4, 3, name="w1"), param(rng, 3, 2, name="w2")
        x = Node(rng.standard_normal((5, 4)))
        a, b = rng.standard_normal(2)

        def losses():
            h = ops.gelu(ops.matmul(x, w1))
            out = ops.matmul(h, w2)
            return ops.sum(ops.sigmoid(out)), ops.sum(out * out)

        l1, l2 = losses()
        g1 = {k: v.copy() for k, v in backward(l1).items()}
        l1, l2 = losses()
        g2 = {k: v.copy() for k, v in backward(l2).items()}
        l1, l2 = losses()
        gc = backward(l1 * a + l2 * b)
        for k in gc:
            np.testing.assert_allclose(gc[k], a * g1[k] + b * g2[k], rtol=1e-6, atol=1e-12)

    def test_shared_node_accumulates(self):
        p = param(np.random.default_rng(5), 3)
        y = p * 2.0
        g = backward(ops.sum(y + y * y))
        np.testing.assert_allclose(g["p"], 2.0 + 8.0 * p.value)


def _fd(build, params, **kw):
    return fd_check(lambda ps: build(*ps), params, **kw)


class TestFiniteDifferences:
    def test_quadratic(self):
        rng = np.random.default_rng(0)
        p = param(rng, 6)
        a = rng.standard_normal((6, 6))
        a = a @ a.T
        assert _fd(lambda q: ops.sum(q * ops.matmul(Node(a), ops.reshape(q, (6, 1)))[:, 0]), [p]) < 1e-8

    def test_two_layer_perceptron(self):
        rng = np.random.default_rng(1)
        w1, b1 = param(rng, 5, 8, name="w1"), param(rng, 8, name="b1")
        w2, b2 = param(rng, 8, 3, name="w2"), param(rng, 3, name="b2")
        x = Node(rng.standard_normal((7, 5)))
        y = rng.uniform(size=(7, 3))

        def f(w1, b1, w2, b2):
            h = ops.relu(ops.linear(x, w1, b1))
            p = ops.sigmoid(ops.linear(h, w2, b2))
            return ops.mean(-(y * ops.log(p) + (1 - y) * ops.log(1 - p)))

        assert _fd(f, [w1, b1, w2, b2]) < 1e-4

    @pytest.mark.parametrize(
        "name, build",
        [
            ("gelu", lambda rng: (lambda p: ops.sum(ops.gelu(p) * 1.3), [(4, 5)])),
            ("softmax", lambda rng: (lambda p, r=rng.standard_normal((4, 5)): ops.sum(ops.softmax(p, axis=1) * r), [(4, 5)])),
            ("log", lambda rng: (lambda p: ops.sum(ops.log(p * p + 1.0)), [(6,)])),
            ("div", lambda rng: (lambda p: ops.sum(ops.div(p, p * p + 2.0)), [(6,)])),
            ("mean_axis", lambda rng: (lambda p: ops.sum(ops.mean(p, axis=1) * ops.mean(p, axis=1)), [(3, 4)])),
            ("transpose", lambda rng: (lambda p, r=rng.standard_normal((4, 2, 3)): ops.sum(ops.transpose(p, (2, 0, 1)) * r), [(2, 3, 4)])),
            ("index", lambda rng: (lambda p: ops.sum(p[:, 1:] * p[:, :-1]), [(3, 4)])),
            ("fancy_index", lambda rng: (lambda p: ops.sum(ops.index(p, np.array([0, 2, 2])) * ops.index(p, np.array([1, 1, 0]))), [(3, 2)])),
        ],
    )
    def test_unary_ops(self, name, build):
        rng = np.random.default_rng(7)
        f, shapes = build(rng)
        params = [Parameter(rng.standard_normal(s), f"p{i}") for i, s in enumerate(shapes)]
        assert _fd(f, params) < 1e-4, name

    def test_layer_norm(self):
        rng = np.random.default_rng(8)
        x, g, b = param(rng, 3, 4, 6, name="x"), param(rng, 6, name="g"), param(rng, 6, name="b")
        w = rng.standard_normal((3, 4, 6))
        assert _fd(lambda x, g, b: ops.sum(ops.layer_norm(x, g, b) * w), [x, g, b]) < 1e-4

    def test_group_norm(self):
        rng = np.random.default_rng(9)
        x, g, b = param(rng, 2, 6, 3, 3, name="x"), param(rng, 6, name="g"), param(rng, 6, name="b")
        w = rng.standard_normal((2, 6, 3, 3))
        assert _fd(lambda x, g, b: ops.sum(ops.group_norm(x, 3, g, b) * w), [x, g, b]) < 1e-4

    @pytest.mark.parametrize("stride, padding", [(1, 1), (2, 1), (1, 0), (2, 0)])
    def test_conv2d(self, stride, padding):
        rng = np.random.default_rng(10)
        x, w, b = param(rng, 2, 3, 6, 5, name="x"), param(rng, 4, 3, 3, 3, name="w"), param(rng, 4, name="b")
        out_shape = ops.conv2d(x, w, b, stride=stride, padding=padding).shape
        r = rng.standard_normal(out_shape)
        assert _fd(lambda x, w, b: ops.sum(ops.conv2d(x, w, b, stride, padding) * r), [x, w, b]) < 1e-4

    def test_attention_and_embedding(self):
        rng = np.random.default_rng(11)
        table = param(rng, 5, 8, name="table")
        wq, wk, wv = (param(rng, 8, 8, name=n) for n in ("wq", "wk", "wv"))
        ids = np.array([[0, 3, 3, 1], [4, 2, 0, 0]])
        r = rng.standard_normal((2, 4, 8))

        def f(table, wq, wk, wv):
            e = ops.embedding(table, ids)
            y = ops.scaled_dot_product_attention(e @ wq, e @ wk, e @ wv)
            return ops.sum(y * r)

        assert _fd(f, [table, wq, wk, wv]) < 1e-4

    def test_concat_and_pool(self):
        rng = np.random.default_rng(12)
        a, b = param(rng, 2, 3, 4, 4, name="a"), param(rng, 2, 3, 4, 4, name="b")
        r1, r4 = rng.standard_normal((2, 6)), rng.standard_normal((2, 4, 6))

        def f(a, b):
            x = ops.concat([a, b], axis=1)
            return ops.sum(ops.mean_pool(x) * r1) + ops.sum(ops.mean_pool(x, grid=2) * r4)

        assert _fd(f, [a, b]) < 1e-4

    def test_report_names_worst_coordinate(self):
        p = param(np.random.default_rng(13), 300)
        res = fd_compare(lambda ps: ops.sum(ps[0] * ps[0]), [p], n_coords=256)
        assert res.n_coords == 256 and res.worst[0] == "p"


class TestKernels:
    def test_backend_reported(self):
        assert BACKEND in ("cython", "python")

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(1, 3),
        c=st.integers(1, 4),
        h=st.integers(3, 9),
        w=st.integers(3, 9),
        k=st.sampled_from([1, 3]),
        stride=st.integers(1, 2),
        pad=st.integers(0, 1),
        dtype=st.sampled_from([np.float32, np.float64]),
    )
    def test_compiled_matches_fallback_bitwise(self, n, c, h, w, k, stride, pad, dtype):
        ext = pytest.importorskip("occurate.autodiff._conv_ext")
        x = np.random.default_rng(h * 31 + w).standard_normal((n, c, h, w)).astype(dtype)
        cols_py = _conv_py.im2col(x, k, k, stride, pad)
        cols_ext = ext.im2col(x, k, k, stride, pad)
        assert cols_py.tobytes() == cols_ext.tobytes()
        back_py = _conv_py.col2im(cols_py, x.shape, k, k, stride, pad)
        back_ext = ext.col2im(cols_py, x.shape, k, k, stride, pad)
        assert back_py.tobytes() == back_ext.tobytes()


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"b.w": rng.standard_normal((3, 4)).astype(np.float32), "a": np.arange(5, dtype=np.float32)}
        save_checkpoint(tmp_path / "m.ckpt", arrays, {"kind": "x", "n": 3})
        back, cfg = load_checkpoint(tmp_path / "m.ckpt")
        assert cfg == {"kind": "x", "n": 3}
        assert list(back) == ["a", "b.w"]
        for k in arrays:
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_byte_identical_saves(self, tmp_path):
        arrays = {"w": np.ones((2, 2), dtype=np.float32)}
        save_checkpoint(tmp_path / "1.ckpt", arrays, {"a": 1, "b": [1, 2]})
        save_checkpoint(tmp_path / "2.ckpt", dict(arrays), {"b": [1, 2], "a": 1})
        assert (tmp_path / "1.ckpt").read_bytes() == (tmp_path / "2.ckpt").read_bytes()

    def test_truncated_file_rejected(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", {"w": np.ones(10, dtype=np.float32)}, {})
        data = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "bad.ckpt").write_bytes(data[:-4])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(tmp_path / "bad.ckpt")
