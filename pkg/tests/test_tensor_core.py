"""Tensor ops, tape backward, Adam and checkpoint I/O."""
import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from amrl.errors import ConfigurationError, ContractViolation, NonFiniteError
from amrl.tensor import (
    AdamState, NetworkParams, Tape, Tensor, adam_step, load_checkpoint, save_checkpoint,
)
from amrl.tensor import kernels, ops
from amrl.tensor import _pykernels

from conftest import finite_difference, relative_error

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def naive_conv(x, w, b):
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for y in range(h):
            for xx in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for i in range(3):
                        for j in range(3):
                            yy, xj = y + i - 1, xx + j - 1
                            if 0 <= yy < h and 0 <= xj < wd:
                                acc += w[o, c, i, j] * x[c, yy, xj]
                out[o, y, xx] = acc
    return out


def op_gradcheck(build_loss, tensors, h=1e-6):
    """Full finite-difference check of every entry of every tensor."""
    tape = Tape()
    loss = build_loss(tape)
    tape.backward(loss)
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            num = finite_difference(lambda: build_loss(None).item(), flat, i, h)
            worst = max(worst, float(relative_error(tape.grad(t).reshape(-1)[i], num)))
    return worst


class TestConv2d:
    def test_zero_input_gives_bias(self):
        w = Tensor(np.random.default_rng(0).normal(size=(2, 1, 3, 3)))
        out = ops.conv2d(Tensor(np.zeros((1, 3, 3))), w, Tensor([0.5, -1.5]))
        assert np.all(out.data[0] == 0.5) and np.all(out.data[1] == -1.5)

    def test_centre_tap_on_single_pixel(self):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 2.5
        out = ops.conv2d(Tensor([[[3.0]]]), Tensor(w), Tensor([0.0]))
        assert out.data.tolist() == [[[7.5]]]

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, naive_conv(x, w, b), rtol=0, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigurationError):
            ops.conv2d(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((1, 3, 3, 3))), Tensor([0.0]))

    def test_non_3x3_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            ops.conv2d(Tensor(np.zeros((1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))), Tensor([0.0]))

    def test_gradients(self):
        rng = np.random.default_rng(2)
        x, w, b = (Tensor(rng.normal(size=s)) for s in [(2, 3, 4), (2, 2, 3, 3), (2,)])
        probe = rng.normal(size=(2, 3, 4))
        err = op_gradcheck(lambda tp: ops.dot(ops.conv2d(x, w, b, tape=tp), Tensor(probe), tape=tp), [x, w, b])
        assert err < 1e-6

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(1, 3))
    def test_preserves_spatial_shape(self, h, w, c_in, c_out):
        x = Tensor(np.ones((c_in, h, w)))
        out = ops.conv2d(x, Tensor(np.ones((c_out, c_in, 3, 3))), Tensor(np.zeros(c_out)))
        assert out.shape == (c_out, h, w)


class TestKernelBackends:
    @pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled extension not built")
    @pytest.mark.parametrize("shape", [(1, 32, 16, 16), (32, 32, 16, 16), (18, 32, 8, 8), (3, 5, 7, 4), (2, 1, 1, 1)])
    def test_compiled_matches_numpy(self, shape):
        c, o, h, w = shape
        rng = np.random.default_rng(sum(shape))
        x, wt, b, g = rng.normal(size=(c, h, w)), rng.normal(size=(o, c, 3, 3)), rng.normal(size=o), rng.normal(size=(o, h, w))
        cb, pb = kernels.compiled_backend, _pykernels
        np.testing.assert_allclose(cb.conv2d_forward(x, wt, b), pb.conv2d_forward(x, wt, b), atol=1e-11)
        for a, e in zip(cb.conv2d_backward(x, wt, g), pb.conv2d_backward(x, wt, g)):
            np.testing.assert_allclose(a, e, atol=1e-11)

    def test_backend_name(self):
        assert kernels.BACKEND in ("compiled", "python")


class TestFullyConnected:
    def test_basis_vector_picks_column(self):
        out = ops.fully_connected(Tensor([1.0, 0.0]), Tensor([[2.0, 3.0], [4.0, 5.0]]), Tensor([0.0, 0.0]))
        assert out.data.tolist() == [2.0, 4.0]

    def test_zero_weight_returns_bias(self):
        out = ops.fully_connected(Tensor([3.0, -7.0, 1.0]), Tensor(np.zeros((2, 3))), Tensor([0.25, -4.0]))
        assert out.data.tolist() == [0.25, -4.0]

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.normal(size=8), rng.normal(size=(5, 8)), rng.normal(size=5)
        ref = [b[i] + sum(w[i, j] * x[j] for j in range(8)) for i in range(5)]
        out = ops.fully_connected(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            ops.fully_connected(Tensor(np.zeros(3)), Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))

    def test_gradients(self):
        rng = np.random.default_rng(4)
        x, w, b = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=3))
        probe = Tensor(rng.normal(size=3))
        assert op_gradcheck(lambda tp: ops.dot(ops.fully_connected(x, w, b, tape=tp), probe, tape=tp), [x, w, b]) < 1e-6


class TestElu:
    def test_values(self):
        out = ops.elu(Tensor([0.0, 1.0, -1.0]))
        assert out.data[0] == 0.0 and out.data[1] == 1.0
        assert out.data[2] == pytest.approx(math.exp(-1) - 1, abs=1e-15)
        assert out.data[2] == pytest.approx(-0.632120, abs=1e-6)

    def test_gradients(self):
        x = Tensor([-2.0, -0.3, 0.4, 1.7])
        probe = Tensor([1.0, -2.0, 0.5, 3.0])
        assert op_gradcheck(lambda tp: ops.dot(ops.elu(x, tape=tp), probe, tape=tp), [x]) < 1e-6


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ops.softmax(Tensor(np.zeros(5))).data, [0.2] * 5, atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = ops.softmax(Tensor([1000.0, 0.0])).data
        assert abs(out[0] - 1.0) < 1e-9 and abs(out[1]) < 1e-9

    def test_matches_direct_formula(self):
        z = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(ops.softmax(Tensor(z)).data, np.exp(z) / np.exp(z).sum(), rtol=0, atol=1e-12)

    def test_gradients(self):
        z = Tensor([0.3, -1.2, 2.0, 0.0])
        probe = Tensor([1.0, 2.0, -1.0, 0.5])
        assert op_gradcheck(lambda tp: ops.dot(ops.softmax(z, tape=tp), probe, tape=tp), [z]) < 1e-6

    @given(hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e6, 1e6)))
    def test_is_a_distribution(self, z):
        p = ops.softmax(Tensor(z)).data
        assert abs(p.sum() - 1.0) < 1e-9
        assert np.all(p <= 1.0)
        # entries are (0, 1] in exact arithmetic; extreme logit gaps underflow to 0.0 in fp64
        gap = z.max() - z
        assert np.all(p[gap < 700] > 0.0)


class TestLayerGradientProperty:
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["conv2d", "fully_connected", "elu", "softmax", "stack"]))
    def test_matches_finite_differences(self, seed, layer):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 3, 3)))
        w = Tensor(rng.normal(size=(2, 2, 3, 3)))
        b = Tensor(rng.normal(size=2))
        fw = Tensor(rng.normal(size=(4, 18)))
        fb = Tensor(rng.normal(size=4))
        v = Tensor(rng.normal(size=4))
        probe18 = Tensor(rng.normal(size=18))
        probe4 = Tensor(rng.normal(size=4))

        def build(tp):
            if layer == "conv2d":
                return ops.dot(ops.flatten(ops.conv2d(x, w, b, tape=tp), tape=tp), probe18, tape=tp)
            if layer == "fully_connected":
                return ops.dot(ops.fully_connected(ops.flatten(x, tape=tp), fw, fb, tape=tp), probe4, tape=tp)
            if layer == "elu":
                return ops.dot(ops.elu(v, tape=tp), probe4, tape=tp)
            if layer == "softmax":
                return ops.dot(ops.softmax(v, tape=tp), probe4, tape=tp)
            h = ops.elu(ops.conv2d(x, w, b, tape=tp), tape=tp)
            z = ops.fully_connected(ops.flatten(h, tape=tp), fw, fb, tape=tp)
            return ops.dot(ops.softmax(z, tape=tp), probe4, tape=tp)

        tensors = {"conv2d": [x, w, b], "fully_connected": [x, fw, fb], "elu": [v], "softmax": [v],
                   "stack": [x, w, b, fw, fb]}[layer]
        assert op_gradcheck(build, tensors, h=1e-5) < 1e-4


class TestSmallOps:
    def test_log_clamped_floor(self):
        out = ops.log_clamped(Tensor([0.0, 1.0]))
        assert out.data[0] == pytest.approx(math.log(1e-10)) and out.data[1] == 0.0

    def test_pick_and_total(self):
        tape = Tape()
        x = Tensor([1.0, 2.0, 3.0])
        loss = ops.add(ops.pick(x, 1, tape=tape), ops.total(x, tape=tape), tape=tape)
        tape.backward(loss)
        assert loss.item() == 8.0
        assert tape.grad(x).tolist() == [1.0, 2.0, 1.0]

    def test_mul_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            ops.mul(Tensor([1.0, 2.0]), Tensor([1.0]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_output_is_an_error(self):
        with pytest.raises(NonFiniteError, match="affine"):
            ops.affine(Tensor([1e308]), 10.0)

    def test_non_finite_tensor_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])


class TestBackward:
    def test_identity_loss(self):
        tape = Tape()
        x = Tensor(3.0)
        tape.backward(x)
        assert tape.grad(x) == 1.0

    def test_sum_of_softmax_has_zero_gradient(self):
        tape = Tape()
        z = Tensor([0.5, -2.0, 1.0])
        tape.backward(ops.total(ops.softmax(z, tape=tape), tape=tape))
        np.testing.assert_allclose(tape.grad(z), 0.0, atol=1e-15)

    def test_non_scalar_loss(self):
        tape = Tape()
        with pytest.raises(ContractViolation):
            tape.backward(ops.elu(Tensor([1.0, 2.0]), tape=tape))

    def test_unused_parameter_gets_zero(self):
        tape = Tape()
        used, unused = Tensor([1.0, 2.0]), Tensor([[5.0]])
        tape.backward(ops.total(used, tape=tape))
        assert tape.grad(unused).tolist() == [[0.0]]

    def test_shared_input_accumulates(self):
        tape = Tape()
        x = Tensor([3.0])
        tape.backward(ops.total(ops.mul(x, x, tape=tape), tape=tape))
        assert tape.grad(x).tolist() == [6.0]

    @given(hnp.arrays(np.float64, (2, 4, 4), elements=st.floats(-3, 3)), st.integers(0, 2**31 - 1))
    def test_repeat_backward_is_bit_identical(self, x, seed):
        rng = np.random.default_rng(seed)
        xt = Tensor(x)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        b = Tensor(rng.normal(size=3))
        fw = Tensor(rng.normal(size=(4, 48)))
        fb = Tensor(np.zeros(4))
        tape = Tape()
        h = ops.elu(ops.conv2d(xt, w, b, tape=tape), tape=tape)
        p = ops.softmax(ops.fully_connected(ops.flatten(h, tape=tape), fw, fb, tape=tape), tape=tape)
        loss = ops.log_clamped(ops.pick(p, 2, tape=tape), tape=tape)
        tape.backward(loss)
        first = {k: tape.grad(t).copy() for k, t in [("w", w), ("b", b), ("fw", fw), ("x", xt)]}
        tape.zero_grad()
        tape.backward(loss)
        for k, t in [("w", w), ("b", b), ("fw", fw), ("x", xt)]:
            assert np.array_equal(first[k], tape.grad(t))


def reference_adam(theta, grads, lr, b1, b2, eps, wd):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        g = g + wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def _params(self, **arrays):
        p = NetworkParams()
        for k, a in arrays.items():
            p.add(k, a)
        return p

    def test_zero_gradient_zero_decay_is_identity(self):
        p = self._params(w=np.array([[1.5, -2.0]]), b=np.array([0.25]))
        before = {k: t.data.copy() for k, t in p.items()}
        state = AdamState.zeros_like(p)
        adam_step(p, {"w": np.zeros((1, 2)), "b": np.zeros(1)}, state, weight_decay=0.0)
        assert state.step_count == 1
        for k in p:
            assert np.array_equal(p[k].data, before[k])

    def test_first_step_moves_by_lr(self):
        p = self._params(theta=np.array([0.0]))
        adam_step(p, {"theta": np.array([1.0])}, AdamState.zeros_like(p), lr=1e-4)
        assert p["theta"].data[0] == pytest.approx(-1e-4, rel=1e-6)

    def test_quadratic_matches_reference(self):
        # minimise 0.5 * (theta - 3)^2 for three steps
        p = self._params(theta=np.array([0.0]))
        state = AdamState.zeros_like(p)
        history = []
        for _ in range(3):
            g = p["theta"].data[0] - 3.0
            history.append(g)
            adam_step(p, {"theta": np.array([g])}, state, lr=0.1, weight_decay=1e-2)
        theta = reference_adam(0.0, history, 0.1, 0.9, 0.999, 1e-8, 1e-2)
        assert abs(p["theta"].data[0] - theta) < 1e-12

    def test_matches_torch_with_l2_decay(self):
        rng = np.random.default_rng(5)
        init = rng.normal(size=(4, 3))
        grads = [rng.normal(size=(4, 3)) for _ in range(5)]
        p = self._params(w=init.copy())
        state = AdamState.zeros_like(p)
        tw = torch.tensor(init.copy(), dtype=torch.float64, requires_grad=True)
        opt = torch.optim.Adam([tw], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-5)
        for g in grads:
            adam_step(p, {"w": g}, state, lr=1e-3)
            tw.grad = torch.tensor(g, dtype=torch.float64)
            opt.step()
        np.testing.assert_allclose(p["w"].data, tw.detach().numpy(), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        p = self._params(w=np.zeros(3))
        with pytest.raises(ConfigurationError):
            adam_step(p, {"w": np.zeros(4)}, AdamState.zeros_like(p))

    def test_state_starts_at_zero(self):
        p = self._params(w=np.ones((2, 2)))
        s = AdamState.zeros_like(p)
        assert s.step_count == 0 and not s.m["w"].any() and not s.v["w"].any()
        assert s.m["w"].shape == s.v["w"].shape == (2, 2)

    @given(hnp.arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(1e-6, 1.0))
    def test_zero_gradient_is_identity(self, theta, lr):
        p = self._params(theta=theta)
        adam_step(p, {"theta": np.zeros_like(theta)}, AdamState.zeros_like(p), lr=lr, weight_decay=0.0)
        assert np.array_equal(p["theta"].data, theta)


class TestCheckpoint:
    def test_round_trip_with_adam(self, tmp_path):
        rng = np.random.default_rng(6)
        p = NetworkParams()
        p.add("conv0.w", rng.normal(size=(2, 1, 3, 3)))
        p.add("value.b", rng.normal(size=1))
        state = AdamState.zeros_like(p)
        adam_step(p, {k: rng.normal(size=t.shape) for k, t in p.items()}, state)
        path = save_checkpoint(tmp_path / "ck.json", p, state, {"arch": "A3C"})
        q, s2, meta = load_checkpoint(path)
        assert meta == {"arch": "A3C"} and list(q) == list(p)
        for k in p:
            assert np.array_equal(q[k].data, p[k].data)
            assert np.array_equal(s2.m[k], state.m[k]) and np.array_equal(s2.v[k], state.v[k])
        assert s2.step_count == 1

    def test_blob_is_little_endian_in_manifest_order(self, tmp_path):
        p = NetworkParams()
        p.add("a", np.array([1.0, 2.0]))
        p.add("b", np.array([[3.0]]))
        save_checkpoint(tmp_path / "ck.json", p)
        raw = (tmp_path / "ck.bin").read_bytes()
        assert np.frombuffer(raw, dtype="<f8").tolist() == [1.0, 2.0, 3.0]

    def test_wrong_format_rejected(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "x.json")
