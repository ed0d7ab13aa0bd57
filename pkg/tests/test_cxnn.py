import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csmgan import cxnn
from csmgan.cxnn import ComplexTensor
from conftest import fd_check


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def layer_grad_check(layer, x, rng, check_params=True):
    """Finite-difference check of input and parameter gradients of ``layer``."""
    xr, xi = x.real.copy(), x.imag.copy()
    out = layer.forward(ComplexTensor(xr, xi))
    wr, wi = rng.standard_normal(out.shape), rng.standard_normal(out.shape)

    def loss():
        o = layer.forward(ComplexTensor(xr, xi))
        return float(np.sum(wr * o.re) + np.sum(wi * o.im))

    loss()
    gin = layer.backward(ComplexTensor(wr, wi))
    arrays, grads = [xr, xi], [gin.re, gin.im]
    if check_params:
        for k in ("p_r", "p_i"):
            if k in layer.params:
                arrays.append(layer.params[k])
                grads.append(layer.grads[k].copy())
    fd_check(loss, arrays, grads, max_entries=60, rng=rng)


class TestLinear:
    def test_matches_complex_arithmetic(self, rng):
        W = crandn(rng, 5, 7)  # fan_out x fan_in
        x = crandn(rng, 7)
        y = cxnn.complex_linear_forward(W.real, W.imag, x)
        assert np.abs(y - W @ x).max() < 1e-12

    def test_real_specialisation(self, rng):
        W = rng.standard_normal((3, 4))
        x = crandn(rng, 4)
        y = cxnn.complex_linear_forward(W, np.zeros_like(W), x)
        np.testing.assert_allclose(y.real, W @ x.real, atol=1e-14)
        np.testing.assert_allclose(y.imag, W @ x.imag, atol=1e-14)
        y2 = cxnn.complex_linear_forward(np.zeros_like(W), W, x.real)
        assert np.all(y2.real == 0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            cxnn.complex_linear_forward(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(3))
        layer = cxnn.ComplexLinear(4, 2, rng)
        with pytest.raises(ValueError):
            layer.forward(ComplexTensor.zeros((1, 5)))

    def test_block_matrix_form(self, rng):
        layer = cxnn.ComplexLinear(3, 2, rng)
        Lr, Li = layer.params["p_r"].T, layer.params["p_i"].T
        block = np.block([[Lr, -Li], [Li, Lr]])
        x = crandn(rng, 3)
        y = layer.forward(ComplexTensor.from_complex(x[None]))
        np.testing.assert_allclose(np.concatenate([y.re[0], y.im[0]]), block @ np.concatenate([x.real, x.imag]),
                                   atol=1e-14)

    def test_gradients(self, rng):
        layer_grad_check(cxnn.ComplexLinear(6, 4, rng), crandn(rng, 3, 6), rng)

    def test_real_case_gradient(self, rng):
        layer = cxnn.ComplexLinear(4, 3, rng)
        layer.params["p_i"][...] = 0.0
        x = rng.standard_normal((2, 4)).astype(complex)
        layer.forward(ComplexTensor.from_complex(x))
        g = rng.standard_normal((2, 3))
        layer.backward(ComplexTensor(g, np.zeros_like(g)))
        np.testing.assert_allclose(layer.grads["p_r"], x.real.T @ g, atol=1e-14)

    def test_init_variance(self):
        layer = cxnn.ComplexLinear(400, 300, np.random.default_rng(0))
        var = layer.params["p_r"].var() + layer.params["p_i"].var()
        assert var == pytest.approx(1 / 400, rel=0.02)


class TestConv:
    def test_one_hot_filter(self, rng):
        x = crandn(rng, 4, 4, 3)
        k = np.zeros((4, 4, 3, 1))
        k[2, 1, 0, 0] = 1.0
        y = cxnn.full_conv_forward(k, np.zeros_like(k), x)
        assert y.shape == (1, 1, 1) and y[0, 0, 0] == x[2, 1, 0]

    def test_bias_free(self, rng):
        k = rng.standard_normal((3, 3, 2, 4))
        assert np.all(cxnn.full_conv_forward(k, k, np.zeros((3, 3, 2))) == 0)

    def test_transpose_gram_action(self, rng):
        kr, ki = rng.standard_normal((3, 3, 2, 5)), rng.standard_normal((3, 3, 2, 5))
        A = (kr + 1j * ki).reshape(18, 5).T  # forward conv as a dense matrix (5 x 18)
        x = crandn(rng, 3, 3, 2)
        y = cxnn.full_conv_forward(kr, ki, x)
        back = cxnn.full_conv_transpose(kr, ki, y)
        ref = (A.T @ (A @ x.reshape(-1))).reshape(3, 3, 2)
        assert np.abs(back - ref).max() < 1e-10

    def test_kernel_must_cover_input(self, rng):
        with pytest.raises(ValueError):
            cxnn.full_conv_forward(np.zeros((2, 2, 1, 3)), np.zeros((2, 2, 1, 3)), np.zeros((3, 3, 1)))

    def test_gradients(self, rng):
        layer_grad_check(cxnn.FullConv((3, 3, 2), 4, rng), crandn(rng, 2, 3, 3, 2), rng)
        layer_grad_check(cxnn.FullConvTranspose(4, (3, 3, 2), rng), crandn(rng, 2, 1, 1, 4), rng)


class TestActivations:
    def test_modrelu_values(self):
        assert cxnn.modrelu(np.array([1.0 + 0j]), -0.25)[0] == pytest.approx(0.75)
        z = np.array([0.1 + 0.1j, 0.2j, 0.0])
        assert np.all(cxnn.modrelu(z, -0.25) == 0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([-0.25, -0.125, 0.3]))
    def test_phase_preservation(self, a, b, bias):
        z = np.array([complex(a, b)])
        for out in (cxnn.modrelu(z, bias), cxnn.leaky_cardioid(z, 0.5)):
            if abs(out[0]) > 0:
                # unit phasors, so -pi and pi (sign of a zero imaginary part) agree
                assert abs(out[0] / abs(out[0]) - z[0] / abs(z[0])) < 1e-12

    def test_cardioid_values(self):
        z = np.array([2.0 + 0j, -2.0 + 0j])
        np.testing.assert_allclose(cxnn.leaky_cardioid(z, 0.5), [2.5, -0.5])
        assert cxnn.leaky_cardioid(np.array([3j]), 0.0)[0] == pytest.approx(1.5j)
        assert cxnn.leaky_cardioid(np.array([0j]), 0.5)[0] == 0

    def test_split_sigmoid(self):
        assert cxnn.split_sigmoid_mean(np.zeros(5, complex)) == 0.5
        assert cxnn.split_sigmoid_mean(np.full(3, 800 + 800j)) == 1.0
        assert cxnn.split_sigmoid_mean(np.array([50j])) == pytest.approx(0.75)

    @pytest.mark.parametrize("layer", [cxnn.ModReLU(-0.25), cxnn.ModReLU(0.1), cxnn.LeakyCardioid(0.5),
                                       cxnn.LeakyCardioid(0.0), cxnn.Hermitianize(), cxnn.SplitSigmoidMean()])
    def test_gradients(self, layer, rng):
        x = crandn(rng, 2, 3, 3, 2)
        if isinstance(layer, cxnn.SplitSigmoidMean):
            xr, xi = x.real.copy(), x.imag.copy()
            w = rng.standard_normal(2)
            loss = lambda: float(w @ layer.forward(ComplexTensor(xr, xi)))  # noqa: E731
            loss()
            g = layer.backward(w)
            fd_check(loss, [xr, xi], [g.re, g.im])
        else:
            layer_grad_check(layer, x, rng)

    def test_kink_conventions(self):
        m = cxnn.ModReLU(-0.5)
        m.forward(ComplexTensor(np.array([0.5, 0.0]), np.array([0.0, 0.0])))
        g = m.backward(ComplexTensor(np.ones(2), np.ones(2)))
        assert np.all(g.re == 0) and np.all(g.im == 0)
        c = cxnn.LeakyCardioid(0.5)
        c.forward(ComplexTensor(np.zeros(1), np.zeros(1)))
        g = c.backward(ComplexTensor(np.ones(1), np.ones(1)))
        assert g.re[0] == 0.75 and g.im[0] == 0.75

    def test_backward_before_forward(self):
        with pytest.raises(RuntimeError):
            cxnn.ModReLU(-0.1).backward(ComplexTensor.zeros((1, 2)))

    def test_chain_linear_cardioid(self, rng):
        net = cxnn.Sequential([cxnn.ComplexLinear(5, 4, rng, "a"), cxnn.LeakyCardioid(0.5),
                               cxnn.ComplexLinear(4, 3, rng, "b"), cxnn.ModReLU(-0.1)])
        layer_grad_check(net, crandn(rng, 3, 5), rng, check_params=False)
        x = crandn(rng, 3, 5)
        xr, xi = x.real, x.imag
        w = crandn(rng, 3, 3)

        def loss():
            o = net.forward(ComplexTensor(xr, xi))
            return float(np.sum(w.real * o.re + w.imag * o.im))

        loss()
        net.backward(ComplexTensor(w.real, w.imag))
        params, grads = net.named_params(), net.named_grads()
        fd_check(loss, list(params.values()), [grads[k].copy() for k in params], max_entries=30, rng=rng)


class TestActivationSpec:
    def test_roundtrip(self):
        for spec in (cxnn.ActivationSpec("modrelu", b=-0.125), cxnn.ActivationSpec("cardioid", alpha=0.0)):
            assert cxnn.ActivationSpec.from_dict(spec.to_dict()) == spec
        with pytest.raises(ValueError):
            cxnn.ActivationSpec("relu")


class TestAdam:
    def test_zero_gradient_identity(self, rng):
        p = {"w": rng.standard_normal(5)}
        before = p["w"].copy()
        opt = cxnn.Adam(1e-3)
        for _ in range(5):
            opt.step(p, {"w": np.zeros(5)})
        assert np.array_equal(p["w"], before)

    def test_one_step_oracle(self):
        g = np.array([0.3, -2.0, 1e-9])
        p = {"w": np.zeros(3)}
        cxnn.Adam(1e-2).step(p, {"w": g})
        # m_hat = g, v_hat = g^2 after bias correction
        np.testing.assert_allclose(p["w"], -1e-2 * g / (np.abs(g) + 1e-7), rtol=1e-12)

    def test_sign_asymptote(self):
        p = {"w": np.zeros(2)}
        opt = cxnn.Adam(1e-3)
        g = np.array([0.7, -3.0])
        prev = p["w"].copy()
        for _ in range(200):
            opt.step(p, {"w": g})
            step = p["w"] - prev
            prev = p["w"].copy()
        np.testing.assert_allclose(step, -1e-3 * np.sign(g), rtol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cxnn.Adam(1e-3).step({"w": np.zeros(2)}, {"w": np.zeros(3)})

    def test_defaults(self):
        opt = cxnn.Adam(2e-5)
        assert (opt.beta1, opt.beta2, opt.epsilon) == (0.5, 0.999, 1e-7)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        blobs = {"a": (rng.standard_normal((3, 2)), rng.standard_normal((3, 2))),
                 "b/c": (rng.standard_normal(4), rng.standard_normal(4))}
        path = tmp_path / "m.cxck"
        cxnn.save_checkpoint(path, blobs, {"epoch": 3, "note": "x"})
        back, meta = cxnn.load_checkpoint(path)
        assert meta == {"epoch": 3, "note": "x"}
        for k, (re, im) in blobs.items():
            assert np.array_equal(back[k][0], re) and np.array_equal(back[k][1], im)
        assert path.read_bytes()[:4] == b"CXCK"

    def test_bad_file(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"nope" + bytes(20))
        with pytest.raises(ValueError):
            cxnn.load_checkpoint(p)
