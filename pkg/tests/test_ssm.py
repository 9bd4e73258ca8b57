import math

import numpy as np
import pytest

from mdsf import _scan_py, kernels
from mdsf.checks import MODULE_TOL, random_scan_problem, scan_oracle_error, ssm_suite
from mdsf.errors import ConfigError, DimensionError, DomainError
from mdsf.oracles import unrolled_scan
from mdsf.ssm import (DIRECTIONS, MambaMixerBlock, SelectiveInputs, SSMParams, directional_scan_2d, discretize,
                      selective_scan)
from mdsf.tensor import Tensor


def run(x, delta, A, B, Cm, D, backend=None):
    params = SSMParams.from_arrays(A, D, requires_grad=False)
    return selective_scan(x, params, SelectiveInputs(delta, B, Cm), backend=backend).data


class TestDiscretize:
    def test_small_delta_identity(self):
        params = SSMParams.init(2, 3)
        a_bar = discretize(params, Tensor(np.full((4, 2), 1e-12))).data
        np.testing.assert_allclose(a_bar, 1.0, atol=1e-10)

    def test_e_inverse(self):
        params = SSMParams.from_arrays([[-1.0]], [0.0])
        assert discretize(params, Tensor([[1.0]])).data.item() == pytest.approx(math.exp(-1), abs=1e-15)

    def test_contracting(self, rng):
        params = SSMParams.from_arrays(-rng.uniform(0.1, 5, (3, 4)), np.zeros(3))
        a_bar = discretize(params, Tensor(rng.uniform(0.01, 3, (10, 3)))).data
        assert np.all((a_bar > 0) & (a_bar < 1))

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(DomainError):
            discretize(SSMParams.init(1, 1), Tensor([[0.0]]))

    def test_default_init(self):
        p = SSMParams.init(2, 4)
        np.testing.assert_allclose(p.A.data, -np.tile(np.arange(1.0, 5.0), (2, 1)))

    def test_positive_A_rejected(self):
        with pytest.raises(DomainError):
            SSMParams.from_arrays([[0.5]], [0.0])


class TestSelectiveScan:
    def test_zero_delta_limit(self, rng):
        x, _, A, B, Cm, D = random_scan_problem(rng, L=16, C=3, S=4)
        y = run(x, np.full_like(x, 1e-14), A, B, Cm, D)
        np.testing.assert_allclose(y, D * x, atol=1e-10)

    def test_single_step(self, rng):
        x, delta, A, B, Cm, D = random_scan_problem(rng, L=1, C=3, S=5)
        expect = (Cm[0] * B[0]).sum() * delta[0] * x[0] + D * x[0]
        np.testing.assert_allclose(run(x, delta, A, B, Cm, D)[0], expect, atol=1e-14)

    def test_unrolled_oracle(self, rng):
        x, delta, A, B, Cm, D = random_scan_problem(rng, L=64, C=4, S=8)
        assert np.abs(run(x, delta, A, B, Cm, D) - unrolled_scan(x, delta, A, B, Cm, D)).max() <= 1e-10

    @pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
    def test_oracle_twenty_instances(self, backend):
        assert scan_oracle_error(20, seed=3, backend=backend) <= 1e-10

    def test_linear_in_x(self, rng):
        x1, delta, A, B, Cm, D = random_scan_problem(rng, L=30, C=2, S=3)
        x2 = rng.standard_normal(x1.shape)
        lhs = run(2.5 * x1 - 0.7 * x2, delta, A, B, Cm, D)
        rhs = 2.5 * run(x1, delta, A, B, Cm, D) - 0.7 * run(x2, delta, A, B, Cm, D)
        assert np.abs(lhs - rhs).max() <= 1e-10

    def test_causal(self, rng):
        x, delta, A, B, Cm, D = random_scan_problem(rng, L=20, C=2, S=3)
        base = run(x, delta, A, B, Cm, D)
        x2 = x.copy()
        x2[12:] += rng.standard_normal((8, 2))
        np.testing.assert_array_equal(run(x2, delta, A, B, Cm, D)[:12], base[:12])

    def test_small_delta_suppresses_tokens(self, rng):
        x, delta, A, B, Cm, D = random_scan_problem(rng, L=40, C=3, S=4)
        noise = np.zeros(40, bool)
        noise[[5, 11, 17, 23]] = True
        delta[noise] = 1e-12
        x_clean = x.copy()
        x_clean[noise] = 0.0
        x_loud = x.copy()
        x_loud[noise] = 100.0 * rng.standard_normal((4, 3))
        later = np.arange(40) > 5
        later &= ~noise
        diff = run(x_loud, delta, A, B, Cm, D) - run(x_clean, delta, A, B, Cm, D)
        assert np.abs(diff[later]).max() < 1e-8

    def test_shape_mismatch(self, rng):
        x, delta, A, B, Cm, D = random_scan_problem(rng, L=5, C=2, S=3)
        with pytest.raises(DimensionError):
            run(x, delta, A, B[:4], Cm, D)

    def test_gradients(self):
        assert max(ssm_suite(seed=5).values()) <= MODULE_TOL


class TestBackends:
    def test_forward_and_backward_agree(self, rng):
        if "compiled" not in kernels.BACKENDS:
            pytest.skip("extension not built")
        args = random_scan_problem(rng, L=50, C=3, S=6)
        yp, hp = kernels.scan_forward(*args, backend="python")
        yc, hc = kernels.scan_forward(*args, backend="compiled")
        np.testing.assert_allclose(yc, yp, atol=1e-13)
        gy = rng.standard_normal(yp.shape)
        for gp, gc in zip(kernels.scan_backward(gy, *args, hp, backend="python"),
                          kernels.scan_backward(gy, *args, hc, backend="compiled")):
            np.testing.assert_allclose(gc, gp, atol=1e-12)

    def test_associative_matches_sequential(self, rng):
        for L in (1, 7, 64, 129):
            args = random_scan_problem(rng, L=L, C=3, S=4)
            y, _ = _scan_py.scan_forward(*args)
            y_assoc, _ = _scan_py.scan_forward_associative(*args)
            assert np.abs(y_assoc - y).max() <= 1e-12

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            kernels.get_backend("gpu")


def _inputs(rng, H, W, C, S):
    L = H * W
    x = rng.standard_normal((C, H, W))
    ins = SelectiveInputs(rng.uniform(0.1, 1.0, (L, C)), rng.standard_normal((L, S)), rng.standard_normal((L, S)))
    params = SSMParams.from_arrays(-rng.uniform(0.5, 2, (C, S)), rng.standard_normal(C), requires_grad=False)
    return x, params, ins


class TestDirectional:
    def test_rl_is_reversed_lr(self, rng):
        x, params, ins = _inputs(rng, 3, 4, 2, 3)
        seq = x.reshape(2, 12).T[::-1]
        rev = SelectiveInputs(ins.delta.data[::-1], ins.B.data[::-1], ins.C.data[::-1])
        expect = selective_scan(seq.copy(), params, rev).data[::-1].T.reshape(2, 3, 4)
        np.testing.assert_array_equal(directional_scan_2d(x, params, ins, "RL").data, expect)

    def test_single_token_all_equal(self, rng):
        x, params, ins = _inputs(rng, 1, 1, 3, 2)
        outs = [directional_scan_2d(x, params, ins, d).data for d in DIRECTIONS]
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])

    def test_two_by_two_unroll(self):
        # one channel, one state; a = exp(-delta), positions row-major p0 p1 / p2 p3
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        delta = np.array([0.5, 1.0, 0.25, 2.0])
        B = np.array([1.0, -1.0, 2.0, 0.5])
        Cm = np.array([0.3, 1.0, -2.0, 1.5])
        D = 0.1
        params = SSMParams.from_arrays([[-1.0]], [D], requires_grad=False)
        ins = SelectiveInputs(delta[:, None], B[:, None], Cm[:, None])
        flat = x.ravel()

        def unroll(order):
            h, y = 0.0, np.zeros(4)
            for p in order:
                h = math.exp(-delta[p]) * h + delta[p] * B[p] * flat[p]
                y[p] = Cm[p] * h + D * flat[p]
            return y.reshape(1, 2, 2)

        for direction, order in {"LR": [0, 1, 2, 3], "RL": [3, 2, 1, 0], "TB": [0, 2, 1, 3], "BT": [3, 1, 2, 0]}.items():
            np.testing.assert_allclose(directional_scan_2d(x, params, ins, direction).data, unroll(order), atol=1e-15)


class TestMixerBlock:
    def test_zero_out_identity(self, rng):
        x = rng.standard_normal((4, 3, 5))
        np.testing.assert_array_equal(MambaMixerBlock(4, zero_out=True, rng=rng)(x).data, x)

    def test_single_channel_rejected(self):
        with pytest.raises(ConfigError):
            MambaMixerBlock(1)

    @pytest.mark.parametrize("shape", [(2, 1, 1), (2, 3, 4), (5, 2, 2)])
    def test_shape(self, rng, shape):
        assert MambaMixerBlock(shape[0], rng=rng)(rng.standard_normal(shape)).shape == shape
