import numpy as np
import pytest

from mdsf.attention import MSDA, MSDAConfig, attention_weights, dilated_attention_branch, msda
from mdsf.checks import MODULE_TOL, msda_oracle_error, msda_suite
from mdsf.errors import ConfigError
from mdsf.functional import unfold_neighborhood
from mdsf.oracles import dense_masked_attention
from mdsf.tensor import Tensor


class TestBranch:
    def test_zero_keys_average_values(self, rng):
        Q, V = rng.standard_normal((2, 6, 6)), rng.standard_normal((2, 6, 6))
        out = dilated_attention_branch(Q, np.zeros((2, 6, 6)), V, 2).data
        np.testing.assert_allclose(out, unfold_neighborhood(Tensor(V), 2).data.mean(axis=1), atol=1e-14)

    def test_constant_values_interior(self, rng):
        Q, K = rng.standard_normal((3, 8, 8)), rng.standard_normal((3, 8, 8))
        v = np.array([1.5, -2.0, 0.25])
        V = np.broadcast_to(v[:, None, None], (3, 8, 8))
        out = dilated_attention_branch(Q, K, V, 2).data
        np.testing.assert_allclose(out[:, 2:-2, 2:-2], np.broadcast_to(v[:, None, None], (3, 4, 4)), atol=1e-14)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_dense_oracle(self, rng, d):
        Q, K, V = (rng.standard_normal((4, 6, 6)) for _ in range(3))
        assert np.abs(dilated_attention_branch(Q, K, V, d).data - dense_masked_attention(Q, K, V, d)).max() <= 1e-10

    def test_oracle_trials(self):
        assert msda_oracle_error(20, seed=4) <= 1e-10

    def test_rows_stochastic(self, rng):
        Q, K = rng.standard_normal((4, 7, 5)) * 10, rng.standard_normal((4, 7, 5)) * 10
        w = attention_weights(Q, K, 3).data
        assert np.all(w > 0)
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)

    def test_translation_equivariance(self, rng):
        d = 1
        Q, K, V = (rng.standard_normal((2, 10, 10)) for _ in range(3))
        base = dilated_attention_branch(Q, K, V, d).data
        sh = lambda a: np.roll(a, (1, 2), axis=(1, 2))
        moved = dilated_attention_branch(sh(Q), sh(K), sh(V), d).data
        # positions whose neighbourhoods avoid both the border and the wrapped strip
        np.testing.assert_allclose(moved[:, 3:9, 4:9], base[:, 2:8, 2:7], atol=1e-14)


class TestMSDA:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MSDAConfig(8, (1, 2, 3))
        with pytest.raises(ConfigError):
            MSDAConfig(6, (2, 1, 3))
        with pytest.raises(ConfigError):
            MSDAConfig(4, (0, 1))
        cfg = MSDAConfig(12)
        assert (cfg.n_d, cfg.branch_channels, cfg.dilations) == (3, 4, (1, 2, 3))

    def test_single_branch(self, rng):
        cfg = MSDAConfig(3, (1,))
        mod = MSDA(cfg, rng=rng)
        x = rng.standard_normal((3, 5, 5))
        (out,) = msda(x, cfg, mod)
        q, k, v = (np.einsum("oc,chw->ohw", w.data, x) for w in (mod.w_q, mod.w_k, mod.w_v))
        np.testing.assert_allclose(out.data, dilated_attention_branch(q, k, v, 1).data, atol=1e-14)

    def test_branch_shapes(self, rng):
        outs = msda(rng.standard_normal((6, 4, 7)), MSDAConfig(6))
        assert [o.shape for o in outs] == [(2, 4, 7)] * 3

    def test_wrong_channels(self, rng):
        with pytest.raises(ConfigError):
            MSDA(MSDAConfig(6))(rng.standard_normal((4, 3, 3)))

    @pytest.mark.parametrize("d_index", [0, 1, 2])
    def test_receptive_field(self, rng, d_index):
        cfg = MSDAConfig(6)
        mod = MSDA(cfg, rng=rng)
        d = cfg.dilations[d_index]
        x = rng.standard_normal((6, 11, 11))
        base = mod(x)[d_index].data
        for _ in range(20):
            p = rng.integers(0, 11, 2)
            q = rng.integers(0, 11, 2)
            bumped = x.copy()
            bumped[:, q[0], q[1]] += rng.standard_normal(6)
            diff = mod(bumped)[d_index].data[:, p[0], p[1]] - base[:, p[0], p[1]]
            if np.abs(p - q).max() > d:
                assert np.all(diff == 0.0)

    def test_gradients(self):
        assert max(msda_suite(seed=2).values()) <= MODULE_TOL
