import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safin import tensor as T
from safin.stylization import (
    FinParams,
    SafinWeights,
    StyleParams,
    adain,
    attention_map,
    fin_apply,
    fin_style_params,
    instance_normalize,
    safin_forward,
    safin_params,
    self_attention,
)
from safin.tensor import ShapeError, Tensor, backward, grad_check


def ones_style(shape):
    return StyleParams(Tensor(np.ones(shape)), Tensor(np.zeros(shape)))


def attention_oracle(fc, fs, w):
    """Explicit per-position loops for softmax(Q K^T) V."""
    wf, wg, wh = (t.data[:, :, 0, 0] for t in (w.w_f, w.w_g, w.w_h))
    n, c, hc, wc = fc.shape
    _, _, hs, ws = fs.shape
    out = np.zeros((n, c, hc, wc))
    for b in range(n):
        style_pos = [(i, j) for i in range(hs) for j in range(ws)]
        for y in range(hc):
            for x in range(wc):
                q = wf @ fc[b, :, y, x]
                scores = np.array([q @ (wg @ fs[b, :, i, j]) for i, j in style_pos])
                a = np.exp(scores - scores.max())
                a /= a.sum()
                out[b, :, y, x] = sum(ak * (wh @ fs[b, :, i, j]) for ak, (i, j) in zip(a, style_pos))
    return out


class TestInstanceNormalize:
    def test_constant_channel_is_zero(self):
        out = instance_normalize(Tensor(np.full((1, 2, 3, 3), 4.2)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_hand_values(self):
        out = instance_normalize(Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)), epsilon=1e-300)
        np.testing.assert_allclose(out.data.ravel(), [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_output_moments(self, seed):
        r = np.random.default_rng(seed)
        x = r.normal(r.uniform(-5, 5), r.uniform(0.5, 4), (2, 3, 5, 6))
        y = instance_normalize(Tensor(x), 1e-5).data
        assert np.abs(y.mean(axis=(2, 3))).max() < 1e-9
        assert np.abs(y.std(axis=(2, 3)) - 1).max() < 1e-3


class TestFinApply:
    def test_identity(self, rng):
        f = Tensor(rng.standard_normal((2, 3, 4, 4)))
        fin = FinParams(Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(fin_apply(f, fin, ones_style(f.shape)).data, f.data)

    def test_scalar_case(self):
        one = (1, 1, 1, 1)
        out = fin_apply(
            Tensor(np.full(one, 0.5)),
            FinParams(Tensor([2.0]), Tensor([1.0])),
            StyleParams(Tensor(np.full(one, 3.0)), Tensor(np.full(one, -1.0))),
        )
        assert out.data.item() == 5.0

    def test_zero_input_isolates_affine(self, rng):
        shape = (2, 3, 2, 2)
        gs, bs = rng.uniform(0, 2, shape), rng.uniform(0, 2, shape)
        b_ind = rng.standard_normal(3)
        out = fin_apply(Tensor(np.zeros(shape)), FinParams(Tensor(rng.standard_normal(3)), Tensor(b_ind)),
                        StyleParams(Tensor(gs), Tensor(bs)))
        np.testing.assert_allclose(out.data, gs * b_ind[None, :, None, None] + bs, rtol=1e-15)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            fin_apply(Tensor(np.zeros((1, 3, 2, 2))), FinParams(Tensor(np.ones(2)), Tensor(np.zeros(2))),
                      ones_style((1, 3, 2, 2)))

    def test_style_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fin_apply(Tensor(np.zeros((1, 2, 2, 2))), FinParams(Tensor(np.ones(2)), Tensor(np.zeros(2))),
                      ones_style((1, 2, 4, 4)))


class TestSelfAttention:
    def test_projection_shapes(self, rng):
        w = SafinWeights.init(16, rng)
        assert w.w_f.shape == w.w_g.shape == (2, 16, 1, 1)
        assert w.w_h.shape == w.w_gamma.shape == w.w_beta.shape == (16, 16, 1, 1)
        assert SafinWeights.init(4, rng).w_f.shape == (1, 4, 1, 1)

    def test_single_position(self, rng):
        w = SafinWeights.init(8, rng)
        fc, fs = rng.standard_normal((2, 1, 8, 1, 1))
        a = attention_map(Tensor(fc), Tensor(fs), w)
        assert a.data.tolist() == [[[1.0]]]
        out = self_attention(Tensor(fc), Tensor(fs), w)
        np.testing.assert_allclose(out.data[0, :, 0, 0], w.w_h.data[:, :, 0, 0] @ fs[0, :, 0, 0], rtol=1e-13)

    def test_rows_stochastic(self, rng):
        w = SafinWeights.init(8, rng)
        a = attention_map(Tensor(rng.standard_normal((2, 8, 3, 4))), Tensor(rng.standard_normal((2, 8, 5, 2))), w)
        assert a.shape == (2, 12, 10)
        assert np.abs(a.data.sum(axis=-1) - 1).max() < 1e-9

    def test_output_takes_content_geometry(self, rng):
        w = SafinWeights.init(8, rng)
        out = self_attention(Tensor(rng.standard_normal((1, 8, 3, 5))), Tensor(rng.standard_normal((1, 8, 6, 2))), w)
        assert out.shape == (1, 8, 3, 5)

    def test_matches_loop_oracle(self, rng):
        w = SafinWeights.init(8, rng)
        fc, fs = rng.standard_normal((2, 8, 3, 2)), rng.standard_normal((2, 8, 2, 4))
        np.testing.assert_allclose(self_attention(Tensor(fc), Tensor(fs), w).data, attention_oracle(fc, fs, w), atol=1e-13)

    def test_channel_mismatch(self, rng):
        w = SafinWeights.init(8, rng)
        with pytest.raises(ShapeError):
            self_attention(Tensor(np.zeros((1, 8, 2, 2))), Tensor(np.zeros((1, 4, 2, 2))), w)


class TestSafinParams:
    def test_zero_projection(self, rng):
        w = SafinWeights.init(8, rng)
        w.w_gamma.data[:] = 0
        w.w_beta.data[:] = 0
        p = safin_params(Tensor(rng.standard_normal((1, 8, 4, 4))), Tensor(rng.standard_normal((1, 8, 4, 4))), w)
        assert np.all(p.gamma_s.data == 0) and np.all(p.beta_s.data == 0)

    def test_nonnegative_over_draws(self):
        r = np.random.default_rng(99)
        lowest, any_positive = np.inf, False
        for _ in range(100):
            w = SafinWeights.init(8, r)
            p = safin_params(
                instance_normalize(Tensor(r.standard_normal((1, 8, 3, 3)))),
                instance_normalize(Tensor(r.standard_normal((1, 8, 2, 4)))),
                w,
            )
            lowest = min(lowest, p.gamma_s.data.min(), p.beta_s.data.min())
            any_positive |= bool(np.any(p.gamma_s.data > 0))
            assert p.gamma_s.shape == p.beta_s.shape == (1, 8, 3, 3)
        assert lowest >= 0 and any_positive


class TestSafinForward:
    def test_identity_configuration(self, rng):
        w = SafinWeights.init(8, rng)
        fc = Tensor(rng.standard_normal((2, 8, 4, 4)))
        f_bar = instance_normalize(fc)
        np.testing.assert_array_equal(fin_apply(f_bar, w.fin, ones_style(fc.shape)).data, f_bar.data)

    @pytest.mark.parametrize("attention", [True, False])
    def test_shape(self, attention, rng):
        w = SafinWeights.init(8, rng)
        out = safin_forward(Tensor(rng.standard_normal((2, 8, 4, 6))), Tensor(rng.standard_normal((2, 8, 2, 2))), w,
                            attention_enabled=attention)
        assert out.shape == (2, 8, 4, 6)

    @pytest.mark.parametrize("attention", [True, False])
    def test_weight_gradients(self, attention, rng):
        w = SafinWeights.init(8, rng)
        w.fin.beta_ind.data[:] = rng.uniform(-0.5, 0.5, 8)
        fc, fs = Tensor(rng.standard_normal((2, 8, 3, 3))), Tensor(rng.standard_normal((2, 8, 3, 2)))
        wr = Tensor(rng.standard_normal((2, 8, 3, 3)))
        err = grad_check(lambda *_: T.sum_(T.mul(safin_forward(fc, fs, w, 1e-5, attention), wr)),
                         list(w.parameters().values()))
        assert err < 1e-4

    def test_ablation_is_a_pure_switch(self, rng):
        w = SafinWeights.init(8, rng)
        fc, fs = Tensor(rng.standard_normal((2, 8, 4, 4))), Tensor(rng.standard_normal((2, 8, 4, 4)))
        off = safin_forward(fc, fs, w, 1e-5, attention_enabled=False)
        fc_bar = instance_normalize(fc, 1e-5)
        manual = fin_apply(fc_bar, w.fin, fin_style_params(fc_bar, fs, w, 1e-5))
        assert np.array_equal(off.data, manual.data)
        on = safin_forward(fc, fs, w, 1e-5, attention_enabled=True)
        assert on.shape == off.shape and not np.allclose(on.data, off.data)

    def test_fallback_is_adain_with_identity_projections(self, rng):
        w = SafinWeights.init(4, rng)
        w.w_gamma.data[:] = np.eye(4).reshape(4, 4, 1, 1)
        w.w_beta.data[:] = np.eye(4).reshape(4, 4, 1, 1)
        fc = Tensor(rng.standard_normal((1, 4, 4, 4)))
        fs = Tensor(rng.normal(2.0, 1.5, (1, 4, 4, 4)))
        np.testing.assert_allclose(safin_forward(fc, fs, w, attention_enabled=False).data, adain(fc, fs).data, atol=1e-12)

    @pytest.mark.parametrize("attention", [True, False])
    def test_no_dead_parameters(self, attention, rng):
        w = SafinWeights.init(8, rng)
        fc, fs = Tensor(rng.standard_normal((2, 8, 4, 4))), Tensor(rng.normal(1.0, 1.0, (2, 8, 3, 3)))
        wr = Tensor(rng.standard_normal((2, 8, 4, 4)))
        backward(T.sum_(T.mul(safin_forward(fc, fs, w, attention_enabled=attention), wr)))
        params = w.parameters()
        if not attention:
            # the attention-free path never reads the query/key/value projections
            params = {k: v for k, v in params.items() if k not in ("w_f", "w_g", "w_h")}
        for name, p in params.items():
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name


class TestAdain:
    def test_self_inverse(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        assert np.abs(adain(x, x).data - x.data).max() < 1e-6

    def test_constant_content(self, rng):
        s = rng.normal(1.0, 2.0, (1, 3, 4, 4))
        out = adain(Tensor(np.full((1, 3, 4, 4), 5.0)), Tensor(s)).data
        np.testing.assert_allclose(out, np.broadcast_to(s.mean(axis=(2, 3))[:, :, None, None], out.shape), rtol=1e-12)

    def test_moment_transfer(self, rng):
        c, s = rng.normal(0, 1, (2, 3, 6, 6)), rng.normal(3, 2, (2, 3, 5, 4))
        out = adain(Tensor(c), Tensor(s)).data
        assert np.abs(out.mean(axis=(2, 3)) - s.mean(axis=(2, 3))).max() < 1e-3
        assert np.abs(out.std(axis=(2, 3)) - s.std(axis=(2, 3))).max() < 1e-3

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            adain(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((1, 2, 2, 2))))
