"""Gram/content/style losses, smoothing transforms, AdaIN, interpolation."""

import numpy as np
import pytest

from helpers import gradcheck, max_rel_err, naive_gram
from nstlab import losses as L
from nstlab import tensor as T
from nstlab.errors import ContractError, ShapeError
from nstlab.losses import (
    LossConfig,
    Smoothing,
    adain,
    adain_loss,
    channel_entropy,
    channel_stats,
    combine_losses,
    content_loss,
    gram,
    interpolate_features,
    smooth,
    style_loss,
)
from nstlab.tensor import Tensor


def feat(values, c, h, w):
    return Tensor(np.asarray(values, dtype=np.float32).reshape(1, c, h, w))


HAND_FEATURE = feat([1.0, 2.0, 3.0, 4.0], 2, 1, 2)  # ch0=[1,2], ch1=[3,4]


class TestGram:
    def test_hand_case(self):
        g = gram(HAND_FEATURE).values
        np.testing.assert_array_equal(g.data[0, 0], [[5.0, 11.0], [11.0, 25.0]])

    def test_hand_case_normalized(self):
        g = gram(HAND_FEATURE, normalized=True).values
        np.testing.assert_array_equal(g.data[0, 0], [[1.25, 2.75], [2.75, 6.25]])

    def test_zero_feature(self):
        g = gram(Tensor.zeros((1, 3, 4, 4))).values
        assert (g.data == 0).all()

    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(2)
        for _ in range(12):
            c = int(rng.integers(1, 9))
            h = int(rng.integers(1, 17))
            w = int(rng.integers(1, 17))
            x = rng.standard_normal((1, c, h, w)).astype(np.float32)
            got = gram(Tensor(x)).values.data[0, 0]
            want = naive_gram(x)
            assert got.tobytes() == want.tobytes()

    def test_symmetric_and_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.standard_normal((1, 6, 7, 5)).astype(np.float32)
            g = gram(Tensor(x)).values.data[0, 0].astype(np.float64)
            np.testing.assert_array_equal(g, g.T)
            eigs = np.linalg.eigvalsh(g)
            assert eigs.min() >= -1e-5 * np.trace(g)

    def test_batch_guard(self):
        with pytest.raises(ShapeError):
            gram(Tensor.zeros((2, 3, 4, 4)))


class TestSmoothing:
    def test_softmax_uniform_on_constant(self):
        x = Tensor(np.full((1, 2, 3, 3), 7.0, dtype=np.float32))
        y = smooth(x, Smoothing("softmax"))
        np.testing.assert_allclose(y.data, 0.5, atol=1e-6)

    def test_softmax_two_channel_values(self):
        x = feat([0.0, 1.0], 2, 1, 1)
        y = smooth(x, Smoothing("softmax"))
        np.testing.assert_allclose(y.data.ravel(), [0.2689, 0.7311], atol=1e-4)

    def test_definitions(self):
        assert smooth(Tensor.scalar(5.0), Smoothing("scale", 0.001)).item() == pytest.approx(0.005)
        assert smooth(Tensor.scalar(0.0), Smoothing("tanh")).item() == 0.0
        assert smooth(Tensor.scalar(1.0), Smoothing("softsign")).item() == 0.5
        x = Tensor(np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2))
        assert smooth(x, Smoothing("none")) is x

    def test_softmax_channel_sums_one(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((1, 5, 6, 6)).astype(np.float32) * 3)
        y = smooth(x, Smoothing("softmax"))
        np.testing.assert_allclose(y.data.sum(axis=1), 1.0, atol=1e-6)

    def test_softmax_raises_entropy_of_peaky_input(self):
        x = np.zeros((1, 6, 4, 4), dtype=np.float32)
        x[0, 2] = 10.0
        raw = channel_entropy(x)
        smoothed = channel_entropy(smooth(Tensor(x), Smoothing("softmax")))
        assert smoothed > raw

    def test_tanh_softsign_bounded(self):
        # float32 tanh saturates to exactly 1.0 past |x| ~ 9; stay below that
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((1, 3, 8, 8)).astype(np.float32) * 2.5)
        for kind in ("tanh", "softsign"):
            y = smooth(x, Smoothing(kind)).data
            assert (y > -1).all() and (y < 1).all()

    def test_scale_exactly_linear(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 3, 5, 5)).astype(np.float32)
        y = smooth(Tensor(x), Smoothing("scale", 0.001)).data
        np.testing.assert_array_equal(y, x * np.float32(0.001))

    def test_parse(self):
        assert Smoothing.parse("scale:0.01") == Smoothing("scale", 0.01)
        assert Smoothing.parse("tanh") == Smoothing("tanh")
        assert Smoothing.parse({"kind": "softmax"}) == Smoothing("softmax")
        with pytest.raises(ContractError):
            Smoothing.parse("mystery")
        with pytest.raises(ContractError):
            Smoothing("scale", -1.0)


class TestContentLoss:
    def test_identical_inputs_zero_everywhere(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((1, 3, 4, 4)).astype(np.float32))
        for kind in ("none", "softmax", "scale", "tanh", "softsign"):
            for norm in ("none", "half", "per-element"):
                val = content_loss(x, x, Smoothing(kind), norm).item()
                assert val == 0.0

    def test_hand_case(self):
        fx = feat([1.0, 2.0], 1, 1, 2)
        fc = feat([1.0, 0.0], 1, 1, 2)
        assert content_loss(fx, fc).item() == 4.0
        assert content_loss(fx, fc, normalization="half").item() == 2.0
        assert content_loss(fx, fc, normalization="per-element").item() == 2.0

    def test_per_element_scales_quadratically(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        base = content_loss(Tensor(a), Tensor(b), normalization="per-element").item()
        scaled = content_loss(Tensor(3 * a), Tensor(3 * b),
                              normalization="per-element").item()
        assert scaled == pytest.approx(9.0 * base, rel=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            content_loss(Tensor.zeros((1, 1, 2, 2)), Tensor.zeros((1, 1, 2, 3)))


def single_tap_config(**kwargs):
    defaults = dict(content_tap="t", style_taps=(("t", 1.0),))
    defaults.update(kwargs)
    return LossConfig(**defaults)


class TestStyleLoss:
    def test_identical_bundles_zero(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((1, 3, 4, 4)).astype(np.float32))
        for norm in ("none", "per-element", "swag"):
            cfg = single_tap_config(gram_normalization=norm)
            assert style_loss({"t": x}, {"t": x}, cfg).item() == 0.0

    def test_hand_case_unnormalized(self):
        cfg = single_tap_config(gram_normalization="none")
        val = style_loss({"t": HAND_FEATURE}, {"t": Tensor.zeros((1, 2, 1, 2))}, cfg)
        assert val.item() == 892.0

    def test_hand_case_swag_mode(self):
        cfg = single_tap_config(gram_normalization="swag")
        val = style_loss({"t": HAND_FEATURE}, {"t": Tensor.zeros((1, 2, 1, 2))}, cfg)
        assert val.item() == pytest.approx(13.9375)

    def test_layer_weights_scale_terms(self):
        cfg = single_tap_config(style_taps=(("t", 3.0),))
        val = style_loss({"t": HAND_FEATURE}, {"t": Tensor.zeros((1, 2, 1, 2))}, cfg)
        assert val.item() == pytest.approx(3 * 892.0)

    def test_missing_tap_reported(self):
        cfg = single_tap_config()
        with pytest.raises(ShapeError, match="'t'"):
            style_loss({}, {"t": HAND_FEATURE}, cfg)

    def test_non_negative(self):
        rng = np.random.default_rng(10)
        for norm in ("none", "per-element", "swag"):
            cfg = single_tap_config(gram_normalization=norm)
            for _ in range(5):
                a = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
                b = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
                assert style_loss({"t": a}, {"t": b}, cfg).item() >= 0


class TestCombine:
    def test_artistic_regime(self):
        assert combine_losses(Tensor.scalar(2.0), Tensor.scalar(0.001), 1.0, 1000.0).item() == pytest.approx(3.0)

    def test_beta_zero_pure_content(self):
        assert combine_losses(Tensor.scalar(2.0), Tensor.scalar(123.0), 1.0, 0.0).item() == 2.0

    def test_daytime_regime(self):
        assert combine_losses(Tensor.scalar(0.001), Tensor.scalar(0.1), 1000.0, 10.0).item() == pytest.approx(2.0)


class TestChannelStats:
    def test_two_point(self):
        stats = channel_stats(feat([0.0, 2.0], 1, 1, 2))
        assert stats.mean[0] == pytest.approx(1.0)
        assert stats.std[0] == pytest.approx(1.0, abs=1e-6)

    def test_constant_channel_std_is_epsilon(self):
        stats = channel_stats(Tensor(np.full((1, 1, 3, 3), 5.0, dtype=np.float32)),
                              epsilon=1e-5)
        assert stats.std[0] == pytest.approx(1e-5, rel=1e-3)

    def test_two_point_spread(self):
        stats = channel_stats(feat([4.0, 8.0], 1, 1, 2))
        assert stats.mean[0] == pytest.approx(6.0)
        assert stats.std[0] == pytest.approx(2.0, abs=1e-5)


class TestAdain:
    def test_self_identity(self):
        rng = np.random.default_rng(11)
        f = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
        out = adain(f, f)
        assert np.abs(out.data - f.data).max() < 1e-5

    def test_two_point_oracle(self):
        fc = feat([0.0, 2.0], 1, 1, 2)
        fs = feat([4.0, 8.0], 1, 1, 2)
        out = adain(fc, fs)
        np.testing.assert_allclose(out.data.ravel(), [4.0, 8.0], atol=1e-4)

    def test_constant_content_maps_to_style_mean(self):
        fc = Tensor(np.full((1, 1, 3, 3), 2.0, dtype=np.float32))
        fs = feat([4.0, 8.0], 1, 1, 2)
        out = adain(fc, fs)
        np.testing.assert_allclose(out.data, 6.0, atol=1e-3)

    def test_transfers_stats_on_random_pairs(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            fc = Tensor(rng.standard_normal((1, 5, 8, 8)).astype(np.float32))
            fs = Tensor((rng.standard_normal((1, 5, 6, 6)) * 2 + 1).astype(np.float32))
            out = adain(fc, fs)
            got = channel_stats(out)
            want = channel_stats(fs)
            assert np.abs(got.mean - want.mean).max() < 1e-5
            assert np.abs(got.std - want.std).max() < 1e-4

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            adain(Tensor.zeros((1, 3, 4, 4)), Tensor.zeros((1, 4, 4, 4)))


class TestAdainLoss:
    def _config(self):
        return LossConfig(content_tap="deep", style_taps=(("s1", 1.0), ("s2", 1.0)),
                          lam=1.0)

    def test_exact_match_gives_zeros(self):
        rng = np.random.default_rng(13)
        t = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
        s1 = Tensor(rng.standard_normal((1, 2, 5, 5)).astype(np.float32))
        s2 = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
        decoded = {"deep": t, "s1": s1, "s2": s2}
        lc, ls, total = adain_loss(decoded, t, {"s1": s1, "s2": s2}, self._config())
        assert lc.item() == 0.0
        assert ls.item() == pytest.approx(0.0, abs=1e-9)
        assert total.item() == pytest.approx(0.0, abs=1e-9)

    def test_mean_shift_three_gives_ls_three(self):
        base = feat([1.0, 2.0, 3.0, 4.0], 1, 2, 2)
        shifted = Tensor(base.data + np.float32(3.0))
        t = Tensor.zeros((1, 1, 2, 2))
        decoded = {"deep": t, "s1": shifted}
        cfg = LossConfig(content_tap="deep", style_taps=(("s1", 1.0),), lam=1.0)
        lc, ls, total = adain_loss(decoded, t, {"s1": base}, cfg)
        assert lc.item() == 0.0
        assert ls.item() == pytest.approx(3.0, abs=1e-5)

    def test_lambda_zero_total_is_content(self):
        rng = np.random.default_rng(14)
        t = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
        out = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
        s = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
        cfg = LossConfig(content_tap="deep", style_taps=(("s1", 1.0),), lam=0.0)
        lc, ls, total = adain_loss({"deep": out, "s1": out}, t, {"s1": s}, cfg)
        assert total.item() == lc.item()
        assert ls.item() > 0


class TestInterpolation:
    def test_alpha_zero_returns_content_bit_exact(self):
        rng = np.random.default_rng(15)
        fc = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
        fs = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
        out = interpolate_features(fc, fs, 0.0)
        assert out.data.tobytes() == fc.data.tobytes()

    def test_alpha_one_equals_adain_bit_exact(self):
        rng = np.random.default_rng(16)
        fc = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
        fs = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
        out = interpolate_features(fc, fs, 1.0)
        assert out.data.tobytes() == adain(fc, fs).data.tobytes()

    def test_midpoint(self):
        fc = feat([0.0, 2.0], 1, 1, 2)
        fs = feat([4.0, 8.0], 1, 1, 2)
        out = interpolate_features(fc, fs, 0.5)
        np.testing.assert_allclose(out.data.ravel(), [2.0, 5.0], atol=1e-4)

    def test_out_of_range_rejected(self):
        fc = Tensor.zeros((1, 1, 2, 2))
        with pytest.raises(ContractError):
            interpolate_features(fc, fc, 1.5)
        with pytest.raises(ContractError):
            interpolate_features(fc, fc, -0.1)


class TestLossGradients:
    """Reverse-mode gradients of every loss path against finite differences."""

    def setup_method(self):
        rng = np.random.default_rng(17)
        self.x0 = (rng.uniform(-0.5, 0.5, (1, 4, 5, 5))).astype(np.float32)
        self.ref = Tensor(rng.uniform(-0.5, 0.5, (1, 4, 5, 5)).astype(np.float32))

    @pytest.mark.parametrize("kind", ["none", "softmax", "scale", "tanh", "softsign"])
    @pytest.mark.parametrize("norm", ["none", "half", "per-element"])
    def test_content_loss_grads(self, kind, norm):
        gradcheck(
            lambda x: content_loss(x, self.ref, Smoothing(kind), norm), self.x0, h=1e-2
        )

    @pytest.mark.parametrize("kind", ["none", "softmax", "scale", "tanh", "softsign"])
    @pytest.mark.parametrize("norm", ["none", "per-element", "swag"])
    def test_style_loss_grads(self, kind, norm):
        cfg = single_tap_config(smoothing=Smoothing(kind), gram_normalization=norm)
        # softsign's curvature jumps at 0, so central differences need a
        # smaller step there to stay second-order accurate
        h = 1e-3 if kind == "softsign" else 1e-2
        gradcheck(lambda x: style_loss({"t": x}, {"t": self.ref}, cfg), self.x0, h=h)

    def test_adain_grads(self):
        # distance to a fixed target: adain's output statistics are constant
        # in its content argument, so a pure function of the stats would have
        # a genuinely zero gradient
        rng = np.random.default_rng(19)
        target = Tensor(rng.uniform(-0.5, 0.5, (1, 4, 5, 5)).astype(np.float32))

        def build(x):
            d = T.sub(adain(x, self.ref), target)
            return T.tmean(T.mul(d, d))

        gradcheck(build, self.x0, h=1e-2)

    def test_adain_loss_grads(self):
        rng = np.random.default_rng(18)
        t = Tensor(rng.uniform(-0.5, 0.5, (1, 4, 5, 5)).astype(np.float32))
        cfg = LossConfig(content_tap="deep", style_taps=(("s1", 1.0),), lam=0.7)

        def build(x):
            _, _, total = adain_loss({"deep": x, "s1": x}, t, {"s1": self.ref}, cfg)
            return total

        gradcheck(build, self.x0, h=1e-2)

    def test_interpolation_grads(self):
        gradcheck(
            lambda x: T.tmean(
                T.mul(y := interpolate_features(x, self.ref, 0.5), y)
            ),
            self.x0,
            h=1e-2,
        )
