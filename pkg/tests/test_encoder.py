import numpy as np
import pytest

from eventformer import tensor as tn
from eventformer.encoder import (EncoderConfig, EncoderModel, causal_mask, embed, encode, positional_encoding,
                                 represent, temporal_encoding)
from eventformer.streams import AugmentedSequence, MaskPolicy, apply_mask, inject_voids, mask_label, null_label
from eventformer.tensor import Tensor

from conftest import make_seq, random_seq


@pytest.fixture
def model():
    return EncoderModel(EncoderConfig.desk(3, dropout=0.0), rng=np.random.default_rng(0))


class TestConfig:
    def test_full_size_defaults(self):
        c = EncoderConfig(label_count=5)
        assert (c.d_model, c.n_blocks, c.n_heads, c.d_ff, c.dropout) == (512, 4, 4, 1024, 0.1)

    def test_desk_profile(self):
        c = EncoderConfig.desk(5)
        assert (c.d_model, c.n_blocks, c.n_heads, c.d_ff) == (32, 2, 2, 64)

    def test_invalid(self):
        with pytest.raises(ValueError):
            EncoderConfig(label_count=3, d_model=30, n_heads=4)
        with pytest.raises(ValueError):
            EncoderConfig(label_count=0)
        with pytest.raises(ValueError):
            EncoderConfig(label_count=2, dropout=1.0)

    def test_parameter_count_is_function_of_config(self):
        c = EncoderConfig.desk(4)
        a, b = EncoderModel(c, rng=np.random.default_rng(1)), EncoderModel(c, rng=np.random.default_rng(2))
        d, f, m = 32, 64, 4
        per_block = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
        assert a.n_parameters() == b.n_parameters() == (m + 2) * d + 2 * per_block
        assert a.params["embedding"].shape == (m + 2, d)

    def test_state_dict_round_trip(self, model):
        clone = EncoderModel(model.config, params=model.state_dict())
        seq = random_seq(np.random.default_rng(3))
        assert np.array_equal(represent(model, seq), represent(clone, seq))
        with pytest.raises(ValueError):
            EncoderModel(EncoderConfig.desk(4), params=model.state_dict())


class TestEncodings:
    def test_pe_row_zero(self):
        pe = positional_encoding(5, 16)
        assert np.all(pe[0, 0::2] == 0.0) and np.all(pe[0, 1::2] == 1.0)

    def test_pe_formula(self):
        pe = positional_encoding(50, 8)
        i, k = 37, 3
        assert pe[i, 2 * k] == pytest.approx(np.sin(i / 10000 ** (2 * k / 8)), abs=1e-15)
        assert pe[i, 2 * k + 1] == pytest.approx(np.cos(i / 10000 ** (2 * k / 8)), abs=1e-15)

    def test_pe_bounded_and_distinct(self):
        n = 4096
        pe = positional_encoding(n, 32, max_len=n)
        assert np.all(np.abs(pe) <= 1.0)
        sq = (pe**2).sum(1)
        worst = np.inf
        for lo in range(0, n, 512):
            block = pe[lo : lo + 512]
            d2 = sq[lo : lo + 512, None] + sq[None, :] - 2 * block @ pe.T
            d2[np.arange(block.shape[0]), lo + np.arange(block.shape[0])] = np.inf
            worst = min(worst, d2.min())
        assert worst > 1e-6

    def test_pe_too_long(self):
        with pytest.raises(ValueError):
            positional_encoding(11, 8, max_len=10)

    def test_te_zero_and_negative(self):
        te = temporal_encoding([0.0, 0.0, 2.5], 16)
        np.testing.assert_array_equal(te[0], positional_encoding(1, 16)[0])
        np.testing.assert_array_equal(te[0], te[1])
        with pytest.raises(ValueError):
            temporal_encoding([-1.0], 8)

    def test_te_lipschitz(self):
        t = np.linspace(0, 50, 20001)
        te = temporal_encoding(t, 16)
        slope = np.abs(np.diff(te, axis=0)) / np.diff(t)[:, None]
        assert slope.max() <= 1.0 + 1e-12

    def test_scalar_preimage_monotone(self):
        t = np.cumsum(np.random.default_rng(0).integers(1, 5, 40))
        idx = t - t[0] + np.arange(t.size)
        assert np.all(np.diff(idx) > 0)


class TestEmbed:
    def test_formula(self, model):
        seq = make_seq([0.5, 1.5, 4.0], [2, 0, 1])
        x = embed(seq, model).data
        d = model.config.d_model
        expect = model.params["embedding"].data[[2, 0, 1]] + positional_encoding(3, d) + temporal_encoding(seq.times, d)
        np.testing.assert_allclose(x, expect, atol=1e-15)

    def test_masked_collision_fixed_by_pe(self, model):
        seq = random_seq(np.random.default_rng(1), n=10)
        aug = inject_voids(seq, np.random.default_rng(2), count_per_gap=0)
        mask = np.zeros(len(aug), bool)
        mask[[3, 7]] = True
        aug = aug.with_mask(mask)
        d = model.config.d_model
        te = temporal_encoding(aug.observed_time, d)
        pe = positional_encoding(len(aug), d)
        np.testing.assert_array_equal(te[3], te[7])
        assert np.max(np.abs((pe + te)[3] - (pe + te)[7])) > 1e-3
        x = embed(aug, model).data
        assert np.max(np.abs(x[3] - x[7])) > 1e-3
        assert aug.observed_label[3] == aug.observed_label[7] == mask_label(3)

    def test_order_sensitive(self, model):
        a = embed(make_seq([1.0, 2.0], [0, 1]), model).data
        b = embed(make_seq([1.0, 2.0], [1, 0]), model).data
        assert not np.array_equal(a, b)

    def test_null_and_mask_rows_trainable(self, model):
        aug = apply_mask(inject_voids(random_seq(np.random.default_rng(4), n=12), np.random.default_rng(5)),
                         np.random.default_rng(6), MaskPolicy(fraction=0.4))
        h = encode(embed(aug, model), model)
        tn.backward(tn.sum(tn.square(h)))
        g = model.params["embedding"].grad
        m = model.config.label_count
        assert np.any(g[null_label(m)] != 0) and np.any(g[mask_label(m)] != 0)


class TestEncode:
    def test_causality_probe(self, model):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(9, 32))
        base = encode(Tensor(x), model).data
        for j in range(9):
            x2 = x.copy()
            x2[j] += rng.normal(size=32)
            out = encode(Tensor(x2), model).data
            assert np.array_equal(out[:j], base[:j])
            assert not np.array_equal(out[j], base[j])

    def test_attention_rows(self, model):
        attn = []
        encode(Tensor(np.random.default_rng(8).normal(size=(7, 32))), model, attention=attn)
        assert len(attn) == model.config.n_blocks * model.config.n_heads
        future = ~causal_mask(7)
        for a in attn:
            assert np.all(a[future] == 0.0)
            assert np.all(a >= 0)
            assert np.all(np.abs(a.sum(1) - 1) <= 1e-9)

    def test_single_epoch(self, model):
        attn = []
        h = encode(embed(make_seq([1.0], [0]), model), model, attention=attn)
        assert h.shape == (1, 32) and np.all(np.isfinite(h.data))
        assert all(a.tolist() == [[1.0]] for a in attn)

    def test_shape_contract(self, model):
        for n in (1, 2, 17):
            assert encode(Tensor(np.zeros((n, 32))), model).shape == (n, 32)
        with pytest.raises(tn.ShapeError):
            encode(Tensor(np.zeros((3, 31))), model)

    def test_inference_deterministic(self):
        m = EncoderModel(EncoderConfig.desk(3), rng=np.random.default_rng(0))
        seq = random_seq(np.random.default_rng(9))
        assert represent(m, seq).tobytes() == represent(m, seq).tobytes()

    def test_dropout_needs_rng_and_changes_output(self):
        m = EncoderModel(EncoderConfig.desk(3, dropout=0.3), rng=np.random.default_rng(0))
        x = embed(random_seq(np.random.default_rng(1)), m)
        with pytest.raises(ValueError):
            encode(x, m, train=True)
        a = encode(x, m, train=True, rng=np.random.default_rng(2)).data
        b = encode(x, m, train=True, rng=np.random.default_rng(2)).data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, encode(x, m).data)

    def test_prefix_property(self, model):
        seq = random_seq(np.random.default_rng(10), n=15)
        full = represent(model, seq)
        # different row counts can take different BLAS summation orders
        for k in (1, 5, 15):
            np.testing.assert_allclose(represent(model, seq.prefix(k)), full[:k], rtol=0, atol=1e-12)
