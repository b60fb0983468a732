import numpy as np
import pytest

from graftlm import tensor as T
from graftlm.errors import ConfigError, LengthError
from graftlm.model import (
    FoundationConfig,
    apply_lora,
    encode_knowledge,
    expected_foundation_shapes,
    forward_stream,
    init_foundation,
    lora_trainables,
)
from graftlm.pretrain import PretrainConfig, pretrain_foundation
from graftlm.rng import RngState
from graftlm.tensor import Tensor, backward, zero_grads
from graftlm.training import AdamWState, TrainConfig, adamw_step


@pytest.fixture(scope="module")
def small():
    config = FoundationConfig(vocab_size=40, dim=16, blocks=2, heads=4, ffn_dim=32, max_len=48)
    params = init_foundation(config, RngState(21).derive(0))
    return config, params


class TestForwardStream:
    def test_single_token_shapes(self, small):
        config, params = small
        hidden, logits = forward_stream([5], params, config)
        assert hidden.data.shape == (1, config.dim)
        assert logits.data.shape == (1, config.vocab_size)

    def test_appending_token_leaves_prefix_bitwise_unchanged(self, small):
        config, params = small
        tokens = [4, 9, 17, 2, 30]
        h1, l1 = forward_stream(tokens, params, config)
        h2, l2 = forward_stream(tokens + [11], params, config)
        assert np.array_equal(h1.data, h2.data[: len(tokens)])
        assert np.array_equal(l1.data, l2.data[: len(tokens)])

    def test_causality_perturbing_later_token(self, small):
        config, params = small
        base = [4, 9, 17, 2, 30, 6]
        h1, l1 = forward_stream(base, params, config)
        for j in range(3, len(base)):
            mutated = list(base)
            mutated[j] = (mutated[j] + 7) % config.vocab_size
            h2, l2 = forward_stream(mutated, params, config)
            assert np.array_equal(h1.data[:j], h2.data[:j])
            assert np.array_equal(l1.data[:j], l2.data[:j])

    def test_overlong_input_reports_limit(self, small):
        config, params = small
        with pytest.raises(LengthError) as err:
            forward_stream([1] * (config.max_len + 1), params, config)
        assert str(config.max_len) in str(err.value)

    def test_dim_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            FoundationConfig(vocab_size=10, dim=10, heads=4)


class TestKnowledgeStream:
    def test_same_weights_as_main_stream(self, small):
        config, params = small
        tokens = [3, 8, 1, 22]
        hidden, _ = forward_stream(tokens, params, config)
        assert np.array_equal(encode_knowledge(tokens, params, config).data, hidden.data)

    def test_empty_knowledge(self, small):
        config, params = small
        out = encode_knowledge([], params, config)
        assert out.data.shape == (0, config.dim)

    def test_token_count_preserved(self, small):
        config, params = small
        out = encode_knowledge([1, 2, 3, 4, 5, 6, 7], params, config)
        assert out.data.shape == (7, config.dim)


class TestLora:
    def test_fresh_delta_is_identity_bitwise(self, small):
        config, params = small
        deltas = apply_lora(params, ["b0.attn.wq", "b1.ffn.w1"], rank=2, scaling=1.0, rng=RngState(5))
        tokens = [4, 9, 17]
        h0, l0 = forward_stream(tokens, params, config)
        h1, l1 = forward_stream(tokens, params, config, deltas)
        assert np.array_equal(h0.data, h1.data)
        assert np.array_equal(l0.data, l1.data)

    def test_rank4_parameter_count(self):
        config = FoundationConfig(vocab_size=10, dim=64, blocks=1, heads=4, ffn_dim=64)
        params = init_foundation(config, RngState(0))
        deltas = apply_lora(params, ["b0.attn.wq"], rank=4, scaling=1.0, rng=RngState(1))
        new_trainables = sum(t.data.size for t in lora_trainables(deltas).values())
        assert new_trainables == 2 * (64 * 4)

    def test_unknown_target_rejected(self, small):
        _, params = small
        with pytest.raises(ConfigError):
            apply_lora(params, ["b9.attn.wq"], rank=2, scaling=1.0, rng=RngState(0))

    def test_training_deltas_leaves_base_bitwise_unchanged(self, small):
        config, params = small
        before = {k: v.data.copy() for k, v in params.items()}
        deltas = apply_lora(params, ["b0.attn.wv"], rank=2, scaling=1.0, rng=RngState(6))
        trainable = lora_trainables(deltas)
        for t in trainable.values():
            t.requires_grad = True
        opt = AdamWState()
        cfg = TrainConfig(learning_rate=1e-2)
        for step in range(5):
            _, logits = forward_stream([1, 2, 3, 4], params, config, deltas)
            loss = T.total(T.mul(logits, logits))
            zero_grads(trainable.values())
            backward(loss)
            adamw_step(trainable, opt, cfg)
        for name, arr in before.items():
            assert np.array_equal(arr, params[name].data)
        assert not np.array_equal(deltas["b0.attn.wv"].b.data, np.zeros_like(deltas["b0.attn.wv"].b.data))


class TestPretrain:
    CONFIG = FoundationConfig(vocab_size=23, dim=16, blocks=1, heads=2, ffn_dim=32, max_len=40)

    def _corpus(self, n=10_000):
        rng = RngState(3)
        # markov-ish structure so there is something to learn
        stream = [4]
        for _ in range(n - 1):
            nxt = (stream[-1] * 7 + int(rng.integers(0, 3))) % 19 + 4
            stream.append(nxt)
        return stream

    def test_heldout_loss_decreases_from_near_uniform(self):
        corpus = self._corpus()
        settings = PretrainConfig(steps=200, batch_windows=4, block_size=32, seed=0)
        _, report = pretrain_foundation(corpus, self.CONFIG, settings)
        assert report.initial_holdout_loss == pytest.approx(np.log(self.CONFIG.vocab_size), rel=0.2)
        assert report.final_holdout_loss < report.initial_holdout_loss

    def test_zero_steps_equals_initialization(self):
        corpus = self._corpus(2_000)
        settings = PretrainConfig(steps=0, batch_windows=4, block_size=32, seed=7)
        params, _ = pretrain_foundation(corpus, self.CONFIG, settings)
        fresh = init_foundation(self.CONFIG, RngState(7).derive(0))
        for name in fresh:
            assert np.array_equal(params[name].data, fresh[name].data)

    def test_fixed_seed_bit_identical(self):
        corpus = self._corpus(3_000)
        settings = PretrainConfig(steps=25, batch_windows=4, block_size=32, seed=11)
        p1, _ = pretrain_foundation(corpus, self.CONFIG, settings)
        p2, _ = pretrain_foundation(corpus, self.CONFIG, settings)
        for name in p1:
            assert np.array_equal(p1[name].data, p2[name].data)


def test_expected_shapes_cover_init(small):
    config, params = small
    shapes = expected_foundation_shapes(config)
    assert set(shapes) == set(params)
    for name, shape in shapes.items():
        assert params[name].data.shape == tuple(shape)
