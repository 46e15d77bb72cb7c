import numpy as np
import pytest
import torch

from cgf.core import MultivariateSeries
from cgf.errors import InvalidConfig, NonFiniteParameter, SequenceTooLong
from cgf.model import (ModelConfig, TrainConfig, batch_tensors, encode_corpus, forward, gradients, init_model,
                       load_checkpoint, loss, parameter_checksum, parameter_count, predict, save_checkpoint,
                       train, trainable_parameter_count)
from cgf.textgen import PatternCorpus, PatternRecord, raw_slots, render_raw
from cgf.tokenizer import decode, encode

SMALL = dict(vocab_size=20, embed_dim=8, num_heads=2, num_blocks=1, mlp_hidden=8, max_sequence_length=16)


def small_model(seed=0, **overrides):
    return init_model(ModelConfig(**dict(SMALL, seed=seed, **overrides)))


def random_batch(rng, size=4, vocab=20):
    return [(list(rng.integers(0, vocab, size=rng.integers(1, 7))), float(rng.normal())) for _ in range(size)]


def linear_corpus(records=200, seed=0):
    """One digit token per record, target linear in the digit"""
    rng = np.random.default_rng(seed)
    digits = rng.integers(0, 10, size=records)
    return [[int(d)] for d in digits], (digits - 4.5) / 2.87


def expected_parameter_count(V, d, heads, blocks, h, L):
    return V * d + L * d + blocks * (12 * d * d + 13 * d) + 3 * d + d * h + 2 * h + 1


class TestConfig:

    def test_heads_must_divide_width(self):
        with pytest.raises(InvalidConfig):
            init_model(ModelConfig(vocab_size=10, embed_dim=64, num_heads=5))

    def test_same_seed_same_parameters(self):
        assert parameter_checksum(small_model(3)) == parameter_checksum(small_model(3))
        assert parameter_checksum(small_model(3)) != parameter_checksum(small_model(4))

    def test_init_leaves_global_generator_alone(self):
        torch.manual_seed(0)
        expected = torch.rand(3)
        torch.manual_seed(0)
        small_model(1)
        assert torch.equal(torch.rand(3), expected)

    @pytest.mark.parametrize('config', [
        dict(vocab_size=20, embed_dim=8, num_heads=2, num_blocks=1, mlp_hidden=8, max_sequence_length=16),
        dict(vocab_size=385, embed_dim=128, num_heads=4, num_blocks=2, mlp_hidden=128, max_sequence_length=256),
        dict(vocab_size=50, embed_dim=12, num_heads=3, num_blocks=0, mlp_hidden=5, max_sequence_length=7),
    ])
    def test_parameter_count_formula(self, config):
        model = init_model(ModelConfig(**config))
        assert parameter_count(model) == expected_parameter_count(
            config['vocab_size'], config['embed_dim'], config['num_heads'], config['num_blocks'],
            config['mlp_hidden'], config['max_sequence_length'])

    def test_parameters_are_float64(self):
        assert all(p.dtype == torch.float64 for p in small_model().parameters())


class TestForward:

    def setup_method(self, method):
        self.model = small_model()

    def test_single_token_pools_with_weight_one(self):
        _, weights = self.model(torch.tensor([[5]]), return_weights=True)
        assert weights.tolist() == [[1.0]]

    def test_pooling_weights_are_a_distribution(self):
        ids, mask = batch_tensors([[1, 2, 3, 4], [5, 6]])
        _, weights = self.model(ids, mask, return_weights=True)
        assert (weights >= 0).all()
        np.testing.assert_allclose(weights.sum(dim=1).detach().numpy(), 1.0, atol=1e-9)
        assert weights[1, 2:].abs().max() == 0.0

    def test_padding_does_not_change_outputs(self):
        ids, mask = batch_tensors([[1, 2, 3, 4, 5], [7, 8]])
        with torch.no_grad():
            batched = self.model(ids, mask).tolist()
        assert batched[0] == pytest.approx(forward(self.model, [1, 2, 3, 4, 5]), abs=1e-12)
        assert batched[1] == pytest.approx(forward(self.model, [7, 8]), abs=1e-12)

    def test_order_matters(self):
        assert forward(self.model, [1, 2, 3]) != forward(self.model, [3, 2, 1])

    def test_no_state_between_calls(self):
        first = forward(self.model, [4, 4, 9])
        forward(self.model, [1, 2])
        assert forward(self.model, [4, 4, 9]) == first

    def test_zero_network_returns_head_bias(self):
        with torch.no_grad():
            for p in self.model.parameters():
                p.zero_()
            self.model.head[2].bias.fill_(0.7)
        assert forward(self.model, [1]) == pytest.approx(0.7, abs=1e-15)
        assert forward(self.model, [3, 9, 11, 2]) == pytest.approx(0.7, abs=1e-15)
        predictions = predict(self.model, [[1], [2, 3]], lambda v: v * 2.0 + 1.0)
        assert predictions == [pytest.approx(2.4, abs=1e-12)] * 2

    def test_context_limit(self):
        with pytest.raises(SequenceTooLong):
            forward(self.model, list(range(17)))

    def test_predict_length(self):
        assert len(predict(self.model, [[1]] * 5 + [[2, 3]] * 40, batch_size=16)) == 45


class TestLoss:

    def test_values(self):
        assert float(loss([1.0], [1.0])) == 0.0
        assert float(loss([3.0], [1.0])) == 4.0
        assert float(loss([0.0, 2.0], [0.0, 0.0])) == 2.0


def batch_loss(model, batch):
    ids, mask = batch_tensors([b[0] for b in batch])
    with torch.no_grad():
        return float(loss(model(ids, mask), [b[1] for b in batch]))


def check_finite_differences(model, batch, rng, per_tensor=8, step=1e-5):
    """Central differences against `gradients` on sampled coordinates of every tensor"""
    grads = gradients(model, batch)
    checked = 0
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        for index in rng.choice(flat.numel(), size=min(per_tensor, flat.numel()), replace=False).tolist():
            original = flat[index].item()
            flat[index] = original + step
            up = batch_loss(model, batch)
            flat[index] = original - step
            down = batch_loss(model, batch)
            flat[index] = original
            numeric = (up - down) / (2 * step)
            analytic = grads[name].view(-1)[index].item()
            assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric)) + 1e-9, name
            checked += 1
    return checked


class TestGradients:

    def setup_method(self, method):
        self.model = small_model(seed=1)
        self.batch = random_batch(np.random.default_rng(0))

    def test_matches_finite_differences(self):
        assert check_finite_differences(self.model, self.batch, np.random.default_rng(1)) >= 100

    @pytest.mark.slow
    def test_default_model_matches_finite_differences(self):
        model = init_model(ModelConfig(vocab_size=385))
        batch = random_batch(np.random.default_rng(2), vocab=385)
        assert len(list(model.parameters())) == 33
        assert check_finite_differences(model, batch, np.random.default_rng(3)) >= 100

    def test_frozen_backbone_gets_zero(self):
        self.model.set_freezing(True)
        grads = gradients(self.model, self.batch)
        assert grads['token_embedding.weight'].abs().max() == 0.0
        assert grads['blocks.0.attn.qkv.weight'].abs().max() == 0.0
        assert grads['head.2.bias'].abs().max() > 0.0

    def test_duplicated_batch_gives_same_gradients(self):
        once = gradients(self.model, self.batch)
        twice = gradients(self.model, self.batch + self.batch)
        for name in once:
            torch.testing.assert_close(once[name], twice[name], rtol=1e-10, atol=1e-14)

    def test_non_finite_guard(self):
        with torch.no_grad():
            self.model.token_embedding.weight.fill_(float('nan'))
        with pytest.raises(NonFiniteParameter) as e:
            gradients(self.model, self.batch)
        assert e.value.tensor_name == 'token_embedding.weight'

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            gradients(self.model, [])


class TestTraining:

    def test_linear_signal_is_learned(self):
        sequences, targets = linear_corpus()
        model = small_model(seed=2, embed_dim=16, mlp_hidden=16)
        trace = train(model, sequences, targets, TrainConfig(epochs=20, learning_rate=5e-3, seed=2))
        assert len(trace.epoch_losses) == 20
        assert trace.final_loss <= 0.5 * trace.initial_loss

    def test_freezing_keeps_backbone_bit_identical(self):
        sequences, targets = linear_corpus(64)
        model = small_model(seed=3)
        backbone = [n for n, _ in model.named_parameters() if not n.startswith(('pool.', 'head.'))]
        head = [n for n, _ in model.named_parameters() if n.startswith(('pool.', 'head.'))]
        before = parameter_checksum(model, backbone), parameter_checksum(model, head)
        train(model, sequences, targets, TrainConfig(epochs=2, freezing=True))
        assert parameter_checksum(model, backbone) == before[0]
        assert parameter_checksum(model, head) != before[1]

    def test_freezing_reduces_trainable_count(self):
        model = small_model()
        total = trainable_parameter_count(model)
        model.set_freezing(True)
        d, h = SMALL['embed_dim'], SMALL['mlp_hidden']
        assert trainable_parameter_count(model) == d + d * h + 2 * h + 1 < total

    def test_same_seed_same_result(self):
        sequences, targets = linear_corpus(64)
        checksums = []
        for _ in range(2):
            model = small_model(seed=5)
            train(model, sequences, targets, TrainConfig(epochs=2, seed=9))
            checksums.append(parameter_checksum(model))
        assert checksums[0] == checksums[1]

    def test_shuffle_seed_matters(self):
        sequences, targets = linear_corpus(64)
        checksums = set()
        for seed in (1, 2):
            model = small_model(seed=5)
            train(model, sequences, targets, TrainConfig(epochs=1, batch_size=8, seed=seed))
            checksums.add(parameter_checksum(model))
        assert len(checksums) == 2


def test_checkpoint_round_trip(tmp_path):
    model = small_model(seed=6)
    path = str(tmp_path / 'model.pt')
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert parameter_checksum(loaded) == parameter_checksum(model)
    assert forward(loaded, [1, 2, 3]) == forward(model, [1, 2, 3])


def test_checkpoint_rejects_other_files(tmp_path):
    path = str(tmp_path / 'other.pt')
    torch.save({'format': 'something-else', 'version': 1}, path)
    with pytest.raises(InvalidConfig):
        load_checkpoint(path)


class TestEncodeCorpus:

    def test_long_raw_record_keeps_most_recent_lags(self, tiny_vocab, caplog):
        series = MultivariateSeries(np.arange(15, dtype=np.float64).reshape(5, 3), ('y0', 'y1', 'y2'))
        text = render_raw(series, 4, 4)
        assert text == '9, 10, 11, 6, 7, 8, 3, 4, 5, 0, 1, 2 ->'
        assert len(encode(text, tiny_vocab)) == 35
        corpus = PatternCorpus('raw', [PatternRecord(4, text, 0.0, tuple(raw_slots(3, 4)))])
        sequences = encode_corpus(corpus, tiny_vocab, max_len=17)
        assert decode(sequences[0], tiny_vocab) == '9, 10, 11, 6, 7, 8 ->'
        assert 'truncated' in caplog.text

    def test_deepest_slots_dropped_whatever_their_position(self, tiny_vocab):
        slots = ((1, 2), (0, 2), (1, 1), (0, 1))
        corpus = PatternCorpus('cg', [PatternRecord(0, '4, 3, 2, 1 ->', 0.0, slots)])
        sequences = encode_corpus(corpus, tiny_vocab, max_len=6)
        assert decode(sequences[0], tiny_vocab) == '2, 1 ->'

    def test_short_records_untouched(self, tiny_vocab, caplog):
        corpus = PatternCorpus('cgf', [PatternRecord(0, 'f0_1, f1_2 ->', 0.0, ((0, 1), (1, 1))),
                                       PatternRecord(1, 'x', 0.0, ())])
        sequences = encode_corpus(corpus, tiny_vocab, max_len=16)
        assert sequences == [[102, 48, 95, 49, 44, 361, 49, 95, 50, 384], [tiny_vocab.token_to_id['x']]]
        assert 'truncated' not in caplog.text


def test_batch_tensors_pads_right():
    ids, mask = batch_tensors([[4, 5, 6], [7]])
    assert ids.tolist() == [[4, 5, 6], [7, 0, 0]]
    assert mask.tolist() == [[True, True, True], [True, False, False]]
