import csv
import math

import pytest
import torch

from config import DTYPE
from conftest import make_segments
from corpus import Corpus, SyntheticSpec, TaskKind, generate_synthetic, split_corpus
from encoder import HashEncoder, SegmentMatrix, hash_ngram
from errors import TrainingError, ValidationError
from model import ModelConfig, build_model
from swipe_head import PoolingStrategy
from trainer import (
    TrainConfig, adam_step, backward, grad_check, learning_rate, loss_multiclass, loss_multilabel, new_state,
    train, train_seeds, write_metrics_csv,
)
from truncator import TruncationConfig


def _tensor(values):
    return torch.tensor(values, dtype=DTYPE)


def _matrix(doc_id, rows):
    return SegmentMatrix(doc_id, _tensor(rows))


def _state(model_config, total_steps=100, base_lr=1e-3, seed=0):
    model = build_model(model_config, seed)
    return new_state(model, TrainConfig(base_lr=base_lr), total_steps)


def _small_corpus(num_docs=40, task_kind=TaskKind.MULTI_LABEL, seed=13):
    spec = SyntheticSpec(num_docs=num_docs, labels=2, segments_per_doc=(3, 5), task_kind=task_kind, seed=seed)
    corpus, _ = generate_synthetic(spec)
    return split_corpus(corpus, (0.6, 0.2, 0.2), seed=1)


class TestLosses:

    def test_multiclass_uniform(self):
        assert loss_multiclass(_tensor([0.0, 0.0]), 0).item() == pytest.approx(math.log(2))

    def test_multiclass_confident(self):
        assert loss_multiclass(_tensor([10.0, -10.0]), 0).item() == pytest.approx(2.06e-9, rel=1e-2)
        assert loss_multiclass(_tensor([10.0, -10.0]), 1).item() == pytest.approx(20.0, rel=1e-6)

    def test_multiclass_gold_out_of_range(self):
        with pytest.raises(ValidationError):
            loss_multiclass(_tensor([0.0, 0.0]), 2)

    @pytest.mark.parametrize("gold", [[0, 0, 0], [1, 0, 1], [1, 1, 1]])
    def test_multilabel_zero_scores(self, gold):
        assert loss_multilabel(_tensor([0.0, 0.0, 0.0]), gold).item() == pytest.approx(math.log(2))

    def test_multilabel_saturated(self):
        assert loss_multilabel(_tensor([50.0]), [1]).item() == pytest.approx(0.0, abs=1e-20)

    def test_multilabel_mean(self):
        assert loss_multilabel(_tensor([2.0, -2.0]), [1, 0]).item() == pytest.approx(0.1269, abs=1e-4)

    def test_multilabel_shape_mismatch(self):
        with pytest.raises(ValidationError):
            loss_multilabel(_tensor([0.0, 0.0]), [1])


class TestBackward:

    def _linear_state(self, W, b):
        state = _state(ModelConfig(num_labels=len(W), hidden=len(W[0]), encoder="precomputed",
                                   pooling=PoolingStrategy.SUM))
        with torch.no_grad():
            state.model.head.W.copy_(_tensor(W))
            state.model.head.b.copy_(_tensor(b))
        return state

    def test_saturated_batch_has_zero_gradients(self):
        state = self._linear_state([[100.0]], [0.0])
        batch = [("d", _matrix("d", [[1.0]]), [1])]
        gradients = backward(state, batch, TaskKind.MULTI_LABEL)
        assert all(grad.abs().max().item() < 1e-12 for grad in gradients.values())

    def test_single_segment_is_logistic_regression(self):
        state = self._linear_state([[0.3, -0.7]], [0.1])
        x = [0.5, 2.0]
        batch = [("d", _matrix("d", [x]), [1])]
        gradients = backward(state, batch, TaskKind.MULTI_LABEL)
        y = 0.3 * x[0] - 0.7 * x[1] + 0.1
        residual = 1.0 / (1.0 + math.exp(-y)) - 1.0
        assert gradients["head.W"][0].tolist() == pytest.approx([residual * x[0], residual * x[1]], abs=1e-12)
        assert gradients["head.b"].item() == pytest.approx(residual, abs=1e-12)
        # Вентили не участвуют в sum-пулинге
        assert torch.count_nonzero(gradients["head.W_g"]) == 0

    def test_non_finite_loss(self):
        state = self._linear_state([[float("nan")]], [0.0])
        with pytest.raises(TrainingError):
            backward(state, [("d", _matrix("d", [[1.0]]), [1])], TaskKind.MULTI_LABEL)


class TestAdamStep:

    def _scalar_state(self, total_steps=1000, base_lr=0.01):
        return _state(ModelConfig(num_labels=1, hidden=1, encoder="precomputed"), total_steps, base_lr)

    def _snapshot(self, model):
        return {name: param.detach().clone() for name, param in model.named_parameters()}

    def test_zero_gradients_leave_parameters(self):
        state = self._scalar_state()
        before = self._snapshot(state.model)
        zeros = {name: torch.zeros_like(param) for name, param in state.model.named_parameters()}
        adam_step(state, zeros, 1)
        for name, param in state.model.named_parameters():
            assert torch.equal(param.detach(), before[name])

    def test_last_step_has_zero_learning_rate(self):
        state = self._scalar_state(total_steps=5)
        before = self._snapshot(state.model)
        ones = {name: torch.ones_like(param) for name, param in state.model.named_parameters()}
        adam_step(state, ones, 5)
        for name, param in state.model.named_parameters():
            assert torch.equal(param.detach(), before[name])

    def test_first_step_moves_by_learning_rate(self):
        state = self._scalar_state(total_steps=1000, base_lr=0.01)
        before = self._snapshot(state.model)
        ones = {name: torch.ones_like(param) for name, param in state.model.named_parameters()}
        adam_step(state, ones, 1)
        lr = learning_rate(state.config, 1, 1000)
        assert lr == pytest.approx(0.01 * 0.999)
        for name, param in state.model.named_parameters():
            delta = (param.detach() - before[name]).item()
            assert delta == pytest.approx(-lr / (1.0 + 1e-8), rel=1e-9)
        assert int(state.model.trained_steps) == 1
        assert state.step == 1

    def test_step_numbering_starts_at_one(self):
        state = self._scalar_state()
        zeros = {name: torch.zeros_like(param) for name, param in state.model.named_parameters()}
        with pytest.raises(ValidationError):
            adam_step(state, zeros, 0)


class TestSeparableToy:

    BATCH = [
        ("d0", _matrix("d0", [[2.0, 0.0], [0.0, 1.0]]), [1]),
        ("d1", _matrix("d1", [[1.5, 0.5], [0.0, -1.0]]), [1]),
        ("d2", _matrix("d2", [[-1.0, 1.0], [0.0, 1.0]]), [0]),
        ("d3", _matrix("d3", [[-2.0, 0.0], [-1.0, -1.0]]), [0]),
    ]

    @pytest.mark.parametrize("pooling", [PoolingStrategy.MAX, PoolingStrategy.SUM])
    def test_full_batch_loss_vanishes(self, pooling):
        state = _state(ModelConfig(num_labels=1, hidden=2, encoder="precomputed", pooling=pooling),
                       total_steps=10_000, base_lr=0.05)
        losses = []
        for step in range(1, 501):
            gradients = backward(state, self.BATCH, TaskKind.MULTI_LABEL)
            losses.append(state.last_loss)
            adam_step(state, gradients, step)
        assert losses[-1] < 0.01
        assert losses[-1] < losses[0]


class TestGradCheck:

    def _hash_batch(self):
        token_lists = [
            [["the", "cat", "sat"], ["dogs", "bark"], ["cat", "naps"]],
            [["market", "fell"], ["stocks", "rose", "today"]],
        ]
        return [
            (f"d{n}", make_segments(f"d{n}", tokens), gold)
            for n, (tokens, gold) in enumerate(zip(token_lists, [0, 1]))
        ]

    @pytest.mark.parametrize("pooling", list(PoolingStrategy))
    def test_head_and_encoder(self, pooling):
        config = ModelConfig(num_labels=2, hidden=4, buckets=16, pooling=pooling)
        state = _state(config)
        report = grad_check(state, self._hash_batch(), TaskKind.MULTI_CLASS)
        assert report.passed, report.failures[:3]
        assert report.max_rel_error < 1e-4
        assert report.checked > 0

    def test_two_interaction_layers(self):
        config = ModelConfig(num_labels=2, hidden=4, buckets=8, interaction_layers=2, heads=2, ff_width=8,
                             pooling=PoolingStrategy.GATED_SUM)
        state = _state(config)
        batch = [(doc_id, segments, [1, 0]) for doc_id, segments, _ in self._hash_batch()]
        report = grad_check(state, batch, TaskKind.MULTI_LABEL)
        assert report.passed, report.failures[:3]

    def test_corrupted_gradient_is_reported(self):
        state = _state(ModelConfig(num_labels=2, hidden=4, buckets=16, pooling=PoolingStrategy.SUM))
        batch = self._hash_batch()
        gradients = backward(state, batch, TaskKind.MULTI_CLASS)
        gradients["head.W"][0, 0] += 1.0
        report = grad_check(state, batch, TaskKind.MULTI_CLASS, gradients=gradients)
        assert not report.passed
        assert ("head.W", (0, 0)) in [(name, coordinate) for name, coordinate, _, _ in report.failures]

    def test_max_tie_is_excluded(self):
        buckets = 16
        candidates = ["x", "y", "z", "q", "u", "v", "k", "m"]
        first = candidates[0]
        second = next(token for token in candidates[1:]
                      if hash_ngram(token, 0, buckets) != hash_ngram(first, 0, buckets))
        config = ModelConfig(num_labels=2, hidden=4, buckets=buckets, ngram_orders=(1,),
                             pooling=PoolingStrategy.MAX)
        state = _state(config)
        encoder: HashEncoder = state.model.encoder
        with torch.no_grad():
            # Две строки сегментов совпадают: точное равенство в max-пулинге
            encoder.embedding.weight[hash_ngram(second, 0, buckets)] = encoder.embedding.weight[
                hash_ngram(first, 0, buckets)]
        batch = [("d", make_segments("d", [[first], [second]]), 0)]
        report = grad_check(state, batch, TaskKind.MULTI_CLASS)
        assert report.excluded > 0
        assert report.passed


class TestTrain:

    def _configs(self, corpus, epochs=2):
        model_config = ModelConfig(num_labels=len(corpus.vocab), hidden=8, buckets=256)
        return model_config, TrainConfig(epochs=epochs, base_lr=0.02, batch_size=8, seed=5)

    def test_same_seed_same_log(self):
        corpus = _small_corpus()
        model_config, config = self._configs(corpus)
        truncation = TruncationConfig("structure")
        first = train(corpus, truncation, model_config, config)
        second = train(corpus, truncation, model_config, config)
        assert [entry.train_loss for entry in first.log] == [entry.train_loss for entry in second.log]
        assert [entry.dev_metric for entry in first.log] == [entry.dev_metric for entry in second.log]

    def test_log_and_schedule(self):
        corpus = _small_corpus()
        model_config, config = self._configs(corpus, epochs=3)
        result = train(corpus, TruncationConfig("structure"), model_config, config)
        steps_per_epoch = math.ceil(len(corpus.split("train")) / config.batch_size)
        assert [entry.step for entry in result.log] == [steps_per_epoch * (n + 1) for n in range(3)]
        assert result.log[-1].lr == 0.0
        assert int(result.state.model.trained_steps) == 3 * steps_per_epoch
        assert result.best_dev == max(entry.dev_metric for entry in result.log)

    def test_empty_train_split(self):
        corpus = _small_corpus()
        only_test = Corpus(corpus.documents, corpus.vocab, {doc.id: "test" for doc in corpus.documents})
        model_config, config = self._configs(corpus)
        with pytest.raises(ValidationError):
            train(only_test, TruncationConfig("structure"), model_config, config)

    def test_label_count_mismatch(self):
        corpus = _small_corpus()
        _, config = self._configs(corpus)
        with pytest.raises(ValidationError):
            train(corpus, TruncationConfig("structure"), ModelConfig(num_labels=5, hidden=8, buckets=64), config)

    def test_multiclass_training_runs(self):
        corpus = _small_corpus(task_kind=TaskKind.MULTI_CLASS)
        model_config, config = self._configs(corpus)
        result = train(corpus, TruncationConfig("auto", window_len=8), model_config, config)
        assert all(math.isfinite(entry.train_loss) for entry in result.log)
        assert all(entry.dev_f1 is None for entry in result.log)

    def test_multilabel_log_has_dev_f1(self):
        corpus = _small_corpus()
        model_config, config = self._configs(corpus)
        result = train(corpus, TruncationConfig("structure"), model_config, config)
        assert all(0.0 <= entry.dev_f1 <= 1.0 for entry in result.log)

    def test_seed_summary(self):
        corpus = _small_corpus()
        model_config, config = self._configs(corpus, epochs=1)
        summary = train_seeds(corpus, TruncationConfig("structure"), model_config, config, [1, 2, 3])
        assert summary.seeds == [1, 2, 3]
        assert len(summary.values) == 3
        assert summary.mean == pytest.approx(sum(summary.values) / 3)
        assert summary.std >= 0.0

    def test_metrics_csv(self, tmp_path):
        corpus = _small_corpus()
        model_config, config = self._configs(corpus)
        result = train(corpus, TruncationConfig("structure"), model_config, config)
        path = tmp_path / "metrics.csv"
        write_metrics_csv(result.log, str(path))
        with open(path, newline='', encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        assert [int(row["epoch"]) for row in rows] == [1, 2]
        assert float(rows[-1]["train_loss"]) == result.log[-1].train_loss
