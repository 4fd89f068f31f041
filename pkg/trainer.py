"""Обучение кодировщика и головы SWIPE по меткам документов.

Функции потерь, обратный проход, шаг Adam с линейным затуханием скорости
обучения, проверка градиентов конечными разностями и цикл обучения.
"""
import copy
import csv
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from corpus import Corpus, Document, TaskKind
from encoder import VectorStore
from errors import TrainingError, ValidationError
from model import DocInput, ModelConfig, SwipeModel, build_model, prepare_inputs
from truncator import TruncationConfig


@dataclass
class TrainConfig:
    epochs: int = 10
    base_lr: float = 5e-5
    batch_size: int = 16
    seed: int = 13
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs должно быть не меньше 1")
        if self.base_lr <= 0:
            raise ValidationError("base_lr должен быть положительным")
        if self.batch_size < 1:
            raise ValidationError("batch_size должен быть не меньше 1")
        self.betas = tuple(self.betas)


@dataclass
class ModelState:
    """Модель, оптимизатор с моментами Adam и счетчик шагов"""
    model: SwipeModel
    optimizer: torch.optim.Adam
    config: TrainConfig
    total_steps: int
    step: int = 0
    last_loss: float = float("nan")


# Пример обучения: id документа, вход модели и эталон
# (индекс класса для многоклассовой задачи, бинарный вектор для многометочной)
Example = Tuple[str, DocInput, object]


def loss_multiclass(y: torch.Tensor, gold: int) -> torch.Tensor:
    """Перекрестная энтропия softmax по оценкам документа"""
    if y.shape[0] < 2:
        raise ValidationError("Многоклассовая потеря требует L >= 2")
    if not 0 <= gold < y.shape[0]:
        raise ValidationError(f"Эталонная метка {gold} вне диапазона 0..{y.shape[0] - 1}")
    return F.cross_entropy(y.unsqueeze(0), torch.tensor([gold]))


def loss_multilabel(y: torch.Tensor, gold: Sequence[int]) -> torch.Tensor:
    """Среднее по меткам бинарной перекрестной энтропии между sigmoid(y_i) и gold_i"""
    target = torch.as_tensor(gold, dtype=y.dtype)
    if target.shape != y.shape:
        raise ValidationError(f"Эталон формы {tuple(target.shape)} не совпадает с оценками {tuple(y.shape)}")
    return F.binary_cross_entropy_with_logits(y, target, reduction="mean")


def make_examples(corpus: Corpus, documents: Sequence[Document], inputs: Dict[str, DocInput]) -> List[Example]:
    examples = []
    for doc in documents:
        if corpus.vocab.task_kind == TaskKind.MULTI_CLASS:
            gold = corpus.gold_index(doc)
        else:
            gold = corpus.gold_vector(doc)
        examples.append((doc.id, inputs[doc.id], gold))
    return examples


def _mean_loss(outputs, batch: Sequence[Example], task_kind: TaskKind) -> torch.Tensor:
    loss_fn = loss_multiclass if task_kind == TaskKind.MULTI_CLASS else loss_multilabel
    return torch.stack([loss_fn(output.y, gold) for output, (_, _, gold) in zip(outputs, batch)]).mean()


def batch_loss(model: SwipeModel, batch: Sequence[Example], task_kind: TaskKind) -> torch.Tensor:
    return _mean_loss(model.forward_batch([doc_input for _, doc_input, _ in batch]), batch, task_kind)


def backward(state: ModelState, batch: Sequence[Example], task_kind: TaskKind) -> Dict[str, torch.Tensor]:
    """
    Градиенты средней по пакету потери по всем обучаемым параметрам.
    Параметры, не участвовавшие в вычислении, получают нулевой градиент.
    """
    state.model.zero_grad(set_to_none=True)
    loss = batch_loss(state.model, batch, task_kind)
    if not torch.isfinite(loss):
        raise TrainingError(f"Нечисловая потеря {loss.item()} на пакете {[doc_id for doc_id, _, _ in batch]}")
    state.last_loss = loss.item()
    loss.backward()
    return {
        name: param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
        for name, param in state.model.named_parameters()
    }


def learning_rate(config: TrainConfig, step: int, total_steps: int) -> float:
    return config.base_lr * max(0.0, 1.0 - step / total_steps)


def adam_step(state: ModelState, gradients: Dict[str, torch.Tensor], step: int) -> ModelState:
    """Шаг Adam с коррекцией смещения; скорость обучения линейно убывает до 0"""
    if step < 1:
        raise ValidationError("Номер шага Adam начинается с 1")
    lr = learning_rate(state.config, step, state.total_steps)
    for group in state.optimizer.param_groups:
        group['lr'] = lr
    for name, param in state.model.named_parameters():
        param.grad = gradients[name]
    state.optimizer.step()
    state.model.trained_steps += 1
    state.step = step
    return state


def new_state(model: SwipeModel, config: TrainConfig, total_steps: int) -> ModelState:
    optimizer = torch.optim.Adam(model.parameters(), lr=config.base_lr, betas=config.betas, eps=config.eps)
    return ModelState(model, optimizer, config, max(1, total_steps))


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    excluded: int
    failures: List[Tuple[str, tuple, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _loss_and_argmax(model: SwipeModel, batch: Sequence[Example], task_kind: TaskKind) -> Tuple[float, list]:
    outputs = model.forward_batch([doc_input for _, doc_input, _ in batch])
    argmaxes = [output.argmax.tolist() if output.argmax is not None else None for output in outputs]
    return _mean_loss(outputs, batch, task_kind).item(), argmaxes


def grad_check(state: ModelState, batch: Sequence[Example], task_kind: TaskKind, tolerance: float = 1e-4,
               gradients: Dict[str, torch.Tensor] = None) -> GradCheckReport:
    """
    Сравнивает аналитические градиенты с центральными разностями по каждой
    координате параметров. Шаг 1e-4, умноженный на max(1, |theta|).
    Относительная ошибка считается как |a - n| / max(|a|, |n|, 1e-3).
    Координаты, у которых смещение меняет argmax max-пулинга, исключаются.
    """
    if gradients is None:
        gradients = backward(state, batch, task_kind)
    model = state.model

    worst = 0.0
    checked = 0
    excluded = 0
    failures = []
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.view(-1)
            analytic = gradients[name].reshape(-1)
            for index in range(flat.numel()):
                original = flat[index].item()
                step = 1e-4 * max(1.0, abs(original))
                flat[index] = original + step
                loss_plus, argmax_plus = _loss_and_argmax(model, batch, task_kind)
                flat[index] = original - step
                loss_minus, argmax_minus = _loss_and_argmax(model, batch, task_kind)
                flat[index] = original

                if argmax_plus != argmax_minus:
                    excluded += 1
                    continue
                numeric = (loss_plus - loss_minus) / (2 * step)
                value = analytic[index].item()
                error = abs(value - numeric) / max(abs(value), abs(numeric), 1e-3)
                checked += 1
                worst = max(worst, error)
                if error > tolerance:
                    coordinate = tuple(np.unravel_index(index, tuple(param.shape)))
                    failures.append((name, tuple(int(c) for c in coordinate), value, numeric))

    if failures:
        logging.warning(f"Проверка градиентов: {len(failures)} расхождений, макс. ошибка {worst:.2e}")
    return GradCheckReport(worst, checked, excluded, failures)


@dataclass
class EpochLog:
    epoch: int
    step: int
    lr: float
    train_loss: float
    dev_metric: Optional[float]
    # micro F1 на dev, только в многометочной задаче
    dev_f1: Optional[float] = None


@dataclass
class TrainResult:
    state: ModelState
    best_state_dict: dict
    best_dev: Optional[float]
    log: List[EpochLog]
    run_id: Optional[int] = None


def dev_metrics(model: SwipeModel, examples: Sequence[Example], task_kind: TaskKind) -> Tuple[float, Optional[float]]:
    """Точность на dev и, в многометочной задаче, micro F1 по меткам"""
    # Импортируем метрики здесь, чтобы избежать циклического импорта
    from evaluation import accuracy, f1_scores

    predicted = []
    golds = []
    for doc_id, doc_input, gold in examples:
        pred = model.predict(doc_id, doc_input)
        if task_kind == TaskKind.MULTI_CLASS:
            predicted.append(pred.predicted_class())
        else:
            predicted.append(tuple(pred.doc_bits))
            gold = tuple(gold)
        golds.append(gold)
    micro_f1 = None
    if task_kind == TaskKind.MULTI_LABEL:
        micro_f1, _ = f1_scores(predicted, golds)
    return accuracy(predicted, golds), micro_f1


def train(corpus: Corpus, truncation: TruncationConfig, model_config: ModelConfig, config: TrainConfig,
          vectors: VectorStore = None, db_path: str = None, corpus_name: str = "") -> TrainResult:
    """
    Обучает модель на выборке train, после каждой эпохи считает точность на dev.
    Возвращает итоговое состояние, лучшее по dev состояние и журнал эпох.
    """
    train_docs = corpus.split("train")
    dev_docs = corpus.split("dev")
    if not train_docs:
        raise ValidationError("Обучающая выборка пуста")
    if model_config.num_labels != len(corpus.vocab):
        raise ValidationError(
            f"Модель на {model_config.num_labels} меток, а в корпусе {len(corpus.vocab)}"
        )

    task_kind = corpus.vocab.task_kind
    inputs = prepare_inputs(train_docs + dev_docs, truncation, model_config, vectors)
    train_examples = make_examples(corpus, train_docs, inputs)
    dev_examples = make_examples(corpus, dev_docs, inputs)

    model = build_model(model_config, config.seed)
    steps_per_epoch = math.ceil(len(train_examples) / config.batch_size)
    state = new_state(model, config, config.epochs * steps_per_epoch)
    rng = random.Random(config.seed)

    run_id = None
    if db_path:
        # Импортируем реестр запусков здесь, как и метрики выше
        from database import add_epoch, add_run
        run_id = add_run(db_path, corpus_name, model_config, config)

    log = []
    best_dev = None
    best_state_dict = copy.deepcopy(model.state_dict())
    order = list(range(len(train_examples)))
    for epoch in range(1, config.epochs + 1):
        model.train()
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_examples[i] for i in order[start:start + config.batch_size]]
            gradients = backward(state, batch, task_kind)
            losses.append(state.last_loss)
            adam_step(state, gradients, state.step + 1)

        model.eval()
        dev_metric, dev_f1 = dev_metrics(model, dev_examples, task_kind) if dev_examples else (None, None)
        entry = EpochLog(epoch, state.step, learning_rate(config, state.step, state.total_steps),
                         float(np.mean(losses)), dev_metric, dev_f1)
        log.append(entry)
        logging.info(
            f"Эпоха {epoch}/{config.epochs}: потеря {entry.train_loss:.4f}, "
            f"точность на dev {dev_metric if dev_metric is not None else '-'}, "
            f"micro F1 на dev {dev_f1 if dev_f1 is not None else '-'}"
        )
        if run_id is not None:
            add_epoch(db_path, run_id, entry)

        if dev_metric is not None and (best_dev is None or dev_metric > best_dev):
            best_dev = dev_metric
            best_state_dict = copy.deepcopy(model.state_dict())

    if best_dev is None:
        best_state_dict = copy.deepcopy(model.state_dict())
    if run_id is not None:
        from database import finish_run
        finish_run(db_path, run_id, log[-1].train_loss, best_dev)
    return TrainResult(state, best_state_dict, best_dev, log, run_id)


@dataclass
class SeedSummary:
    seeds: List[int]
    values: List[float]
    mean: float
    std: float


def train_seeds(corpus: Corpus, truncation: TruncationConfig, model_config: ModelConfig, config: TrainConfig,
                seeds: Sequence[int], vectors: VectorStore = None, db_path: str = None,
                corpus_name: str = "") -> SeedSummary:
    """Обучает модель с несколькими начальными значениями и усредняет лучшую точность на dev"""
    values = []
    for seed in seeds:
        seeded = TrainConfig(**{**asdict(config), "seed": seed})
        result = train(corpus, truncation, model_config, seeded, vectors, db_path, corpus_name)
        values.append(result.best_dev if result.best_dev is not None else float("nan"))
    return SeedSummary(list(seeds), values, float(np.mean(values)), float(np.std(values)))


def write_metrics_csv(log: Sequence[EpochLog], path: str) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "step", "lr", "train_loss", "dev_metric"])
        for entry in log:
            writer.writerow([
                entry.epoch, entry.step, repr(entry.lr), repr(entry.train_loss),
                "" if entry.dev_metric is None else repr(entry.dev_metric),
            ])
