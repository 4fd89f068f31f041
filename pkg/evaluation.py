"""Метрики классификации и разметки сегментов, тест достаточности объяснений,
восстановление ключевых сегментов и замеры времени.
"""
import csv
import json
import logging
import random
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.metrics import confusion_matrix, f1_score, precision_recall_fscore_support
from torch import nn

from config import DTYPE
from corpus import Corpus, Document, KeyMap, LabelVocab, TaskKind
from encoder import HashEncoder, VectorStore
from errors import ConfigurationError, ValidationError
from model import ModelConfig, SwipeModel, build_model, prepare_inputs
from swipe_head import Prediction, explain
from truncator import Segment, TruncationConfig, truncate


@dataclass
class LabelStats:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    tp: int
    fp: int
    fn: int


@dataclass
class MetricReport:
    accuracy: Optional[float] = None
    micro_f1: Optional[float] = None
    macro_f1: Optional[float] = None
    per_label: List[LabelStats] = field(default_factory=list)
    support: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SufficiencyRow:
    segment_len: int
    swipe: float
    random: float
    full_text: float


@dataclass
class SufficiencyReport:
    rows: List[SufficiencyRow]

    def to_dict(self) -> dict:
        return {"rows": [asdict(row) for row in self.rows]}


def accuracy(preds: Sequence, golds: Sequence) -> float:
    """Доля точных совпадений предсказания с эталоном"""
    if len(preds) != len(golds):
        raise ValidationError(f"Предсказаний {len(preds)}, а эталонов {len(golds)}")
    if not golds:
        raise ValidationError("Нет примеров для подсчета точности")
    return sum(1 for pred, gold in zip(preds, golds) if pred == gold) / len(golds)


def _label_matrices(preds: Sequence[Sequence[int]], golds: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    """Бинарные матрицы n x L предсказаний и эталонов"""
    if len(preds) != len(golds):
        raise ValidationError(f"Предсказаний {len(preds)}, а эталонов {len(golds)}")
    if not golds:
        raise ValidationError("Нет примеров для подсчета F1")
    num_labels = len(golds[0])
    if any(len(row) != num_labels for row in list(preds) + list(golds)):
        raise ValidationError(f"Все векторы меток должны иметь длину {num_labels}")
    shape = (len(golds), num_labels)
    return np.asarray(preds, dtype=int).reshape(shape), np.asarray(golds, dtype=int).reshape(shape)


def f1_scores(preds: Sequence[Sequence[int]], golds: Sequence[Sequence[int]]) -> Tuple[float, float]:
    """
    (micro F1, macro F1) по бинарным векторам меток. Micro F1 считается по
    всем решениям (пример, метка) сразу, macro F1 усредняет F1 меток.
    Метка без эталонных и предсказанных положительных примеров дает F1 = 1.
    """
    pred, gold = _label_matrices(preds, golds)
    micro = f1_score(gold.ravel(), pred.ravel(), average="binary", zero_division=1.0)
    per_label = [
        f1_score(gold[:, i], pred[:, i], average="binary", zero_division=1.0) for i in range(gold.shape[1])
    ]
    return float(micro), float(np.mean(per_label))


def metric_report(preds: Sequence[Sequence[int]], golds: Sequence[Sequence[int]], names: Sequence[str]) -> MetricReport:
    pred, gold = _label_matrices(preds, golds)
    micro, macro = f1_scores(preds, golds)
    per_label = []
    for i, name in enumerate(names):
        precision, recall, f1, _ = precision_recall_fscore_support(
            gold[:, i], pred[:, i], average="binary", zero_division=1.0
        )
        _, fp, fn, tp = confusion_matrix(gold[:, i], pred[:, i], labels=[0, 1]).ravel()
        per_label.append(LabelStats(name, float(precision), float(recall), float(f1), int(tp + fn),
                                    int(tp), int(fp), int(fn)))
    return MetricReport(
        accuracy=accuracy([tuple(p) for p in preds], [tuple(g) for g in golds]),
        micro_f1=micro,
        macro_f1=macro,
        per_label=per_label,
        support=len(golds),
    )


def segment_labeling_eval(seg_bits: Mapping[str, Sequence[Sequence[int]]], gold_key_map: KeyMap,
                          vocab: LabelVocab) -> MetricReport:
    """
    Micro/macro F1 по решениям (сегмент, метка): бит b_i^k против
    принадлежности сегмента k эталонному множеству ключевых сегментов метки i.
    Учитываются только документы, для которых есть предсказания.
    """
    preds = []
    golds = []
    gold_by_doc: Dict[str, Dict[int, set]] = {}
    for (doc_id, label), segments in gold_key_map.items():
        if doc_id in seg_bits:
            gold_by_doc.setdefault(doc_id, {})[vocab.index(label)] = segments

    for doc_id, bits in seg_bits.items():
        if len(bits) != len(vocab):
            raise ValidationError(f"Документ {doc_id}: битов для {len(bits)} меток, а в словаре {len(vocab)}")
        m = len(bits[0])
        keys = gold_by_doc.get(doc_id, {})
        for label, segments in keys.items():
            if any(k < 0 or k >= m for k in segments):
                raise ValidationError(
                    f"Документ {doc_id}: эталонный сегмент вне диапазона 0..{m - 1}, индексы сегментов не согласованы"
                )
        for k in range(m):
            preds.append([bits[i][k] for i in range(len(vocab))])
            golds.append([1 if k in keys.get(i, ()) else 0 for i in range(len(vocab))])

    return metric_report(preds, golds, vocab.names)


def key_segment_recovery(preds: Mapping[str, Prediction], gold_key_map: KeyMap, vocab: LabelVocab) -> float:
    """Доля положительных пар (документ, метка), у которых главный ключевой сегмент входит в эталон"""
    hits = 0
    total = 0
    for (doc_id, label), segments in gold_key_map.items():
        if doc_id not in preds:
            continue
        total += 1
        if preds[doc_id].key_segment[vocab.index(label)] in segments:
            hits += 1
    if not total:
        logging.warning("Нет положительных пар для оценки восстановления ключевых сегментов")
        return float("nan")
    return hits / total


def predict_documents(model: SwipeModel, documents: Sequence[Document], truncation: TruncationConfig,
                      vectors: VectorStore = None) -> Dict[str, Prediction]:
    inputs = prepare_inputs(documents, truncation, model.config, vectors)
    model.eval()
    return {doc.id: model.predict(doc.id, inputs[doc.id]) for doc in documents}


def evaluate_split(model: SwipeModel, corpus: Corpus, split: str, truncation: TruncationConfig,
                   vectors: VectorStore = None, key_map: KeyMap = None) -> dict:
    """Точность и F1 по документам выборки; при наличии карты ключей и разметка сегментов"""
    documents = corpus.split(split)
    if not documents:
        raise ValidationError(f"Выборка {split} пуста")
    preds = predict_documents(model, documents, truncation, vectors)
    task_kind = corpus.vocab.task_kind

    golds = [corpus.gold_vector(doc) for doc in documents]
    bits = []
    for doc in documents:
        decided = set(preds[doc.id].decided_labels(task_kind))
        bits.append([1 if i in decided else 0 for i in range(len(corpus.vocab))])
    report = {"split": split, "documents": metric_report(bits, golds, corpus.vocab.names).to_dict()}

    if key_map is not None:
        seg_bits = {doc_id: pred.seg_bits for doc_id, pred in preds.items()}
        report["segments"] = segment_labeling_eval(seg_bits, key_map, corpus.vocab).to_dict()
        report["key_segment_recovery"] = key_segment_recovery(preds, key_map, corpus.vocab)
    return report


class ProbeModel(nn.Module):
    """Классификатор-зонд: мешок хешированных слов и линейный слой"""

    def __init__(self, num_labels: int, buckets: int, hidden: int):
        super().__init__()
        self.encoder = HashEncoder(buckets, hidden, ngram_orders=(1,))
        self.linear = nn.Linear(hidden, num_labels, dtype=DTYPE)

    def forward(self, token_lists: Sequence[Sequence[str]]) -> torch.Tensor:
        segments = [Segment("probe", i, tuple(tokens), (0, 0)) for i, tokens in enumerate(token_lists)]
        return self.linear(self.encoder(segments))


def train_probe(token_lists: Sequence[Sequence[str]], golds: Sequence[List[int]], task_kind: TaskKind,
                seed: int, epochs: int = 10, lr: float = 0.05, batch_size: int = 16,
                buckets: int = 1 << 14, hidden: int = 32) -> ProbeModel:
    # Импортируем функции потерь здесь, чтобы избежать циклического импорта
    from trainer import loss_multiclass, loss_multilabel

    torch.manual_seed(seed)
    probe = ProbeModel(len(golds[0]), buckets, hidden)
    optimizer = torch.optim.Adam(probe.parameters(), lr=lr)
    order = list(range(len(token_lists)))
    rng = random.Random(seed)
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            logits = probe([token_lists[i] for i in batch])
            if task_kind == TaskKind.MULTI_CLASS:
                losses = [loss_multiclass(row, golds[i].index(1)) for row, i in zip(logits, batch)]
            else:
                losses = [loss_multilabel(row, golds[i]) for row, i in zip(logits, batch)]
            optimizer.zero_grad()
            torch.stack(losses).mean().backward()
            optimizer.step()
    return probe


def probe_accuracy(probe: ProbeModel, token_lists: Sequence[Sequence[str]], golds: Sequence[List[int]],
                   task_kind: TaskKind) -> float:
    with torch.no_grad():
        logits = probe(token_lists)
    preds = []
    for row in logits.tolist():
        if task_kind == TaskKind.MULTI_CLASS:
            best = max(range(len(row)), key=lambda i: (row[i], -i))
            preds.append([1 if i == best else 0 for i in range(len(row))])
        else:
            preds.append([1 if value > 0 else 0 for value in row])
    return accuracy([tuple(p) for p in preds], [tuple(g) for g in golds])


def extract_explanation(pred: Prediction, task_kind: TaskKind) -> List[int]:
    """
    Главный ключевой сегмент каждой предсказанной метки. Если меток не
    предсказано, берется ключевой сегмент метки с наибольшей оценкой.
    """
    labels = pred.decided_labels(task_kind)
    if not labels:
        logging.debug(f"Документ {pred.doc_id}: нет предсказанных меток, берется сегмент по ранжированию")
        labels = [pred.predicted_class()]
    return sorted({explain(pred, label).key_segment for label in labels})


def sufficiency_test(corpus: Corpus, model: SwipeModel, segment_lens: Sequence[int] = None,
                     truncation: TruncationConfig = None, seed: int = 13, probe_epochs: int = 10,
                     probe_lr: float = 0.05) -> SufficiencyReport:
    """
    Обучает зонд только на объяснениях SWIPE и сравнивает его точность на
    test со случайными сегментами того же количества и с полным текстом.
    Для каждой длины сегмента документы заново режутся окном этой длины;
    без длин используется нарезка truncation.
    """
    if int(model.trained_steps) == 0:
        raise ValidationError("Тест достаточности требует обученную модель")
    if model.encoder is None:
        raise ConfigurationError("Тест достаточности работает только со встроенным кодировщиком")
    train_docs = corpus.split("train")
    test_docs = corpus.split("test")
    if not train_docs or not test_docs:
        raise ValidationError("Для теста достаточности нужны непустые выборки train и test")

    task_kind = corpus.vocab.task_kind
    settings = []
    if segment_lens:
        settings = [(length, TruncationConfig("auto", window_len=length)) for length in segment_lens]
    elif truncation is not None:
        settings = [(truncation.window_len, truncation)]
    else:
        raise ConfigurationError("Нужны длины сегментов или конфигурация нарезки")

    rows = []
    for length, cfg in settings:
        rng = random.Random(seed)
        texts = {"swipe": {}, "random": {}, "full_text": {}}
        model.eval()
        for doc in train_docs + test_docs:
            segments = truncate(doc, cfg)
            chosen = extract_explanation(model.predict(doc.id, segments), task_kind)
            random_pick = sorted(rng.sample(range(len(segments)), min(len(chosen), len(segments))))
            texts["swipe"][doc.id] = [token for k in chosen for token in segments[k].tokens]
            texts["random"][doc.id] = [token for k in random_pick for token in segments[k].tokens]
            texts["full_text"][doc.id] = [token for segment in segments for token in segment.tokens]

        scores = {}
        for method, by_doc in texts.items():
            probe = train_probe([by_doc[doc.id] for doc in train_docs], [corpus.gold_vector(doc) for doc in train_docs],
                                task_kind, seed, epochs=probe_epochs, lr=probe_lr)
            scores[method] = probe_accuracy(probe, [by_doc[doc.id] for doc in test_docs],
                                            [corpus.gold_vector(doc) for doc in test_docs], task_kind)
        logging.info(
            f"Достаточность, длина {length}: swipe {scores['swipe']:.3f}, "
            f"random {scores['random']:.3f}, full_text {scores['full_text']:.3f}"
        )
        rows.append(SufficiencyRow(length, scores["swipe"], scores["random"], scores["full_text"]))
    return SufficiencyReport(rows)


def scaling_probe(model_config: ModelConfig, segment_counts: Sequence[int], segment_len: int = 16,
                  trials: int = 20, seed: int = 13) -> List[dict]:
    """
    Медианное время прямого и обратного прохода по документу из n сегментов
    фиксированной длины. Замеры однопоточные.
    """
    if trials < 1:
        raise ConfigurationError("Нужен хотя бы один замер")
    if model_config.encoder != "hash":
        raise ConfigurationError("Замер времени строит документы для встроенного кодировщика")
    model = build_model(model_config, seed)
    rng = random.Random(seed)
    vocabulary = [f"w{j}" for j in range(1000)]
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    rows = []
    try:
        for n in segment_counts:
            segments = [
                Segment("probe", k, tuple(rng.choice(vocabulary) for _ in range(segment_len)), (0, 0))
                for k in range(n)
            ]
            timings = []
            # Первый проход прогревает кеш хешей
            for trial in range(trials + 1):
                started = time.perf_counter()
                model.zero_grad(set_to_none=True)
                model(segments).y.sum().backward()
                elapsed = (time.perf_counter() - started) * 1000.0
                if trial:
                    timings.append(elapsed)
            rows.append({
                "n_segments": n,
                "median_ms": float(np.median(timings)),
                "p10_ms": float(np.percentile(timings, 10)),
                "p90_ms": float(np.percentile(timings, 90)),
            })
    finally:
        torch.set_num_threads(threads)
    return rows


def segment_length_sweep(corpus: Corpus, segment_lens: Sequence[int], model_config: ModelConfig,
                         train_config, split: str = "test") -> List[dict]:
    """Точность и время обучения для каждой длины сегмента при автоматической нарезке"""
    from trainer import train

    rows = []
    for length in segment_lens:
        truncation = TruncationConfig("auto", window_len=length)
        started = time.perf_counter()
        result = train(corpus, truncation, model_config, train_config)
        seconds = time.perf_counter() - started
        result.state.model.load_state_dict(result.best_state_dict)
        report = evaluate_split(result.state.model, corpus, split, truncation)
        rows.append({"segment_len": length, "accuracy": report["documents"]["accuracy"], "train_seconds": seconds})
        logging.info(f"Длина сегмента {length}: точность {rows[-1]['accuracy']:.3f}, обучение {seconds:.1f} с")
    return rows


def sweet_spot(rows: Sequence[dict], ratio: float = 0.97) -> int:
    """Наименьшая длина сегмента, на которой точность достигает ratio от лучшей"""
    if not rows:
        raise ValidationError("Нет результатов для выбора длины сегмента")
    best = max(row["accuracy"] for row in rows)
    return min(row["segment_len"] for row in rows if row["accuracy"] >= ratio * best)


@dataclass
class ConvergenceReport:
    curves: Dict[str, List[List[float]]]
    max_leads_first_epoch: int
    seeds: int
    final_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def compare_poolings(corpus: Corpus, truncation: TruncationConfig, model_config: ModelConfig, train_config,
                     seeds: Sequence[int], vectors: VectorStore = None) -> ConvergenceReport:
    """
    Кривые точности на dev по эпохам для max и sum пулинга при нескольких
    начальных значениях: сколько раз max впереди после первой эпохи и
    разница средней итоговой точности.
    """
    from trainer import TrainConfig, train

    if not corpus.split("dev"):
        raise ValidationError("Для сравнения сходимости нужна выборка dev")
    curves = {"max": [], "sum": []}
    for pooling in curves:
        config = ModelConfig(**{**model_config.to_dict(), "pooling": pooling})
        for seed in seeds:
            seeded = TrainConfig(**{**asdict(train_config), "seed": seed})
            result = train(corpus, truncation, config, seeded, vectors)
            curves[pooling].append([entry.dev_metric for entry in result.log])

    leads = sum(1 for a, b in zip(curves["max"], curves["sum"]) if a[0] >= b[0])
    final_gap = float(np.mean([c[-1] for c in curves["max"]]) - np.mean([c[-1] for c in curves["sum"]]))
    return ConvergenceReport(curves, leads, len(seeds), final_gap)


def write_json(report: dict, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report, f, ensure_ascii=False, indent=2)


def write_csv(rows: Sequence[dict], path: str) -> None:
    if not rows:
        raise ValidationError("Нет строк для записи в CSV")
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
