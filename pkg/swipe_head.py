"""Сегментный многомерный перцептрон.

Общий для всех сегментов линейный слой дает оценку z_i^k сегмента k по
метке i, вентиль g_i^k регулирует участие сегмента в пулинге, пулинг
сворачивает оценки сегментов в оценку документа y_i, а ступенчатая функция
с порогом 0 дает биты меток документа и сегментов.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
from torch import nn

from config import DTYPE
from corpus import LabelVocab, TaskKind
from encoder import SegmentMatrix
from errors import ConfigurationError, ValidationError


class PoolingStrategy(str, Enum):
    MAX = "max"
    GATED_MAX = "gated_max"
    SUM = "sum"
    GATED_SUM = "gated_sum"

    @property
    def gated(self) -> bool:
        return self in (PoolingStrategy.GATED_MAX, PoolingStrategy.GATED_SUM)

    @property
    def is_max(self) -> bool:
        return self in (PoolingStrategy.MAX, PoolingStrategy.GATED_MAX)


class SwipeHead(nn.Module):
    """Параметры W, b оценок и W_g, b_g вентилей, по строке на метку"""

    def __init__(self, num_labels: int, hidden: int):
        super().__init__()
        if num_labels < 1 or hidden < 1:
            raise ConfigurationError("Число меток и размерность должны быть не меньше 1")
        scale = 1.0 / math.sqrt(hidden)
        self.W = nn.Parameter(torch.randn(num_labels, hidden, dtype=DTYPE) * scale)
        self.b = nn.Parameter(torch.zeros(num_labels, dtype=DTYPE))
        self.W_g = nn.Parameter(torch.randn(num_labels, hidden, dtype=DTYPE) * scale)
        self.b_g = nn.Parameter(torch.zeros(num_labels, dtype=DTYPE))

    @property
    def num_labels(self) -> int:
        return self.W.shape[0]

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    def forward(self, rows: torch.Tensor, strategy: PoolingStrategy) -> "HeadOutput":
        z = segment_scores(rows, self)
        g = segment_gates(rows, self) if strategy.gated else None
        y, argmax = pool(z, g, strategy)
        return HeadOutput(y, z, g, argmax)


@dataclass
class HeadOutput:
    y: torch.Tensor
    z: torch.Tensor
    g: Optional[torch.Tensor]
    argmax: Optional[torch.Tensor]


def _rows(matrix: Union[SegmentMatrix, torch.Tensor], params: SwipeHead) -> torch.Tensor:
    rows = matrix.rows if isinstance(matrix, SegmentMatrix) else matrix
    if rows.shape[-1] != params.hidden:
        raise ConfigurationError(
            f"Размерность сегментов {rows.shape[-1]} не совпадает с размерностью головы {params.hidden}"
        )
    return rows


def segment_scores(matrix: Union[SegmentMatrix, torch.Tensor], params: SwipeHead) -> torch.Tensor:
    """z[i][k] = w_i . s_k + b_i, форма L x m"""
    rows = _rows(matrix, params)
    return params.W @ rows.T + params.b.unsqueeze(1)


def segment_gates(matrix: Union[SegmentMatrix, torch.Tensor], params: SwipeHead) -> torch.Tensor:
    """g[i][k] = sigmoid(w_i^g . s_k + b_i^g), форма L x m"""
    rows = _rows(matrix, params)
    return torch.sigmoid(params.W_g @ rows.T + params.b_g.unsqueeze(1))


def pool(z: torch.Tensor, g: Optional[torch.Tensor],
         strategy: PoolingStrategy) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Сворачивает оценки сегментов в оценки документа.
    Для max-вариантов также возвращает индекс максимума по каждой метке;
    при равенстве выбирается меньший индекс, и градиент идет только в него.
    """
    strategy = PoolingStrategy(strategy)
    if strategy.gated and g is None:
        raise ConfigurationError(f"Пулинг {strategy.value} требует вентили g")
    if not strategy.gated and g is not None:
        raise ConfigurationError(f"Пулинг {strategy.value} не использует вентили")

    values = g * z if strategy.gated else z
    if strategy.is_max:
        # torch.argmax возвращает первый максимальный элемент
        argmax = torch.argmax(values, dim=1)
        return values.gather(1, argmax.unsqueeze(1)).squeeze(1), argmax
    return values.sum(dim=1), None


@dataclass
class Prediction:
    doc_id: str
    y: List[float]
    doc_bits: List[int]
    z: List[List[float]]
    g: Optional[List[List[float]]]
    seg_bits: List[List[int]]
    key_segment: List[int]

    @property
    def num_labels(self) -> int:
        return len(self.y)

    @property
    def num_segments(self) -> int:
        return len(self.z[0])

    def predicted_class(self) -> int:
        """argmax_i y_i, при равенстве меньший индекс метки"""
        return max(range(len(self.y)), key=lambda i: (self.y[i], -i))

    def decided_labels(self, task_kind: TaskKind) -> List[int]:
        if TaskKind(task_kind) == TaskKind.MULTI_CLASS:
            return [self.predicted_class()]
        return [i for i, bit in enumerate(self.doc_bits) if bit]

    def to_record(self, vocab: LabelVocab) -> dict:
        per_label = []
        for i, name in enumerate(vocab.names):
            explanation = explain(self, i)
            per_label.append({
                "label": name,
                "y": self.y[i],
                "bit": self.doc_bits[i],
                "key_segment": explanation.key_segment,
                "positive_segments": explanation.positive_segments,
                "segment_scores": self.z[i],
            })
        return {
            "doc_id": self.doc_id,
            "labels": [vocab.names[i] for i in self.decided_labels(vocab.task_kind)],
            "per_label": per_label,
        }


def make_prediction(doc_id: str, output: HeadOutput) -> Prediction:
    y = output.y.detach().tolist()
    z = output.z.detach().tolist()
    g = output.g.detach().tolist() if output.g is not None else None
    pred = Prediction(
        doc_id=doc_id,
        y=y,
        doc_bits=[1 if value > 0 else 0 for value in y],
        z=z,
        g=g,
        seg_bits=[[1 if value > 0 else 0 for value in row] for row in z],
        key_segment=[],
    )
    pred.key_segment = [rank_segments(pred, i, use_gate=g is not None)[0] for i in range(len(y))]
    return pred


def classify(matrix: SegmentMatrix, params: SwipeHead, strategy: PoolingStrategy) -> Prediction:
    with torch.no_grad():
        output = params(matrix.rows, PoolingStrategy(strategy))
    return make_prediction(matrix.doc_id, output)


def rank_segments(pred: Prediction, label: int, use_gate: bool = False) -> List[int]:
    """
    Сегменты по убыванию z[i][k] (или g[i][k] * z[i][k] при use_gate),
    равные оценки остаются в порядке индексов.
    Без вентилей в предсказании ранжирование идет по z.
    """
    if not 0 <= label < pred.num_labels:
        raise ValidationError(f"Метка {label} вне диапазона 0..{pred.num_labels - 1}")
    scores = pred.z[label]
    if use_gate and pred.g is not None:
        scores = [gate * score for gate, score in zip(pred.g[label], scores)]
    return sorted(range(len(scores)), key=lambda k: -scores[k])


@dataclass(frozen=True)
class Explanation:
    label: int
    positive_segments: List[int]
    key_segment: int


def explain(pred: Prediction, label: int) -> Explanation:
    """Сегменты с z > 0 и главный ключевой сегмент метки"""
    order = rank_segments(pred, label, use_gate=pred.g is not None)
    positives = [k for k, value in enumerate(pred.z[label]) if value > 0]
    return Explanation(label, positives, order[0])


def init_from_label_vectors(params: SwipeHead, vectors: Dict[int, Sequence[float]]) -> None:
    """Копирует векторное представление метки i в строку w_i"""
    with torch.no_grad():
        for label, vector in vectors.items():
            if not 0 <= label < params.num_labels:
                raise ValidationError(f"Метка {label} вне диапазона 0..{params.num_labels - 1}")
            row = torch.as_tensor(vector, dtype=DTYPE)
            if row.shape != (params.hidden,):
                raise ConfigurationError(
                    f"Вектор метки {label} имеет форму {tuple(row.shape)}, ожидается ({params.hidden},)"
                )
            params.W[label].copy_(row)
