"""Полная модель SWIPE: кодировщик сегментов, слои взаимодействия и голова.
Здесь же подготовка входов документа и сохранение контрольных точек.

Формат контрольной точки (torch.save, читается с weights_only=True):

    {
        "format": "swipe-checkpoint",
        "version": 1,
        "model_config": {...},      # поля ModelConfig, pooling строкой
        "train_config": {...},      # поля TrainConfig
        "truncation": {...},        # поля TruncationConfig
        "labels": [...],            # имена меток в порядке индексов
        "task_kind": "multi-label",
        "state_dict": {...},        # имя параметра -> тензор float64
    }
"""
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
from torch import nn

from corpus import Document, LabelVocab, TaskKind
from encoder import HashEncoder, SegmentInteraction, SegmentMatrix, VectorStore
from errors import ConfigurationError, FormatError
from swipe_head import HeadOutput, PoolingStrategy, Prediction, SwipeHead, make_prediction
from truncator import Segment, TruncationConfig, truncate

CHECKPOINT_FORMAT = "swipe-checkpoint"
CHECKPOINT_VERSION = 1

ENCODER_MODES = ("hash", "precomputed")

# Вход одного документа: сегменты для встроенного кодировщика или готовая матрица
DocInput = Union[List[Segment], SegmentMatrix]


@dataclass
class ModelConfig:
    num_labels: int
    hidden: int = 32
    encoder: str = "hash"
    buckets: int = 1 << 14
    ngram_orders: Tuple[int, ...] = (1, 2)
    hash_seed: int = 0
    interaction_layers: int = 0
    heads: int = 2
    ff_width: Optional[int] = None
    positions: bool = False
    max_segments: int = 512
    pooling: PoolingStrategy = PoolingStrategy.MAX

    def __post_init__(self):
        self.pooling = PoolingStrategy(self.pooling)
        self.ngram_orders = tuple(self.ngram_orders)
        if self.encoder not in ENCODER_MODES:
            raise ConfigurationError(f"Неизвестный режим кодировщика '{self.encoder}', доступны {ENCODER_MODES}")

    def to_dict(self) -> dict:
        values = asdict(self)
        values["pooling"] = self.pooling.value
        values["ngram_orders"] = list(self.ngram_orders)
        return values


class SwipeModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = None
        if config.encoder == "hash":
            self.encoder = HashEncoder(config.buckets, config.hidden, config.ngram_orders, config.hash_seed)
        self.interaction = None
        if config.interaction_layers > 0:
            self.interaction = SegmentInteraction(
                config.hidden, config.interaction_layers, config.heads, config.ff_width,
                config.positions, config.max_segments,
            )
        self.head = SwipeHead(config.num_labels, config.hidden)
        # Число выполненных шагов оптимизатора, сохраняется в контрольной точке
        self.register_buffer("trained_steps", torch.zeros((), dtype=torch.long))

    @property
    def pooling(self) -> PoolingStrategy:
        return self.config.pooling

    def encode(self, doc_input: DocInput) -> torch.Tensor:
        if isinstance(doc_input, SegmentMatrix):
            rows = doc_input.rows
        else:
            if self.encoder is None:
                raise ConfigurationError("Модель обучена на готовых векторах, сегменты ей не подходят")
            rows = self.encoder(doc_input)
        return self.interaction(rows) if self.interaction is not None else rows

    def forward(self, doc_input: DocInput) -> HeadOutput:
        return self.head(self.encode(doc_input), self.pooling)

    def forward_batch(self, inputs: Sequence[DocInput]) -> List[HeadOutput]:
        """Прямой проход по пакету; сегменты всех документов кодируются одним вызовом"""
        if self.encoder is None or any(isinstance(item, SegmentMatrix) for item in inputs):
            return [self(item) for item in inputs]
        flat = [segment for item in inputs for segment in item]
        encoded = torch.split(self.encoder(flat), [len(item) for item in inputs])
        outputs = []
        for rows in encoded:
            if self.interaction is not None:
                rows = self.interaction(rows)
            outputs.append(self.head(rows, self.pooling))
        return outputs

    def predict(self, doc_id: str, doc_input: DocInput) -> Prediction:
        with torch.no_grad():
            return make_prediction(doc_id, self(doc_input))


def build_model(config: ModelConfig, seed: int) -> SwipeModel:
    torch.manual_seed(seed)
    return SwipeModel(config)


def prepare_inputs(documents: Sequence[Document], truncation: TruncationConfig, config: ModelConfig,
                   vectors: VectorStore = None) -> Dict[str, DocInput]:
    """Сегменты или готовые матрицы для каждого документа по его id"""
    if config.encoder == "precomputed":
        if vectors is None:
            raise ConfigurationError("Для режима precomputed нужен файл векторов")
        if vectors.h is not None and vectors.h != config.hidden:
            raise ConfigurationError(
                f"Размерность векторов h={vectors.h} не совпадает с размерностью модели h={config.hidden}"
            )
        return {doc.id: vectors[doc.id] for doc in documents}
    return {doc.id: truncate(doc, truncation) for doc in documents}


def save_checkpoint(path: str, model: SwipeModel, vocab: LabelVocab, truncation: TruncationConfig,
                    train_config: dict = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": train_config or {},
        "truncation": {
            "strategy": truncation.strategy,
            "window_len": truncation.window_len,
            "overlap": truncation.overlap,
            "max_seg_len": truncation.max_seg_len,
            "sentence_terminators": sorted(truncation.sentence_terminators),
        },
        "labels": list(vocab.names),
        "task_kind": TaskKind(vocab.task_kind).value,
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)
    logging.info(f"Контрольная точка сохранена: {path}")


@dataclass
class Checkpoint:
    model: SwipeModel
    vocab: LabelVocab
    truncation: TruncationConfig
    train_config: dict = field(default_factory=dict)


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise ConfigurationError(f"Контрольная точка {path} не найдена")
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as e:
        raise FormatError(f"Не удалось прочитать контрольную точку {path}: {e}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} не является контрольной точкой SWIPE")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"Неподдерживаемая версия контрольной точки: {payload.get('version')}")

    model = SwipeModel(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    truncation = dict(payload["truncation"])
    truncation["sentence_terminators"] = frozenset(truncation["sentence_terminators"])
    vocab = LabelVocab(tuple(payload["labels"]), TaskKind(payload["task_kind"]))
    return Checkpoint(model, vocab, TruncationConfig(**truncation), payload["train_config"])
