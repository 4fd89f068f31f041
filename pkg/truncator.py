"""Нарезка длинного документа на упорядоченные сегменты.

Три стратегии: скользящее окно фиксированной длины (auto), по знакам конца
предложения (punct) и по структурным единицам документа, например репликам
диалога (structure).
"""
import logging
import re
from dataclasses import dataclass
from typing import FrozenSet, List, Tuple

from corpus import Corpus, Document
from errors import ConfigurationError, ValidationError

STRATEGIES = ("auto", "punct", "structure")

# Токен-заглушка для структурной единицы, пустой после токенизации
EMPTY_UNIT_TOKEN = "<empty>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class Segment:
    doc_id: str
    index: int
    tokens: Tuple[str, ...]
    # (начало, конец) в символах текста; для structure - (номер единицы, номер единицы + 1)
    char_span: Tuple[int, int]

    def __post_init__(self):
        if not self.tokens:
            raise ValidationError(f"Документ {self.doc_id}: пустой сегмент {self.index}")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class TruncationConfig:
    strategy: str = "auto"
    window_len: int = 64
    overlap: int = 0
    max_seg_len: int = 64
    sentence_terminators: FrozenSet[str] = frozenset(".!?")

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"Неизвестная стратегия нарезки '{self.strategy}', доступны {STRATEGIES}")
        if self.window_len < 1 or self.max_seg_len < 1:
            raise ConfigurationError("window_len и max_seg_len должны быть не меньше 1")
        if self.overlap < 0:
            raise ConfigurationError("overlap не может быть отрицательным")


def _tokens_with_spans(text: str) -> List[Tuple[str, int, int]]:
    return [(match.group().lower(), match.start(), match.end()) for match in _TOKEN_RE.finditer(text)]


def tokenize(text: str) -> List[str]:
    """Токены в нижнем регистре; знаки препинания становятся отдельными токенами"""
    return [token for token, _, _ in _tokens_with_spans(text)]


def truncate_auto(doc: Document, cfg: TruncationConfig) -> List[Segment]:
    """
    Скользящее окно длины window_len с шагом window_len - overlap.
    Последний сегмент содержит оставшиеся токены, если они есть.
    """
    if cfg.window_len <= cfg.overlap:
        raise ConfigurationError(
            f"window_len ({cfg.window_len}) должен быть больше overlap ({cfg.overlap})"
        )
    spans = _tokens_with_spans(doc.text)
    stride = cfg.window_len - cfg.overlap

    # Окна начинаются в каждой позиции, кратной шагу, включая хвост короче окна
    segments = []
    for start in range(0, len(spans), stride):
        window = spans[start:start + cfg.window_len]
        segments.append(Segment(
            doc.id, len(segments), tuple(token for token, _, _ in window), (window[0][1], window[-1][2])
        ))
    return segments


def _sentences(spans: List[Tuple[str, int, int]], terminators: FrozenSet[str]) -> List[List[Tuple[str, int, int]]]:
    sentences = []
    current = []
    for span in spans:
        current.append(span)
        if span[0] in terminators:
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def truncate_punct(doc: Document, cfg: TruncationConfig) -> List[Segment]:
    """
    Режет текст по знакам конца предложения и жадно склеивает соседние
    предложения, пока сегмент не длиннее max_seg_len. Слишком длинное
    предложение режется жестко по max_seg_len.
    """
    pieces = []
    for sentence in _sentences(_tokens_with_spans(doc.text), cfg.sentence_terminators):
        for start in range(0, len(sentence), cfg.max_seg_len):
            pieces.append(sentence[start:start + cfg.max_seg_len])

    merged = []
    for piece in pieces:
        if merged and len(merged[-1]) + len(piece) <= cfg.max_seg_len:
            merged[-1] = merged[-1] + piece
        else:
            merged.append(piece)

    return [
        Segment(doc.id, index, tuple(token for token, _, _ in chunk), (chunk[0][1], chunk[-1][2]))
        for index, chunk in enumerate(merged)
    ]


def truncate_struct(doc: Document, cfg: TruncationConfig) -> List[Segment]:
    """Один сегмент на структурную единицу документа (например, реплику диалога)"""
    if not doc.units:
        raise ValidationError(
            f"Документ {doc.id}: нет структурных единиц, используйте стратегию auto или punct"
        )
    segments = []
    for index, unit in enumerate(doc.units):
        tokens = tokenize(unit)
        if not tokens:
            logging.warning(f"Документ {doc.id}: единица {index} пуста, подставлен {EMPTY_UNIT_TOKEN}")
            tokens = [EMPTY_UNIT_TOKEN]
        segments.append(Segment(doc.id, index, tuple(tokens), (index, index + 1)))
    return segments


def truncate(doc: Document, cfg: TruncationConfig) -> List[Segment]:
    if cfg.strategy == "auto":
        segments = truncate_auto(doc, cfg)
    elif cfg.strategy == "punct":
        segments = truncate_punct(doc, cfg)
    else:
        segments = truncate_struct(doc, cfg)
    if not segments:
        raise ValidationError(f"Документ {doc.id}: после токенизации не осталось ни одного токена")
    return segments


def segment_corpus(corpus: Corpus, cfg: TruncationConfig) -> dict:
    """Нарезает все документы корпуса: id документа -> список сегментов"""
    return {doc.id: truncate(doc, cfg) for doc in corpus.documents}
