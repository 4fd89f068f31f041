"""Кодирование сегментов в матрицу r' размера m x h.

Встроенный кодировщик усредняет вложения хешированных n-грамм сегмента.
Векторы, посчитанные внешней моделью, читаются из файла и не обучаются.
Необязательные слои взаимодействия дают сегментам обменяться информацией.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Sequence, Tuple

import torch
from torch import nn

from config import DTYPE
from errors import ConfigurationError, FormatError, SegmentLookupError, ValidationError
from truncator import Segment


@dataclass(frozen=True)
class SegmentMatrix:
    doc_id: str
    rows: torch.Tensor

    def __post_init__(self):
        if self.rows.dim() != 2 or self.rows.shape[0] < 1 or self.rows.shape[1] < 1:
            raise ValidationError(f"Документ {self.doc_id}: матрица сегментов должна иметь форму m x h, m >= 1")
        if not torch.isfinite(self.rows).all():
            raise ValidationError(f"Документ {self.doc_id}: в матрице сегментов есть нечисловые значения")

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def h(self) -> int:
        return self.rows.shape[1]


def hash_ngram(ngram: str, seed: int, buckets: int) -> int:
    """
    64-битный хеш n-граммы: BLAKE2b с 8-байтовым дайджестом и ключом из seed,
    результат берется по модулю числа корзин. Не зависит от PYTHONHASHSEED.
    """
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, 'little')
    digest = hashlib.blake2b(ngram.encode('utf-8'), digest_size=8, key=key).digest()
    return int.from_bytes(digest, 'little') % buckets


def ngrams(tokens: Sequence[str], orders: Iterable[int]) -> List[str]:
    grams = []
    for n in sorted(orders):
        grams.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    # Сегмент короче всех порядков представляется своими токенами
    return grams or list(tokens)


@lru_cache(maxsize=1 << 16)
def _bucket_ids(tokens: Tuple[str, ...], orders: Tuple[int, ...], seed: int, buckets: int) -> Tuple[int, ...]:
    return tuple(hash_ngram(gram, seed, buckets) for gram in ngrams(tokens, orders))


class HashEncoder(nn.Module):
    """
    Таблица вложений B x h, строка сегмента = среднее вложений его n-грамм.
    Таблица инициализируется равномерно в [-1/h, 1/h], как векторы n-грамм fastText.
    """

    def __init__(self, buckets: int, hidden: int, ngram_orders: Sequence[int] = (1, 2), hash_seed: int = 0):
        super().__init__()
        if buckets < 1 or hidden < 1:
            raise ConfigurationError("Число корзин и размерность должны быть не меньше 1")
        if not ngram_orders or min(ngram_orders) < 1:
            raise ConfigurationError(f"Некорректные порядки n-грамм: {tuple(ngram_orders)}")
        self.buckets = buckets
        self.hidden = hidden
        self.ngram_orders = tuple(sorted(set(ngram_orders)))
        self.hash_seed = hash_seed
        self.embedding = nn.EmbeddingBag(buckets, hidden, mode="mean", dtype=DTYPE)
        nn.init.uniform_(self.embedding.weight, -1.0 / hidden, 1.0 / hidden)

    def bucket_ids(self, tokens: Sequence[str]) -> Tuple[int, ...]:
        return _bucket_ids(tuple(tokens), self.ngram_orders, self.hash_seed, self.buckets)

    def forward(self, segments: Sequence[Segment]) -> torch.Tensor:
        ids = []
        offsets = []
        for segment in segments:
            offsets.append(len(ids))
            ids.extend(self.bucket_ids(segment.tokens))
        return self.embedding(torch.tensor(ids, dtype=torch.long), torch.tensor(offsets, dtype=torch.long))


def encode_segments(segments: Sequence[Segment], params: HashEncoder) -> SegmentMatrix:
    if not segments:
        raise ValidationError("Нет сегментов для кодирования")
    return SegmentMatrix(segments[0].doc_id, params(segments))


class VectorStore(dict):
    """Готовые матрицы сегментов по id документа"""

    h = None

    def __missing__(self, doc_id):
        raise SegmentLookupError(f"Нет векторов сегментов для документа {doc_id}")


def load_precomputed(path: str) -> VectorStore:
    """
    Читает файл с векторами сегментов: первая запись {"h": int}, далее
    по одной записи {"doc_id", "vectors"} на документ в порядке сегментов.
    Векторы считаются константами и не получают градиентов.
    """
    store = VectorStore()
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"некорректный JSON: {e.msg}", line=line_no) from None

            if store.h is None:
                if not isinstance(record, dict) or not isinstance(record.get("h"), int) or record["h"] < 1:
                    raise FormatError("первая запись должна объявлять размерность {\"h\": int}", line=line_no)
                store.h = record["h"]
                continue

            vectors = record.get("vectors") if isinstance(record, dict) else None
            doc_id = record.get("doc_id") if isinstance(record, dict) else None
            if not isinstance(doc_id, str) or not isinstance(vectors, list) or not vectors:
                raise FormatError("ожидается запись {doc_id, vectors}", line=line_no)
            for row in vectors:
                if not isinstance(row, list) or len(row) != store.h:
                    raise FormatError(
                        f"документ {doc_id}: размерность строки {len(row) if isinstance(row, list) else '?'} "
                        f"не совпадает с объявленной {store.h}", line=line_no
                    )
            try:
                rows = torch.tensor(vectors, dtype=DTYPE)
                store[doc_id] = SegmentMatrix(doc_id, rows)
            except (TypeError, ValueError) as e:
                raise FormatError(f"документ {doc_id}: {e}", line=line_no) from None

    logging.info(f"Загружены векторы сегментов {path}: {len(store)} документов, h={store.h}")
    return store


def write_precomputed(matrices: Dict[str, SegmentMatrix], path: str) -> None:
    dims = {matrix.h for matrix in matrices.values()}
    if len(dims) > 1:
        raise FormatError(f"У матриц разная размерность: {sorted(dims)}")
    with open(path, 'w', encoding='utf-8') as f:
        if dims:
            f.write(json.dumps({"h": dims.pop()}) + "\n")
        for doc_id, matrix in matrices.items():
            record = {"doc_id": doc_id, "vectors": matrix.rows.detach().tolist()}
            f.write(json.dumps(record) + "\n")


class InteractionLayer(nn.Module):
    """Слой трансформера с нормализацией перед подблоками"""

    def __init__(self, hidden: int, heads: int, ff_width: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden, dtype=DTYPE)
        self.attention = nn.MultiheadAttention(hidden, heads, dropout=0.0, batch_first=True, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(hidden, dtype=DTYPE)
        self.feed_forward = nn.Sequential(
            nn.Linear(hidden, ff_width, dtype=DTYPE),
            nn.GELU(),
            nn.Linear(ff_width, hidden, dtype=DTYPE),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        normed = self.norm1(x)
        attn_output, _ = self.attention(normed, normed, normed, need_weights=False)
        x = x + attn_output
        return x + self.feed_forward(self.norm2(x))


class SegmentInteraction(nn.Module):
    def __init__(self, hidden: int, num_layers: int = 2, heads: int = 2, ff_width: int = None,
                 positions: bool = False, max_segments: int = 512):
        super().__init__()
        if heads < 1 or hidden % heads:
            raise ConfigurationError(f"Размерность {hidden} должна делиться на число голов {heads}")
        if num_layers < 0:
            raise ConfigurationError("Число слоев взаимодействия не может быть отрицательным")
        self.hidden = hidden
        self.max_segments = max_segments
        self.layers = nn.ModuleList([
            InteractionLayer(hidden, heads, ff_width or 4 * hidden) for _ in range(num_layers)
        ])
        self.positions = None
        if positions:
            self.positions = nn.Parameter(torch.randn(max_segments, hidden, dtype=DTYPE) * 0.02)

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        if rows.shape[-1] != self.hidden:
            raise ConfigurationError(
                f"Размерность сегментов {rows.shape[-1]} не совпадает с размерностью слоев взаимодействия {self.hidden}"
            )
        if not self.layers:
            return rows
        m = rows.shape[0]
        if self.positions is not None:
            if m > self.max_segments:
                raise ConfigurationError(f"Сегментов {m}, а позиционных вложений только {self.max_segments}")
            rows = rows + self.positions[:m]
        x = rows.unsqueeze(0)
        for layer in self.layers:
            x = layer(x)
        return x.squeeze(0)


def interact(matrix: SegmentMatrix, params: SegmentInteraction) -> SegmentMatrix:
    return SegmentMatrix(matrix.doc_id, params(matrix.rows))
