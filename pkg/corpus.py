"""Модель данных корпуса: документы, словарь меток, чтение и запись JSONL,
разбиение на выборки и генератор синтетического корпуса с заложенными
ключевыми сегментами.
"""
import json
import logging
import os
import random
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

from errors import ConfigurationError, FormatError, ValidationError

SPLITS = ("train", "dev", "test")

KeyMap = Dict[Tuple[str, str], Set[int]]


class TaskKind(str, Enum):
    MULTI_CLASS = "multi-class"
    MULTI_LABEL = "multi-label"


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    labels: Tuple[str, ...]
    units: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if not self.text.strip() and not self.units:
            raise ValidationError(f"Документ {self.id}: пустой текст и нет структурных единиц")


@dataclass(frozen=True)
class LabelVocab:
    names: Tuple[str, ...]
    task_kind: TaskKind

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("Имена меток должны быть уникальными")
        minimum = 2 if self.task_kind == TaskKind.MULTI_CLASS else 1
        if len(self.names) < minimum:
            raise ValidationError(
                f"Для задачи {self.task_kind.value} нужно не меньше {minimum} меток, найдено {len(self.names)}"
            )

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"Метка '{name}' отсутствует в словаре") from None


@dataclass(frozen=True)
class Corpus:
    documents: Tuple[Document, ...]
    vocab: LabelVocab
    split_tags: Mapping[str, str]
    # Документы, у которых выборка задана явно (в файле или при разбиении)
    tagged: FrozenSet[str] = frozenset()

    def __post_init__(self):
        ids = [doc.id for doc in self.documents]
        if set(ids) != set(self.split_tags):
            raise ValidationError("Теги выборок должны покрывать ровно все документы корпуса")
        for doc_id, tag in self.split_tags.items():
            if tag not in SPLITS:
                raise ValidationError(f"Документ {doc_id}: неизвестная выборка '{tag}'")
        object.__setattr__(self, "split_tags", MappingProxyType(dict(self.split_tags)))

    def split(self, name: str) -> List[Document]:
        return [doc for doc in self.documents if self.split_tags[doc.id] == name]

    def get(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.id == doc_id:
                return doc
        raise ValidationError(f"Документ {doc_id} не найден в корпусе")

    def gold_index(self, doc: Document) -> int:
        """Индекс единственной метки документа (многоклассовая задача)"""
        return self.vocab.index(doc.labels[0])

    def gold_vector(self, doc: Document) -> List[int]:
        """Бинарный вектор меток документа длины L"""
        positives = {self.vocab.index(name) for name in doc.labels}
        return [1 if i in positives else 0 for i in range(len(self.vocab))]


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _build_corpus(documents: List[Document], splits: Dict[str, str], tagged: Set[str],
                  task_kind: TaskKind, vocab: Optional[LabelVocab] = None) -> Corpus:
    names: List[str] = []
    seen_ids = set()
    for doc in documents:
        if doc.id in seen_ids:
            raise ValidationError(f"Повторяющийся id документа: {doc.id}")
        seen_ids.add(doc.id)
        if task_kind == TaskKind.MULTI_CLASS and len(doc.labels) != 1:
            raise ValidationError(
                f"Документ {doc.id}: в многоклассовой задаче нужна ровно одна метка, задано {len(doc.labels)}"
            )
        for name in doc.labels:
            if vocab is not None:
                vocab.index(name)
            elif name not in names:
                names.append(name)
    if vocab is None:
        vocab = LabelVocab(tuple(names), task_kind)
    return Corpus(tuple(documents), vocab, splits, frozenset(tagged))


def _parse_record(record: dict, line_no: int) -> Tuple[Document, Optional[str]]:
    if not isinstance(record, dict):
        raise FormatError("ожидается JSON-объект", line=line_no)
    doc_id = record.get("id")
    if not isinstance(doc_id, str) or not doc_id:
        raise FormatError("поле 'id' должно быть непустой строкой", line=line_no)

    text = record.get("text", "")
    units = record.get("units")
    labels = record.get("labels")
    if not isinstance(text, str):
        raise FormatError("поле 'text' должно быть строкой", line=line_no)
    if units is not None and (not isinstance(units, list) or not all(isinstance(u, str) for u in units)):
        raise FormatError("поле 'units' должно быть списком строк", line=line_no)
    if not isinstance(labels, list) or not all(isinstance(name, str) for name in labels):
        raise FormatError("поле 'labels' должно быть списком строк", line=line_no)

    split = record.get("split")
    if split is not None and split not in SPLITS:
        raise ValidationError(f"строка {line_no}: неизвестная выборка '{split}'")

    unit_tuple = tuple(_normalize(u) for u in units) if units else None
    text = _normalize(text)
    if not text and unit_tuple:
        text = " ".join(unit_tuple)
    # Порядок меток сохраняется, повторы отбрасываются
    label_tuple = tuple(dict.fromkeys(labels))
    return Document(doc_id, text, label_tuple, unit_tuple), split


def read_documents(path: str, require_labels: bool = True) -> List[Tuple[Document, Optional[str]]]:
    """
    Читает записи JSONL: id, text или units, labels и необязательный split.
    Без require_labels отсутствующее поле labels считается пустым списком.
    """
    records = []
    seen = set()
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"некорректный JSON: {e.msg}", line=line_no) from None
            if not require_labels and isinstance(record, dict):
                record.setdefault("labels", [])
            doc, split = _parse_record(record, line_no)
            if doc.id in seen:
                raise ValidationError(f"строка {line_no}: повторяющийся id документа {doc.id}")
            seen.add(doc.id)
            records.append((doc, split))
    return records


def load_jsonl(path: str, task_kind: TaskKind, vocab: Optional[LabelVocab] = None) -> Corpus:
    """
    Загружает корпус из JSONL, одна запись на документ.
    Словарь меток строится в порядке первого появления, если не передан готовый
    (например из контрольной точки), документы без тега выборки попадают в train.
    """
    task_kind = TaskKind(task_kind)
    if vocab is not None and vocab.task_kind != task_kind:
        raise ValidationError(f"Словарь меток построен для задачи {vocab.task_kind.value}, а не {task_kind.value}")
    records = read_documents(path)
    documents = [doc for doc, _ in records]
    splits = {doc.id: split or "train" for doc, split in records}
    tagged = {doc.id for doc, split in records if split is not None}

    corpus = _build_corpus(documents, splits, tagged, task_kind, vocab)
    logging.info(f"Загружен корпус {path}: {len(documents)} документов, {len(corpus.vocab)} меток")
    return corpus


def write_jsonl(corpus: Corpus, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for doc in corpus.documents:
            record = {"id": doc.id, "text": doc.text}
            if doc.units is not None:
                record["units"] = list(doc.units)
            record["labels"] = list(doc.labels)
            if doc.id in corpus.tagged:
                record["split"] = corpus.split_tags[doc.id]
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def split_corpus(corpus: Corpus, fractions: Sequence[float], seed: int) -> Corpus:
    """
    Детерминированно распределяет документы без явного тега выборки
    по train/dev/test в заданных долях. Явные теги сохраняются.
    """
    if len(fractions) != 3:
        raise ValidationError("Нужно три доли: train, dev, test")
    if any(fraction < 0 for fraction in fractions):
        raise ValidationError(f"Доли выборок не могут быть отрицательными: {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"Сумма долей должна быть равна 1, получено {sum(fractions)}")

    untagged = [doc.id for doc in corpus.documents if doc.id not in corpus.tagged]
    random.Random(seed).shuffle(untagged)

    n_train = int(round(fractions[0] * len(untagged)))
    n_dev = min(int(round(fractions[1] * len(untagged))), len(untagged) - n_train)

    splits = dict(corpus.split_tags)
    for position, doc_id in enumerate(untagged):
        if position < n_train:
            splits[doc_id] = "train"
        elif position < n_train + n_dev:
            splits[doc_id] = "dev"
        else:
            splits[doc_id] = "test"

    return Corpus(corpus.documents, corpus.vocab, splits, corpus.tagged | frozenset(untagged))


@dataclass(frozen=True)
class SyntheticSpec:
    num_docs: int = 500
    labels: int = 2
    segments_per_doc: Tuple[int, int] = (8, 8)
    key_vocab_per_label: int = 20
    filler_vocab: int = 200
    tokens_per_segment: Tuple[int, int] = (8, 12)
    task_kind: TaskKind = TaskKind.MULTI_LABEL
    seed: int = 13
    key_tokens_per_segment: Tuple[int, int] = (2, 4)
    key_segments_per_label: int = 1
    # Вероятность каждой метки в многометочной задаче
    label_rate: float = 0.5

    def validate(self) -> None:
        if self.key_vocab_per_label < 1 or self.filler_vocab < 1:
            raise ConfigurationError(
                "Словари ключевых и заполняющих токенов должны быть непустыми, "
                f"задано {self.key_vocab_per_label} и {self.filler_vocab}"
            )
        if self.num_docs < 1:
            raise ConfigurationError("Нужен хотя бы один документ")
        minimum = 2 if TaskKind(self.task_kind) == TaskKind.MULTI_CLASS else 1
        if self.labels < minimum:
            raise ConfigurationError(f"Нужно не меньше {minimum} меток")
        for name in ("segments_per_doc", "tokens_per_segment", "key_tokens_per_segment"):
            low, high = getattr(self, name)
            if low < 1 or low > high:
                raise ConfigurationError(f"Некорректный диапазон {name}: ({low}, {high})")
        if self.key_segments_per_label < 1:
            raise ConfigurationError("Нужен хотя бы один ключевой сегмент на метку")
        most_keys = self.key_segments_per_label * (1 if TaskKind(self.task_kind) == TaskKind.MULTI_CLASS else self.labels)
        if self.segments_per_doc[0] < most_keys:
            raise ConfigurationError(
                f"В документе не меньше {most_keys} ключевых сегментов, а segments_per_doc начинается с {self.segments_per_doc[0]}"
            )
        if not 0.0 <= self.label_rate <= 1.0:
            raise ConfigurationError("label_rate должен лежать в [0, 1]")


def key_vocabulary(label: int, size: int) -> List[str]:
    return [f"l{label}k{j}" for j in range(size)]


def filler_vocabulary(size: int) -> List[str]:
    return [f"w{j}" for j in range(size)]


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Corpus, KeyMap]:
    """
    Генерирует корпус, где метка документа задается его ключевыми сегментами.
    Ключевой сегмент метки i содержит токены из словаря, принадлежащего только
    метке i; остальные сегменты состоят из общих заполняющих токенов.
    """
    spec.validate()
    task_kind = TaskKind(spec.task_kind)
    rng = random.Random(spec.seed)
    names = [f"label{i}" for i in range(spec.labels)]
    fillers = filler_vocabulary(spec.filler_vocab)
    keys = [key_vocabulary(i, spec.key_vocab_per_label) for i in range(spec.labels)]

    documents: List[Document] = []
    key_map: KeyMap = {}
    for number in range(spec.num_docs):
        doc_id = f"syn{number:05d}"
        m = rng.randint(*spec.segments_per_doc)
        if task_kind == TaskKind.MULTI_CLASS:
            positives = [rng.randrange(spec.labels)]
        else:
            positives = [i for i in range(spec.labels) if rng.random() < spec.label_rate]

        slots = rng.sample(range(m), spec.key_segments_per_label * len(positives))
        planted: Dict[int, int] = {}
        for position, label in enumerate(positives):
            chosen = slots[position * spec.key_segments_per_label:(position + 1) * spec.key_segments_per_label]
            key_map[(doc_id, names[label])] = set(chosen)
            for k in chosen:
                planted[k] = label

        units = []
        for k in range(m):
            tokens = [rng.choice(fillers) for _ in range(rng.randint(*spec.tokens_per_segment))]
            if k in planted:
                count = min(rng.randint(*spec.key_tokens_per_segment), len(tokens))
                for position in rng.sample(range(len(tokens)), count):
                    tokens[position] = rng.choice(keys[planted[k]])
            units.append(" ".join(tokens))

        documents.append(Document(doc_id, " ".join(units), tuple(names[i] for i in positives), tuple(units)))

    splits = {doc.id: "train" for doc in documents}
    vocab = LabelVocab(tuple(names), task_kind)
    corpus = Corpus(tuple(documents), vocab, splits, frozenset())
    logging.info(f"Сгенерирован синтетический корпус: {spec.num_docs} документов, {spec.labels} меток")
    return corpus, key_map


def write_key_map(key_map: KeyMap, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for (doc_id, label), segments in sorted(key_map.items()):
            record = {"doc_id": doc_id, "label": label, "key_segments": sorted(segments)}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_key_map(path: str) -> KeyMap:
    if not os.path.exists(path):
        raise ValidationError(f"Файл карты ключевых сегментов {path} не найден")
    key_map: KeyMap = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                key_map[(record["doc_id"], record["label"])] = {int(k) for k in record["key_segments"]}
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise FormatError("ожидается запись {doc_id, label, key_segments}", line=line_no) from None
    return key_map
