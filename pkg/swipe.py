import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from typing import Dict, List, Optional

from config import DB_PATH, DEFAULTS, LOG_FORMAT, LOG_LEVEL, load_run_config, sub_seed
from corpus import (
    Corpus, LabelVocab, SyntheticSpec, TaskKind, generate_synthetic, load_jsonl, load_key_map,
    read_documents, split_corpus, write_jsonl, write_key_map,
)
from encoder import SegmentMatrix, load_precomputed, write_precomputed
from errors import ConfigurationError, SwipeError, ValidationError
from evaluation import (
    compare_poolings, evaluate_split, predict_documents, scaling_probe, segment_length_sweep,
    sufficiency_test, sweet_spot, write_csv, write_json,
)
from messages import (
    CONVERGE_MESSAGE, EVAL_MESSAGE, SCALE_HEADER, SCALE_ROW, SEEDS_DONE_MESSAGE, SEGMENTS_MESSAGE,
    SUFFICIENCY_HEADER, SUFFICIENCY_ROW, SWEEP_MESSAGE, SYNTH_DONE_MESSAGE, TRAIN_DONE_MESSAGE,
    format_best_dev,
)
from model import ModelConfig, load_checkpoint, prepare_inputs, save_checkpoint
from swipe_head import PoolingStrategy, explain
from trainer import TrainConfig, train, train_seeds, write_metrics_csv
from truncator import TruncationConfig


def int_list(value: str) -> List[int]:
    try:
        return [int(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ожидается список целых через запятую: {value}") from None


def float_list(value: str) -> List[float]:
    try:
        return [float(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ожидается список чисел через запятую: {value}") from None


def add_truncation_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--truncate', choices=['auto', 'punct', 'structure'], default=DEFAULTS["truncate"],
                        help='Стратегия нарезки документа на сегменты')
    parser.add_argument('--window-len', type=int, default=DEFAULTS["window_len"], help='Длина окна (auto)')
    parser.add_argument('--overlap', type=int, default=DEFAULTS["overlap"], help='Перекрытие окон (auto)')
    parser.add_argument('--max-seg-len', type=int, default=DEFAULTS["max_seg_len"],
                        help='Максимальная длина сегмента (punct)')


def add_model_flags(parser: argparse.ArgumentParser) -> None:
    encoder = parser.add_mutually_exclusive_group()
    encoder.add_argument('--vectors', help='Файл готовых векторов сегментов (вместо встроенного кодировщика)')
    encoder.add_argument('--buckets', type=int, default=DEFAULTS["buckets"],
                         help='Число корзин хеширования встроенного кодировщика')
    parser.add_argument('--hidden', type=int, default=DEFAULTS["hidden"], help='Размерность векторов сегментов')
    parser.add_argument('--ngram-orders', type=int_list, default=DEFAULTS["ngram_orders"],
                        help='Порядки n-грамм через запятую')
    parser.add_argument('--hash-seed', type=int, default=DEFAULTS["hash_seed"], help='Ключ хеша n-грамм')
    parser.add_argument('--interaction-layers', type=int, default=DEFAULTS["interaction_layers"],
                        help='Число слоев взаимодействия сегментов')
    parser.add_argument('--heads', type=int, default=DEFAULTS["heads"], help='Число голов внимания')
    parser.add_argument('--positions', choices=['on', 'off'], default=DEFAULTS["positions"],
                        help='Позиционные вложения в слоях взаимодействия')
    parser.add_argument('--max-segments', type=int, default=DEFAULTS["max_segments"],
                        help='Размер таблицы позиционных вложений')
    parser.add_argument('--pooling', choices=[p.value for p in PoolingStrategy], default=DEFAULTS["pooling"],
                        help='Стратегия пулинга')


def add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--epochs', type=int, default=DEFAULTS["epochs"], help='Число эпох')
    parser.add_argument('--lr', type=float, default=DEFAULTS["lr"], help='Начальная скорость обучения')
    parser.add_argument('--batch-size', type=int, default=DEFAULTS["batch_size"], help='Размер пакета')
    parser.add_argument('--split', type=float_list, default="1,0,0",
                        help='Доли train,dev,test для документов без тега выборки')


def add_corpus_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument('--corpus', required=required, help='Корпус в формате JSONL')
    parser.add_argument('--task', choices=[t.value for t in TaskKind], default=TaskKind.MULTI_LABEL.value,
                        help='Тип задачи')


def truncation_from_args(args) -> TruncationConfig:
    return TruncationConfig(args.truncate, args.window_len, args.overlap, args.max_seg_len)


def model_config_from_args(args, num_labels: int) -> ModelConfig:
    return ModelConfig(
        num_labels=num_labels,
        hidden=args.hidden,
        encoder="precomputed" if args.vectors else "hash",
        buckets=args.buckets,
        ngram_orders=tuple(args.ngram_orders),
        hash_seed=args.hash_seed,
        interaction_layers=args.interaction_layers,
        heads=args.heads,
        positions=args.positions == 'on',
        max_segments=args.max_segments,
        pooling=PoolingStrategy(args.pooling),
    )


def train_config_from_args(args, seed: int) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, base_lr=args.lr, batch_size=args.batch_size, seed=seed)


def load_corpus(args) -> Corpus:
    if not os.path.exists(args.corpus):
        raise ValidationError(f"Корпус {args.corpus} не найден")
    corpus = load_jsonl(args.corpus, TaskKind(args.task))
    if hasattr(args, 'split') and args.split:
        corpus = split_corpus(corpus, args.split, sub_seed(args.seed, "split"))
    return corpus


def load_vectors(args):
    return load_precomputed(args.vectors) if getattr(args, 'vectors', None) else None


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        num_docs=args.docs,
        labels=args.labels,
        segments_per_doc=(args.segments_min, args.segments_max),
        key_vocab_per_label=args.key_vocab,
        filler_vocab=args.filler_vocab,
        tokens_per_segment=(args.tokens_min, args.tokens_max),
        task_kind=TaskKind(args.task),
        seed=sub_seed(args.seed, "synth"),
    )
    corpus, key_map = generate_synthetic(spec)
    corpus = split_corpus(corpus, args.split, sub_seed(args.seed, "split"))

    os.makedirs(args.out, exist_ok=True)
    corpus_path = os.path.join(args.out, 'corpus.jsonl')
    keymap_path = os.path.join(args.out, 'keymap.jsonl')
    write_jsonl(corpus, corpus_path)
    write_key_map(key_map, keymap_path)
    print(SYNTH_DONE_MESSAGE.format(docs=args.docs, labels=args.labels, corpus_path=corpus_path,
                                    keymap_path=keymap_path, pairs=len(key_map)))
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args)
    truncation = truncation_from_args(args)
    model_config = model_config_from_args(args, len(corpus.vocab))
    vectors = load_vectors(args)

    if args.seeds:
        seeds = [sub_seed(args.seed, f"init{number}") for number in range(args.seeds)]
        summary = train_seeds(corpus, truncation, model_config, train_config_from_args(args, seeds[0]), seeds,
                              vectors, args.db, args.corpus)
        print(SEEDS_DONE_MESSAGE.format(count=len(seeds), seeds=seeds, mean=summary.mean, std=summary.std))
        return 0

    config = train_config_from_args(args, sub_seed(args.seed, "init"))
    result = train(corpus, truncation, model_config, config, vectors, args.db, args.corpus)
    model = result.state.model
    model.load_state_dict(result.best_state_dict)
    save_checkpoint(args.checkpoint, model, corpus.vocab, truncation, asdict(config))
    if args.metrics:
        write_metrics_csv(result.log, args.metrics)
    print(TRAIN_DONE_MESSAGE.format(epochs=config.epochs, steps=result.state.step,
                                    final_loss=result.log[-1].train_loss,
                                    best_dev=format_best_dev(result.best_dev), checkpoint=args.checkpoint))
    return 0


def _read_inputs(args):
    return [doc for doc, _ in read_documents(args.input, require_labels=False)]


def _write_records(records: List[dict], out: Optional[str]) -> None:
    lines = [json.dumps(record, ensure_ascii=False) for record in records]
    if out:
        with open(out, 'w', encoding='utf-8') as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))
    else:
        for line in lines:
            print(line)


def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    documents = _read_inputs(args)
    preds = predict_documents(checkpoint.model, documents, checkpoint.truncation, load_vectors(args))
    _write_records([preds[doc.id].to_record(checkpoint.vocab) for doc in documents], args.out)
    return 0


def cmd_explain(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    vocab = checkpoint.vocab
    documents = _read_inputs(args)
    vectors = load_vectors(args)
    inputs = prepare_inputs(documents, checkpoint.truncation, checkpoint.model.config, vectors)

    records = []
    for doc in documents:
        pred = checkpoint.model.predict(doc.id, inputs[doc.id])
        labels = pred.decided_labels(vocab.task_kind) if args.label is None else [vocab.index(args.label)]
        explanations = []
        for label in labels:
            explanation = explain(pred, label)
            entry = {
                "label": vocab.names[label],
                "key_segment": explanation.key_segment,
                "positive_segments": explanation.positive_segments,
            }
            # Текст сегмента доступен только для встроенного кодировщика
            if not isinstance(inputs[doc.id], SegmentMatrix):
                entry["key_text"] = inputs[doc.id][explanation.key_segment].text
            explanations.append(entry)
        records.append({"doc_id": doc.id, "labels": [vocab.names[i] for i in pred.decided_labels(vocab.task_kind)],
                        "explanations": explanations})
    _write_records(records, args.out)
    return 0


def _checkpoint_corpus(args, vocab: LabelVocab) -> Corpus:
    if not os.path.exists(args.corpus):
        raise ValidationError(f"Корпус {args.corpus} не найден")
    return load_jsonl(args.corpus, vocab.task_kind, vocab=vocab)


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    corpus = _checkpoint_corpus(args, checkpoint.vocab)
    key_map = load_key_map(args.keymap) if args.keymap else None
    report = evaluate_split(checkpoint.model, corpus, args.split, checkpoint.truncation, load_vectors(args), key_map)

    documents = report["documents"]
    print(EVAL_MESSAGE.format(split=args.split, accuracy=documents["accuracy"],
                              micro_f1=documents["micro_f1"], macro_f1=documents["macro_f1"]))
    if key_map is not None:
        print(SEGMENTS_MESSAGE.format(micro_f1=report["segments"]["micro_f1"],
                                      macro_f1=report["segments"]["macro_f1"],
                                      recovery=report["key_segment_recovery"]))
    if args.out:
        write_json(report, args.out)
    return 0


def cmd_sufficiency(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    corpus = _checkpoint_corpus(args, checkpoint.vocab)
    report = sufficiency_test(corpus, checkpoint.model, args.lengths, checkpoint.truncation,
                              seed=sub_seed(args.seed, "probe"), probe_epochs=args.probe_epochs,
                              probe_lr=args.probe_lr)
    print(SUFFICIENCY_HEADER)
    for row in report.to_dict()["rows"]:
        print(SUFFICIENCY_ROW.format(**row))
    if args.out:
        write_json(report.to_dict(), args.out)
    return 0


def cmd_scale(args) -> int:
    if args.vectors:
        raise ConfigurationError("Замер времени выполняется только со встроенным кодировщиком")
    model_config = model_config_from_args(args, args.labels)
    rows = scaling_probe(model_config, args.segments, args.segment_len, args.trials, sub_seed(args.seed, "scale"))
    print(SCALE_HEADER)
    for row in rows:
        print(SCALE_ROW.format(**row))
    if args.out:
        write_csv(rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    corpus = load_corpus(args)
    model_config = model_config_from_args(args, len(corpus.vocab))
    if model_config.encoder != "hash":
        raise ConfigurationError("Перебор длин сегментов требует встроенного кодировщика")
    rows = segment_length_sweep(corpus, args.lengths, model_config,
                                train_config_from_args(args, sub_seed(args.seed, "init")))
    print(SWEEP_MESSAGE.format(length=sweet_spot(rows)))
    if args.out:
        write_csv(rows, args.out)
    return 0


def cmd_converge(args) -> int:
    corpus = load_corpus(args)
    model_config = model_config_from_args(args, len(corpus.vocab))
    seeds = [sub_seed(args.seed, f"init{number}") for number in range(args.seeds)]
    report = compare_poolings(corpus, truncation_from_args(args), model_config,
                              train_config_from_args(args, seeds[0]), seeds, load_vectors(args))
    print(CONVERGE_MESSAGE.format(leads=report.max_leads_first_epoch, seeds=report.seeds,
                                  final_gap=report.final_gap))
    if args.out:
        write_json(report.to_dict(), args.out)
    return 0


def cmd_encode(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = checkpoint.model
    if model.encoder is None:
        raise ConfigurationError("Контрольная точка не содержит встроенного кодировщика")
    documents = _read_inputs(args)
    inputs = prepare_inputs(documents, checkpoint.truncation, model.config)
    matrices: Dict[str, SegmentMatrix] = {}
    for doc in documents:
        rows = model.encoder(inputs[doc.id]).detach()
        matrices[doc.id] = SegmentMatrix(doc.id, rows)
    write_precomputed(matrices, args.out)
    logging.info(f"Векторы сегментов {len(matrices)} документов записаны в {args.out}")
    return 0


COMMANDS = {
    'synth': cmd_synth,
    'train': cmd_train,
    'predict': cmd_predict,
    'explain': cmd_explain,
    'eval': cmd_eval,
    'sufficiency': cmd_sufficiency,
    'scale': cmd_scale,
    'sweep': cmd_sweep,
    'converge': cmd_converge,
    'encode': cmd_encode,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='SWIPE: классификация длинных текстов с объяснением по сегментам')
    parser.add_argument('--config', help='Файл конфигурации key=value, флаги имеют приоритет')
    parser.add_argument('--log-level', default=LOG_LEVEL, help='Уровень логирования')

    subparsers = parser.add_subparsers(dest='command', help='Доступные команды')

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('--seed', type=int, default=DEFAULTS["seed"], help='Начальное значение всех генераторов')
        return sub

    # Команда synth
    synth = add('synth', 'Сгенерировать синтетический корпус с картой ключевых сегментов')
    synth.add_argument('--labels', type=int, default=2, help='Число меток')
    synth.add_argument('--docs', type=int, default=500, help='Число документов')
    synth.add_argument('--segments-min', type=int, default=8, help='Минимум сегментов в документе')
    synth.add_argument('--segments-max', type=int, default=8, help='Максимум сегментов в документе')
    synth.add_argument('--key-vocab', type=int, default=20, help='Ключевых токенов на метку')
    synth.add_argument('--filler-vocab', type=int, default=200, help='Общих заполняющих токенов')
    synth.add_argument('--tokens-min', type=int, default=8, help='Минимум токенов в сегменте')
    synth.add_argument('--tokens-max', type=int, default=12, help='Максимум токенов в сегменте')
    synth.add_argument('--task', choices=[t.value for t in TaskKind], default=TaskKind.MULTI_LABEL.value,
                       help='Тип задачи')
    synth.add_argument('--split', type=float_list, default="0.8,0.1,0.1", help='Доли train,dev,test')
    synth.add_argument('--out', required=True, help='Каталог для corpus.jsonl и keymap.jsonl')

    # Команда train
    train_parser = add('train', 'Обучить модель')
    add_corpus_flags(train_parser)
    add_truncation_flags(train_parser)
    add_model_flags(train_parser)
    add_train_flags(train_parser)
    train_parser.add_argument('--checkpoint', default='swipe.pt', help='Куда сохранить контрольную точку')
    train_parser.add_argument('--metrics', help='CSV-журнал эпох')
    train_parser.add_argument('--db', default=DB_PATH, help='База данных запусков (пустая строка - не записывать)')
    train_parser.add_argument('--seeds', type=int, default=0,
                              help='Обучить с N производными начальными значениями и усреднить')

    # Команды predict, explain и encode
    for name, help_text in (('predict', 'Предсказать метки документов'),
                            ('explain', 'Показать ключевые сегменты документов'),
                            ('encode', 'Выгрузить векторы сегментов встроенного кодировщика')):
        sub = add(name, help_text)
        sub.add_argument('--checkpoint', required=True, help='Контрольная точка')
        sub.add_argument('--input', required=True, help='Документы в формате JSONL')
        if name != 'encode':
            sub.add_argument('--vectors', help='Файл готовых векторов сегментов')
        if name == 'explain':
            sub.add_argument('--label', help='Объяснить только эту метку')
        sub.add_argument('--out', required=(name == 'encode'), help='Файл результата')

    # Команда eval
    eval_parser = add('eval', 'Оценить модель на выборке')
    eval_parser.add_argument('--checkpoint', required=True, help='Контрольная точка')
    eval_parser.add_argument('--corpus', required=True, help='Корпус в формате JSONL')
    eval_parser.add_argument('--split', choices=['train', 'dev', 'test'], default='test', help='Выборка')
    eval_parser.add_argument('--keymap', help='Карта ключевых сегментов для оценки разметки сегментов')
    eval_parser.add_argument('--vectors', help='Файл готовых векторов сегментов')
    eval_parser.add_argument('--out', help='JSON-отчет')

    # Команда sufficiency
    sufficiency = add('sufficiency', 'Тест достаточности объяснений')
    sufficiency.add_argument('--checkpoint', required=True, help='Контрольная точка')
    sufficiency.add_argument('--corpus', required=True, help='Корпус в формате JSONL')
    sufficiency.add_argument('--lengths', type=int_list, help='Длины сегментов через запятую')
    sufficiency.add_argument('--probe-epochs', type=int, default=10, help='Эпохи обучения зонда')
    sufficiency.add_argument('--probe-lr', type=float, default=0.05, help='Скорость обучения зонда')
    sufficiency.add_argument('--out', help='JSON-отчет')

    # Команда scale
    scale = add('scale', 'Замер времени прямого и обратного прохода')
    add_model_flags(scale)
    scale.add_argument('--labels', type=int, default=2, help='Число меток')
    scale.add_argument('--segments', type=int_list, default="8,16,32,64", help='Числа сегментов через запятую')
    scale.add_argument('--segment-len', type=int, default=16, help='Длина сегмента в токенах')
    scale.add_argument('--trials', type=int, default=20, help='Число замеров')
    scale.add_argument('--out', help='CSV-таблица')

    # Команда sweep
    sweep = add('sweep', 'Точность и время обучения по длинам сегментов')
    add_corpus_flags(sweep)
    add_model_flags(sweep)
    add_train_flags(sweep)
    sweep.add_argument('--lengths', type=int_list, default="16,32,64,128", help='Длины сегментов через запятую')
    sweep.add_argument('--out', help='CSV-таблица')

    # Команда converge
    converge = add('converge', 'Сравнить сходимость max и sum пулинга')
    add_corpus_flags(converge)
    add_truncation_flags(converge)
    add_model_flags(converge)
    add_train_flags(converge)
    converge.add_argument('--seeds', type=int, default=5, help='Число начальных значений')
    converge.add_argument('--out', help='JSON-отчет')

    return parser


def apply_run_config(parser: argparse.ArgumentParser, argv: List[str]) -> None:
    """Значения из файла конфигурации становятся значениями по умолчанию подкоманд"""
    known, _ = parser.parse_known_args(argv)
    if not known.config:
        return
    values = load_run_config(known.config)
    subparsers = next(action for action in parser._actions if isinstance(action, argparse._SubParsersAction))
    for sub in subparsers.choices.values():
        dests = {action.dest for action in sub._actions}
        sub.set_defaults(**{key: value for key, value in values.items() if key in dests})


def main(argv: List[str] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()

    try:
        apply_run_config(parser, argv)
    except SwipeError as e:
        print(f"Ошибка: {e}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)

    # Настройка логирования
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)

    if args.command not in COMMANDS:
        parser.print_help()
        return 2

    if getattr(args, 'db', None) == '':
        args.db = None

    try:
        return COMMANDS[args.command](args)
    except (SwipeError, OSError) as e:
        logging.error(f"{args.command}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
