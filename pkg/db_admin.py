import argparse
import os
import shutil
from datetime import datetime

from config import DB_PATH
from database import delete_run, get_leaderboard, get_run_stats, get_seed_summary, list_runs
from messages import RUNS_EMPTY_MESSAGE


def _db_exists(db_path: str) -> bool:
    if not os.path.exists(db_path):
        print(f"Ошибка: Файл базы данных {db_path} не найден.")
        return False
    return True


def _format_metric(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def backup_database(db_path: str = DB_PATH) -> str:
    """Создает резервную копию базы данных"""
    if not _db_exists(db_path):
        return None

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    backup_path = os.path.join(os.path.dirname(db_path), f"backup_{timestamp}.db")

    try:
        shutil.copyfile(db_path, backup_path)
        print(f"Резервная копия успешно создана: {backup_path}")
    except OSError as e:
        print(f"Ошибка при создании резервной копии: {e}")
        return None
    return backup_path


def show_runs(db_path: str = DB_PATH) -> None:
    """Выводит список всех запусков обучения"""
    if not _db_exists(db_path):
        return

    runs = list_runs(db_path)
    if not runs:
        print(RUNS_EMPTY_MESSAGE)
        return

    print("\nСписок запусков:")
    print("-" * 90)
    print(f"{'ID':^6} | {'Дата':^20} | {'Корпус':^20} | {'Пулинг':^10} | {'Слои':^5} | {'Seed':^10} | {'dev':^8}")
    print("-" * 90)
    for run in runs:
        print(f"{run['run_id']:^6} | {run['created']:^20} | {run['corpus'][-20:]:^20} | {run['pooling']:^10} | "
              f"{run['interaction_layers']:^5} | {run['seed']:^10} | {_format_metric(run['best_dev']):^8}")


def run_stats(run_id: int, db_path: str = DB_PATH) -> None:
    """Выводит параметры запуска и журнал его эпох"""
    if not _db_exists(db_path):
        return

    stats = get_run_stats(db_path, run_id)
    if not stats:
        print(f"Запуск с ID {run_id} не найден.")
        return

    print(f"\nЗапуск ID: {run_id}")
    print("-" * 50)
    print(f"Корпус: {stats['corpus']}")
    print(f"Пулинг: {stats['pooling']}, слоев взаимодействия: {stats['interaction_layers']}")
    print(f"Seed: {stats['seed']}, эпох: {stats['epochs']}, начальная скорость обучения: {stats['base_lr']}")
    print(f"Итоговая потеря: {_format_metric(stats['final_loss'])}")
    print(f"Лучшая точность на dev: {_format_metric(stats['best_dev'])}")

    if stats["log"]:
        print(f"\n{'Эпоха':^7} | {'Шаг':^7} | {'lr':^12} | {'Потеря':^10} | {'dev':^8} | {'dev F1':^8}")
        print("-" * 66)
        for entry in stats["log"]:
            print(f"{entry['epoch']:^7} | {entry['step']:^7} | {entry['lr']:^12.3e} | "
                  f"{entry['train_loss']:^10.4f} | {_format_metric(entry['dev_metric']):^8} | "
                  f"{_format_metric(entry['dev_f1']):^8}")
    else:
        print("\nЗапуск не завершил ни одной эпохи.")


def remove_run(run_id: int, db_path: str = DB_PATH) -> None:
    """Удаляет запуск и его журнал эпох"""
    if not _db_exists(db_path):
        return

    # Сначала создаем резервную копию
    backup_database(db_path)

    if delete_run(db_path, run_id):
        print(f"Запуск {run_id} удален из базы данных.")
    else:
        print(f"Запуск с ID {run_id} не найден.")


def show_leaderboard(limit: int = 10, db_path: str = DB_PATH) -> None:
    """Показывает таблицу лидеров по точности на dev"""
    if not _db_exists(db_path):
        return

    leaders = get_leaderboard(db_path, limit)
    print(f"\nТоп-{limit} запусков по точности на dev:")
    print("-" * 60)
    print(f"{'№':^5} | {'Вариант':^12} | {'Корпус':^20} | {'Seed':^10} | {'dev':^8}")
    print("-" * 60)
    if not leaders:
        print("Нет завершенных запусков с выборкой dev")
        return
    for i, leader in enumerate(leaders, 1):
        print(f"{i:^5} | {leader['variant']:^12} | {leader['corpus'][-20:]:^20} | {leader['seed']:^10} | "
              f"{leader['best_dev']:^8.4f}")


def show_seed_summary(pooling: str, interaction_layers: int = 0, db_path: str = DB_PATH) -> None:
    """Среднее и разброс лучшей точности на dev по начальным значениям"""
    if not _db_exists(db_path):
        return

    summary = get_seed_summary(db_path, pooling, interaction_layers)
    if not summary:
        print(f"Нет завершенных запусков для варианта {pooling} с {interaction_layers} слоями.")
        return
    print(f"\nВариант {pooling}, слоев взаимодействия: {interaction_layers}")
    print(f"Запусков: {len(summary['seeds'])}, seeds: {summary['seeds']}")
    print(f"Точность на dev: {summary['mean']:.4f} ± {summary['std']:.4f}")


def main(argv=None):
    parser = argparse.ArgumentParser(description='Утилита администрирования базы данных запусков SWIPE')
    parser.add_argument('--db', default=DB_PATH, help='Файл базы данных')

    subparsers = parser.add_subparsers(dest='command', help='Доступные команды')

    # Команда backup
    subparsers.add_parser('backup', help='Создать резервную копию базы данных')

    # Команда list
    subparsers.add_parser('list', help='Показать список всех запусков')

    # Команда stats
    stats_parser = subparsers.add_parser('stats', help='Показать журнал эпох запуска')
    stats_parser.add_argument('run_id', type=int, help='ID запуска')

    # Команда delete
    delete_parser = subparsers.add_parser('delete', help='Удалить запуск')
    delete_parser.add_argument('run_id', type=int, help='ID запуска')

    # Команда leaderboard
    leaderboard_parser = subparsers.add_parser('leaderboard', help='Показать таблицу лидеров')
    leaderboard_parser.add_argument('--limit', type=int, default=10, help='Число строк')

    # Команда seeds
    seeds_parser = subparsers.add_parser('seeds', help='Усреднить точность по начальным значениям')
    seeds_parser.add_argument('--pooling', default='max', help='Стратегия пулинга')
    seeds_parser.add_argument('--interaction-layers', type=int, default=0, help='Число слоев взаимодействия')

    args = parser.parse_args(argv)

    if args.command == 'backup':
        backup_database(args.db)
    elif args.command == 'list':
        show_runs(args.db)
    elif args.command == 'stats':
        run_stats(args.run_id, args.db)
    elif args.command == 'delete':
        remove_run(args.run_id, args.db)
    elif args.command == 'leaderboard':
        show_leaderboard(args.limit, args.db)
    elif args.command == 'seeds':
        show_seed_summary(args.pooling, args.interaction_layers, args.db)
    else:
        parser.print_help()


if __name__ == "__main__":
    main()
