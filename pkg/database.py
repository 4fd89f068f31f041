import datetime
import sqlite3
from typing import Any, Dict, List, Optional

import numpy as np

from config import DB_PATH


# Инициализация базы данных запусков
def init_db(db_path: str = DB_PATH) -> None:
    """
    Создает базу данных и таблицы, если они не существуют
    """
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    # Создаем таблицу запусков обучения
    cursor.execute('''
    CREATE TABLE IF NOT EXISTS runs (
        run_id INTEGER PRIMARY KEY AUTOINCREMENT,
        created TEXT,
        corpus TEXT,
        pooling TEXT NOT NULL,
        interaction_layers INTEGER NOT NULL,
        seed INTEGER NOT NULL,
        epochs INTEGER NOT NULL,
        base_lr REAL NOT NULL,
        final_loss REAL,
        best_dev REAL
    )
    ''')

    # Создаем таблицу эпох
    cursor.execute('''
    CREATE TABLE IF NOT EXISTS epochs (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        run_id INTEGER NOT NULL,
        epoch INTEGER NOT NULL,
        step INTEGER NOT NULL,
        lr REAL NOT NULL,
        train_loss REAL NOT NULL,
        dev_metric REAL,
        dev_f1 REAL,
        FOREIGN KEY (run_id) REFERENCES runs (run_id)
    )
    ''')

    # Базы, созданные до появления столбца dev_f1
    cursor.execute("PRAGMA table_info(epochs)")
    if 'dev_f1' not in [column[1] for column in cursor.fetchall()]:
        cursor.execute("ALTER TABLE epochs ADD COLUMN dev_f1 REAL")

    conn.commit()
    conn.close()


# Регистрация нового запуска
def add_run(db_path: str, corpus: str, model_config, train_config) -> int:
    """
    Добавляет запуск обучения и возвращает его id
    """
    init_db(db_path)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute(
        "INSERT INTO runs (created, corpus, pooling, interaction_layers, seed, epochs, base_lr) "
        "VALUES (?, ?, ?, ?, ?, ?, ?)",
        (datetime.datetime.now().isoformat(timespec='seconds'), corpus, model_config.pooling.value,
         model_config.interaction_layers, train_config.seed, train_config.epochs, train_config.base_lr)
    )
    run_id = cursor.lastrowid

    conn.commit()
    conn.close()
    return run_id


# Запись итогов эпохи
def add_epoch(db_path: str, run_id: int, entry) -> None:
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute(
        "INSERT INTO epochs (run_id, epoch, step, lr, train_loss, dev_metric, dev_f1) VALUES (?, ?, ?, ?, ?, ?, ?)",
        (run_id, entry.epoch, entry.step, entry.lr, entry.train_loss, entry.dev_metric, entry.dev_f1)
    )

    conn.commit()
    conn.close()


# Завершение запуска
def finish_run(db_path: str, run_id: int, final_loss: float, best_dev: Optional[float]) -> None:
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute(
        "UPDATE runs SET final_loss = ?, best_dev = ? WHERE run_id = ?",
        (final_loss, best_dev, run_id)
    )

    conn.commit()
    conn.close()


# Получение статистики запуска
def get_run_stats(db_path: str, run_id: int) -> Optional[Dict[str, Any]]:
    """
    Возвращает параметры запуска и журнал его эпох, None если запуска нет
    """
    init_db(db_path)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute(
        "SELECT corpus, pooling, interaction_layers, seed, epochs, base_lr, final_loss, best_dev, created "
        "FROM runs WHERE run_id = ?", (run_id,)
    )
    run = cursor.fetchone()
    if not run:
        conn.close()
        return None

    cursor.execute(
        "SELECT epoch, step, lr, train_loss, dev_metric, dev_f1 FROM epochs WHERE run_id = ? ORDER BY epoch",
        (run_id,)
    )
    epochs = [
        {"epoch": epoch, "step": step, "lr": lr, "train_loss": train_loss, "dev_metric": dev_metric,
         "dev_f1": dev_f1}
        for epoch, step, lr, train_loss, dev_metric, dev_f1 in cursor.fetchall()
    ]

    conn.close()

    corpus, pooling, interaction_layers, seed, num_epochs, base_lr, final_loss, best_dev, created = run
    return {
        "run_id": run_id,
        "corpus": corpus,
        "pooling": pooling,
        "interaction_layers": interaction_layers,
        "seed": seed,
        "epochs": num_epochs,
        "base_lr": base_lr,
        "final_loss": final_loss,
        "best_dev": best_dev,
        "created": created,
        "log": epochs,
    }


# Таблица лидеров по лучшей точности на dev
def get_leaderboard(db_path: str, limit: int = 10) -> List[Dict[str, Any]]:
    init_db(db_path)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute("""
        SELECT run_id, corpus, pooling, interaction_layers, seed, best_dev
        FROM runs
        WHERE best_dev IS NOT NULL
        ORDER BY best_dev DESC, run_id
        LIMIT ?
    """, (limit,))

    leaderboard = []
    for run_id, corpus, pooling, interaction_layers, seed, best_dev in cursor.fetchall():
        # Вариант модели в обозначениях "пулинг + Nt"
        variant = pooling if not interaction_layers else f"{pooling}+{interaction_layers}t"
        leaderboard.append({
            "run_id": run_id,
            "corpus": corpus or "-",
            "variant": variant,
            "seed": seed,
            "best_dev": best_dev,
        })

    conn.close()
    return leaderboard


# Среднее и разброс по начальным значениям для одного варианта
def get_seed_summary(db_path: str, pooling: str, interaction_layers: int = 0) -> Optional[Dict[str, Any]]:
    init_db(db_path)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute("""
        SELECT seed, best_dev FROM runs
        WHERE pooling = ? AND interaction_layers = ? AND best_dev IS NOT NULL
        ORDER BY run_id
    """, (pooling, interaction_layers))
    rows = cursor.fetchall()
    conn.close()

    if not rows:
        return None
    values = [best_dev for _, best_dev in rows]
    return {
        "seeds": [seed for seed, _ in rows],
        "values": values,
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
    }


# Удаление запуска вместе с журналом эпох
def delete_run(db_path: str, run_id: int) -> bool:
    init_db(db_path)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    try:
        cursor.execute("DELETE FROM epochs WHERE run_id = ?", (run_id,))
        cursor.execute("DELETE FROM runs WHERE run_id = ?", (run_id,))
        deleted = cursor.rowcount > 0
        conn.commit()
    except Exception:
        conn.rollback()
        raise
    finally:
        conn.close()
    return deleted


def list_runs(db_path: str) -> List[Dict[str, Any]]:
    init_db(db_path)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute("SELECT run_id, created, corpus, pooling, interaction_layers, seed, best_dev FROM runs ORDER BY run_id")
    runs = [
        {"run_id": run_id, "created": created, "corpus": corpus or "-", "pooling": pooling,
         "interaction_layers": interaction_layers, "seed": seed, "best_dev": best_dev}
        for run_id, created, corpus, pooling, interaction_layers, seed, best_dev in cursor.fetchall()
    ]

    conn.close()
    return runs
