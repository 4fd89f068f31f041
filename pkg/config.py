import hashlib
import os
from typing import Any, Dict

import torch
from dotenv import dotenv_values, load_dotenv

from errors import ConfigurationError

# Загрузка переменных окружения из файла .env
load_dotenv()

# Все тензоры инструментария считаются в двойной точности на CPU
DTYPE = torch.float64

# Путь к базе данных запусков обучения
DB_PATH = os.getenv("SWIPE_DB_PATH", "swipe_runs.db")

LOG_LEVEL = os.getenv("SWIPE_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# Проверка корректности переменных окружения
if LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
    raise ConfigurationError(f"Недопустимый уровень логирования SWIPE_LOG_LEVEL={LOG_LEVEL}")

try:
    DEFAULT_SEED = int(os.getenv("SWIPE_SEED", "13"))
except ValueError:
    raise ConfigurationError("SWIPE_SEED должен быть целым числом") from None

# Значения по умолчанию для нарезки, кодировщика и обучения
DEFAULTS: Dict[str, Any] = {
    "truncate": "auto",
    "window_len": 64,
    "overlap": 0,
    "max_seg_len": 64,
    "buckets": 1 << 14,
    "hidden": 32,
    "ngram_orders": "1,2",
    "hash_seed": 0,
    "interaction_layers": 0,
    "heads": 2,
    "positions": "off",
    "max_segments": 512,
    "pooling": "max",
    "epochs": 10,
    "lr": 5e-5,
    "batch_size": 16,
    "seed": DEFAULT_SEED,
}


def load_run_config(path: str) -> Dict[str, str]:
    """
    Читает файл конфигурации запуска в формате key=value.
    Ключи приводятся к именам аргументов командной строки (через '_').
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"Файл конфигурации {path} не найден")

    values = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            raise ConfigurationError(f"В файле {path} у ключа '{key}' нет значения")
        values[key.strip().lower().replace('-', '_')] = value.strip()
    return values


def sub_seed(seed: int, name: str) -> int:
    """Именованное производное начальное значение: одно --seed на все источники случайности"""
    digest = hashlib.blake2b(f"{seed}:{name}".encode('utf-8'), digest_size=4).digest()
    return int.from_bytes(digest, 'little')
