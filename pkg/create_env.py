from config import DEFAULTS

# Шаблон файла .env с переменными окружения и параметрами запуска по умолчанию
ENV_TEMPLATE = """# Переменные окружения
SWIPE_DB_PATH=swipe_runs.db
SWIPE_LOG_LEVEL=INFO
SWIPE_SEED={seed}
"""


def write_env(path: str = '.env') -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(ENV_TEMPLATE.format(seed=DEFAULTS["seed"]))


def write_run_config(path: str = 'swipe.conf') -> None:
    """Записывает файл конфигурации запуска со всеми значениями по умолчанию"""
    with open(path, 'w', encoding='utf-8') as f:
        f.write("# Параметры запуска swipe.py, флаги командной строки имеют приоритет\n")
        for key, value in DEFAULTS.items():
            f.write(f"{key}={value}\n")


if __name__ == "__main__":
    write_env()
    write_run_config()
