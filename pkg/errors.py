"""Исключения инструментария SWIPE.

Все ошибки наследуются от ValueError.
"""


class SwipeError(ValueError):
    """Базовая ошибка инструментария"""


class ValidationError(SwipeError):
    """Входные данные нарушают инвариант (корпус, метки, разбиение)"""


class ConfigurationError(SwipeError):
    """Несовместимые или недопустимые параметры"""


class FormatError(SwipeError):
    """Файл не соответствует ожидаемому формату"""

    def __init__(self, message: str, line: int = None):
        if line is not None:
            message = f"строка {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(SwipeError):
    """Сбой обучения, например нечисловое значение функции потерь"""


class SegmentLookupError(SwipeError, KeyError):
    """Нет векторов сегментов для запрошенного документа"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""
