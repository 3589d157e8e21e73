"""
Исключения слоя данных
"""
from pathlib import Path
from typing import Optional, Union


class SequenceDataError(ValueError):
    """Некорректные или пустые входные данные"""


class SequenceParseError(SequenceDataError):
    """
    Ошибка разбора файла последовательностей

    line и column нумеруются с единицы; column - номер токена в строке.
    """

    def __init__(self, path: Union[str, Path], line: int, column: int, token: Optional[str] = None, reason: str = ''):
        self.path = str(path)
        self.line = line
        self.column = column
        self.token = token
        message = f"{self.path}: строка {line}, токен {column}"
        if token is not None:
            message += f" ({token!r})"
        if reason:
            message += f": {reason}"
        super().__init__(message)
