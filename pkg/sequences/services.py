"""
Сервисы для работы с последовательностями событий: чтение и запись файлов,
словарь, одноклассовое разбиение и скользящие окна
"""
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from oc4seq_project.storage import atomic_write_text
from .data import ABNORMAL, NORMAL, DatasetSplit, EventSequence, EventVocab
from .exceptions import SequenceDataError, SequenceParseError

logger = logging.getLogger(__name__)

# Доля валидационной части в отложенных данных (валидация/тест = 3/7)
VALIDATION_NUMERATOR = 3
VALIDATION_DENOMINATOR = 10


class SequenceFileService:
    """
    Сервис для чтения и записи файлов последовательностей

    Формат: одна последовательность на строку, идентификаторы событий -
    неотрицательные десятичные числа через пробельные символы. Метка
    задается файлом целиком (отдельные файлы для нормальных и аномальных).
    """

    def __init__(self, encoding: str = 'utf-8'):
        self.encoding = encoding

    def load(self, path: Union[str, Path], label: str = NORMAL) -> List[EventSequence]:
        """
        Загружает последовательности из файла

        Идентификатор последовательности: "<имя файла>:<номер строки>".
        """
        path = Path(path)
        if label not in (NORMAL, ABNORMAL):
            raise ValueError(f"Неизвестная метка: {label}")
        if not path.is_file():
            raise SequenceDataError(f"Файл последовательностей не найден: {path}")

        try:
            text = path.read_bytes().decode(self.encoding)
        except UnicodeDecodeError as e:
            raise SequenceDataError(f"Файл {path} не в кодировке {self.encoding}: {e}") from e
        sequences = []
        # Строки разделяются только \n (с необязательным \r), прочие разделители строк Unicode - нет
        for line_number, line in enumerate(text.split('\n'), start=1):
            tokens = line.rstrip('\r').split()
            if not tokens:
                continue
            events = []
            for column, token in enumerate(tokens, start=1):
                if not (token.isascii() and token.isdigit()):
                    raise SequenceParseError(path, line_number, column, token, 'ожидалось неотрицательное целое число')
                events.append(int(token))
            sequences.append(EventSequence(id=f"{path.name}:{line_number}", events=tuple(events), label=label))

        if not sequences:
            raise SequenceDataError(f"Файл {path} не содержит ни одной последовательности")

        logger.info(f"Загружено {len(sequences)} последовательностей ({label}) из {path}")
        return sequences

    def save(self, path: Union[str, Path], sequences: Iterable[EventSequence]) -> Path:
        """
        Атомарно записывает последовательности в файл (по одной на строку)
        """
        lines = [' '.join(str(event) for event in seq.events) for seq in sequences]
        target = atomic_write_text(path, ''.join(f"{line}\n" for line in lines))
        logger.info(f"Записано {len(lines)} последовательностей в {target}")
        return target


def load_sequences(path: Union[str, Path], label: str = NORMAL) -> List[EventSequence]:
    return SequenceFileService().load(path, label)


def save_sequences(path: Union[str, Path], sequences: Iterable[EventSequence]) -> Path:
    return SequenceFileService().save(path, sequences)


def build_vocab(train: Sequence[EventSequence]) -> EventVocab:
    """
    Строит словарь по обучающей выборке: |E| = 1 + максимальный идентификатор
    """
    if not train:
        raise SequenceDataError("Нельзя построить словарь по пустой обучающей выборке")

    known = set()
    for seq in train:
        known.update(seq.events)
    if 0 in known:
        raise SequenceDataError("Идентификатор 0 зарезервирован под UNK и не может встречаться в обучающих данных")

    vocab = EventVocab(size=max(known) + 1, known=frozenset(known))
    logger.info(f"Построен словарь: |E| = {vocab.size}, различных событий {len(known)}")
    return vocab


def split_dataset(normals: Sequence[EventSequence], abnormals: Sequence[EventSequence],
                  n_train: int, seed: int) -> DatasetSplit:
    """
    Одноклассовое разбиение

    n_train нормальных последовательностей (выбор без возвращения) образуют
    обучающую выборку. Оставшиеся нормальные и все аномальные независимо
    перемешиваются; floor(0.3 * n) каждой группы уходит в валидацию,
    остальное - в тест.
    """
    if n_train < 0:
        raise ValueError(f"n_train не может быть отрицательным: {n_train}")
    if n_train >= len(normals):
        raise SequenceDataError(
            f"n_train ({n_train}) должен быть меньше числа нормальных последовательностей ({len(normals)})"
        )
    mislabeled = [seq.id for seq in normals if seq.is_abnormal]
    if mislabeled:
        raise SequenceDataError(f"Среди нормальных последовательностей есть аномальные: {mislabeled[:5]}")

    rng = np.random.default_rng(seed)
    train_idx = rng.choice(len(normals), size=n_train, replace=False)
    in_train = np.zeros(len(normals), dtype=bool)
    in_train[train_idx] = True

    train = [normals[i] for i in train_idx]
    held_out = [seq for seq, taken in zip(normals, in_train) if not taken]

    val_normals, test_normals = _split_holdout(held_out, rng)
    val_abnormals, test_abnormals = _split_holdout(list(abnormals), rng)

    split = DatasetSplit(
        train=train,
        val=val_normals + val_abnormals,
        test=test_normals + test_abnormals,
        seed=seed,
    )
    logger.info(f"Разбиение набора (seed={seed}): {split.counts()}")
    return split


def _split_holdout(items: List[EventSequence], rng: np.random.Generator) -> Tuple[List[EventSequence], List[EventSequence]]:
    """Перемешивает группу и отделяет floor(0.3 * n) элементов в валидацию"""
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    n_val = len(items) * VALIDATION_NUMERATOR // VALIDATION_DENOMINATOR
    return shuffled[:n_val], shuffled[n_val:]


def window_matrix(ids: np.ndarray, window: int) -> np.ndarray:
    """
    Все окна длины window в виде матрицы (число окон x длина окна)

    Если последовательность короче окна, возвращается одно окно - вся последовательность.
    """
    if window < 1:
        raise ValueError(f"Размер окна должен быть положительным, получено {window}")
    ids = np.asarray(ids)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("Ожидалась непустая одномерная последовательность")
    if ids.size < window:
        return ids[np.newaxis, :].copy()
    return sliding_window_view(ids, window).copy()


def windows(seq: Union[EventSequence, Sequence[int]], window: int) -> List[Tuple[int, ...]]:
    """
    Скользящие окна фиксированного размера

    N >= M: все N - M + 1 окон по порядку; N < M: одно окно, вся последовательность.
    """
    events = seq.events if isinstance(seq, EventSequence) else tuple(seq)
    matrix = window_matrix(np.asarray(events, dtype=np.int64), window)
    return [tuple(int(e) for e in row) for row in matrix]
