"""
Модель данных: словарь событий, последовательности и разбиение набора
"""
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Tuple

import numpy as np

NORMAL = 'normal'
ABNORMAL = 'abnormal'

LABEL_CHOICES = [
    (NORMAL, 'Нормальная'),
    (ABNORMAL, 'Аномальная'),
]

# Зарезервированный идентификатор для событий, не встречавшихся при обучении
UNK_ID = 0


@dataclass(frozen=True)
class EventSequence:
    """
    Упорядоченная последовательность идентификаторов событий с меткой
    """
    id: str
    events: Tuple[int, ...]
    label: str = NORMAL

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(int(e) for e in self.events))
        if not self.events:
            raise ValueError(f"Последовательность {self.id} не содержит событий")
        if min(self.events) < 0:
            raise ValueError(f"Последовательность {self.id} содержит отрицательный идентификатор события")
        if self.label not in (NORMAL, ABNORMAL):
            raise ValueError(f"Неизвестная метка последовательности: {self.label}")

    @property
    def length(self) -> int:
        return len(self.events)

    @property
    def is_abnormal(self) -> bool:
        return self.label == ABNORMAL

    def as_array(self) -> np.ndarray:
        return np.asarray(self.events, dtype=np.int64)


@dataclass(frozen=True)
class EventVocab:
    """
    Словарь событий, построенный по обучающей выборке

    size = |E|; идентификатор 0 зарезервирован под UNK.
    """
    size: int
    known: FrozenSet[int] = field(default_factory=frozenset)
    _known_ids: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"Размер словаря должен быть не меньше 2, получено {self.size}")
        known = frozenset(int(e) for e in self.known)
        object.__setattr__(self, 'known', known)
        object.__setattr__(self, '_known_ids', np.array(sorted(known), dtype=np.int64))

    def encode(self, events: Iterable[int]) -> np.ndarray:
        """
        Переводит события в индексы эмбеддинга: всё, что не встречалось
        при обучении или выходит за пределы словаря, становится UNK
        """
        ids = np.asarray(list(events), dtype=np.int64)
        in_range = (ids > 0) & (ids < self.size)
        if self.known:
            in_range &= np.isin(ids, self._known_ids)
        return np.where(in_range, ids, UNK_ID)


@dataclass
class DatasetSplit:
    """
    Разбиение на обучающую (только нормальные), валидационную и тестовую части
    """
    train: List[EventSequence]
    val: List[EventSequence]
    test: List[EventSequence]
    seed: int

    def __post_init__(self):
        abnormal_in_train = [seq.id for seq in self.train if seq.is_abnormal]
        if abnormal_in_train:
            raise ValueError(
                f"Обучающая выборка содержит аномальные последовательности: {abnormal_in_train[:5]}"
            )

    def counts(self) -> dict:
        """Сводка размеров частей разбиения"""
        def _count(part):
            abnormal = sum(1 for seq in part if seq.is_abnormal)
            return {'total': len(part), NORMAL: len(part) - abnormal, ABNORMAL: abnormal}

        return {'train': _count(self.train), 'val': _count(self.val), 'test': _count(self.test)}
