"""
Сервисы для генерации синтетических корпусов на основе цепей Маркова
с внедренными локальными и глобальными аномалиями
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sequences.data import ABNORMAL, NORMAL, EventSequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainSpec:
    """
    Параметры цепи Маркова нормального поведения

    События нумеруются 1..K (0 зарезервирован под UNK). Из каждого состояния
    разрешено ровно out_degree переходов с равными вероятностями. transitions
    позволяет задать списки преемников явно (по одному списку на событие 1..K).
    """
    num_events: int
    out_degree: int
    seed: int = 0
    length_range: Tuple[int, int] = (40, 60)
    transitions: Optional[Tuple[Tuple[int, ...], ...]] = field(default=None)

    def __post_init__(self):
        if self.num_events < 2:
            raise ValueError(f"Цепь должна содержать не меньше 2 событий, получено K={self.num_events}")
        if self.out_degree < 1:
            raise ValueError(f"out_degree должен быть положительным, получено {self.out_degree}")
        if self.out_degree > self.num_events:
            raise ValueError(f"out_degree ({self.out_degree}) не может превышать K ({self.num_events})")
        min_len, max_len = self.length_range
        if min_len < 1 or max_len < min_len:
            raise ValueError(f"Некорректный диапазон длин: {self.length_range}")
        if self.transitions is not None:
            transitions = tuple(tuple(int(e) for e in row) for row in self.transitions)
            if len(transitions) != self.num_events:
                raise ValueError("transitions должен содержать по списку преемников на каждое событие")
            for row in transitions:
                if len(set(row)) != self.out_degree or not all(1 <= e <= self.num_events for e in row):
                    raise ValueError(f"Некорректный список преемников: {row}")
            object.__setattr__(self, 'transitions', transitions)


def build_transition_matrix(spec: ChainSpec) -> np.ndarray:
    """
    Матрица переходов K x K (строка i - событие i + 1)

    Каждая строка содержит ровно out_degree ненулевых элементов и в сумме дает 1.
    """
    k = spec.num_events
    matrix = np.zeros((k, k), dtype=np.float64)
    if spec.transitions is not None:
        for state, successors in enumerate(spec.transitions):
            matrix[state, [e - 1 for e in successors]] = 1.0 / spec.out_degree
        return matrix

    rng = np.random.default_rng([spec.seed, 0])
    for state in range(k):
        successors = rng.choice(k, size=spec.out_degree, replace=False)
        matrix[state, successors] = 1.0 / spec.out_degree
    return matrix


def transition_probability(matrix: np.ndarray, prev_event: int, next_event: int) -> float:
    return float(matrix[prev_event - 1, next_event - 1])


def zero_probability_bigrams(matrix: np.ndarray, events: Sequence[int]) -> List[int]:
    """Позиции j, для которых переход events[j-1] -> events[j] невозможен в цепи"""
    return [
        j for j in range(1, len(events))
        if transition_probability(matrix, events[j - 1], events[j]) == 0.0
    ]


def is_valid_path(matrix: np.ndarray, events: Sequence[int]) -> bool:
    return not zero_probability_bigrams(matrix, events)


class SyntheticCorpusService:
    """
    Сервис для генерации нормальных последовательностей и внедрения аномалий
    """

    def __init__(self, spec: ChainSpec):
        self.spec = spec
        self.matrix = build_transition_matrix(spec)

    def gen_normal(self, count: int) -> List[EventSequence]:
        """
        Сэмплирует count последовательностей из цепи; детерминировано при заданном seed
        """
        if count < 1:
            raise ValueError(f"Число последовательностей должно быть положительным, получено {count}")

        rng = np.random.default_rng([self.spec.seed, 1])
        min_len, max_len = self.spec.length_range
        k = self.spec.num_events
        cumulative = np.cumsum(self.matrix, axis=1)

        sequences = []
        for index in range(count):
            length = int(rng.integers(min_len, max_len + 1))
            state = int(rng.integers(k))
            events = [state + 1]
            draws = rng.random(length - 1)
            for u in draws:
                state = int(np.searchsorted(cumulative[state], u * cumulative[state, -1], side='right'))
                state = min(state, k - 1)
                events.append(state + 1)
            sequences.append(EventSequence(id=f"synthetic:{index + 1}", events=tuple(events), label=NORMAL))

        logger.info(
            f"Сгенерировано {count} нормальных последовательностей "
            f"(K={k}, out_degree={self.spec.out_degree}, seed={self.spec.seed})"
        )
        return sequences

    def inject_local_anomaly(self, seq: EventSequence, span: int, seed: int, spans: int = 1) -> EventSequence:
        """
        Заменяет непрерывный участок длины min(span, N) событиями, переход
        в которые невозможен в цепи; длина последовательности сохраняется
        """
        if span < 1:
            raise ValueError(f"Длина участка должна быть положительной, получено {span}")
        if spans < 1:
            raise ValueError(f"Число участков должно быть положительным, получено {spans}")

        rng = np.random.default_rng(seed)
        events = list(seq.events)
        n = len(events)
        width = min(span, n)
        all_events = np.arange(1, self.spec.num_events + 1)

        for _ in range(spans):
            start = int(rng.integers(0, n - width + 1))
            for position in range(start, start + width):
                original = events[position]
                if position == 0:
                    candidates = all_events[all_events != original]
                else:
                    row = self.matrix[events[position - 1] - 1]
                    candidates = all_events[(row == 0.0) & (all_events != original)]
                    if candidates.size == 0:
                        logger.warning(
                            f"Из события {events[position - 1]} нет невозможных переходов, "
                            f"замена в позиции {position} выбирается случайно"
                        )
                        candidates = all_events[all_events != original]
                events[position] = int(rng.choice(candidates))

        return EventSequence(id=f"{seq.id}:local", events=tuple(events), label=ABNORMAL)

    def inject_global_permutation(self, seq: EventSequence, seed: int) -> EventSequence:
        """
        Случайно переставляет события: мультимножество (и профиль счетчиков)
        сохраняется, порядок - нет
        """
        return inject_global_permutation(seq, seed)


def inject_global_permutation(seq: EventSequence, seed: int) -> EventSequence:
    if seq.length < 2:
        raise ValueError(f"Перестановка требует длины не меньше 2, получено {seq.length}")
    rng = np.random.default_rng(seed)
    permuted = rng.permutation(np.asarray(seq.events, dtype=np.int64))
    return EventSequence(id=f"{seq.id}:perm", events=tuple(int(e) for e in permuted), label=ABNORMAL)


def gen_normal(spec: ChainSpec, count: int) -> List[EventSequence]:
    return SyntheticCorpusService(spec).gen_normal(count)


def inject_local_anomaly(spec: ChainSpec, seq: EventSequence, span: int, seed: int, spans: int = 1) -> EventSequence:
    return SyntheticCorpusService(spec).inject_local_anomaly(seq, span, seed, spans=spans)
