"""
Хранилище параметров, эмбеддинг и инициализация весов
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

GATE_NAMES = ('W_z', 'W_r', 'W', 'U_z', 'U_r', 'U')
EMBEDDING_NAME = 'embedding'
# Неотрицательный эмбеддинг дает общую для всех событий составляющую входа:
# центр необученной модели лежит далеко от 0 по сравнению с разбросом представлений
EMBEDDING_INIT_RANGE = (0.0, 1.0)


class ParamStore:
    """
    Именованные матрицы параметров с буферами градиентов той же формы

    Оптимизатор обновляет параметры на месте, поэтому представления
    (Embedding, GRUParams) остаются связанными с хранилищем.
    """

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ValueError(f"Параметр {name} уже зарегистрирован")
        array = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise ValueError(f"Параметр {name} содержит NaN/Inf")
        self.params[name] = array
        self.grads[name] = np.zeros_like(array)
        return array

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: str = '') -> List[str]:
        return [name for name in self.params if name.startswith(prefix)]

    def grad(self, name: str) -> np.ndarray:
        return self.grads[name]

    def zero_grad(self) -> None:
        for grad in self.grads.values():
            grad.fill(0.0)

    def num_parameters(self) -> int:
        return sum(value.size for value in self.params.values())

    def squared_norm(self, names: List[str]) -> float:
        """Сумма квадратов норм Фробениуса выбранных параметров"""
        return float(sum(np.sum(self.params[name] ** 2) for name in names))

    def add_weight_decay(self, names: List[str], coefficient: float) -> None:
        """Добавляет к градиентам вклад регуляризатора coefficient * ||theta||^2"""
        if coefficient == 0.0:
            return
        for name in names:
            self.grads[name] += 2.0 * coefficient * self.params[name]

    def grads_are_finite(self) -> bool:
        return all(np.all(np.isfinite(grad)) for grad in self.grads.values())


@dataclass
class Embedding:
    """
    Матрица эмбеддинга E (d_e x |E|); x_t = E^T e_t - столбец E
    """
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[1]


@dataclass
class GRULayer:
    """Веса одного слоя GRU без смещений"""
    W_z: np.ndarray
    W_r: np.ndarray
    W: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U: np.ndarray

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]


@dataclass
class GRUParams:
    """Стек слоев GRU; слой 1 принимает d_e, следующие - h"""
    layers: List[GRULayer]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_size(self) -> int:
        return self.layers[0].hidden_size

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], prefix: str, num_layers: int) -> 'GRUParams':
        return cls(layers=[
            GRULayer(**{gate: arrays[gru_param_name(prefix, index, gate)] for gate in GATE_NAMES})
            for index in range(num_layers)
        ])

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, num_layers: int) -> 'GRUParams':
        return cls.from_arrays(store.params, prefix, num_layers)

    @classmethod
    def grads_from_store(cls, store: ParamStore, prefix: str, num_layers: int) -> 'GRUParams':
        return cls.from_arrays(store.grads, prefix, num_layers)


def gru_param_name(prefix: str, layer: int, gate: str) -> str:
    return f"{prefix}.{layer}.{gate}"


@dataclass(frozen=True)
class ModelDims:
    """Размерности модели: словарь, эмбеддинг, скрытое состояние, число слоев и головы"""
    vocab_size: int
    embed_dim: int
    hidden_size: int
    num_layers: int
    heads: Tuple[str, ...] = ('global', 'local')


def gru_bound(fan_in: int) -> float:
    """Граница U(-b, b) с дисперсией 1/fan_in: дисперсия предактиваций не затухает по слоям"""
    return float(np.sqrt(3.0 / fan_in))


def init_params(dims: ModelDims, seed: int, store: Optional[ParamStore] = None) -> ParamStore:
    """
    Инициализация параметров

    Веса GRU ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)), где fan_in - число столбцов
    матрицы (d_e или h для W_*, h для U_*); эмбеддинг ~ U(0, 1).
    Детерминировано при заданном seed.
    """
    for value, label in ((dims.vocab_size, 'vocab_size'), (dims.embed_dim, 'embed_dim'),
                         (dims.hidden_size, 'hidden_size'), (dims.num_layers, 'num_layers')):
        if value < 1:
            raise ValueError(f"{label} должен быть положительным, получено {value}")

    store = store if store is not None else ParamStore()
    rng = np.random.default_rng(seed)

    low, high = EMBEDDING_INIT_RANGE
    store.add(EMBEDDING_NAME, rng.uniform(low, high, size=(dims.embed_dim, dims.vocab_size)))
    for head in dims.heads:
        for layer in range(dims.num_layers):
            input_size = dims.embed_dim if layer == 0 else dims.hidden_size
            for gate in GATE_NAMES:
                cols = input_size if gate.startswith('W') else dims.hidden_size
                bound = gru_bound(cols)
                store.add(gru_param_name(head, layer, gate),
                          rng.uniform(-bound, bound, size=(dims.hidden_size, cols)))

    logger.debug(f"Инициализировано {store.num_parameters()} параметров (seed={seed})")
    return store
