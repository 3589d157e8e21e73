"""
Модель OC4Seq: глобальная и локальная головы GRU над общим эмбеддингом,
центры гиперсфер, функции потерь и оценки аномальности
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from neural.gradient_check import grad_check
from neural.gru import backward, encoder_forward
from neural.params import EMBEDDING_NAME, Embedding, GRUParams, ModelDims, ParamStore, init_params
from sequences.data import EventSequence, EventVocab
from sequences.services import window_matrix

logger = logging.getLogger(__name__)

GLOBAL_HEAD = 'global'
LOCAL_HEAD = 'local'
AGGREGATIONS = ('max', 'mean')

# Координаты центра по модулю меньше порога сдвигаются до +-порога
CENTER_EPS = 1e-3


@dataclass
class TrainConfig:
    """
    Гиперпараметры обучения

    weight_decay - коэффициент lambda регуляризатора; alpha = 0 соответствует
    режиму только глобальной головы (DeepSVDD).
    """
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 100
    hidden_size: int = 64
    layers: int = 2
    embed_dim: int = 32
    window: int = 10
    alpha: float = 1.0
    weight_decay: float = 1e-4
    seed: int = 42
    aggregation: str = 'max'

    def __post_init__(self):
        for name in ('batch_size', 'epochs', 'hidden_size', 'layers', 'embed_dim', 'window'):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} должен быть положительным, получено {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError(f"Скорость обучения должна быть положительной, получено {self.lr}")
        if self.alpha < 0 or self.weight_decay < 0:
            raise ValueError("alpha и weight_decay не могут быть отрицательными")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"Неизвестная агрегация локальных оценок: {self.aggregation}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OC4SeqModel:
    """
    Эмбеддинг + глобальный GRU + локальный GRU + центры c и c_L

    Центры не обучаются: они вычисляются один раз по необученной модели.
    """
    config: TrainConfig
    vocab: EventVocab
    store: ParamStore
    center: Optional[np.ndarray] = None
    local_center: Optional[np.ndarray] = None

    @classmethod
    def initialize(cls, config: TrainConfig, vocab: EventVocab) -> 'OC4SeqModel':
        dims = ModelDims(
            vocab_size=vocab.size,
            embed_dim=config.embed_dim,
            hidden_size=config.hidden_size,
            num_layers=config.layers,
            heads=(GLOBAL_HEAD, LOCAL_HEAD),
        )
        return cls(config=config, vocab=vocab, store=init_params(dims, config.seed))

    @property
    def embedding(self) -> Embedding:
        return Embedding(self.store[EMBEDDING_NAME])

    @property
    def global_gru(self) -> GRUParams:
        return GRUParams.from_store(self.store, GLOBAL_HEAD, self.config.layers)

    @property
    def local_gru(self) -> GRUParams:
        return GRUParams.from_store(self.store, LOCAL_HEAD, self.config.layers)

    @property
    def global_param_names(self) -> List[str]:
        """Theta: эмбеддинг и глобальный GRU"""
        return [EMBEDDING_NAME] + self.store.names(f"{GLOBAL_HEAD}.")

    @property
    def local_param_names(self) -> List[str]:
        """Theta^L: локальный GRU"""
        return self.store.names(f"{LOCAL_HEAD}.")

    @property
    def centers_ready(self) -> bool:
        return self.center is not None and self.local_center is not None

    def require_centers(self) -> None:
        if not self.centers_ready:
            raise ValueError("Центры гиперсфер не инициализированы: вызовите init_centers")


def pad_batch(id_arrays: Sequence[np.ndarray]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Дополняет последовательности нулями до общей длины: ids (T, B) и маска (T, B)

    Маска не нужна (None), если все длины совпадают.
    """
    lengths = np.array([len(ids) for ids in id_arrays])
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("Батч пуст или содержит пустую последовательность")
    steps = int(lengths.max())
    ids = np.zeros((steps, len(id_arrays)), dtype=np.int64)
    for column, row in enumerate(id_arrays):
        ids[:len(row), column] = row
    if lengths.min() == steps:
        return ids, None
    mask = (np.arange(steps)[:, np.newaxis] < lengths[np.newaxis, :]).astype(np.float64)
    return ids, mask


def window_batch(id_arrays: Sequence[np.ndarray], window: int) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
    """
    Все окна всех последовательностей батча: ids (M, W), маска и номер
    последовательности-владельца для каждого окна
    """
    matrices = [window_matrix(ids, window) for ids in id_arrays]
    owner = np.concatenate([np.full(len(matrix), index) for index, matrix in enumerate(matrices)])
    rows = [row for matrix in matrices for row in matrix]
    ids, mask = pad_batch(rows)
    return ids, mask, owner


def center_from_representations(reps: np.ndarray, eps: float = CENTER_EPS) -> np.ndarray:
    """
    Среднее представлений с защитой от коллапса: |c_i| < eps -> +-eps (0 -> +eps)
    """
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[0] == 0:
        raise ValueError("Нужен хотя бы один вектор представления")
    center = reps.mean(axis=0)
    small = np.abs(center) < eps
    center[small] = np.where(center[small] < 0, -eps, eps)
    return center


def _encode(model: OC4SeqModel, batch: Sequence[EventSequence]) -> List[np.ndarray]:
    return [model.vocab.encode(seq.events) for seq in batch]


def global_representations(model: OC4SeqModel, sequences: Sequence[EventSequence],
                           batch_size: Optional[int] = None) -> np.ndarray:
    """Финальные состояния глобального GRU для каждой последовательности (n x h)"""
    if not sequences:
        raise ValueError("Нет последовательностей для вычисления представлений")
    size = batch_size or model.config.batch_size
    chunks = []
    for start in range(0, len(sequences), size):
        ids, mask = pad_batch(_encode(model, sequences[start:start + size]))
        final_h, _, _ = encoder_forward(model.embedding, model.global_gru, ids, mask)
        chunks.append(final_h)
    return np.vstack(chunks)


def local_representations(model: OC4SeqModel, sequences: Sequence[EventSequence],
                          batch_size: Optional[int] = None) -> np.ndarray:
    """Финальные состояния локального GRU для всех окон всех последовательностей"""
    if not sequences:
        raise ValueError("Нет последовательностей для вычисления представлений")
    size = batch_size or model.config.batch_size
    chunks = []
    for start in range(0, len(sequences), size):
        ids, mask, _ = window_batch(_encode(model, sequences[start:start + size]), model.config.window)
        final_h, _, _ = encoder_forward(model.embedding, model.local_gru, ids, mask)
        chunks.append(final_h)
    return np.vstack(chunks)


def init_centers(model: OC4SeqModel, train: Sequence[EventSequence]) -> Tuple[np.ndarray, np.ndarray]:
    """
    c - среднее глобальных представлений обучающих последовательностей,
    c_L - среднее представлений всех обучающих окон (модель еще не обучена)
    """
    if not train:
        raise ValueError("Нельзя инициализировать центры по пустой обучающей выборке")
    model.center = center_from_representations(global_representations(model, train))
    model.local_center = center_from_representations(local_representations(model, train))
    logger.info(
        f"Центры инициализированы по {len(train)} последовательностям: "
        f"||c|| = {np.linalg.norm(model.center):.4f}, ||c_L|| = {np.linalg.norm(model.local_center):.4f}"
    )
    return model.center, model.local_center


@dataclass
class LossBreakdown:
    global_loss: float
    local_loss: Optional[float]
    total: float


def compute_losses(model: OC4SeqModel, batch: Sequence[EventSequence], accumulate: bool = False,
                   include_local: Optional[bool] = None) -> LossBreakdown:
    """
    L_global = (1/B) sum ||h_N - c||^2 + lambda ||Theta||^2
    L_local  = (1/B) sum_i sum_j ||h^L_ij - c_L||^2 + lambda ||Theta^L||^2
    L        = L_global + alpha L_local

    При alpha = 0 локальная голова не вычисляется (если include_local не
    задан явно) и L совпадает с L_global. accumulate=True добавляет
    градиенты L в буферы хранилища.
    """
    model.require_centers()
    if not batch:
        raise ValueError("Пустой батч")
    cfg = model.config
    alpha, lam = cfg.alpha, cfg.weight_decay
    size = len(batch)
    if include_local is None:
        include_local = alpha != 0.0

    # Глобальная голова: финальные состояния последовательностей
    id_arrays = _encode(model, batch)
    embedding = model.embedding
    global_gru = model.global_gru

    ids, mask = pad_batch(id_arrays)
    final_h, _, global_cache = encoder_forward(embedding, global_gru, ids, mask)
    diff = final_h - model.center
    global_loss = float(np.sum(diff ** 2)) / size + lam * model.store.squared_norm(model.global_param_names)

    # Локальная голова: финальные состояния всех окон батча
    local_loss = None
    local_state = None
    if include_local:
        local_gru = model.local_gru
        window_ids, window_mask, _ = window_batch(id_arrays, cfg.window)
        local_h, _, local_cache = encoder_forward(embedding, local_gru, window_ids, window_mask)
        local_diff = local_h - model.local_center
        local_loss = float(np.sum(local_diff ** 2)) / size + lam * model.store.squared_norm(model.local_param_names)
        local_state = (local_gru, local_cache, local_diff)

    total = global_loss + alpha * local_loss if (local_loss is not None and alpha != 0.0) else global_loss

    # Градиенты: BPTT по обеим головам и регуляризатор
    if accumulate:
        store = model.store
        embedding_grad = store.grads[EMBEDDING_NAME]
        global_grads = GRUParams.grads_from_store(store, GLOBAL_HEAD, cfg.layers)
        backward(2.0 * diff / size, global_cache, global_gru, global_grads, embedding_grad)
        store.add_weight_decay(model.global_param_names, lam)
        if local_state is not None and alpha != 0.0:
            local_gru, local_cache, local_diff = local_state
            local_grads = GRUParams.grads_from_store(store, LOCAL_HEAD, cfg.layers)
            backward(alpha * 2.0 * local_diff / size, local_cache, local_gru, local_grads, embedding_grad)
            store.add_weight_decay(model.local_param_names, alpha * lam)

    return LossBreakdown(global_loss=global_loss, local_loss=local_loss, total=total)


def loss_global(model: OC4SeqModel, batch: Sequence[EventSequence]) -> float:
    return compute_losses(model, batch, include_local=False).global_loss


def loss_local(model: OC4SeqModel, batch: Sequence[EventSequence]) -> float:
    return compute_losses(model, batch, include_local=True).local_loss


def loss_total(model: OC4SeqModel, batch: Sequence[EventSequence]) -> float:
    return compute_losses(model, batch).total


def check_gradients(model: OC4SeqModel, batch: Sequence[EventSequence], delta: float = 1e-4) -> float:
    """
    Сверяет аналитический градиент L с конечными разностями по всем
    параметрам, включая эмбеддинг; возвращает максимальную относительную ошибку
    """
    if delta <= 0:
        raise ValueError(f"Шаг конечных разностей должен быть положительным, получено {delta}")
    store = model.store
    store.zero_grad()
    compute_losses(model, batch, accumulate=True)
    analytic = {name: grad.copy() for name, grad in store.grads.items()}
    store.zero_grad()
    return grad_check(store, lambda: compute_losses(model, batch).total, analytic, delta)


@dataclass
class ScoreReport:
    """
    Оценки аномальности последовательности: глобальная, по каждому окну и итоговая
    """
    sequence_id: str
    global_score: float
    local_scores: List[float] = field(default_factory=list)
    combined: float = 0.0
    label: Optional[str] = None

    @property
    def local_max(self) -> float:
        return max(self.local_scores) if self.local_scores else 0.0


def combine_scores(global_score: float, local_scores: Sequence[float], alpha: float, aggregation: str = 'max') -> float:
    """combined = global + alpha * max (или mean) по окнам"""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"Неизвестная агрегация: {aggregation}")
    if alpha == 0.0 or not len(local_scores):
        return float(global_score)
    local = max(local_scores) if aggregation == 'max' else float(np.mean(local_scores))
    return float(global_score + alpha * local)


def score(model: OC4SeqModel, seq: EventSequence) -> ScoreReport:
    """
    Оценивает одну последовательность; результат зависит только от
    параметров модели и самой последовательности
    """
    model.require_centers()
    if not seq.events:
        raise ValueError(f"Последовательность {seq.id} пуста")
    ids = model.vocab.encode(seq.events)

    final_h, _, _ = encoder_forward(model.embedding, model.global_gru, ids)
    global_score = float(np.sum((final_h - model.center) ** 2))

    window_ids = window_matrix(ids, model.config.window).T
    local_h, _, _ = encoder_forward(model.embedding, model.local_gru, window_ids)
    local_scores = [float(value) for value in np.sum((local_h - model.local_center) ** 2, axis=1)]

    return ScoreReport(
        sequence_id=seq.id,
        global_score=global_score,
        local_scores=local_scores,
        combined=combine_scores(global_score, local_scores, model.config.alpha, model.config.aggregation),
        label=seq.label,
    )


def score_many(model: OC4SeqModel, sequences: Sequence[EventSequence]) -> List[ScoreReport]:
    return [score(model, seq) for seq in sequences]
