"""
Базовый детектор: PCA по матрице счетчиков событий (не учитывает порядок)
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from detection.checkpoint import CHECKPOINT_VERSION, CheckpointError, decode_array, encode_array, read_checkpoint_payload
from oc4seq_project.storage import atomic_write_json
from sequences.data import UNK_ID, EventSequence
from sequences.exceptions import SequenceDataError

logger = logging.getLogger(__name__)

PCA_FORMAT = 'oc4seq-pca'
RETAINED_VARIANCE = 0.95


def count_matrix(sequences: Sequence[EventSequence], vocab_size: int) -> np.ndarray:
    """
    Матрица счетчиков: строка - последовательность, столбец - событие

    События вне словаря считаются как UNK (столбец 0).
    """
    if vocab_size < 1:
        raise ValueError(f"Размер словаря должен быть положительным, получено {vocab_size}")
    counts = np.zeros((len(sequences), vocab_size), dtype=np.float64)
    for row, seq in enumerate(sequences):
        ids = seq.as_array()
        ids = np.where(ids < vocab_size, ids, UNK_ID)
        counts[row] = np.bincount(ids, minlength=vocab_size)
    return counts


@dataclass
class PCAModel:
    """
    Среднее обучающих счетчиков и ортонормированный базис P (|E| x k)
    нормального подпространства
    """
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: float = 1.0

    @property
    def vocab_size(self) -> int:
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def centered(self, counts: np.ndarray) -> np.ndarray:
        counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
        if counts.shape[1] != self.vocab_size:
            raise ValueError(f"Ожидалось {self.vocab_size} столбцов счетчиков, получено {counts.shape[1]}")
        return counts - self.mean

    def energies(self, counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        (энергия проекции ||P P^T y||^2, остаточная энергия ||y - P P^T y||^2) по строкам
        """
        y = self.centered(counts)
        projected = (y @ self.components) @ self.components.T
        residual = y - projected
        return np.sum(projected ** 2, axis=1), np.sum(residual ** 2, axis=1)

    def residual_scores(self, counts: np.ndarray) -> np.ndarray:
        return self.energies(counts)[1]


def fit_pca(counts: np.ndarray, retained_variance: float = RETAINED_VARIANCE) -> PCAModel:
    """
    Центрирует строки и берет наименьшее k главных направлений (SVD), при
    котором доля объясненной дисперсии >= retained_variance

    Нулевая дисперсия: k = 1, направление - первый базисный вектор.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 2:
        raise SequenceDataError("Для PCA нужно как минимум 2 обучающие последовательности")
    if not 0.0 < retained_variance <= 1.0:
        raise ValueError(f"Доля дисперсии должна быть в (0, 1], получено {retained_variance}")

    mean = counts.mean(axis=0)
    _, singular_values, vt = np.linalg.svd(counts - mean, full_matrices=False)
    variance = singular_values ** 2
    total = variance.sum()

    if total <= 0.0:
        components = np.zeros((counts.shape[1], 1))
        components[0, 0] = 1.0
        logger.warning("Обучающие счетчики не имеют разброса: используется одно произвольное направление")
        return PCAModel(mean=mean, components=components, explained_variance_ratio=1.0)

    cumulative = np.cumsum(variance) / total
    # Допуск на округление: ровно 0.95 не должно превращаться в k + 1
    k = int(np.searchsorted(cumulative, retained_variance - 1e-12) + 1)
    k = min(k, vt.shape[0])
    model = PCAModel(mean=mean, components=vt[:k].T.copy(), explained_variance_ratio=float(cumulative[k - 1]))
    logger.info(
        f"PCA обучен: {counts.shape[0]} строк, |E| = {counts.shape[1]}, k = {k}, "
        f"объясненная дисперсия {model.explained_variance_ratio:.4f}"
    )
    return model


def pca_score(model: PCAModel, seq: EventSequence) -> float:
    """||y - P P^T y||^2 для центрированного вектора счетчиков последовательности"""
    return float(model.residual_scores(count_matrix([seq], model.vocab_size))[0])


def pca_score_many(model: PCAModel, sequences: Sequence[EventSequence]) -> List[float]:
    if not sequences:
        return []
    return [float(value) for value in model.residual_scores(count_matrix(sequences, model.vocab_size))]


def save_pca_model(model: PCAModel, path: Union[str, Path]) -> Path:
    payload = {
        'format': PCA_FORMAT,
        'version': CHECKPOINT_VERSION,
        'config': {'vocab_size': model.vocab_size, 'explained_variance_ratio': model.explained_variance_ratio},
        'params': {'mean': encode_array(model.mean), 'components': encode_array(model.components)},
    }
    target = atomic_write_json(path, payload, indent=None)
    logger.info(f"PCA модель сохранена: {target} (k = {model.n_components})")
    return target


def load_pca_model(path: Union[str, Path]) -> PCAModel:
    payload = read_checkpoint_payload(path, PCA_FORMAT)
    try:
        params = payload['params']
        model = PCAModel(
            mean=decode_array(params['mean'], 'mean'),
            components=decode_array(params['components'], 'components'),
            explained_variance_ratio=float(payload['config']['explained_variance_ratio']),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Поврежденная PCA модель {path}: {e}") from e
    if model.components.ndim != 2 or model.components.shape[0] != model.vocab_size:
        raise CheckpointError(f"Размерности PCA модели {path} не согласованы")
    return model
