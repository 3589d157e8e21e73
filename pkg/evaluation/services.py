"""
Метрики качества детектора: precision/recall/F1, PR-кривая, средняя
точность (AP) и двумерная проекция представлений
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sequences.data import ABNORMAL, NORMAL

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """Матрица ошибок и метрики; аномальный класс - положительный"""
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    threshold: Optional[float] = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return asdict(self)


def _is_positive(labels: Sequence) -> np.ndarray:
    """Метки: 'abnormal'/'normal' или булевы значения (True - аномалия)"""
    result = []
    for label in labels:
        if isinstance(label, str):
            if label not in (NORMAL, ABNORMAL):
                raise ValueError(f"Неизвестная метка: {label}")
            result.append(label == ABNORMAL)
        else:
            result.append(bool(label))
    return np.array(result, dtype=bool)


def f1_from_precision_recall(precision: float, recall: float) -> float:
    """F1 = 2PR / (P + R); 0, если P + R = 0"""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf(preds: Sequence, truth: Sequence, threshold: Optional[float] = None) -> EvalReport:
    """
    Precision, recall и F1 предсказаний относительно истинных меток

    Нет предсказанных аномалий - precision = 0; нет аномалий в разметке - ошибка.
    """
    if len(preds) != len(truth):
        raise ValueError(f"Длины предсказаний ({len(preds)}) и разметки ({len(truth)}) не совпадают")
    predicted = _is_positive(preds)
    actual = _is_positive(truth)

    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    if tp + fn == 0:
        raise ValueError("В разметке нет аномальных последовательностей: recall не определен")

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)
    return EvalReport(
        tp=tp, fp=fp, fn=fn, tn=tn,
        precision=precision, recall=recall,
        f1=f1_from_precision_recall(precision, recall),
        threshold=threshold,
    )


def evaluate_at_threshold(scores: Sequence[float], truth: Sequence, threshold: float) -> EvalReport:
    """Предсказание "score > threshold => аномалия" и его метрики"""
    preds = [float(value) > threshold for value in scores]
    return prf(preds, truth, threshold=threshold)


@dataclass
class PRCurve:
    """
    Точки кривой по всем различным порогам (по возрастанию порога)
    и средняя точность
    """
    thresholds: List[float] = field(default_factory=list)
    precisions: List[float] = field(default_factory=list)
    recalls: List[float] = field(default_factory=list)
    average_precision: float = 0.0

    @property
    def points(self) -> List[Tuple[float, float]]:
        """(recall, precision) для каждого порога"""
        return list(zip(self.recalls, self.precisions))


def pr_curve(scores: Sequence[float], truth: Sequence) -> PRCurve:
    """
    Перебор порогов s по всем различным оценкам ("score >= s => аномалия");
    AP = sum_k (R_k - R_{k-1}) P_k по точкам, упорядоченным по полноте
    """
    values = np.asarray(scores, dtype=np.float64)
    actual = _is_positive(truth)
    if values.shape[0] != actual.shape[0]:
        raise ValueError(f"Длины оценок ({values.shape[0]}) и разметки ({actual.shape[0]}) не совпадают")
    positives = int(actual.sum())
    if positives == 0 or positives == actual.size:
        raise ValueError("Для PR-кривой нужны и нормальные, и аномальные последовательности")

    # Сортировка по убыванию: порог на k-й различной оценке захватывает префикс
    order = np.argsort(-values, kind='mergesort')
    sorted_values = values[order]
    tp_cumulative = np.cumsum(actual[order])
    last_of_group = np.r_[np.flatnonzero(np.diff(sorted_values) != 0), values.size - 1]

    tp = tp_cumulative[last_of_group].astype(np.float64)
    predicted = (last_of_group + 1).astype(np.float64)
    precisions = tp / predicted
    recalls = tp / positives
    previous = np.r_[0.0, recalls[:-1]]
    average_precision = float(np.sum((recalls - previous) * precisions))

    curve = PRCurve(
        thresholds=[float(value) for value in sorted_values[last_of_group][::-1]],
        precisions=[float(value) for value in precisions[::-1]],
        recalls=[float(value) for value in recalls[::-1]],
        average_precision=average_precision,
    )
    logger.debug(f"PR-кривая: {len(curve.thresholds)} порогов, AP = {average_precision:.6f}")
    return curve


def project_2d(reps: Sequence[Sequence[float]], labels: Sequence[str]) -> List[Tuple[float, float, str]]:
    """
    Проекция центрированных представлений на две главные компоненты (SVD)
    """
    matrix = np.asarray(reps, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 3:
        raise ValueError("Для проекции нужно как минимум 3 вектора")
    if len(labels) != matrix.shape[0]:
        raise ValueError("Число меток не совпадает с числом векторов")

    centered = matrix - matrix.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    directions = np.zeros((matrix.shape[1], 2))
    available = min(2, vt.shape[0])
    directions[:, :available] = vt[:available].T
    coords = centered @ directions
    return [(float(x), float(y), str(label)) for (x, y), label in zip(coords, labels)]
