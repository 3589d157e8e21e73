"""
Сервисы обучения детектора OC4Seq и выбора порога
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from django.utils import timezone

from neural.exceptions import NumericalError
from neural.optim import AdamState, adam_step
from sequences.data import ABNORMAL, DatasetSplit
from sequences.exceptions import SequenceDataError
from sequences.services import build_vocab
from .detector import OC4SeqModel, TrainConfig, compute_losses, init_centers

logger = logging.getLogger(__name__)

# Поток перемешивания эпох отделен от потока инициализации весов
SHUFFLE_STREAM = 1


class DetectorTrainingService:
    """
    Сервис обучения OC4Seq: инициализация, центры, эпохи Adam по мини-батчам

    Обучение длится ровно config.epochs эпох; история потерь - средняя по
    эпохе потеря, взвешенная размером батча.
    """

    def __init__(self, config: TrainConfig):
        self.config = config

    def train(self, dataset: DatasetSplit) -> Tuple[OC4SeqModel, List[float]]:
        cfg = self.config
        train = list(dataset.train)
        if not train:
            raise SequenceDataError("Обучающая выборка пуста")
        if any(seq.is_abnormal for seq in train):
            raise SequenceDataError("Обучающая выборка должна содержать только нормальные последовательности")

        start_time = timezone.now()
        logger.info(
            f"Начинаем обучение: {len(train)} последовательностей, эпох {cfg.epochs}, "
            f"h={cfg.hidden_size}, L={cfg.layers}, M={cfg.window}, alpha={cfg.alpha}"
        )

        # Модель и центры по необученной сети
        model = OC4SeqModel.initialize(cfg, build_vocab(train))
        init_centers(model, train)
        state = AdamState.for_store(model.store)
        rng = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])

        # Эпохи: перемешивание, батчи, шаг Adam
        loss_history = []
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(train))
            weighted = 0.0
            for batch_index, start in enumerate(range(0, len(train), cfg.batch_size)):
                batch = [train[i] for i in order[start:start + cfg.batch_size]]
                losses = compute_losses(model, batch, accumulate=True)
                if not np.isfinite(losses.total) or not model.store.grads_are_finite():
                    logger.error(f"Нечисловое значение потери или градиента: эпоха {epoch}, батч {batch_index}")
                    raise NumericalError(f"NaN/Inf в потере или градиенте (эпоха {epoch}, батч {batch_index})")
                adam_step(model.store, state, cfg.lr)
                weighted += losses.total * len(batch)

            epoch_loss = weighted / len(train)
            loss_history.append(epoch_loss)
            logger.info(f"Эпоха {epoch}/{cfg.epochs}: потеря {epoch_loss:.6f}")

        processing_time = (timezone.now() - start_time).total_seconds()
        logger.info(f"Обучение завершено за {processing_time:.2f} секунд")
        return model, loss_history


def train(dataset: DatasetSplit, cfg: TrainConfig) -> Tuple[OC4SeqModel, List[float]]:
    return DetectorTrainingService(cfg).train(dataset)


def f1_score(tp: int, fp: int, fn: int) -> float:
    denominator = 2 * tp + fp + fn
    return 2.0 * tp / denominator if denominator else 0.0


def threshold_candidates(values: np.ndarray) -> np.ndarray:
    """-inf, середины между соседними различными оценками, +inf"""
    distinct = np.unique(values)
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([-np.inf], midpoints, [np.inf]))


def choose_threshold(scores: Sequence[Tuple[float, str]]) -> float:
    """
    Порог tau, максимизирующий F1 при правиле "score > tau => аномалия"

    При равных F1 берется меньший tau (выше полнота).
    """
    if not scores:
        raise ValueError("Нет оценок для выбора порога")
    values = np.array([float(value) for value, _ in scores])
    positive = np.array([label == ABNORMAL for _, label in scores])
    if positive.all() or not positive.any():
        raise ValueError("Для выбора порога нужны и нормальные, и аномальные последовательности")

    best_tau: Optional[float] = None
    best_f1 = -1.0
    for tau in threshold_candidates(values):
        predicted = values > tau
        tp = int(np.sum(predicted & positive))
        fp = int(np.sum(predicted & ~positive))
        fn = int(np.sum(~predicted & positive))
        f1 = f1_score(tp, fp, fn)
        if f1 > best_f1:
            best_tau, best_f1 = float(tau), f1

    logger.info(f"Выбран порог {best_tau:.6g} (F1 на валидации {best_f1:.4f})")
    return best_tau
