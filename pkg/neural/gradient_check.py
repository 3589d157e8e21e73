"""
Проверка аналитических градиентов центральными конечными разностями
"""
import logging
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from .params import ParamStore

logger = logging.getLogger(__name__)

RELATIVE_ERROR_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1e-8, |a| + |n|)"""
    return np.abs(analytic - numeric) / np.maximum(RELATIVE_ERROR_FLOOR, np.abs(analytic) + np.abs(numeric))


def grad_check(store: ParamStore, loss_fn: Callable[[], float],
               analytic_grads: Dict[str, np.ndarray], delta: float = 1e-4,
               names: Optional[Iterable[str]] = None) -> float:
    """
    Максимальная относительная ошибка аналитического градиента

    Для каждой координаты: (L(theta + delta) - L(theta - delta)) / (2 delta).
    loss_fn вычисляет потерю по текущим параметрам хранилища.
    """
    if delta <= 0:
        raise ValueError(f"Шаг конечных разностей должен быть положительным, получено {delta}")

    worst = 0.0
    worst_name = None
    for name in (names if names is not None else store.names()):
        param = store.params[name]
        numeric = np.zeros_like(param)
        flat = param.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + delta
            loss_plus = loss_fn()
            flat[index] = original - delta
            loss_minus = loss_fn()
            flat[index] = original
            numeric.reshape(-1)[index] = (loss_plus - loss_minus) / (2.0 * delta)

        error = float(np.max(relative_error(analytic_grads[name], numeric), initial=0.0))
        if error > worst:
            worst, worst_name = error, name

    logger.debug(f"Проверка градиентов: максимальная относительная ошибка {worst:.3e} ({worst_name})")
    return worst
