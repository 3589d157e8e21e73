"""
Задачи Celery для перебора гиперпараметров
"""
import logging

from celery import shared_task

from .services import ExperimentService

logger = logging.getLogger(__name__)


@shared_task(name='experiments.train_grid_point')
def train_grid_point(config: dict, alpha: float, layers: int) -> dict:
    """
    Обучает модель для одной точки сетки (alpha, layers) и возвращает AP на
    валидации; зерно берется из конфигурации, поэтому результат не зависит
    от того, на каком воркере выполнена задача
    """
    logger.info(f"Задача перебора: alpha={alpha}, layers={layers}")
    return ExperimentService(config).evaluate_grid_point(float(alpha), int(layers))
