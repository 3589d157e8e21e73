"""
Сохранение и загрузка обученной модели OC4Seq (JSON)
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from neural.params import ParamStore
from oc4seq_project.storage import atomic_write_json
from sequences.data import EventVocab
from sequences.exceptions import SequenceDataError
from .detector import OC4SeqModel, TrainConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'oc4seq-ckpt'
CHECKPOINT_VERSION = 1


class CheckpointError(SequenceDataError):
    """Файл чекпоинта отсутствует, поврежден или другого формата"""


def encode_array(array: np.ndarray) -> list:
    """[форма, значения]; repr float в Python восстанавливает float64 без потерь"""
    return [list(array.shape), [float(value) for value in np.ravel(array)]]


def decode_array(payload: Any, name: str) -> np.ndarray:
    try:
        shape, values = payload
        return np.array(values, dtype=np.float64).reshape([int(size) for size in shape])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"Некорректный массив {name} в чекпоинте: {e}") from e


def read_checkpoint_payload(path: Union[str, Path], expected_format: str) -> Dict[str, Any]:
    """Читает JSON чекпоинта и проверяет формат и версию"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Чекпоинт не найден: {path}")
    try:
        payload = json.loads(path.read_text(encoding='utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Чекпоинт {path} не является корректным JSON: {e}") from e
    if not isinstance(payload, dict) or payload.get('format') != expected_format:
        raise CheckpointError(f"Файл {path} не является чекпоинтом формата {expected_format}")
    if payload.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f"Неподдерживаемая версия чекпоинта: {payload.get('version')}")
    return payload


def save_checkpoint(model: OC4SeqModel, path: Union[str, Path]) -> Path:
    model.require_centers()
    config = model.config.to_dict()
    config['vocab_size'] = model.vocab.size
    config['known_events'] = sorted(model.vocab.known)
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'config': config,
        'centers': {
            'c': [float(value) for value in model.center],
            'c_L': [float(value) for value in model.local_center],
        },
        'params': {name: encode_array(value) for name, value in model.store.params.items()},
    }
    target = atomic_write_json(path, payload, indent=None)
    logger.info(f"Чекпоинт сохранен: {target} ({model.store.num_parameters()} параметров)")
    return target


def load_checkpoint(path: Union[str, Path]) -> OC4SeqModel:
    payload = read_checkpoint_payload(path, CHECKPOINT_FORMAT)
    try:
        config = dict(payload['config'])
        vocab = EventVocab(size=int(config.pop('vocab_size')), known=frozenset(config.pop('known_events')))
        train_config = TrainConfig(**config)
        store = ParamStore()
        for name, array in payload['params'].items():
            store.add(name, decode_array(array, name))
        centers = payload['centers']
        center = np.array(centers['c'], dtype=np.float64)
        local_center = np.array(centers['c_L'], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Поврежденный чекпоинт {path}: {e}") from e

    model = OC4SeqModel(config=train_config, vocab=vocab, store=store, center=center, local_center=local_center)
    # Проверяем, что набор параметров согласован с конфигурацией
    try:
        model.global_gru, model.local_gru, model.embedding
    except KeyError as e:
        raise CheckpointError(f"В чекпоинте {path} нет параметра {e}") from e
    logger.info(f"Чекпоинт загружен: {path}")
    return model
