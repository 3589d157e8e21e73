"""
Сборка конфигурации запуска: значения по умолчанию из настроек,
JSON-файл и переопределения --set key=value
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from django.conf import settings

from .forms import RunConfigForm

logger = logging.getLogger(__name__)


class RunConfigError(ValueError):
    """Некорректная конфигурация запуска"""


def parse_override(pair: str) -> Tuple[str, Any]:
    """
    "key=value" -> (key, value); значение разбирается как JSON,
    а если это не JSON - остается строкой
    """
    key, sep, raw = pair.partition('=')
    key = key.strip()
    if not sep or not key:
        raise RunConfigError(f"Ожидалось key=value, получено: {pair!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise RunConfigError(f"Файл конфигурации не найден: {path}")
    try:
        payload = json.loads(path.read_text(encoding='utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RunConfigError(f"Файл конфигурации {path} не является корректным JSON: {e}") from e
    if not isinstance(payload, dict):
        raise RunConfigError(f"Файл конфигурации {path} должен содержать JSON-объект")
    return payload


def load_run_config(config_path: Optional[Union[str, Path]] = None,
                    overrides: Iterable[str] = ()) -> Dict[str, Any]:
    """
    Приоритет: --set > файл конфигурации > OC4SEQ_RUN_DEFAULTS

    Неизвестные ключи отклоняются до проверки формой.
    """
    defaults = dict(settings.OC4SEQ_RUN_DEFAULTS)
    merged = dict(defaults)

    layers = []
    if config_path:
        layers.append(('файл конфигурации', read_config_file(config_path)))
    layers.append(('--set', dict(parse_override(pair) for pair in overrides)))

    for source, values in layers:
        unknown = sorted(set(values) - set(defaults))
        if unknown:
            raise RunConfigError(f"Неизвестные ключи конфигурации ({source}): {', '.join(unknown)}")
        merged.update(values)

    form = RunConfigForm(data=merged)
    if not form.is_valid():
        problems = '; '.join(
            f"{field}: {' '.join(str(message) for message in messages)}"
            for field, messages in form.errors.items()
        )
        raise RunConfigError(f"Некорректная конфигурация: {problems}")

    logger.debug(f"Конфигурация запуска собрана: {form.cleaned_data}")
    return form.cleaned_data
