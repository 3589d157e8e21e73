"""
Атомарная запись результатов на диск
"""
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Optional, Union

PathLike = Union[str, os.PathLike]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """
    Записывает текст во временный файл рядом с целевым и переименовывает его.

    Читатель никогда не увидит частично записанный файл.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{target.name}.', suffix='.tmp', dir=target.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def json_safe(value: Any) -> Any:
    """Бесконечности и NaN записываются строками ("-inf", "nan"): строгий JSON их не допускает"""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


def atomic_write_json(path: PathLike, payload: Any, indent: Optional[int] = 2) -> Path:
    """Сериализует payload в строгий JSON и атомарно записывает его"""
    text = json.dumps(json_safe(payload), ensure_ascii=False, indent=indent, allow_nan=False)
    return atomic_write_text(path, text + "\n")
