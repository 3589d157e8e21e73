"""
Версия и метаданные приложения OC4Seq
"""

# Версия приложения
__version__ = "1.0.0"

# Год выпуска
__year__ = "2026"

# Название приложения
__app_name__ = "OC4Seq"

# Автор
__author__ = "OC4Seq Development Team"

# Copyright
__copyright__ = f"Copyright (c) {__year__} {__author__}"
