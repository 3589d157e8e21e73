"""
Исключения численного ядра
"""


class NumericalError(ArithmeticError):
    """В функции потерь или градиентах появились NaN/Inf"""


class MissingCacheError(RuntimeError):
    """Обратный проход вызван без кэша соответствующего прямого прохода"""
