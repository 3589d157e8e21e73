"""
Эмбеддинг событий и многослойный GRU: прямой проход и обратное
распространение ошибки во времени (BPTT)

Все ядра принимают ведущую ось батча: x имеет форму (B, d_in), h - (B, h).
Последовательности разной длины идут одним дополненным батчем с маской
шагов: на замаскированном шаге состояние переносится без изменений.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import MissingCacheError
from .params import Embedding, GRULayer, GRUParams


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Численно устойчивая сигмоида (ветвление по знаку аргумента)"""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def embed_forward(embedding: Embedding, event_id: int) -> np.ndarray:
    """x_t = E^T e_t: столбец event_id матрицы эмбеддинга"""
    if not 0 <= event_id < embedding.vocab_size:
        raise ValueError(f"Идентификатор события {event_id} вне словаря размера {embedding.vocab_size}")
    return embedding.matrix[:, event_id].copy()


def embed_batch(embedding: Embedding, ids: np.ndarray) -> np.ndarray:
    """Эмбеддинги для массива идентификаторов любой формы: (...,) -> (..., d_e)"""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= embedding.vocab_size):
        raise ValueError(f"Идентификаторы событий вне словаря размера {embedding.vocab_size}")
    return embedding.matrix.T[ids]


def embed_backward(embedding_grad: np.ndarray, ids: np.ndarray, d_x: np.ndarray) -> None:
    """Накапливает градиент в использованных столбцах матрицы эмбеддинга"""
    ids = np.asarray(ids, dtype=np.int64).ravel()
    np.add.at(embedding_grad.T, ids, d_x.reshape(ids.size, -1))


@dataclass
class GRUCellCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    mask: Optional[np.ndarray]
    squeeze: bool


def gru_cell_forward(layer: GRULayer, x_t: np.ndarray, h_prev: np.ndarray,
                     mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, GRUCellCache]:
    """
    Один шаг GRU:

        z = sigmoid(W_z x + U_z h_prev)
        r = sigmoid(W_r x + U_r h_prev)
        h~ = tanh(W x + U (r * h_prev))
        h = z * h_prev + (1 - z) * h~
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    squeeze = x_t.ndim == 1
    x2 = np.atleast_2d(x_t)
    h2 = np.atleast_2d(h_prev)
    if x2.shape[1] != layer.input_size:
        raise ValueError(f"Размер входа {x2.shape[1]} не совпадает с ожидаемым {layer.input_size}")
    if h2.shape[1] != layer.hidden_size or h2.shape[0] != x2.shape[0]:
        raise ValueError(f"Форма состояния {h2.shape} не согласована с входом {x2.shape} и h={layer.hidden_size}")

    z = sigmoid(x2 @ layer.W_z.T + h2 @ layer.U_z.T)
    r = sigmoid(x2 @ layer.W_r.T + h2 @ layer.U_r.T)
    h_tilde = np.tanh(x2 @ layer.W.T + (r * h2) @ layer.U.T)
    h_new = z * h2 + (1.0 - z) * h_tilde

    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
        h_new = m * h_new + (1.0 - m) * h2

    cache = GRUCellCache(x=x2, h_prev=h2, z=z, r=r, h_tilde=h_tilde, mask=m, squeeze=squeeze)
    return (h_new[0] if squeeze else h_new), cache


def gru_cell_backward(d_h: np.ndarray, cache: Optional[GRUCellCache], layer: GRULayer,
                      grads: GRULayer) -> Tuple[np.ndarray, np.ndarray]:
    """
    Обратный проход одного шага: накапливает градиенты весов в grads,
    возвращает (dL/dx_t, dL/dh_prev)
    """
    if cache is None:
        raise MissingCacheError("Нет кэша прямого прохода для шага GRU")
    d_h = np.atleast_2d(np.asarray(d_h, dtype=np.float64))
    x, h_prev, z, r, h_tilde = cache.x, cache.h_prev, cache.z, cache.r, cache.h_tilde

    if cache.mask is not None:
        d_new = d_h * cache.mask
        d_h_prev = d_h * (1.0 - cache.mask)
    else:
        d_new = d_h
        d_h_prev = np.zeros_like(h_prev)

    d_z = d_new * (h_prev - h_tilde)
    d_h_tilde = d_new * (1.0 - z)
    d_h_prev += d_new * z

    d_a_h = d_h_tilde * (1.0 - h_tilde ** 2)
    rh = r * h_prev
    grads.W += d_a_h.T @ x
    grads.U += d_a_h.T @ rh
    d_rh = d_a_h @ layer.U
    d_r = d_rh * h_prev
    d_h_prev += d_rh * r

    d_a_r = d_r * r * (1.0 - r)
    d_a_z = d_z * z * (1.0 - z)
    grads.W_r += d_a_r.T @ x
    grads.U_r += d_a_r.T @ h_prev
    grads.W_z += d_a_z.T @ x
    grads.U_z += d_a_z.T @ h_prev

    d_x = d_a_z @ layer.W_z + d_a_r @ layer.W_r + d_a_h @ layer.W
    d_h_prev += d_a_z @ layer.U_z + d_a_r @ layer.U_r

    if cache.squeeze:
        return d_x[0], d_h_prev[0]
    return d_x, d_h_prev


@dataclass
class SequenceCache:
    steps: List[List[GRUCellCache]]
    squeeze: bool


def gru_sequence_forward(params: GRUParams, xs: np.ndarray,
                         mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, SequenceCache]:
    """
    Прямой проход многослойного GRU

    xs: (T, d_in) или (T, B, d_in); mask: (T, B) или None. h_0 = 0 на каждом
    слое, слой l получает выходы слоя l - 1. Возвращает финальное состояние
    верхнего слоя, все его состояния по шагам и кэш для обратного прохода.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim < 2 or xs.shape[0] == 0:
        raise ValueError("Пустая входная последовательность")
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[:, np.newaxis, :]
        if mask is not None:
            mask = np.asarray(mask).reshape(-1, 1)
    steps_count, batch, _ = xs.shape

    layer_input = xs
    caches = []
    for layer in params.layers:
        h = np.zeros((batch, layer.hidden_size))
        outputs = np.empty((steps_count, batch, layer.hidden_size))
        layer_caches = []
        for t in range(steps_count):
            h, step_cache = gru_cell_forward(layer, layer_input[t], h, None if mask is None else mask[t])
            outputs[t] = h
            layer_caches.append(step_cache)
        caches.append(layer_caches)
        layer_input = outputs

    final_h = layer_input[-1]
    if squeeze:
        return final_h[0], layer_input[:, 0, :], SequenceCache(steps=caches, squeeze=True)
    return final_h, layer_input, SequenceCache(steps=caches, squeeze=False)


def gru_sequence_backward(d_all_h: np.ndarray, cache: Optional[SequenceCache], params: GRUParams,
                          grads: GRUParams) -> np.ndarray:
    """
    BPTT через все шаги и слои

    d_all_h - градиент по состояниям верхнего слоя на каждом шаге (форма как
    у all_h из прямого прохода). Возвращает градиент по входам xs.
    """
    if cache is None or len(cache.steps) != params.num_layers:
        raise MissingCacheError("Нет кэша прямого прохода для последовательности")
    d_out = np.asarray(d_all_h, dtype=np.float64)
    if cache.squeeze:
        d_out = d_out[:, np.newaxis, :]

    for index in reversed(range(params.num_layers)):
        layer, layer_grads = params.layers[index], grads.layers[index]
        layer_caches = cache.steps[index]
        steps_count, batch = len(layer_caches), d_out.shape[1]
        d_h = np.zeros((batch, layer.hidden_size))
        d_in = np.empty((steps_count, batch, layer.input_size))
        for t in reversed(range(steps_count)):
            d_h = d_h + d_out[t]
            d_in[t], d_h = gru_cell_backward(d_h, layer_caches[t], layer, layer_grads)
        d_out = d_in

    return d_out[:, 0, :] if cache.squeeze else d_out


@dataclass
class EncoderCache:
    ids: np.ndarray
    sequence: SequenceCache


def encoder_forward(embedding: Embedding, params: GRUParams, ids: np.ndarray,
                    mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, EncoderCache]:
    """Эмбеддинг + GRU для батча идентификаторов формы (T, B)"""
    ids = np.asarray(ids, dtype=np.int64)
    final_h, all_h, seq_cache = gru_sequence_forward(params, embed_batch(embedding, ids), mask)
    return final_h, all_h, EncoderCache(ids=ids, sequence=seq_cache)


def backward(d_final_h: Optional[np.ndarray], cache: Optional[EncoderCache], params: GRUParams,
             grads: GRUParams, embedding_grad: Optional[np.ndarray] = None,
             d_all_h: Optional[np.ndarray] = None) -> None:
    """
    Накапливает dL/dtheta для весов GRU и, через x_t, для столбцов эмбеддинга

    d_final_h - градиент по финальному состоянию; d_all_h - необязательный
    градиент по состояниям на всех шагах.
    """
    if cache is None:
        raise MissingCacheError("backward вызван без кэша прямого прохода")
    steps_count = cache.ids.shape[0]
    shape = cache.ids.shape + (params.hidden_size,)
    d_out = np.zeros(shape) if d_all_h is None else np.array(d_all_h, dtype=np.float64).reshape(shape)
    if d_final_h is not None:
        d_out[steps_count - 1] += np.asarray(d_final_h, dtype=np.float64).reshape(shape[1:])

    d_xs = gru_sequence_backward(d_out, cache.sequence, params, grads)
    if embedding_grad is not None:
        embed_backward(embedding_grad, cache.ids, d_xs)
