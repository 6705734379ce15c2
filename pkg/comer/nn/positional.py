""" Sinusoidal positional encodings for token positions and image cells.

Both encodings are constants (numpy arrays), added to embeddings and features.
"""
from typing import Union

import numpy as np

from ..errors import ConfigError

DEFAULT_TEMPERATURE = 10000.0


def word_pe(
    position: Union[float, np.ndarray], d: int, temperature: float = DEFAULT_TEMPERATURE
) -> np.ndarray:
    """1D encoding of (possibly real-valued) positions.

    Slot ``2i`` holds ``sin(p / temperature^(2i/d))`` and slot ``2i + 1`` the cosine.

    Args:
        position: A scalar or an array of positions.
        d: The encoding width; must be even.
        temperature: The wavelength base.

    Returns:
        Array of shape ``position.shape + (d,)``.

    Raises:
        ConfigError: If ``d`` is odd or the temperature is not positive.
    """
    if d <= 0 or d % 2:
        raise ConfigError(f"Word positional encodings need an even width; Found: {d}")
    if temperature <= 0:
        raise ConfigError(f"Positional temperature must be positive; Found: {temperature}")
    position = np.asarray(position, dtype=np.float64)
    frequencies = temperature ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    angles = position[..., None] * frequencies
    encoding = np.empty(position.shape + (d,))
    encoding[..., 0::2] = np.sin(angles)
    encoding[..., 1::2] = np.cos(angles)
    return encoding


def image_pe(
    h_o: int, w_o: int, d: int, temperature: float = DEFAULT_TEMPERATURE
) -> np.ndarray:
    """2D encoding of a ``h_o × w_o`` grid.

    Cell ``(x, y)`` is encoded by normalized coordinates ``x / h_o`` and ``y / w_o``;
      the first half of the encoding depends only on the row, the second half only on
      the column.

    Returns:
        Array of shape ``(h_o, w_o, d)``.

    Raises:
        ConfigError: If ``d`` is not divisible by 4.
    """
    if d <= 0 or d % 4:
        raise ConfigError(
            f"Image positional encodings need a width divisible by 4; Found: {d}"
        )
    rows = word_pe(np.arange(h_o) / h_o, d // 2, temperature)
    columns = word_pe(np.arange(w_o) / w_o, d // 2, temperature)
    return np.concatenate(
        [
            np.broadcast_to(rows[:, None, :], (h_o, w_o, d // 2)),
            np.broadcast_to(columns[None, :, :], (h_o, w_o, d // 2)),
        ],
        axis=-1,
    )
