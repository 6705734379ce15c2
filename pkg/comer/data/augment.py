""" Aspect-preserving scale augmentation. """
from typing import Tuple

import numpy as np
from scipy import ndimage


def scaled_shape(shape: Tuple[int, int], factor: float) -> Tuple[int, int]:
    """``round(H · s) × round(W · s)``, at least one pixel each."""
    return tuple(max(1, int(round(size * factor))) for size in shape)  # type: ignore


def scale_image(image: np.ndarray, factor: float) -> np.ndarray:
    """Bilinear rescale of a ``[H, W]`` image by ``factor``; values stay in [0, 1]."""
    if factor == 1:
        return image.copy()
    height, width = image.shape
    target = scaled_shape((height, width), factor)
    zoom = (target[0] / height, target[1] / width)
    scaled = ndimage.zoom(image, zoom, order=1, mode="nearest", grid_mode=False)
    return np.clip(scaled, 0.0, 1.0)


def scale_augment(
    image: np.ndarray, rng: np.random.Generator, low: float = 0.7, high: float = 1.4
) -> np.ndarray:
    """Rescale by a factor drawn uniformly from ``[low, high]``."""
    return scale_image(image, float(rng.uniform(low, high)))
