""" Fixtures shared throughout all tests. """
import warnings
from typing import Any, Dict, List

import numpy as np
import pytest
from comer.config import RunConfig


def tiny_sections(coverage: str = "fusion", **model: Any) -> Dict[str, Dict[str, Any]]:
    """Configuration sections of a model small enough for gradient checks."""
    return {
        "model": {
            "d_model": 16,
            "heads": 2,
            "d_ff": 24,
            "num_layers": 2,
            "dropout": 0.0,
            "coverage": coverage,
            **model,
        },
        "encoder": {
            "num_blocks": 1,
            "layers_per_block": 1,
            "growth_rate": 4,
            "bottleneck_factor": 2,
            "dropout": 0.0,
            "stem_kernel": 3,
            "trailing_transition": True,
        },
        "arm": {"kernel_size": 3, "channels": 4},
        "training": {"batch_size": 2, "epochs": 1, "lr": 0.05},
        "dataset": {
            "n": 12,
            "max_length": 6,
            "tile_size": 8,
            "margin": 2,
            "gap": 1,
            "jitter": 1,
        },
        "search": {"beam_size": 3, "max_len": 8},
    }


@pytest.fixture(autouse=True)
def warning_catcher() -> List[warnings.WarningMessage]:
    """Auto-used fixture for catching warnings produced by the comer library.

    Examples:
        ```python
        >>> from comer.errors import ComerWarning
        >>> def test_function(warning_catcher: List[warnings.WarningMessage]):
        >>>     ...  # Test library in way that raises a warning
        >>>     assert warning_catcher
        >>>     assert warning_catcher[0].category == ComerWarning
        ```

    """
    with warnings.catch_warnings(record=True) as warning_catcher:
        warnings.simplefilter("always")
        yield warning_catcher


@pytest.fixture(name="tiny_config")
def _tiny_config() -> RunConfig:
    """Fixture returning a tiny fusion-mode configuration."""
    return RunConfig("toy", **tiny_sections())


@pytest.fixture(name="rng")
def _rng() -> np.random.Generator:
    """Fixture returning a seeded generator."""
    return np.random.default_rng(1234)
