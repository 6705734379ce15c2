""" Tests for comer/serializers/json.py """
import enum
import json
import pathlib
from decimal import Decimal
from fractions import Fraction
from math import inf, isnan, nan
from typing import Dict, NamedTuple, Optional

import numpy as np
import pytest
from comer.serializers.json import JsonSerializer


class Bucket(NamedTuple):
    count: int
    exprate: Optional[float]


class Report(NamedTuple):
    count: int
    buckets: Dict[str, Bucket]


class Mode(enum.Enum):
    FUSION = "fusion"


class TestNumericEncoding:
    """Tests for custom encoding of numeric types."""

    NUMERIC_ENCODING_TEST_CASES = [
        (12, 12),
        (3.14, 3.14),
        (inf, inf),
        (nan, nan),
        (Decimal("3.5"), 3.5),
        (Fraction(1, 4), 0.25),
    ]

    @staticmethod
    @pytest.mark.parametrize("value, expected", NUMERIC_ENCODING_TEST_CASES)
    def test_encode_numeric(value, expected):
        """Test that the JsonSerializer.encode_numeric encodes values as expected."""
        # Act
        result = JsonSerializer.encode_numeric(value)

        # Assert
        assert (result == expected) or (isnan(result) and isnan(expected))

    @staticmethod
    def test_encode_numeric_error():
        """Test that JsonSerializer.encode_numeric raises an error for unsupported types."""
        # Arrange
        value = 3 + 4j

        # Act & Assert
        with pytest.raises(NotImplementedError):
            JsonSerializer.encode_numeric(value)


class TestNumpyEncoding:
    """Tests for encoding numpy values."""

    # fmt: off
    NUMPY_ENCODING_TEST_CASES = [
        (np.float32(0.5), 0.5),
        (np.int64(7), 7),
        (np.bool_(True), True),
        (np.arange(3), [0, 1, 2]),
        (np.eye(2, dtype=np.int8), [[1, 0], [0, 1]]),
    ]
    # fmt: on

    @staticmethod
    @pytest.mark.parametrize("value, expected", NUMPY_ENCODING_TEST_CASES)
    def test_encode_numpy(value, expected):
        """Arrays become lists and scalars python primitives."""
        # Act
        result = JsonSerializer.encode_numpy(value)

        # Assert
        assert result == expected
        assert type(json.loads(json.dumps(result))) is type(expected)


class TestOtherEncoding:
    """Tests for paths, enums and NamedTuples."""

    @staticmethod
    def test_encode_path():
        """Paths are written in POSIX form."""
        # Act & Assert
        assert JsonSerializer.encode_path(pathlib.PureWindowsPath("run\\best.cmrt")) == (
            "run/best.cmrt"
        )

    @staticmethod
    def test_encode_enum():
        """Enums are written as their value."""
        # Act & Assert
        assert json.dumps({"mode": Mode.FUSION}, cls=JsonSerializer) == '{"mode": "fusion"}'

    @staticmethod
    def test_named_tuples_keep_field_names():
        """Nested NamedTuples are written as objects, not arrays."""
        # Arrange
        report = Report(3, {"1-9": Bucket(2, 0.5), "30+": Bucket(0, None)})

        # Act
        result = json.loads(json.dumps(report, cls=JsonSerializer))

        # Assert
        assert result == {
            "count": 3,
            "buckets": {
                "1-9": {"count": 2, "exprate": 0.5},
                "30+": {"count": 0, "exprate": None},
            },
        }

    @staticmethod
    def test_plain_tuples_become_lists():
        """Tuples without field names are written as arrays."""
        # Act & Assert
        assert json.dumps({"tokens": (4, 5)}, cls=JsonSerializer) == '{"tokens": [4, 5]}'

    @staticmethod
    def test_integer_keys():
        """Mapping keys are written as strings."""
        # Act & Assert
        assert json.dumps({3: 1}, cls=JsonSerializer) == '{"3": 1}'

    @staticmethod
    def test_unsupported():
        """Unknown objects are refused."""
        # Act & Assert
        with pytest.raises(NotImplementedError):
            json.dumps({"value": object()}, cls=JsonSerializer)
