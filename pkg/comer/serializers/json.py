""" Serializer class for the JSON reports and logs written by comer. """
import json
from enum import Enum
from numbers import Number
from pathlib import PurePath
from typing import Any, Dict, Iterator, List, Union

import numpy as np

JsonType = Union[None, bool, int, float, str, List[Any], Dict[str, Any]]


class JsonSerializer(json.JSONEncoder):
    """Custom JSON serializer.

    Reports, metric logs and summaries mix python primitives with numpy scalars,
      numpy arrays, paths, enums and NamedTuples. Everything is reduced to plain JSON;
      nothing is tagged for round-tripping since these files are read by people and
      by ``read_json_lines``, never decoded back into the original types.

    Examples:
        >>> import json
        >>> from comer.serializers.json import JsonSerializer
        >>> data = {"exprate": np.float32(0.5), "lengths": np.arange(3)}
        >>> json.dumps(data, cls=JsonSerializer)
        '{"exprate": 0.5, "lengths": [0, 1, 2]}'
    """

    @classmethod
    def _hint_tuples(cls, obj: Any) -> Any:
        """Convert NamedTuples to dictionaries in a pre-processing step.

        The default JSONEncoder implicitly converts every tuple to a list before
          ``default`` gets a chance to see it, which would drop the field names.

        Extrapolated from: https://stackoverflow.com/a/15721641
        """
        if isinstance(obj, tuple) and hasattr(obj, "_asdict"):
            return cls._hint_tuples(obj._asdict())
        if isinstance(obj, (list, tuple)):
            return [cls._hint_tuples(item) for item in obj]
        if isinstance(obj, dict):
            return {str(key): cls._hint_tuples(value) for key, value in obj.items()}
        return obj

    def encode(self, obj: Any) -> str:
        """Override JSONEncoder.encode to support NamedTuple hinting.

        This method is intended to be called only by the ``json.dumps`` method.
        """
        return super().encode(self._hint_tuples(obj))

    def iterencode(self, obj: Any, _one_shot: bool = False) -> Iterator[str]:
        """Override JSONEncoder.iterencode to support NamedTuple hinting.

        This method is intended to be called only by the ``json.dump`` method.
        """
        return super().iterencode(self._hint_tuples(obj), _one_shot)

    def default(self, value: Any) -> Any:
        """Encode a value into a serializable object.

        This method only gets called when the value is not naturally-serializable.
          See: https://docs.python.org/3/library/json.html#py-to-json-table

        Args:
            value: The python object to encode.
        """
        if isinstance(value, (np.ndarray, np.generic)):
            return self.encode_numpy(value)

        if isinstance(value, Number):
            return self.encode_numeric(value)

        if isinstance(value, PurePath):
            return self.encode_path(value)

        if isinstance(value, Enum):
            return self.encode_enum(value)

        raise NotImplementedError(
            f"Encoding for this object is not yet implemented: {value} ({type(value)})"
        )

    @classmethod
    def encode_numpy(cls, value: Union[np.ndarray, np.generic]) -> JsonType:
        """Encoding for numpy arrays and scalars.

        Arrays become (nested) lists, scalars become the matching python primitive.
        """
        if isinstance(value, np.ndarray):
            return cls._hint_tuples(value.tolist())
        return value.item()  # type: ignore

    @staticmethod
    def encode_numeric(value: Number) -> JsonType:
        """Encoding for numeric types outside the builtin bool/int/float.

        Raises:
            NotImplementedError - If encoding is not implement for the given numeric type.
        """
        if isinstance(value, (bool, int, float)):
            # These types are by default supported by the JSONEncoder base class.
            return value
        try:
            return float(value)  # type: ignore
        except TypeError:
            raise NotImplementedError(
                "No encoding implemented for the following numeric type: "
                f"{value} ({type(value)})"
            )

    @staticmethod
    def encode_path(value: PurePath) -> JsonType:
        """Paths are written in POSIX form so reports compare equal across platforms."""
        return value.as_posix()

    @staticmethod
    def encode_enum(value: Enum) -> JsonType:
        """Enums are written as their value (i.e. ``CoverageMode.FUSION`` → "fusion")."""
        return value.value
