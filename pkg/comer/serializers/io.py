""" Serialization input/output utilities """
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from .json import JsonSerializer, JsonType


def write_json_file(obj: JsonType, file: Path, indent: Optional[int] = 2) -> None:
    """Safely write a JSON file using the JsonSerializer.

    The file will first be written to a temporary file to avoid partial writing and
      errors during writing. Then the temporary file is moved to the specified location.
      The temporary file is always cleaned up.

    Args:
         obj: The obj to be serialized to JSON and written to file.
         file: The path to the output file.
         indent: The indentation for the JSON file.
    """
    temporary_file = file.with_suffix(file.suffix + ".temp")
    try:
        with temporary_file.open("w") as json_file:
            json.dump(obj, json_file, cls=JsonSerializer, indent=indent, sort_keys=True)
            json_file.write("\n")
        temporary_file.replace(file)
    finally:
        if temporary_file.exists():
            temporary_file.unlink()


def append_json_line(obj: Any, file: Path) -> None:
    """Append a single record to a JSON-lines file, creating the file if needed.

    Keys are written in insertion order so log records read naturally
      (``epoch`` first, ``seconds`` last).
    """
    with file.open("a") as json_lines:
        json_lines.write(json.dumps(obj, cls=JsonSerializer) + "\n")


def read_json_lines(file: Path) -> List[Dict[str, Any]]:
    """Parse every non-blank line of a JSON-lines file.

    Raises:
        ValueError: If a line is not valid JSON; the message names the line number.
    """
    records = list()
    for number, line in enumerate(file.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as error:
            raise ValueError(f"Invalid JSON on line {number} of {file}: {error}") from error
    return records
