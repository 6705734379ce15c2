""" Module level imports for serializers. """
from .io import append_json_line, read_json_lines, write_json_file
from .json import JsonSerializer

__all__ = ["JsonSerializer", "append_json_line", "read_json_lines", "write_json_file"]
