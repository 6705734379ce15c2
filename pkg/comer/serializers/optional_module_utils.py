""" Tables written through the optional pandas dependency. """
from pathlib import Path
from types import ModuleType
from typing import Any, Dict, Optional, Sequence

MISSING_PANDAS_MESSAGE = (
    "pandas is required for writing ablation tables; install comer with the 'pandas' extra"
)


class Pandas:
    """Access to pandas for the tab-separated result tables.

    pandas is only imported when a table is written, so the rest of the package works
      without the ``pandas`` extra.
    """

    @staticmethod
    def get_pandas(
        raise_error: bool = False, custom_error_message: str = ""
    ) -> Optional[ModuleType]:
        """The pandas module, or None if it cannot be imported.

        Args:
            raise_error: Raise instead of returning None, for callers that need pandas.
            custom_error_message: Replaces the default message naming the extra.

        Raises:
            ImportError: If pandas is missing and ``raise_error`` is set.
        """
        try:
            import pandas as pd
        except ImportError as error:
            if raise_error:
                raise ImportError(custom_error_message or MISSING_PANDAS_MESSAGE) from error
            return None
        return pd

    @classmethod
    def write_table(
        cls, rows: Sequence[Dict[str, Any]], file: Path, float_format: Optional[str] = None
    ) -> Any:
        """Write ``rows`` as a tab-separated table with a header line.

        The table goes to a temporary file first and replaces ``file`` only once it is
          complete. Column order follows the keys of the first row.

        Returns:
            The written DataFrame.

        Raises:
            ImportError: If pandas is missing.
            ValueError: If ``rows`` is empty.
        """
        if not rows:
            raise ValueError(f"Refusing to write an empty table to {file}")
        pd = cls.get_pandas(raise_error=True)
        table = pd.DataFrame(list(rows), columns=list(rows[0]))
        temporary_file = file.with_suffix(file.suffix + ".temp")
        try:
            table.to_csv(temporary_file, sep="\t", index=False, float_format=float_format)
            temporary_file.replace(file)
        finally:
            if temporary_file.exists():
                temporary_file.unlink()
        return table
