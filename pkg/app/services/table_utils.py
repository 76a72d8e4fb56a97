"""
Table Utilities
Helper functions for reading transcript tables and mapping term labels
"""
import re
import warnings
from io import BytesIO, StringIO
from pathlib import Path
from typing import IO, Optional, Union

import pandas as pd

from app.core.exceptions import MissingFileError, TranscriptParseError

# Suppress openpyxl warnings about unknown extensions
warnings.filterwarnings("ignore", category=UserWarning, module="openpyxl")

TableSource = Union[str, Path, IO]

SEASON_ORDER = {"spring": 0, "summer": 1, "fall": 2, "autumn": 2}
_PARSER_LINE = re.compile(r"line (\d+)")
_TERM_LABEL = re.compile(r"^\s*(?:(?P<s1>[A-Za-z]+)\s+(?P<y1>\d{4})|(?P<y2>\d{4})\s+(?P<s2>[A-Za-z]+))\s*$")


class TableUtils:
    """Utility class for table I/O"""

    @staticmethod
    def safe_read_table(source: TableSource) -> pd.DataFrame:
        """
        Read a CSV or XLSX table with every cell as a stripped string

        Args:
            source: path (``.csv``/``.xlsx``) or an open text/binary stream of CSV
        """
        if isinstance(source, (str, Path)):
            path = Path(source)
            if not path.exists():
                raise MissingFileError(path)
            if path.suffix.lower() in (".xlsx", ".xls"):
                with open(path, "rb") as f:
                    df = pd.read_excel(BytesIO(f.read()), dtype=str, engine="openpyxl")
            else:
                df = TableUtils._read_csv(path, encoding="utf-8")
        else:
            text = source.read()
            if isinstance(text, bytes):
                text = text.decode("utf-8")
            df = TableUtils._read_csv(StringIO(text))
        df = df.fillna("")
        df.columns = [str(c).strip() for c in df.columns]
        return df.apply(lambda col: col.str.strip())

    @staticmethod
    def _read_csv(source, **kwargs) -> pd.DataFrame:
        try:
            return pd.read_csv(source, dtype=str, keep_default_na=False, **kwargs)
        except pd.errors.ParserError as e:
            m = _PARSER_LINE.search(str(e))
            raise TranscriptParseError(int(m.group(1)) if m else 0, str(e).strip()) from e

    @staticmethod
    def try_parse_term(value: str) -> Optional[int]:
        """Term index from an integer or a label such as ``Fall 2014``"""
        value = str(value).strip()
        if re.fullmatch(r"[+-]?\d+", value):
            return int(value)
        m = _TERM_LABEL.match(value)
        if not m:
            return None
        season = (m.group("s1") or m.group("s2")).lower()
        year = int(m.group("y1") or m.group("y2"))
        if season not in SEASON_ORDER:
            return None
        return year * 3 + SEASON_ORDER[season]

    @staticmethod
    def to_number(s) -> Optional[float]:
        """Convert string to number, None when empty or malformed"""
        if s is None:
            return None
        s = str(s).strip()
        if not s:
            return None
        try:
            return float(s)
        except ValueError:
            return None

    @staticmethod
    def write_csv(df: pd.DataFrame, path: Path) -> Path:
        """Write a frame with a fixed float format so reruns are byte-identical"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        return path
