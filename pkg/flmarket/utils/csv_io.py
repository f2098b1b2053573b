# flmarket/utils/csv_io.py
from pathlib import Path
from typing import Sequence, Union

import pandas as pd

from flmarket.core.exceptions import InstanceFormatError
from flmarket.core.logging_config import logger

PathLike = Union[str, Path]


def read_table(path: PathLike, required_columns: Sequence[str] = ()) -> pd.DataFrame:
    """
    Read a results CSV and validate its layout

    Args:
        path: CSV file with a header row
        required_columns: columns that must be present

    Returns:
        pd.DataFrame: the parsed table
    """
    path = Path(path)
    if path.suffix.lower() != ".csv":
        raise InstanceFormatError(f"{path} must be a .csv file")
    try:
        df = pd.read_csv(path)
    except FileNotFoundError as e:
        raise InstanceFormatError(f"{path} not found") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        logger.error(f"Error reading CSV file '{path}': {e}")
        raise InstanceFormatError(f"could not parse {path}: {e}") from e

    missing = [c for c in required_columns if c not in df.columns]
    if missing:
        raise InstanceFormatError(f"{path} is missing columns {missing}; found {list(df.columns)}")
    if df.empty:
        raise InstanceFormatError(f"{path} has no rows")
    logger.debug(f"Read {df.shape[0]} rows x {df.shape[1]} columns from {path}")
    return df


def write_table(df: pd.DataFrame, path: PathLike) -> Path:
    """Write a table with a header row and no index, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"Wrote {df.shape[0]} rows to {path}")
    return path
