"""
Parameter bundles on disk: a JSON record with a header (format version and the
hyper-parameters the arrays were built for) and an ordered list of named arrays.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from flmarket.core.config import get_settings
from flmarket.core.exceptions import ParamsFormatError
from flmarket.core.logging_config import logger

PathLike = Union[str, Path]


def params_to_record(params: Mapping[str, np.ndarray], hyper: Mapping[str, Any]) -> Dict[str, Any]:
    return {
        "version": get_settings().PARAMS_FORMAT_VERSION,
        "hyper": dict(hyper),
        "params": [
            {"name": name, "shape": list(value.shape), "values": value.reshape(-1).tolist()}
            for name, value in params.items()
        ],
    }


def record_to_params(record: Mapping[str, Any],
                     expected_hyper: Optional[Mapping[str, Any]] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Validate a parameter record and rebuild the arrays.

    Args:
        record: decoded JSON record
        expected_hyper: when given, every key must match the record's header

    Returns:
        Tuple of (header hyper-parameters, ordered name -> array)
    """
    version = get_settings().PARAMS_FORMAT_VERSION
    if not isinstance(record, Mapping) or "version" not in record:
        raise ParamsFormatError("parameter record has no version header")
    if record["version"] != version:
        raise ParamsFormatError(f"parameter format {record['version']!r} is not {version!r}")
    hyper = record.get("hyper")
    entries = record.get("params")
    if not isinstance(hyper, Mapping) or not isinstance(entries, list):
        raise ParamsFormatError("parameter record needs 'hyper' and 'params' sections")

    for key, value in (expected_hyper or {}).items():
        if hyper.get(key) != value:
            raise ParamsFormatError(f"hyper-parameter {key}={hyper.get(key)!r} does not match expected {value!r}")

    params: Dict[str, np.ndarray] = {}
    for entry in entries:
        try:
            name, shape, values = entry["name"], tuple(entry["shape"]), entry["values"]
            array = np.asarray(values, dtype=np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as e:
            raise ParamsFormatError(f"malformed parameter entry: {e}") from e
        if name in params:
            raise ParamsFormatError(f"duplicate parameter {name!r}")
        if not np.all(np.isfinite(array)):
            raise ParamsFormatError(f"parameter {name!r} has non-finite values")
        params[name] = array
    return dict(hyper), params


def save_params(path: PathLike, params: Mapping[str, np.ndarray], hyper: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(params_to_record(params, hyper), handle)
    logger.info(f"Saved {len(params)} parameter arrays to {path}")
    return path


def load_params(path: PathLike,
                expected_hyper: Optional[Mapping[str, Any]] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            record = json.load(handle)
    except FileNotFoundError as e:
        raise ParamsFormatError(f"parameter file {path} not found") from e
    except json.JSONDecodeError as e:
        raise ParamsFormatError(f"parameter file {path} is not valid JSON: {e}") from e
    return record_to_params(record, expected_hyper)

