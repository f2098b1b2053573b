"""
Key=value run configuration files for the command line.

    # comments are allowed
    N_OWNERS=10
    KAPPA7=120
    DATA_RANGE=0,8

Keys match record fields case-insensitively; a key shared by several records (for
example SEED or LOCAL_EPOCHS) sets every one of them. Comma-separated values become
lists, which pydantic coerces into the ranges and value lists of the records.
"""
from pathlib import Path
from typing import Dict, Mapping, NamedTuple, Optional, Sequence, Union

from decouple import RepositoryEnv
from pydantic import BaseModel, ValidationError

from flmarket.core.exceptions import ConfigurationError
from flmarket.core.logging_config import logger
from flmarket.schemas.fedsim import FedConfig, GridSpec, TaskConfig
from flmarket.schemas.market import MarketConfig
from flmarket.schemas.scenario import ScenarioConfig
from flmarket.schemas.training import DrlaHyperParams, TrainConfig


class RunConfig(NamedTuple):
    market: MarketConfig
    scenario: ScenarioConfig
    train: TrainConfig
    hyper: DrlaHyperParams
    task: TaskConfig
    fed: FedConfig
    grid: GridSpec


RECORDS: Dict[str, type] = {
    "market": MarketConfig,
    "scenario": ScenarioConfig,
    "train": TrainConfig,
    "hyper": DrlaHyperParams,
    "task": TaskConfig,
    "fed": FedConfig,
    "grid": GridSpec,
}


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    return dict(RepositoryEnv(str(path)).data)


def parse_overrides(pairs: Optional[Sequence[str]]) -> Dict[str, str]:
    """KEY=VALUE strings from --set flags."""
    values: Dict[str, str] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"override {pair!r} is not KEY=VALUE")
        values[key.strip()] = value.strip()
    return values


def _coerce(value):
    if isinstance(value, str) and "," in value:
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


def _build(record: type, values: Mapping[str, object]) -> BaseModel:
    try:
        return record(**values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid {record.__name__}: {e}") from e


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """
    Build every config record from an optional file and flag overrides.

    Args:
        path: key=value config file
        overrides: values taking precedence over the file, keyed like the file

    Returns:
        RunConfig: validated records
    """
    raw: Dict[str, object] = {}
    if path is not None:
        raw.update({k.strip().lower(): v for k, v in read_config_file(path).items()})
    raw.update({k.strip().lower(): v for k, v in (overrides or {}).items() if v is not None})

    fields = {name: set(record.model_fields) for name, record in RECORDS.items()}
    per_record: Dict[str, Dict[str, object]] = {name: {} for name in RECORDS}
    for field, value in raw.items():
        targets = [name for name, names in fields.items() if field in names]
        if not targets:
            raise ConfigurationError(f"unknown config key {field!r}")
        for name in targets:
            per_record[name][field] = _coerce(value)

    records = {name: _build(RECORDS[name], per_record[name]) for name in RECORDS}
    if raw:
        logger.debug(f"Run config keys: {sorted(raw)}")
    return RunConfig(**records)
