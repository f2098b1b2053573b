"""
Line-oriented instance files.

    # flmarket-instances v1
    instance <seed>
    <id> <b> <d> <sigma> <h> <gamma> <alpha> <beta> <c1,c2,...>
    ...
    <blank line>
    instance <seed>
    ...

Floats are written with repr() so a file reads back to the same values.
"""
from pathlib import Path
from typing import List, Sequence, Union

from pydantic import ValidationError

from flmarket.core.constants import INSTANCE_FILE_HEADER
from flmarket.core.exceptions import InstanceFormatError
from flmarket.core.logging_config import logger
from flmarket.schemas.market import DataOwnerType
from flmarket.schemas.scenario import MarketInstance

PathLike = Union[str, Path]
OWNER_FIELDS = 9


def format_owner(owner: DataOwnerType) -> str:
    channels = ",".join(str(c) for c in sorted(owner.channels))
    values = [owner.bid, owner.data_size, owner.emd, owner.channel_gain,
              owner.unit_data_cost, owner.unit_compute_cost, owner.unit_transmit_cost]
    return " ".join([str(owner.owner_id)] + [repr(float(v)) for v in values] + [channels])


def format_instances(instances: Sequence[MarketInstance]) -> str:
    blocks = []
    for instance in instances:
        lines = [f"instance {instance.seed}"] + [format_owner(o) for o in instance.owners]
        blocks.append("\n".join(lines))
    return INSTANCE_FILE_HEADER + "\n" + "\n\n".join(blocks) + "\n"


def _parse_owner(line: str, line_number: int) -> DataOwnerType:
    parts = line.split()
    if len(parts) != OWNER_FIELDS:
        raise InstanceFormatError(f"line {line_number}: expected {OWNER_FIELDS} fields, got {len(parts)}")
    try:
        return DataOwnerType(
            owner_id=int(parts[0]),
            bid=float(parts[1]),
            data_size=float(parts[2]),
            emd=float(parts[3]),
            channel_gain=float(parts[4]),
            unit_data_cost=float(parts[5]),
            unit_compute_cost=float(parts[6]),
            unit_transmit_cost=float(parts[7]),
            channels=frozenset(int(c) for c in parts[8].split(",") if c),
        )
    except (ValueError, ValidationError) as e:
        raise InstanceFormatError(f"line {line_number}: {e}") from e


def parse_instances(text: str) -> List[MarketInstance]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != INSTANCE_FILE_HEADER:
        raise InstanceFormatError(f"missing header line {INSTANCE_FILE_HEADER!r}")

    instances: List[MarketInstance] = []
    seed, owners = None, []
    for line_number, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("instance"):
            if seed is not None:
                instances.append(MarketInstance(seed=seed, owners=owners))
            parts = line.split()
            if len(parts) != 2:
                raise InstanceFormatError(f"line {line_number}: expected 'instance <seed>'")
            try:
                seed = int(parts[1])
            except ValueError as e:
                raise InstanceFormatError(f"line {line_number}: seed {parts[1]!r} is not an integer") from e
            owners = []
            continue
        if seed is None:
            raise InstanceFormatError(f"line {line_number}: owner line before any 'instance' line")
        owner = _parse_owner(line, line_number)
        if owner.owner_id != len(owners):
            raise InstanceFormatError(f"line {line_number}: owner id {owner.owner_id}, expected {len(owners)}")
        owners.append(owner)
    if seed is not None:
        instances.append(MarketInstance(seed=seed, owners=owners))
    return instances


def write_instances(path: PathLike, instances: Sequence[MarketInstance]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_instances(instances), encoding="utf-8")
    logger.info(f"Wrote {len(instances)} instances to {path}")
    return path


def read_instances(path: PathLike) -> List[MarketInstance]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise InstanceFormatError(f"instance file {path} not found") from e
    instances = parse_instances(text)
    logger.debug(f"Read {len(instances)} instances from {path}")
    return instances
