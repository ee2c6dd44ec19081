"""
Plain-text model snapshots.

Layout::

    # jpinn-snapshot 1
    @model {"covariates": [...], "species": [...], ...}
    @net estimation {"topology": {...}}
    shift <values>
    scale <values>
    enc0.v 3 64
    <values>
    ...

Values are written row-major with 17 significant digits, so loading a
snapshot and writing it again reproduces the file byte for byte.
"""

import json
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from jpinn.exceptions import ConfigurationError
from jpinn.models.networks import FullResidualNet
from jpinn.models.pinn import CompositeModel, Model, PinnModel, model_members
from jpinn.schemas.network import NetworkTopology
from jpinn.utils.logging import get_logger

logger = get_logger(__name__)

HEADER = "# jpinn-snapshot 1"


def _values(array: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in np.asarray(array).ravel())


def _parse(line: str, shape: Tuple[int, ...]) -> np.ndarray:
    values = np.array([float(tok) for tok in line.split()], dtype=np.float64)
    if values.size != int(np.prod(shape)):
        raise ConfigurationError("Snapshot value count does not match the declared shape", details={"shape": shape})
    return values.reshape(shape)


def dumps(model: Model) -> str:
    lines = [HEADER]
    for member in model_members(model):
        meta = {
            "species": list(member.species),
            "covariates": member.covariates,
            "seed": member.seed,
            "log_floor": member.log_floor,
            "use_elevation": member.use_elevation,
            "thresholds": member.thresholds,
            "z_range": list(member.z_range),
        }
        lines.append("@model " + json.dumps(meta, sort_keys=True))
        for name, net in member.nets().items():
            lines.append(f"@net {name} " + json.dumps({"topology": net.topology.model_dump()}, sort_keys=True))
            lines.append("shift " + _values(net.input_shift))
            lines.append("scale " + _values(net.input_scale))
            for pname, tensor in net.params.items():
                lines.append(f"{pname} " + " ".join(str(d) for d in tensor.shape))
                lines.append(_values(tensor.data))
    return "\n".join(lines) + "\n"


def save_snapshot(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model), encoding="utf-8")
    logger.info("snapshot_saved", path=str(path), species=list(model.species))
    return path


def loads(text: str) -> Model:
    """Parse a snapshot; truncated or malformed text raises ConfigurationError."""
    try:
        return _loads(text)
    except (StopIteration, ValueError, KeyError, TypeError) as e:
        raise ConfigurationError("Malformed snapshot", details={"error": repr(e)}) from e


def _loads(text: str) -> Model:
    lines: Iterator[str] = iter(text.splitlines())
    if next(lines, None) != HEADER:
        raise ConfigurationError("Not a jpinn snapshot")
    members: List[PinnModel] = []
    current: Union[PinnModel, None] = None
    for line in lines:
        if line.startswith("@model "):
            meta = json.loads(line[len("@model ") :])
            current = PinnModel(
                meta["species"],
                meta["covariates"],
                seed=meta["seed"],
                log_floor=meta["log_floor"],
                use_elevation=meta["use_elevation"],
                build=False,
            )
            current.thresholds = {k: float(v) for k, v in meta["thresholds"].items()}
            current.z_range = (float(meta["z_range"][0]), float(meta["z_range"][1]))
            members.append(current)
        elif line.startswith("@net "):
            if current is None:
                raise ConfigurationError("Snapshot network section before its model")
            _, name, payload = line.split(" ", 2)
            topology = NetworkTopology(**json.loads(payload)["topology"])
            net = FullResidualNet(topology, seed=0)
            shift = _parse(next(lines).split(" ", 1)[1], (topology.input_width,))
            scale = _parse(next(lines).split(" ", 1)[1], (topology.input_width,))
            net.set_input_scaling(shift, scale)
            state = {}
            for _ in range(len(net.params)):
                pname, *dims = next(lines).split(" ")
                shape = tuple(int(d) for d in dims)
                state[pname] = _parse(next(lines), shape)
            net.load_state(state)
            setattr(current, name, net)
        elif line.strip():
            raise ConfigurationError("Unexpected snapshot line", details={"line": line[:80]})
    if not members:
        raise ConfigurationError("Snapshot holds no model")
    return members[0] if len(members) == 1 else CompositeModel(members)


def load_snapshot(path: Union[str, Path]) -> Model:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read snapshot {path}", details={"error": str(e)}) from e
    return loads(text)
