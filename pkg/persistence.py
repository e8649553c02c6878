"""Versioned plain-text storage for fitted models.

Layout::

    {"format_version": 1, "kind": "twin", "layers": 7, ...}   <- one JSON header line
    layer 0 <fan_in> <fan_out>
    <fan_in rows of fan_out weights>
    <one row of fan_out biases>
    ...
    end

Numbers are written with 17 significant digits so a load reproduces every
value bit for bit.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from exceptions import ModelLoadError
from numerics import Matrix, Vector

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
END_MARKER = "end"


@dataclass(frozen=True, eq=False)
class ModelFile:
    """Kind tag, free-form JSON header fields and a list of (weight, bias) layers."""

    kind: str
    header: dict[str, Any] = field(default_factory=dict)
    layers: list[tuple[Matrix, Vector]] = field(default_factory=list)


def _format_row(values) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def write_model_file(path: str | Path, model: ModelFile) -> None:
    """Write ``model`` to ``path``, creating parent directories as needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        **model.header,
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "layers": len(model.layers),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for i, (weight, bias) in enumerate(model.layers):
        fan_in, fan_out = weight.shape
        lines.append(f"layer {i} {fan_in} {fan_out}")
        lines.extend(_format_row(row) for row in weight)
        lines.append(_format_row(bias))
    lines.append(END_MARKER)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.debug("wrote %s model with %d layers to %s", model.kind, len(model.layers), path)


def _read_header(path: Path, line: str) -> dict[str, Any]:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise ModelLoadError(f"{path}: unreadable header ({e.msg})")
    if not isinstance(header, dict):
        raise ModelLoadError(f"{path}: header is not a JSON object")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelLoadError(
            f"{path}: format version {version!r} is not supported (expected {FORMAT_VERSION})"
        )
    if not isinstance(header.get("kind"), str) or not isinstance(header.get("layers"), int):
        raise ModelLoadError(f"{path}: header lacks kind or layer count")
    return header


def _parse_row(line: str | None, width: int, layer: int, what: str) -> np.ndarray:
    if line is None:
        raise ModelLoadError(f"file truncated while reading {what}", layer=layer)
    try:
        values = np.array([float(token) for token in line.split()], dtype=np.float64)
    except ValueError:
        raise ModelLoadError(f"non-numeric value in {what}", layer=layer)
    if values.shape[0] != width:
        raise ModelLoadError(
            f"{what} has {values.shape[0]} values, expected {width}", layer=layer
        )
    return values


def read_model_file(path: str | Path, expected_kind: str | None = None) -> ModelFile:
    """Parse a model file written by :func:`write_model_file`.

    Raises:
        ModelLoadError: On a version mismatch, a truncated file, a malformed or
            inconsistent dimension line, or a kind other than ``expected_kind``
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ModelLoadError(f"cannot read model file {path}: {e.strerror}")
    if not lines:
        raise ModelLoadError(f"{path}: empty model file")
    header = _read_header(path, lines[0])
    kind = header.pop("kind")
    count = header.pop("layers")
    header.pop("format_version")
    if expected_kind is not None and kind != expected_kind:
        raise ModelLoadError(f"{path}: expected a {expected_kind} model, found {kind}")

    cursor = iter(lines[1:])
    layers = []
    for i in range(count):
        dims = next(cursor, None)
        if dims is None:
            raise ModelLoadError("file truncated before dimension line", layer=i)
        parts = dims.split()
        if len(parts) != 4 or parts[0] != "layer" or parts[1] != str(i):
            raise ModelLoadError(f"malformed dimension line {dims!r}", layer=i)
        try:
            fan_in, fan_out = int(parts[2]), int(parts[3])
        except ValueError:
            raise ModelLoadError(f"malformed dimension line {dims!r}", layer=i)
        if fan_in < 1 or fan_out < 1:
            raise ModelLoadError(f"invalid dimensions {fan_in}x{fan_out}", layer=i)
        weight = np.vstack(
            [_parse_row(next(cursor, None), fan_out, i, f"weight row {r}") for r in range(fan_in)]
        )
        bias = _parse_row(next(cursor, None), fan_out, i, "bias row")
        layers.append((weight, bias))
    trailer = next(cursor, None)
    if trailer is None:
        raise ModelLoadError(f"{path}: file truncated, missing '{END_MARKER}' marker")
    if trailer.strip() != END_MARKER:
        raise ModelLoadError(
            f"{path}: dimension inconsistency, found extra data after {count} layers"
        )
    return ModelFile(kind=kind, header=header, layers=layers)


def peek_kind(path: str | Path) -> str:
    """Kind tag of a model file without parsing its weights."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            first = f.readline()
    except OSError as e:
        raise ModelLoadError(f"cannot read model file {path}: {e.strerror}")
    return _read_header(path, first)["kind"]
