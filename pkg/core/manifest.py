"""Reproducibility manifests written next to every command output."""
import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Sequence

from pydantic import BaseModel, ConfigDict

import randinf

MANIFEST_SUFFIX = ".manifest.json"
_CHUNK = 1 << 20


class RunManifest(BaseModel):
    """What was run, on which inputs, producing which outputs. No timestamps."""
    model_config = ConfigDict(frozen=True)

    subcommand: str
    parameters: Dict[str, Any]
    inputs: Dict[str, str]
    outputs: List[str]
    version: str = randinf.__version__


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    return str(value)


def build(subcommand: str, parameters: Dict[str, object], inputs: Sequence, outputs: Sequence) -> RunManifest:
    return RunManifest(
        subcommand=subcommand,
        parameters={key: _plain(value) for key, value in sorted(parameters.items())},
        inputs={str(path): file_digest(path) for path in inputs},
        outputs=[str(path) for path in outputs],
    )


def manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


def write(manifest: RunManifest, output) -> Path:
    path = manifest_path(output)
    path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    return path
