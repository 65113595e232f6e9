from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Dict, Type, Union

from .errors import FormatError, InvalidArgumentError
from .types import NeuralOdeSpec, ParamClassSpec, WeightClassSpec

logger = logging.getLogger(__name__)

ClassSpec = Union[ParamClassSpec, NeuralOdeSpec, WeightClassSpec]

SPEC_KINDS: Dict[str, Type[Any]] = {
    "param_ode": ParamClassSpec,
    "neural_ode": NeuralOdeSpec,
    "resnet": WeightClassSpec,
}


def atomic_write(path: Path, data: Union[bytes, str]) -> Path:
    """Write through a temp file in the target folder, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path: Path, obj: Any) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def spec_kind(spec: ClassSpec) -> str:
    for kind, cls in SPEC_KINDS.items():
        if isinstance(spec, cls):
            return kind
    raise InvalidArgumentError(f"not a class spec: {type(spec).__name__}")


def spec_to_dict(spec: ClassSpec) -> Dict[str, Any]:
    return {"kind": spec_kind(spec), **asdict(spec)}


def spec_from_dict(data: Dict[str, Any], kind: str | None = None) -> ClassSpec:
    """Build a spec from a mapping.

    ``kind`` stands in for a missing "kind" entry and must agree with a
    present one. Only known keys are accepted: unknown ones are logged and
    dropped, missing ones are an error.
    """
    own = data.get("kind")
    if kind and own and own != kind:
        raise InvalidArgumentError(f"expected a {kind} spec, got {own!r}")
    kind = kind or own
    if kind not in SPEC_KINDS:
        raise InvalidArgumentError(
            f"spec kind must be one of {', '.join(SPEC_KINDS)}, got {kind!r}"
        )
    cls = SPEC_KINDS[kind]
    known = {f.name for f in fields(cls)}
    for k in sorted(set(data) - known - {"kind"}):
        logger.warning("ignoring unknown %s spec key %r", kind, k)
    missing = sorted(known - set(data))
    if missing:
        raise InvalidArgumentError(f"{kind} spec is missing {', '.join(missing)}")
    return cls(**{k: data[k] for k in known})


def load_spec(path: Path, kind: str | None = None) -> ClassSpec:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(
            f"{p.name}: invalid JSON ({e.msg})", found=e.msg, offset=e.pos
        ) from e
    if not isinstance(data, dict):
        raise FormatError(
            f"{p.name}: expected a JSON object", found=type(data).__name__
        )
    return spec_from_dict(data, kind)


def save_spec(spec: ClassSpec, path: Path) -> Path:
    return write_json(path, spec_to_dict(spec))
