"""Config text parser and serializer.

Format: `key = value` lines, optionally grouped under [flow], [potential],
[reference] and [output]. Keys written before any section header are
resolved by name. Values are integers, floats, booleans (true/false),
quoted or bare strings, or `none`. `#` and `;` start comments.

    [flow]
    d = 2
    m = 100
    integrator = "sgd_renorm"

    [potential]
    potential = "cos1d:100"

Every SPECTRALFLOW_<KEY> environment variable (a `.env` file in the working
directory is read too) overrides the matching key before validation.
"""

import hashlib
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values
from loguru import logger

from src.errors import ConfigParseError, ConfigurationError
from src.flow import FlowConfig, Integrator, QuadratureChoice
from src.potentials import PotentialSpec
from src.utils.defaults import ENV_PREFIX

SECTIONS = ("flow", "potential", "reference", "output")
REQUIRED_KEYS = ("d", "potential")
ALIASES = {"n": "batch_size"}

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class KeySpec:
    """Home section and value type of one config key."""
    section: str
    kind: str                 # int | float | bool | str
    optional: bool = False    # accepts none


KEYS: Dict[str, KeySpec] = {
    "d": KeySpec("flow", "int"),
    "m": KeySpec("flow", "int"),
    "tau": KeySpec("flow", "float"),
    "integrator": KeySpec("flow", "str"),
    "steps": KeySpec("flow", "int"),
    "eta": KeySpec("flow", "float", optional=True),
    "batch_size": KeySpec("flow", "int"),
    "dataset_size": KeySpec("flow", "int"),
    "seed": KeySpec("flow", "int"),
    "eval_every": KeySpec("flow", "int"),
    "r_max": KeySpec("flow", "float", optional=True),
    "probe_count": KeySpec("flow", "int"),
    "normalization": KeySpec("flow", "str"),
    "step_quadrature": KeySpec("flow", "str"),
    "grid_n": KeySpec("flow", "int", optional=True),
    "eval_mc_points": KeySpec("flow", "int"),
    "table_resolution": KeySpec("flow", "int"),
    "chunk_size": KeySpec("flow", "int"),
    "preset": KeySpec("flow", "str", optional=True),
    "potential": KeySpec("potential", "str"),
    "reference_n": KeySpec("reference", "int"),
    "reference_tol": KeySpec("reference", "float"),
    "reference_file": KeySpec("reference", "str", optional=True),
    "record_timing": KeySpec("output", "bool"),
}

# experiment presets; explicit keys win
PRESETS: Dict[str, Dict[str, Any]] = {
    "cos1d": {"d": 2, "potential": "cos1d:100", "m": 100, "batch_size": 100},
    "cos_diag": {"d": 2, "potential": "cos_diag:100", "m": 100, "batch_size": 100},
    "exp_diag": {"d": 2, "potential": "exp_diag:100", "m": 100, "batch_size": 100},
    "double_well": {"d": 2, "potential": "double_well:100", "m": 200, "batch_size": 1000},
}

_UNSET = object()


def _parse_scalar(raw: str) -> Any:
    """Literal value of one config token."""
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    lowered = raw.lower()
    if lowered in ("none", "null"):
        return None
    if lowered in ("true", "false"):
        return lowered == "true"
    if _INT_RE.match(raw):
        return int(raw)
    if _FLOAT_RE.match(raw) or lowered in ("inf", "-inf", "nan"):
        return float(raw)
    return raw


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch in "#;":
            return line[:i]
    return line


def _coerce(key: str, value: Any, line: Optional[int]) -> Any:
    spec = KEYS[key]
    if value is None:
        if spec.optional:
            return None
        raise ConfigParseError("value may not be none", key=key, line=line)
    if spec.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigParseError(f"expected an integer, got {value!r}", key=key, line=line)
        return value
    if spec.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigParseError(f"expected a number, got {value!r}", key=key, line=line)
        return float(value)
    if spec.kind == "bool":
        if not isinstance(value, bool):
            raise ConfigParseError(f"expected true or false, got {value!r}", key=key, line=line)
        return value
    if not isinstance(value, str):
        raise ConfigParseError(f"expected a string, got {value!r}", key=key, line=line)
    return value


def _read_entries(text: str) -> Dict[str, Tuple[Any, int]]:
    entries: Dict[str, Tuple[Any, int]] = {}
    section = None
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigParseError(f"unknown section [{section}]", line=number)
            continue
        key, sep, raw_value = line.partition("=")
        key = key.strip().lower()
        if not sep or not key:
            raise ConfigParseError(f"expected 'key = value', got {raw_line.strip()!r}", line=number)
        key = ALIASES.get(key, key)
        if key not in KEYS:
            raise ConfigParseError("unknown key", key=key, line=number)
        if section is not None and KEYS[key].section != section:
            raise ConfigParseError(
                f"key belongs to section [{KEYS[key].section}], found in [{section}]",
                key=key, line=number,
            )
        if key in entries:
            raise ConfigParseError(f"duplicate key (first set on line {entries[key][1]})",
                                   key=key, line=number)
        entries[key] = (_coerce(key, _parse_scalar(raw_value), number), number)
    return entries


def _environment(environ: Optional[Mapping[str, str]]) -> Dict[str, str]:
    if environ is not None:
        return dict(environ)
    merged: Dict[str, str] = {}
    dotenv_path = Path.cwd() / ".env"
    if dotenv_path.is_file():
        merged.update({k: v for k, v in dotenv_values(dotenv_path).items() if v is not None})
    merged.update(os.environ)
    return merged


def _apply_env(entries: Dict[str, Tuple[Any, Optional[int]]], environ: Dict[str, str]) -> None:
    for key in KEYS:
        name = f"{ENV_PREFIX}{key.upper()}"
        if name in environ:
            entries[key] = (_coerce(key, _parse_scalar(environ[name]), None), None)
            logger.info(f"Config override from environment: {key} = {environ[name]}")


def _build(values: Dict[str, Any], lines: Dict[str, Optional[int]]) -> FlowConfig:
    def enum_value(key, enum_cls):
        try:
            return enum_cls(values[key])
        except ValueError:
            known = ", ".join(e.value for e in enum_cls)
            raise ConfigParseError(f"unknown value {values[key]!r} (known: {known})",
                                   key=key, line=lines.get(key)) from None

    kwargs = {k: v for k, v in values.items() if k in FlowConfig.__dataclass_fields__}
    try:
        kwargs["potential"] = PotentialSpec.parse(values["potential"])
    except ConfigurationError as exc:
        raise ConfigParseError(str(exc), key="potential", line=lines.get("potential")) from None
    if "integrator" in values:
        kwargs["integrator"] = enum_value("integrator", Integrator)
    for key in ("normalization", "step_quadrature"):
        if key in values:
            kwargs[key] = enum_value(key, QuadratureChoice)
    try:
        return FlowConfig(**kwargs)
    except ConfigParseError as exc:
        raise ConfigParseError(exc.message, key=exc.key, line=lines.get(exc.key)) from None


def parse_config(text: str, environ: Optional[Mapping[str, str]] = None) -> FlowConfig:
    """
    Parse and validate config text.

    Args:
        text: Config text
        environ: Environment used for SPECTRALFLOW_ overrides; defaults to
            os.environ merged over ./.env

    Raises:
        ConfigParseError: Unknown or missing key, type mismatch, invalid value
    """
    entries: Dict[str, Tuple[Any, Optional[int]]] = dict(_read_entries(text))
    _apply_env(entries, _environment(environ))

    values = {key: value for key, (value, _) in entries.items()}
    lines = {key: line for key, (_, line) in entries.items()}

    preset = values.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigParseError(f"unknown preset (known: {', '.join(PRESETS)})",
                                   key="preset", line=lines.get("preset"))
        for key, value in PRESETS[preset].items():
            values.setdefault(key, value)

    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigParseError("missing required key", key=key)
    return _build(values, lines)


def load_config(path: Union[str, Path], environ: Optional[Mapping[str, str]] = None) -> FlowConfig:
    """Read and parse a config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    logger.debug(f"Loading config {path}")
    return parse_config(path.read_text(encoding="utf-8"), environ=environ)


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return f'"{value}"'


def serialize_config(cfg: FlowConfig) -> str:
    """Canonical config text; parse_config(serialize_config(c)) == c."""
    raw = cfg.to_dict()
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, spec in KEYS.items():
            if spec.section == section:
                lines.append(f"{key} = {_format_value(raw[key])}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: FlowConfig) -> str:
    """Short stable fingerprint of the canonical config text."""
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:16]
