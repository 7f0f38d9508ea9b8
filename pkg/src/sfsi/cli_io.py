"""Configuration files, binary snapshots, CSV exports and run manifests."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import platform
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fluid_solver import FluidState
from .geometry import ConfigurationError
from .orchestrator import RECORD_COLUMNS
from .params import SchemeParams
from .structure_solver import StructureState

CONFIG_SCHEMA_VERSION = 1
SNAPSHOT_MAGIC = b"SFSI"
SNAPSHOT_VERSION = 1
# magic, version (u16), dim (u8), then n_st, nx, nz, n_f as u32
_HEADER = struct.Struct("<4sHB4I")
_TAIL = struct.Struct("<2d")  # time and stopping time (NaN before stopping)

TIMESERIES_COLUMNS = RECORD_COLUMNS
PLOT_COLUMNS = ("value", "quantity", "mean", "stderr", "slope")


class SnapshotError(ValueError):
    """A snapshot file is malformed, truncated or of an unknown version."""


# ---------------------------------------------------------------------------
# configuration


def _field_types() -> dict:
    defaults = SchemeParams.__dataclass_fields__
    return {name: type(f.default) for name, f in defaults.items()}


def _format_value(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def serialize_config(params: SchemeParams) -> str:
    """Flat ``key = value`` text with the schema version first, keys in field order."""
    lines = [f"schema_version = {CONFIG_SCHEMA_VERSION}"]
    lines += [f"{f.name} = {_format_value(getattr(params, f.name))}" for f in dataclasses.fields(params)]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<string>") -> SchemeParams:
    """Parse configuration text; omitted keys take their defaults.

    Raises
    ------
    ConfigurationError
        On a missing or unsupported schema version, an unknown or repeated
        key, an unparsable value, or a parameter constraint violation.
    """
    types = _field_types()
    values: dict = {}
    version = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "schema_version":
            version = value
            continue
        if key not in types:
            raise ConfigurationError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: key '{key}' given twice")
        kind = types[key]
        try:
            values[key] = int(value) if kind is int else float(value)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: cannot read {key} = {value!r}") from exc
    if version is None:
        raise ConfigurationError(f"{source}: missing schema_version")
    if version != str(CONFIG_SCHEMA_VERSION):
        raise ConfigurationError(f"{source}: unsupported schema_version {version}")
    return SchemeParams(**values)


def parse_config(path) -> SchemeParams:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def write_config(params: SchemeParams, path) -> None:
    _write_text(Path(path), serialize_config(params))


# ---------------------------------------------------------------------------
# binary snapshots


def snapshot_size(dim: int, n_st: int, nx: int, nz: int, n_f: int) -> int:
    """Byte count of a snapshot file."""
    n_values = 3 * n_st + nx ** (dim - 1) * nz + dim * n_f
    return _HEADER.size + 8 * n_values + _TAIL.size


def write_snapshot(fluid: FluidState, structure: StructureState, path) -> None:
    """Write η̂, v̂, η̂*, ρ (row-major grid) and û as little-endian float64.

    The payload is followed by the time and the stopping time (NaN while
    not stopped).
    """
    rho = np.asarray(fluid.rho, dtype="<f8")
    u_hat = np.asarray(fluid.u_hat, dtype="<f8")
    dim = rho.ndim
    nx, nz = rho.shape[0], rho.shape[-1]
    n_st = structure.eta_hat.size
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, dim, n_st, nx, nz, u_hat.shape[-1])
    parts = [np.asarray(a, dtype="<f8").tobytes() for a in
             (structure.eta_hat, structure.v_hat, structure.eta_star_hat, rho, u_hat)]
    tau = math.nan if structure.tau is None else structure.tau
    tail = _TAIL.pack(structure.t, tau)
    _write_bytes(Path(path), header + b"".join(parts) + tail)


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(fluid, structure)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, version, dim, n_st, nx, nz, n_f = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {version}")
    if dim not in (2, 3):
        raise SnapshotError(f"{path}: invalid dimension {dim}")
    expected = snapshot_size(dim, n_st, nx, nz, n_f)
    if len(data) != expected:
        raise SnapshotError(f"{path}: expected {expected} bytes, found {len(data)}")
    offset = _HEADER.size
    grid_shape = (nx,) * (dim - 1) + (nz,)

    def take(count, shape):
        nonlocal offset
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(float).reshape(shape)
        offset += 8 * count
        return arr

    eta = take(n_st, (n_st,))
    v = take(n_st, (n_st,))
    eta_star = take(n_st, (n_st,))
    rho = take(int(np.prod(grid_shape)), grid_shape)
    u_hat = take(dim * n_f, (dim, n_f))
    t, tau = _TAIL.unpack_from(data, offset)
    stopped = not math.isnan(tau)
    structure = StructureState(eta, v, eta_star, stopped, tau if stopped else None, t)
    return FluidState(rho, u_hat, t), structure


# ---------------------------------------------------------------------------
# CSV exports


def _format_number(x) -> str:
    return repr(float(x))


def timeseries_text(records: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TIMESERIES_COLUMNS)
    n = len(records["t"])
    for i in range(n):
        writer.writerow([_format_number(records[c][i]) for c in TIMESERIES_COLUMNS])
    return buf.getvalue()


def write_timeseries(trajectory, path) -> None:
    """One CSV row per step with the columns of ``TIMESERIES_COLUMNS``."""
    _write_text(Path(path), timeseries_text(trajectory.records))


def plot_data_text(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow((report.param,) + PLOT_COLUMNS[1:])
    for value, quantity, mean, err, slope in report.rows:
        writer.writerow([_format_number(value), quantity, _format_number(mean), _format_number(err),
                         _format_number(slope)])
    return buf.getvalue()


def emit_plot_data(report, path) -> None:
    """Sweep CSV: parameter value, quantity, ensemble mean, standard error, fitted slope."""
    _write_text(Path(path), plot_data_text(report))


def read_plot_data(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return [(float(v), q, float(m), float(e), float(s)) for v, q, m, e, s in rows[1:]]


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    params_digest: str
    params: dict
    seeds: list
    statuses: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    wall_clock: float = 0.0
    package_version: str = ""
    python: str = field(default_factory=platform.python_version)
    numpy: str = field(default_factory=lambda: np.__version__)

    def write(self, path) -> None:
        _write_text(Path(path), json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_bytes(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
