"""On-disk formats: dense-map binaries, record CSVs, tensor checkpoints, run configs.

Dense map (little-endian)::

    b"DPM1" | u32 H | u32 W | f32 P[H*W] | f32 B[H*W*4] | f32 s_y | f32 s_x

Tensor file::

    DRT1\\n
    <name> <d0,d1,...>\\n      one line per tensor, empty dims for scalars
    END\\n
    f64 little-endian payloads in header order

All writers replace the target atomically (temp file + rename).
"""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .densemap import DenseProposalMap, EncoderConfig
from .mrf import MrfConfig
from .temporal import TemporalConfig

DPM_MAGIC = b"DPM1"
DRT_MAGIC = "DRT1"
RECORD_FIELDS = ("frame", "id", "y0", "x0", "y1", "x1", "score", "label")


class FormatError(ValueError):
    """Malformed or corrupt input file."""


class ConfigError(ValueError):
    """Invalid run configuration."""


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- dense maps ---------------------------------------------------------------

def dense_map_to_bytes(dmap: DenseProposalMap) -> bytes:
    H, W = dmap.shape
    P = dmap.P.astype("<f4")
    B = dmap.B.astype("<f4")
    scale = np.asarray(dmap.scale, dtype="<f4")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(B)) and np.all(np.isfinite(scale))):
        raise FormatError("non-finite values cannot be written")
    return b"".join([DPM_MAGIC, struct.pack("<II", H, W), P.tobytes(), B.tobytes(), scale.tobytes()])


def dense_map_from_bytes(data: bytes) -> DenseProposalMap:
    if len(data) < 12 or data[:4] != DPM_MAGIC:
        raise FormatError("bad magic")
    H, W = struct.unpack_from("<II", data, 4)
    n = H * W
    expected = 12 + 4 * (n + 4 * n + 2)
    if len(data) < expected:
        raise FormatError(f"truncated: expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise FormatError(f"trailing data: expected {expected} bytes, got {len(data)}")
    payload = np.frombuffer(data, dtype="<f4", offset=12)
    if not np.all(np.isfinite(payload)):
        raise FormatError("non-finite values in payload")
    P = payload[:n].reshape(H, W).astype(np.float64)
    B = payload[n:5 * n].reshape(H, W, 4).astype(np.float64)
    s_y, s_x = (float(v) for v in payload[5 * n:])
    try:
        dmap = DenseProposalMap(P, B, (s_y, s_x))
        dmap.check()
        return dmap
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_dense_map(path, dmap: DenseProposalMap) -> None:
    atomic_write(path, dense_map_to_bytes(dmap))


def read_dense_map(path) -> DenseProposalMap:
    return dense_map_from_bytes(Path(path).read_bytes())


# -- record CSVs --------------------------------------------------------------

@dataclass
class Record:
    frame: int | None = None
    id: int | None = None
    y0: float | None = None
    x0: float | None = None
    y1: float | None = None
    x1: float | None = None
    score: float | None = None
    label: int | None = None

    @property
    def box(self) -> tuple[float, float, float, float] | None:
        if None in (self.y0, self.x0, self.y1, self.x1):
            return None
        return (self.y0, self.x0, self.y1, self.x1)


_INT_FIELDS = {"frame", "id", "label"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(int(value))


def records_to_text(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    for r in records:
        writer.writerow([_fmt(getattr(r, name)) for name in RECORD_FIELDS])
    return buf.getvalue()


def records_from_text(text: str) -> list[Record]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != RECORD_FIELDS:
        raise FormatError(f"expected header {','.join(RECORD_FIELDS)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(RECORD_FIELDS):
            raise FormatError(f"line {lineno}: expected {len(RECORD_FIELDS)} fields, got {len(row)}")
        values = {}
        for name, raw in zip(RECORD_FIELDS, row):
            raw = raw.strip()
            if raw == "":
                values[name] = None
                continue
            try:
                values[name] = int(raw) if name in _INT_FIELDS else float(raw)
            except ValueError:
                raise FormatError(f"line {lineno}: bad {name} value {raw!r}") from None
            if name not in _INT_FIELDS and not np.isfinite(values[name]):
                raise FormatError(f"line {lineno}: non-finite {name}")
        out.append(Record(**values))
    return out


def write_records(path, records) -> None:
    atomic_write(path, records_to_text(records))


def read_records(path) -> list[Record]:
    return records_from_text(Path(path).read_text(encoding="utf-8"))


# -- tensor checkpoints ---------------------------------------------------------

def tensors_to_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    lines = [DRT_MAGIC]
    payload = []
    for name, arr in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise FormatError(f"invalid tensor name {name!r}")
        arr = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name} has non-finite values")
        lines.append(f"{name} {','.join(str(d) for d in arr.shape)}")
        payload.append(arr.astype("<f8").tobytes())
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(payload)


def tensors_from_bytes(data: bytes) -> dict[str, np.ndarray]:
    if not data.startswith((DRT_MAGIC + "\n").encode()):
        raise FormatError("bad magic")
    end = data.find(b"\nEND\n")
    if end < 0:
        raise FormatError("truncated: missing END line")
    header = data[:end].decode("ascii").split("\n")[1:]
    offset = end + len(b"\nEND\n")
    out = {}
    for line in header:
        name, _, dims = line.partition(" ")
        try:
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        except ValueError:
            raise FormatError(f"bad shape in header line {line!r}") from None
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * count > len(data):
            raise FormatError(f"truncated payload for tensor {name}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name} has non-finite values")
        out[name] = arr
        offset += 8 * count
    if offset != len(data):
        raise FormatError("trailing data after last tensor")
    return out


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write(path, tensors_to_bytes(tensors))


def read_tensors(path) -> dict[str, np.ndarray]:
    return tensors_from_bytes(Path(path).read_bytes())


# -- run configuration ----------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mrf: MrfConfig = field(default_factory=MrfConfig)
    nms_iou_threshold: float = 0.5
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    eval_iou_thr: float = 0.5
    seed: int = 0


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _opt_float(raw: str):
    return None if raw.lower() in ("", "none") else float(raw)


# key -> (section, field, parser)
CONFIG_KEYS = {
    "encoder.s_y": ("encoder", "s_y", float),
    "encoder.s_x": ("encoder", "s_x", float),
    "encoder.overlap_rule": ("encoder", "overlap_rule", str),
    "mrf.sigma": ("mrf", "sigma", float),
    "mrf.lambda": ("mrf", "damping", float),
    "mrf.iterations": ("mrf", "iterations", int),
    "mrf.rho": ("mrf", "rho", float),
    "mrf.min_votes": ("mrf", "min_votes", int),
    "mrf.residual_tol": ("mrf", "residual_tol", _opt_float),
    "mrf.tie_tol": ("mrf", "tie_tol", float),
    "mrf.dense_cap": ("mrf", "dense_cap", int),
    "nms.iou_threshold": ("nms", "iou_threshold", float),
    "temporal.d_e": ("temporal", "d_e", int),
    "temporal.d_h": ("temporal", "d_h", int),
    "temporal.k": ("temporal", "k", int),
    "temporal.strategy": ("temporal", "strategy", str),
    "temporal.w_i": ("temporal", "w_i", float),
    "temporal.embed_relu": ("temporal", "embed_relu", _parse_bool),
    "eval.iou_thr": ("eval", "iou_thr", float),
    "seed": ("", "seed", int),
}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    sections: dict[str, dict] = {"encoder": {}, "mrf": {}, "nms": {}, "temporal": {}, "eval": {}, "": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, name, parser = CONFIG_KEYS[key]
        if name in sections[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            sections[section][name] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    enc = sections["encoder"]
    try:
        scale = None
        if "s_y" in enc or "s_x" in enc:
            if not ("s_y" in enc and "s_x" in enc):
                raise ValueError("encoder.s_y and encoder.s_x must be given together")
            scale = (enc.pop("s_y"), enc.pop("s_x"))
        encoder = EncoderConfig(scale=scale, **enc)
        mrf = MrfConfig(**sections["mrf"])
        temporal = TemporalConfig(**sections["temporal"])
        nms_thr = sections["nms"].get("iou_threshold", 0.5)
        eval_thr = sections["eval"].get("iou_thr", 0.5)
        if not 0 <= nms_thr <= 1:
            raise ValueError("nms.iou_threshold must lie in [0, 1]")
        if not 0 < eval_thr <= 1:
            raise ValueError("eval.iou_thr must lie in (0, 1]")
        return RunConfig(encoder, mrf, nms_thr, temporal, eval_thr, sections[""].get("seed", 0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _render(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, str):
        return value
    return repr(value)


def dump_config(cfg: RunConfig) -> str:
    """Render a config as text that :func:`parse_config` reads back to an equal value."""
    lines = []
    if cfg.encoder.scale is not None:
        lines += [f"encoder.s_y = {cfg.encoder.scale[0]!r}", f"encoder.s_x = {cfg.encoder.scale[1]!r}"]
    lines.append(f"encoder.overlap_rule = {cfg.encoder.overlap_rule}")
    for key, (section, name, _) in CONFIG_KEYS.items():
        if section in ("mrf", "temporal"):
            lines.append(f"{key} = {_render(getattr(getattr(cfg, section), name))}")
    lines.append(f"nms.iou_threshold = {cfg.nms_iou_threshold!r}")
    lines.append(f"eval.iou_thr = {cfg.eval_iou_thr!r}")
    lines.append(f"seed = {cfg.seed}")
    return "\n".join(lines) + "\n"
