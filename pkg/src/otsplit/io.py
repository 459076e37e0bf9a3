"""Reading densities and writing solver outputs.

Formats
-------
* PGM, plain (P2) or binary (P5), maxval up to 65535.  Image rows map to
  the first grid axis.  Samples are scaled to ``[0, 1]`` by ``maxval``.
* CSV of reals; a single row gives a 1-D grid, several rows a 2-D grid.
* Raw tensors: ``b"OTDT"``, then little-endian u32 fields ``version = 1``,
  ``d``, one size per axis (spatial axes then time) and the component count,
  followed by little-endian float64 data in row-major order, density block
  first and then one block per momentum component.  A density on its own is
  stored with one time sample and one component.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DimensionError, ParseError
from .grid import CenteredField

MAGIC = b"OTDT"
TENSOR_VERSION = 1
CSV_HEADER = ("iter", "J", "min_f", "div_residual", "boundary_residual", "delta_f")


# ---------------------------------------------------------------------------
# PGM


class _Tokens:
    """Whitespace-separated header tokens with ``#`` comments, tracking byte offsets."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def _skip(self):
        data = self.data
        while self.pos < len(data):
            c = data[self.pos : self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                nl = data.find(b"\n", self.pos)
                self.pos = len(data) if nl < 0 else nl + 1
            else:
                break

    def next(self, what: str) -> Tuple[bytes, int]:
        self._skip()
        start = self.pos
        if start >= len(self.data):
            raise ParseError(f"unexpected end of file while reading {what}", start)
        while self.pos < len(self.data) and not self.data[self.pos : self.pos + 1].isspace():
            if self.data[self.pos : self.pos + 1] == b"#":
                break
            self.pos += 1
        return self.data[start : self.pos], start

    def integer(self, what: str) -> int:
        tok, at = self.next(what)
        if not tok.isdigit():
            raise ParseError(f"expected a nonnegative integer for {what}, got {tok[:20]!r}", at)
        return int(tok)


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P2 or P5 image into a float array scaled to ``[0, 1]``."""
    if len(data) < 2:
        raise ParseError("file too short for a PGM header", 0)
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"bad PGM magic {magic!r}, expected b'P2' or b'P5'", 0)
    tok = _Tokens(data, 2)
    width = tok.integer("width")
    height = tok.integer("height")
    maxval_at = tok.pos
    maxval = tok.integer("maxval")
    if width == 0 or height == 0:
        raise ParseError(f"empty image {width}x{height}", 2)
    if not (0 < maxval <= 65535):
        raise ParseError(f"maxval must lie in 1..65535, got {maxval}", maxval_at)
    count = width * height
    if magic == b"P5":
        start = tok.pos + 1  # exactly one whitespace byte after maxval
        if tok.pos >= len(data) or not data[tok.pos : tok.pos + 1].isspace():
            raise ParseError("missing whitespace after maxval", tok.pos)
        width_bytes = 1 if maxval < 256 else 2
        need = count * width_bytes
        have = len(data) - start
        if have < need:
            raise ParseError(
                f"truncated P5 payload: expected {need} bytes, found {have}, missing {need - have} bytes",
                len(data),
            )
        dtype = np.dtype(">u2") if width_bytes == 2 else np.dtype("u1")
        values = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(float)
        if np.any(values > maxval):
            bad = int(np.argmax(values > maxval))
            raise ParseError(f"sample {bad} exceeds maxval {maxval}", start + bad * width_bytes)
    else:
        values = np.empty(count)
        for k in range(count):
            t, at = tok.next(f"sample {k}")
            if not t.isdigit():
                raise ParseError(f"non-numeric sample {t[:20]!r}", at)
            values[k] = int(t)
            if values[k] > maxval:
                raise ParseError(f"sample {k} exceeds maxval {maxval}", at)
    return (values / maxval).reshape(height, width)


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(img: np.ndarray, maxval: int = 255) -> bytes:
    """Binary P5 encoding of an array with values in ``[0, 1]`` (clipped)."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 1:
        img = img[None, :]
    if img.ndim != 2:
        raise DimensionError(f"a PGM frame must be 1-D or 2-D, got shape {img.shape}")
    if not (0 < maxval <= 65535):
        raise ValueError("maxval must lie in 1..65535")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = img.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.astype(dtype).tobytes()


def write_pgm(path, img: np.ndarray, maxval: int = 255) -> None:
    Path(path).write_bytes(encode_pgm(img, maxval))


# ---------------------------------------------------------------------------
# CSV


_CSV_FIELD = re.compile(rb"[^,\s]+")


def parse_csv(data: bytes) -> np.ndarray:
    """Comma- or whitespace-separated reals; blank lines are ignored."""
    rows = []
    pos = 0
    for line in data.splitlines(keepends=True):
        body = line.rstrip(b"\r\n")
        if body.strip():
            row = []
            for match in _CSV_FIELD.finditer(body):
                try:
                    row.append(float(match.group()))
                except ValueError:
                    raise ParseError(f"non-numeric entry {match.group()[:20]!r}", pos + match.start()) from None
            if rows and len(row) != len(rows[0]):
                raise ParseError(
                    f"row {len(rows) + 1} has {len(row)} entries, expected {len(rows[0])}", pos
                )
            rows.append(row)
        pos += len(line)
    if not rows:
        raise ParseError("no numeric rows found", 0)
    arr = np.array(rows, dtype=float)
    return arr[0] if arr.shape[0] == 1 else arr


# ---------------------------------------------------------------------------
# raw tensors


def encode_tensor(f: np.ndarray, m: Optional[np.ndarray] = None) -> bytes:
    """Encode a density stack ``f`` of shape ``(*spatial, T)`` and optional momentum ``(d, *spatial, T)``."""
    f = np.asarray(f, dtype=float)
    d = f.ndim - 1
    if d not in (1, 2):
        raise DimensionError(f"density stack must have 2 or 3 axes, got shape {f.shape}")
    blocks = [f]
    if m is not None:
        m = np.asarray(m, dtype=float)
        if m.shape != (d,) + f.shape:
            raise DimensionError(f"momentum shape {m.shape} does not match density {f.shape}")
        blocks += [m[a] for a in range(d)]
    header = MAGIC + struct.pack("<II", TENSOR_VERSION, d) + struct.pack(f"<{d + 1}I", *f.shape)
    header += struct.pack("<I", len(blocks))
    return header + b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in blocks)


def decode_tensor(data: bytes) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverse of :func:`encode_tensor`; returns ``(f, m)`` with ``m=None`` for one component."""
    if data[:4] != MAGIC:
        raise ParseError(f"bad tensor magic {data[:4]!r}", 0)
    if len(data) < 12:
        raise ParseError("truncated tensor header", len(data))
    version, d = struct.unpack_from("<II", data, 4)
    if version != TENSOR_VERSION:
        raise ParseError(f"unsupported tensor version {version}", 4)
    if d not in (1, 2):
        raise ParseError(f"unsupported dimension {d}", 8)
    need = 12 + 4 * (d + 2)
    if len(data) < need:
        raise ParseError("truncated tensor header", len(data))
    shape = struct.unpack_from(f"<{d + 1}I", data, 12)
    (ncomp,) = struct.unpack_from("<I", data, 12 + 4 * (d + 1))
    if ncomp not in (1, d + 1):
        raise ParseError(f"component count {ncomp} is neither 1 nor {d + 1}", 12 + 4 * (d + 1))
    if any(s == 0 for s in shape):
        raise ParseError(f"empty axis in shape {shape}", 12)
    size = int(np.prod(shape))
    payload = len(data) - need
    if payload != 8 * size * ncomp:
        raise ParseError(
            f"payload holds {payload} bytes, expected {8 * size * ncomp} for shape {shape} x {ncomp}",
            need,
        )
    arr = np.frombuffer(data, dtype="<f8", offset=need).astype(float).reshape((ncomp,) + shape)
    f = arr[0].copy()
    m = arr[1:].copy() if ncomp > 1 else None
    return f, m


def write_tensor(path, f: np.ndarray, m: Optional[np.ndarray] = None) -> None:
    Path(path).write_bytes(encode_tensor(f, m))


def read_tensor(path) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    return decode_tensor(Path(path).read_bytes())


def write_field(path, V: CenteredField) -> None:
    write_tensor(path, V.f, V.m)


def read_field(path) -> CenteredField:
    f, m = read_tensor(path)
    if m is None:
        raise ParseError("tensor holds a density only, not a centered field", 12)
    return CenteredField(m, f)


# ---------------------------------------------------------------------------
# densities


_FORMATS = {".pgm": "pgm", ".csv": "csv", ".txt": "csv", ".raw": "raw", ".otdt": "raw"}


def load_density(path, fmt: Optional[str] = None) -> np.ndarray:
    """Read a spatial density grid; the format is taken from the extension when not given."""
    path = Path(path)
    fmt = fmt or _FORMATS.get(path.suffix.lower())
    if fmt not in ("pgm", "csv", "raw"):
        raise ParseError(f"cannot tell the format of {path}; pass fmt='pgm', 'csv' or 'raw'")
    data = path.read_bytes()
    if fmt == "pgm":
        out = parse_pgm(data)
        return out[0] if out.shape[0] == 1 else out
    if fmt == "csv":
        return parse_csv(data)
    f, m = decode_tensor(data)
    if m is not None or f.shape[-1] != 1:
        raise ParseError("a density file must hold one component and one time sample", 12)
    return f[..., 0]


# ---------------------------------------------------------------------------
# run outputs


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Flat ``key=value`` description of a run: configuration, digests, outputs, timings."""

    config: Dict[str, object] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for prefix, table in (("config", self.config), ("input", self.inputs), ("output", self.outputs)):
            for k in sorted(table):
                lines.append(f"{prefix}.{k}={table[k]}")
        for k in sorted(self.timings):
            lines.append(f"time.{k}={self.timings[k]:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        out = cls()
        tables = {"config": out.config, "input": out.inputs, "output": out.outputs}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            prefix, dot, name = key.partition(".")
            if not sep or not dot:
                raise ParseError(f"manifest line {n} is not prefix.key=value")
            if prefix == "time":
                out.timings[name] = float(value)
            elif prefix in tables:
                tables[prefix][name] = value
            else:
                raise ParseError(f"unknown manifest section {prefix!r} on line {n}")
        return out


def convergence_csv(record) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in record.rows():
        w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()


def save_frames(f: np.ndarray, out_dir, maxval: int = 255) -> list:
    """One P5 frame per time slice, all scaled by the global maximum; negatives are clipped."""
    out_dir = Path(out_dir)
    top = float(np.max(f))
    scale = 1.0 / top if top > 0 else 0.0
    paths = []
    for t in range(f.shape[-1]):
        p = out_dir / f"frame_{t:03d}.pgm"
        write_pgm(p, f[..., t] * scale, maxval)
        paths.append(p)
    return paths


def save_run(V: CenteredField, record, manifest: RunManifest, out_dir) -> Dict[str, Path]:
    """Write frames, the raw tensor, the convergence log and the manifest into ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        frames = save_frames(V.f, out_dir)
        tensor = out_dir / "solution.otdt"
        write_field(tensor, V)
        log = out_dir / "convergence.csv"
        log.write_text(convergence_csv(record))
        manifest.outputs["frames"] = str(len(frames))
        manifest.outputs["tensor"] = tensor.name
        manifest.outputs["tensor_sha256"] = sha256_file(tensor)
        manifest.outputs["log"] = log.name
        manifest.outputs["log_sha256"] = sha256_file(log)
        man = out_dir / "manifest.txt"
        man.write_text(manifest.to_text())
    except OSError as exc:
        raise OSError(exc.errno, f"could not write run outputs: {exc.strerror}", exc.filename) from exc
    return {"frames": frames, "tensor": tensor, "log": log, "manifest": man}


def write_partial_log(record, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / "convergence.csv"
    p.write_text(convergence_csv(record))
    return p


__all__ = [
    "CSV_HEADER",
    "RunManifest",
    "convergence_csv",
    "decode_tensor",
    "encode_pgm",
    "encode_tensor",
    "load_density",
    "parse_csv",
    "parse_pgm",
    "read_field",
    "read_pgm",
    "read_tensor",
    "save_frames",
    "save_run",
    "sha256_file",
    "write_field",
    "write_partial_log",
    "write_pgm",
    "write_tensor",
]
