"""Volume and manifest I/O.

Two portable file formats live here.

ESCV (binary, bit-exact):
    magic    4 bytes  b"ESCV"
    version  u16 little endian, currently 1
    l,k,H,W  u64 little endian each (slices, coils, rows, columns)
    payload  l*k*H*W complex samples, interleaved (re, im) IEEE-754
             binary32 little endian, row-major in (slice, coil, row,
             column) order

Manifest (UTF-8 text): one ``key = value`` per line, fixed key order,
floats printed with 17 significant decimal digits so values survive a
round trip bit-exactly. Complex weights are flattened (re, im) pairs on
a single ``weights`` line.

Storage is single precision to match acquisition precision; everything
downstream computes in double. Volumes are immutable values once
loaded and safe to hand to concurrent workers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, FormatError, TruncationError

_MAGIC = b"ESCV"
_VERSION = 1
_HEADER_BYTES = 4 + 2 + 4 * 8

FIT_METHODS = ("gd", "lm", "lbfgs")


@dataclass(frozen=True, eq=False)
class KSpaceVolume:
    """Raw multi-coil frequency-domain samples, shape (slices, coils, H, W).

    ``samples`` is complex64 when read from disk; freshly synthesized
    volumes may carry complex128 until written (files always store
    binary32).
    """

    samples: np.ndarray
    volume_id: str = ""

    def __post_init__(self):
        s = self.samples
        if s.ndim != 4:
            raise DimensionError(f"k-space samples must be 4-d (slice, coil, row, col), got shape {s.shape}")
        if min(s.shape) < 1:
            raise DimensionError(f"all k-space dimensions must be >= 1, got shape {s.shape}")
        if not np.iscomplexobj(s):
            raise DataError("k-space samples must be complex")
        if not np.isfinite(s).all():
            raise DataError("k-space samples contain NaN or Inf")

    @property
    def slices(self) -> int:
        return self.samples.shape[0]

    @property
    def coils(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[2]

    @property
    def width(self) -> int:
        return self.samples.shape[3]


@dataclass(frozen=True, eq=False)
class FitManifest:
    """Fitted coil weights plus provenance of the fit that produced them."""

    volume_id: str
    weights: np.ndarray
    method: str
    iterations: int
    initial_objective: float
    final_objective: float
    threshold: float
    crop: tuple[int, int]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 1:
            raise DimensionError("weights must be a nonempty 1-d complex vector")
        if not np.isfinite(w.view(np.float64)).all():
            raise DataError("weights contain NaN or Inf")
        if not self.final_objective <= self.initial_objective:
            raise DataError(
                f"final objective {self.final_objective!r} exceeds initial {self.initial_objective!r}"
            )
        if self.method not in FIT_METHODS:
            raise DataError(f"unknown fit method {self.method!r}")
        if self.iterations < 0:
            raise DataError("iterations must be >= 0")
        if len(self.crop) != 2 or min(self.crop) < 1:
            raise DataError(f"crop must be two positive counts, got {self.crop!r}")
        object.__setattr__(self, "crop", (int(self.crop[0]), int(self.crop[1])))


def _atomic_write(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_volume(v: KSpaceVolume, path) -> None:
    """Write ``v`` as an ESCV file. Storage quantizes to binary32."""
    header = _MAGIC + np.asarray([_VERSION], dtype="<u2").tobytes()
    header += np.asarray(v.samples.shape, dtype="<u8").tobytes()
    payload = np.ascontiguousarray(v.samples.astype("<c8", copy=False)).tobytes()
    _atomic_write(path, header + payload)


def read_volume(path, format: str = "escv") -> KSpaceVolume:
    """Read a multi-coil volume.

    ``format`` is "escv" or "fastmri-h5". The fastMRI adapter reads the
    HDF5 dataset named "kspace" of shape (slices, coils, rows, cols) and
    takes axes exactly as stored (no conjugation or flips); it needs the
    optional h5py dependency.
    """
    if format == "escv":
        return _read_escv(path)
    if format == "fastmri-h5":
        return _read_fastmri(path)
    raise FormatError(f"unknown volume format {format!r}")


def _read_escv(path) -> KSpaceVolume:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_BYTES:
        raise FormatError(f"{path}: file too short for an ESCV header")
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {_MAGIC!r}")
    version = int(np.frombuffer(raw, dtype="<u2", count=1, offset=4)[0])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported ESCV version {version}")
    dims = np.frombuffer(raw, dtype="<u8", count=4, offset=6)
    if min(dims) < 1:
        raise FormatError(f"{path}: zero dimension in header {tuple(dims)}")
    count = int(np.prod(dims))
    expected = _HEADER_BYTES + 8 * count
    if len(raw) != expected:
        raise TruncationError(f"{path}: payload is {len(raw) - _HEADER_BYTES} bytes, header promises {8 * count}")
    samples = np.frombuffer(raw, dtype="<c8", count=count, offset=_HEADER_BYTES)
    samples = samples.reshape(tuple(int(d) for d in dims)).copy()
    if not np.isfinite(samples.view(np.float32)).all():
        raise DataError(f"{path}: payload contains NaN or Inf")
    return KSpaceVolume(samples=samples, volume_id=Path(path).stem)


def _read_fastmri(path) -> KSpaceVolume:
    try:
        import h5py
    except ImportError as e:
        raise FormatError("fastmri-h5 support needs the optional h5py dependency") from e
    with h5py.File(path, "r") as f:
        if "kspace" not in f:
            raise FormatError(f"{path}: no 'kspace' dataset")
        data = np.asarray(f["kspace"])
    if data.ndim != 4:
        raise FormatError(f"{path}: 'kspace' must be 4-d (slice, coil, row, col), got shape {data.shape}")
    if not np.iscomplexobj(data):
        raise FormatError(f"{path}: 'kspace' must be complex")
    samples = np.ascontiguousarray(data.astype(np.complex64, copy=False))
    if not np.isfinite(samples.view(np.float32)).all():
        raise DataError(f"{path}: payload contains NaN or Inf")
    return KSpaceVolume(samples=samples, volume_id=Path(path).stem)


_MANIFEST_KEYS = (
    "volume_id",
    "method",
    "iterations",
    "initial_objective",
    "final_objective",
    "threshold",
    "crop",
    "weights",
)


def _fmt(value: float) -> str:
    return format(float(value), ".17e")


def write_manifest(m: FitManifest, path) -> None:
    parts = np.stack([m.weights.real, m.weights.imag], axis=1).ravel()
    lines = [
        f"volume_id = {m.volume_id}",
        f"method = {m.method}",
        f"iterations = {m.iterations}",
        f"initial_objective = {_fmt(m.initial_objective)}",
        f"final_objective = {_fmt(m.final_objective)}",
        f"threshold = {_fmt(m.threshold)}",
        f"crop = {m.crop[0]} {m.crop[1]}",
        "weights = " + " ".join(_fmt(p) for p in parts),
    ]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path) -> FitManifest:
    text = Path(path).read_text(encoding="utf-8")
    fields = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        if key in fields:
            raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
        fields[key] = value
    missing = [k for k in _MANIFEST_KEYS if k not in fields]
    unknown = [k for k in fields if k not in _MANIFEST_KEYS]
    if missing or unknown:
        raise FormatError(f"{path}: manifest schema mismatch (missing {missing}, unknown {unknown})")
    try:
        parts = np.asarray([float(p) for p in fields["weights"].split()], dtype=np.float64)
        if parts.size == 0 or parts.size % 2:
            raise FormatError(f"{path}: weights must be a nonempty list of (re, im) pairs")
        weights = np.empty(parts.size // 2, dtype=np.complex128)
        weights.real, weights.imag = parts[0::2], parts[1::2]
        crop = tuple(int(c) for c in fields["crop"].split())
        manifest = FitManifest(
            volume_id=fields["volume_id"],
            weights=weights,
            method=fields["method"],
            iterations=int(fields["iterations"]),
            initial_objective=float(fields["initial_objective"]),
            final_objective=float(fields["final_objective"]),
            threshold=float(fields["threshold"]),
            crop=crop,
        )
    except (ValueError, DataError, DimensionError) as e:
        raise FormatError(f"{path}: invalid manifest: {e}") from e
    return manifest
