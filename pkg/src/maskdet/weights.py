"""Weight container: ``SSDW`` header, JSON manifest, raw little-endian f32 blob.

Layout::

    b"SSDW" | u32 version (=1) | u32 manifest length | manifest JSON | blob

The manifest is ``{"entries": [{"name", "shape", "offset", "dtype": "f32"}, ...]}``
with byte offsets relative to the start of the blob.  Batch-norm statistics
stored as ``<layer>.bn.{gamma,beta,mean,variance,epsilon}`` are folded into
``<layer>.weight`` / ``<layer>.bias`` at load time.
"""
from __future__ import annotations

import json
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import SSDConfig, architecture_layers, required_tensors
from .tensor import BatchNormParams, fold_batchnorm_arrays

MAGIC = b"SSDW"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_BN_FIELDS = ("gamma", "beta", "mean", "variance", "epsilon")


class WeightFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: tuple
    offset: int
    dtype: str = "f32"

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * 4


class WeightStore(Mapping):
    """Immutable name -> float32 array lookup, plus the manifest it came from."""

    def __init__(self, tensors: Mapping[str, np.ndarray], manifest=None):
        self._tensors = {}
        for name, arr in tensors.items():
            a = np.array(arr, dtype=np.float32)
            a.setflags(write=False)
            self._tensors[name] = a
        self.manifest = list(manifest) if manifest is not None else build_manifest(self._tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def param_count(self) -> int:
        return sum(a.size for a in self._tensors.values())


def build_manifest(tensors: Mapping[str, np.ndarray]) -> list[ManifestEntry]:
    entries, offset = [], 0
    for name, arr in tensors.items():
        entry = ManifestEntry(name, tuple(int(d) for d in np.shape(arr)), offset)
        entries.append(entry)
        offset += entry.nbytes
    return entries


def to_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    entries = build_manifest(tensors)
    manifest = json.dumps({"entries": [
        {"name": e.name, "shape": list(e.shape), "offset": e.offset, "dtype": e.dtype}
        for e in entries]}).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(tensors[e.name], dtype="<f4").tobytes()
                    for e in entries)
    return _HEADER.pack(MAGIC, VERSION, len(manifest)) + manifest + blob


def save_weights(tensors: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_bytes(to_bytes(tensors))


def _parse_entries(manifest: dict) -> list[ManifestEntry]:
    try:
        raw = manifest["entries"]
        entries = [ManifestEntry(str(e["name"]), tuple(int(d) for d in e["shape"]),
                                 int(e["offset"]), str(e.get("dtype", "f32"))) for e in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightFormatError(f"malformed manifest: {exc}") from exc
    seen = set()
    for e in entries:
        if e.name in seen:
            raise WeightFormatError(f"{e.name}: duplicate manifest entry")
        seen.add(e.name)
        if e.dtype != "f32":
            raise WeightFormatError(f"{e.name}: unsupported dtype {e.dtype!r}")
        if any(d < 0 for d in e.shape) or e.offset < 0:
            raise WeightFormatError(f"{e.name}: negative shape or offset")
    return entries


def from_bytes(data: bytes, fold: bool = True) -> WeightStore:
    if len(data) < _HEADER.size:
        raise WeightFormatError("file too short for header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    start = _HEADER.size
    if start + mlen > len(data):
        raise WeightFormatError("manifest extends past end of file")
    try:
        manifest = json.loads(data[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"manifest is not valid JSON: {exc}") from exc
    entries = _parse_entries(manifest)
    blob = memoryview(data)[start + mlen:]

    tensors = {}
    prev_end = 0
    for e in entries:
        if e.offset < prev_end:
            raise WeightFormatError(f"{e.name}: offset {e.offset} overlaps previous entry")
        end = e.offset + e.nbytes
        if end > len(blob):
            raise WeightFormatError(
                f"{e.name}: bytes {e.offset}..{end} exceed blob length {len(blob)}")
        arr = np.frombuffer(blob[e.offset:end], dtype="<f4").reshape(e.shape)
        if not np.isfinite(arr).all():
            raise WeightFormatError(f"{e.name}: contains NaN or Inf")
        tensors[e.name] = arr.astype(np.float32)
        prev_end = end
    total = sum(e.nbytes for e in entries)
    if total != len(blob):
        raise WeightFormatError(f"blob length {len(blob)} != manifest total {total}")
    if fold:
        tensors = fold_bn_entries(tensors)
    return WeightStore(tensors, entries)


def load_weights(path, fold: bool = True) -> WeightStore:
    return from_bytes(Path(path).read_bytes(), fold=fold)


def fold_bn_entries(tensors: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Replace ``<layer>.bn.*`` groups by folded ``<layer>.weight/.bias``."""
    out = dict(tensors)
    layers = sorted({n[: -len(".bn.gamma")] for n in tensors if n.endswith(".bn.gamma")})
    for layer in layers:
        keys = {f: f"{layer}.bn.{f}" for f in _BN_FIELDS}
        missing = [k for f, k in keys.items() if f != "epsilon" and k not in tensors]
        if missing:
            raise WeightFormatError(f"{layer}: incomplete batch norm, missing {missing}")
        if f"{layer}.weight" not in tensors:
            raise WeightFormatError(f"{layer}: batch norm without {layer}.weight")
        eps = float(np.ravel(tensors[keys["epsilon"]])[0]) if keys["epsilon"] in tensors else 1e-3
        try:
            bn = BatchNormParams(*(tensors[keys[f]] for f in _BN_FIELDS[:4]), epsilon=eps)
        except ValueError as exc:
            raise WeightFormatError(f"{layer}: {exc}") from exc
        w = tensors[f"{layer}.weight"]
        depthwise = w.ndim == 4 and w.shape[3] == 1 and w.shape[2] == bn.gamma.shape[0]
        try:
            out[f"{layer}.weight"], out[f"{layer}.bias"] = fold_batchnorm_arrays(
                w, tensors.get(f"{layer}.bias"), bn, depthwise=depthwise)
        except ValueError as exc:
            raise WeightFormatError(f"{layer}: {exc}") from exc
        for k in keys.values():
            out.pop(k, None)
    return out


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_against_architecture(store: Mapping[str, np.ndarray],
                                  config: SSDConfig = SSDConfig()) -> ValidationReport:
    """One error per missing layer or mis-shaped tensor; unknown names are warnings."""
    report = ValidationReport()
    known = set()
    for layer in architecture_layers(config):
        names = {f"{layer.name}.weight": layer.weight_shape,
                 f"{layer.name}.bias": layer.bias_shape}
        known.update(names)
        absent = [n for n in names if n not in store]
        if len(absent) == len(names):
            report.errors.append(f"missing layer {layer.name}")
            continue
        for name, expected in names.items():
            if name not in store:
                report.errors.append(f"missing tensor {name}")
            elif tuple(store[name].shape) != tuple(expected):
                report.errors.append(
                    f"shape mismatch for {name}: expected {list(expected)}, "
                    f"got {list(store[name].shape)}")
    for name in store:
        if name not in known:
            report.warnings.append(f"unused tensor {name}")
    return report


def init_random(seed: int, config: SSDConfig = SSDConfig()) -> WeightStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.

    Uses numpy's PCG64 generator; tensors are drawn in architecture order so
    the same seed always yields the same bytes.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors = {}
    for layer in architecture_layers(config):
        bound = 1.0 / np.sqrt(layer.fan_in)
        for suffix, shape in ((".weight", layer.weight_shape), (".bias", layer.bias_shape)):
            tensors[layer.name + suffix] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return WeightStore(tensors)


def zero_weights(config: SSDConfig = SSDConfig()) -> WeightStore:
    return WeightStore({name: np.zeros(shape, np.float32)
                        for name, shape in required_tensors(config).items()})
