"""Persistence: the SKT array format, heatmap export, and model manifests.

SKT layout (all little-endian):

    magic   4 bytes  b"SKPD"
    version u16      1
    ndim    u16
    dims    ndim x u64
    payload prod(dims) x f64, row-major

Write-then-read roundtrips are bit-identical.  Models are stored as one
plain-text ``key=value`` manifest plus SKT arrays next to it.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .linalg import KpdShape, as_f64
from .linear import LocalSmoothModel, MultiTermModel, OneTermModel, PathTrace
from .nonlinear import Activation, NonlinearModel

SKT_MAGIC = b"SKPD"
SKT_VERSION = 1
_HEADER = struct.Struct("<4sHH")


class SktError(ValueError):
    """Malformed SKT file."""


class SktMagicError(SktError):
    pass


class SktVersionError(SktError):
    pass


class SktTruncatedError(SktError):
    pass


def skt_write(path, array) -> None:
    arr = as_f64(array)
    if arr.ndim < 1 or arr.ndim > 4:
        raise ValueError(f"SKT stores rank 1..4 arrays, got rank {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SKT_MAGIC, SKT_VERSION, arr.ndim))
        fh.write(np.asarray(arr.shape, dtype="<u8").tobytes())
        fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def skt_read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise SktTruncatedError(
                f"{path}: header truncated ({len(head)} of {_HEADER.size} bytes)"
            )
        magic, version, ndim = _HEADER.unpack(head)
        if magic != SKT_MAGIC:
            raise SktMagicError(f"{path}: bad magic {magic!r}, expected {SKT_MAGIC!r}")
        if version != SKT_VERSION:
            raise SktVersionError(
                f"{path}: unsupported version {version}, expected {SKT_VERSION}"
            )
        if ndim < 1 or ndim > 4:
            raise SktError(f"{path}: ndim {ndim} outside 1..4")
        raw_dims = fh.read(8 * ndim)
        if len(raw_dims) < 8 * ndim:
            raise SktTruncatedError(
                f"{path}: dims truncated ({len(raw_dims)} of {8 * ndim} bytes)"
            )
        dims = np.frombuffer(raw_dims, dtype="<u8").astype(np.int64)
        count = int(np.prod(dims))
        payload = fh.read(8 * count)
        if len(payload) < 8 * count:
            raise SktTruncatedError(
                f"{path}: payload truncated, expected {8 * count} bytes, "
                f"got {len(payload)}"
            )
        return np.frombuffer(payload, dtype="<f8").reshape(tuple(dims)).copy()


class SktWriter:
    """Incremental SKT writer for stacks too large to hold in memory."""

    def __init__(self, path, dims):
        dims = tuple(int(d) for d in dims)
        if not 1 <= len(dims) <= 4:
            raise ValueError("SKT stores rank 1..4 arrays")
        self._expect = int(np.prod(dims))
        self._written = 0
        self._fh = open(path, "wb")
        self._fh.write(_HEADER.pack(SKT_MAGIC, SKT_VERSION, len(dims)))
        self._fh.write(np.asarray(dims, dtype="<u8").tobytes())

    def append(self, chunk) -> None:
        chunk = as_f64(chunk)
        self._written += chunk.size
        if self._written > self._expect:
            raise ValueError("more data appended than the declared dims hold")
        self._fh.write(chunk.astype("<f8", copy=False).tobytes(order="C"))

    def close(self) -> None:
        try:
            if self._written != self._expect:
                raise ValueError(
                    f"declared {self._expect} values but wrote {self._written}"
                )
        finally:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *exc):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False


def export_heatmap(c, path, fmt: str = "pgm") -> None:
    """Write a 2D array as binary PGM (P5, 8-bit) or CSV.

    PGM scaling is affine min -> 0, max -> 255; a constant array maps to
    all 128.  CSV values roundtrip within 1e-12.
    """
    c = as_f64(c)
    if c.ndim != 2:
        raise ValueError("heatmap export needs a 2D array (slice 3D inputs first)")
    if fmt == "pgm":
        lo, hi = float(c.min()), float(c.max())
        if hi > lo:
            scaled = np.rint((c - lo) / (hi - lo) * 255.0).astype(np.uint8)
        else:
            scaled = np.full(c.shape, 128, dtype=np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{c.shape[1]} {c.shape[0]}\n255\n".encode("ascii"))
            fh.write(scaled.tobytes(order="C"))
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in c:
                writer.writerow([format(v, ".17g") for v in row])
    else:
        raise ValueError(f"unknown heatmap format {fmt!r}")


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key] = value
    return out


def _dims_str(dims) -> str:
    return "x".join(str(int(d)) for d in dims)


def parse_dims(text: str) -> tuple:
    try:
        dims = tuple(int(tok) for tok in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"cannot parse dims {text!r} (expected e.g. 128x128)") from None
    if not dims or any(d < 1 for d in dims):
        raise ValueError(f"bad dims {text!r}")
    return dims


def write_trace_csv(path, trace: PathTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lambda", "b_norm", "a_nnz", "rss", "rel_change"])
        for t in range(trace.steps):
            writer.writerow(
                [
                    t + 1,
                    format(trace.lam[t], ".17g"),
                    format(trace.b_norm[t], ".17g"),
                    trace.a_nnz[t],
                    format(trace.rss[t], ".17g"),
                    format(trace.rel_change[t], ".17g"),
                ]
            )


def save_model(outdir, model, trace: PathTrace | None = None, extra: dict | None = None):
    """Write a fitted model as manifest + SKT arrays (+ optional trace CSV)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {}
    if isinstance(model, OneTermModel):
        manifest["kind"] = "one_term"
        manifest["rank"] = 1
        skt_write(outdir / "a.skt", model.a)
        skt_write(outdir / "b.skt", model.b)
        shape = model.shape
    elif isinstance(model, MultiTermModel):
        manifest["kind"] = "multi_term"
        manifest["rank"] = model.rank
        skt_write(outdir / "a.skt", model.abar)
        skt_write(outdir / "b.skt", model.bbar)
        shape = model.shape
    elif isinstance(model, NonlinearModel):
        manifest["kind"] = "nonlinear"
        manifest["rank"] = model.rank
        manifest["activation"] = model.activation.kind
        skt_write(outdir / "a.skt", model.maps)
        skt_write(outdir / "b.skt", model.filters)
        shape = model.shape
    elif isinstance(model, LocalSmoothModel):
        manifest["kind"] = "local_smooth"
        manifest["rank"] = 1
        skt_write(outdir / "a.skt", model.a)
        skt_write(outdir / "b.skt", np.full(model.shape.block_size,
                                            1.0 / model.shape.block_size))
        shape = model.shape
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    manifest["image_dims"] = _dims_str(shape.image_dims)
    manifest["block_dims"] = _dims_str(shape.block_dims)
    manifest.setdefault("activation", "-")
    manifest["a_file"] = "a.skt"
    manifest["b_file"] = "b.skt"
    if extra:
        manifest.update(extra)
    write_manifest(outdir / "manifest.txt", manifest)
    if trace is not None:
        write_trace_csv(outdir / "trace.csv", trace)


def load_model(outdir):
    """Reload a model directory; returns (model, manifest dict)."""
    outdir = Path(outdir)
    manifest = read_manifest(outdir / "manifest.txt")
    shape = KpdShape(parse_dims(manifest["image_dims"]), parse_dims(manifest["block_dims"]))
    a = skt_read(outdir / manifest.get("a_file", "a.skt"))
    b = skt_read(outdir / manifest.get("b_file", "b.skt"))
    kind = manifest.get("kind", "")
    if kind == "one_term":
        model = OneTermModel(a=a.ravel(), b=b.ravel(), shape=shape)
    elif kind == "multi_term":
        model = MultiTermModel(abar=a, bbar=b, shape=shape, rank=a.shape[1])
    elif kind == "nonlinear":
        model = NonlinearModel(
            filters=b, maps=a, activation=Activation(manifest["activation"]),
            shape=shape,
        )
    elif kind == "local_smooth":
        model = LocalSmoothModel(a=a.ravel(), shape=shape)
    else:
        raise ValueError(f"unknown model kind {kind!r} in {outdir}")
    for ref in (manifest.get("a_file", "a.skt"), manifest.get("b_file", "b.skt")):
        if not (outdir / ref).exists():  # pragma: no cover - read above would fail first
            raise FileNotFoundError(outdir / ref)
    return model, manifest


def metrics_json(record: dict) -> str:
    """Serialize a metrics record with the canonical key order."""
    import json

    keys = ["fpr", "tpr", "rmse", "rmse_pred", "p_value", "reps", "seed"]
    out = {k: record.get(k) for k in keys}
    out.update({k: v for k, v in record.items() if k not in keys})
    return json.dumps(out, indent=2, sort_keys=False)
