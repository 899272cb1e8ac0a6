"""Image feature vectors: the on-disk embedding format and extraction
backends.

The engine's numeric core runs on precomputed embeddings; extraction is
pluggable behind :class:`ExtractionBackend`. Every backend shares one
preprocessing contract: decode, convert to RGB, resize to 224x224.

On-disk CEMB layout (all little-endian):

    magic  4 bytes  b"CEMB"
    u16    format version (1)
    u64    n rows
    u32    d columns
    n x (u16 id byte length + UTF-8 id bytes)
    n*d    float32 values, row-major

CSV fallback: header ``id,f0,...,f{d-1}``, one row per image.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np
from PIL import Image

from .errors import BackendUnavailableError, EmbeddingFormatError

MAGIC = b"CEMB"
VERSION = 1
_HEADER = struct.Struct("<4sHQI")

INPUT_SIZE = 224  # preprocessing contract: 224x224 RGB


@dataclass
class EmbeddingMatrix:
    """n x d float32 feature matrix with stable, positionally aligned IDs."""

    ids: list[str]
    values: np.ndarray
    backend_tag: str = "precomputed"

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {self.values.shape}")
        if len(self.ids) != self.values.shape[0]:
            raise ValueError(
                f"{len(self.ids)} ids but {self.values.shape[0]} value rows"
            )
        self.validate()

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        if len(set(self.ids)) != len(self.ids):
            seen: set[str] = set()
            for image_id in self.ids:
                if image_id in seen:
                    raise EmbeddingFormatError(f"duplicate image id {image_id!r}")
                seen.add(image_id)
        if self.values.size:
            finite = np.isfinite(self.values).all(axis=1)
            if not finite.all():
                row = int(np.flatnonzero(~finite)[0])
                raise EmbeddingFormatError(
                    f"non-finite value in row {row} (id {self.ids[row]!r})"
                )

    def row(self, image_id: str) -> np.ndarray:
        return self.values[self.ids.index(image_id)]

    def subset(self, keep_ids) -> "EmbeddingMatrix":
        """Rows for the given ids, in this matrix's order."""
        keep = set(keep_ids)
        index = [i for i, image_id in enumerate(self.ids) if image_id in keep]
        missing = keep - {self.ids[i] for i in index}
        if missing:
            raise KeyError(f"ids not present in matrix: {sorted(missing)[:5]}")
        return EmbeddingMatrix(
            [self.ids[i] for i in index], self.values[index].copy(), self.backend_tag
        )


def save_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write CEMB; load(save(M)) is bit-identical."""
    payload = io.BytesIO()
    payload.write(_HEADER.pack(MAGIC, VERSION, matrix.n, matrix.dim))
    for image_id in matrix.ids:
        raw = image_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise EmbeddingFormatError(f"image id too long ({len(raw)} bytes)")
        payload.write(struct.pack("<H", len(raw)))
        payload.write(raw)
    payload.write(matrix.values.astype("<f4", copy=False).tobytes(order="C"))
    Path(path).write_bytes(payload.getvalue())


def _load_cemb(fh: BinaryIO, name: str) -> EmbeddingMatrix:
    header = fh.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise EmbeddingFormatError(f"{name}: truncated header")
    magic, version, n, dim = _HEADER.unpack(header)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise EmbeddingFormatError(f"{name}: unsupported version {version}")
    ids = []
    for i in range(n):
        len_bytes = fh.read(2)
        if len(len_bytes) < 2:
            raise EmbeddingFormatError(f"{name}: truncated id block at row {i}")
        (id_len,) = struct.unpack("<H", len_bytes)
        raw = fh.read(id_len)
        if len(raw) < id_len:
            raise EmbeddingFormatError(f"{name}: truncated id at row {i}")
        ids.append(raw.decode("utf-8"))
    expected = n * dim * 4
    blob = fh.read(expected)
    if len(blob) < expected:
        raise EmbeddingFormatError(
            f"{name}: payload holds {len(blob)} bytes, expected {expected}"
        )
    values = np.frombuffer(blob, dtype="<f4").reshape(n, dim)
    return EmbeddingMatrix(ids, values.copy())


def _load_csv(path: Path) -> EmbeddingMatrix:
    try:
        return _parse_csv(path)
    except (UnicodeDecodeError, csv.Error, ValueError) as exc:
        if isinstance(exc, EmbeddingFormatError):
            raise
        raise EmbeddingFormatError(
            f"{path}: neither CEMB (bad magic) nor parseable CSV: {exc}"
        ) from exc


def _parse_csv(path: Path) -> EmbeddingMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmbeddingFormatError(f"{path}: empty CSV") from None
        if not header or header[0] != "id" or any(
            col != f"f{i}" for i, col in enumerate(header[1:])
        ):
            raise EmbeddingFormatError(
                f"{path}: CSV header must be id,f0,...,f{{d-1}}, got {header[:4]}..."
            )
        dim = len(header) - 1
        ids = []
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}: line {line_no} has {len(row)} fields, expected {dim + 1}"
                )
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    values = np.asarray(rows, dtype=np.float32).reshape(len(ids), dim)
    return EmbeddingMatrix(ids, values)


def load_embeddings(path) -> EmbeddingMatrix:
    """Load a CEMB file, or fall back to the CSV layout."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == MAGIC:
            fh.seek(0)
            return _load_cemb(fh, str(path))
    return _load_csv(path)


# ---------------------------------------------------------------------------
# Extraction backends
# ---------------------------------------------------------------------------


def preprocess(image_bytes: bytes) -> np.ndarray:
    """Decode to an INPUT_SIZE x INPUT_SIZE x 3 uint8 RGB array."""
    try:
        with Image.open(io.BytesIO(image_bytes)) as img:
            rgb = img.convert("RGB").resize(
                (INPUT_SIZE, INPUT_SIZE), Image.Resampling.BILINEAR
            )
            return np.asarray(rgb, dtype=np.uint8)
    except Exception as exc:
        raise ValueError(f"undecodable image: {exc}") from exc


class ExtractionBackend:
    """Deterministic image -> vector mapping sharing the resize contract.

    Subclasses implement :meth:`_forward` on the preprocessed pixel array
    and must be stateless per call (calls may run in parallel).
    """

    name: str = "abstract"
    output_dim: int = 0

    def extract(self, image_bytes: bytes) -> np.ndarray:
        vec = np.asarray(
            self._forward(preprocess(image_bytes)), dtype=np.float32
        ).reshape(-1)
        if vec.shape[0] != self.output_dim:
            raise BackendUnavailableError(
                f"backend {self.name} produced {vec.shape[0]} dims, "
                f"declared {self.output_dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise BackendUnavailableError(f"backend {self.name} produced non-finite values")
        return vec

    def _forward(self, pixels: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PixelStatsBackend(ExtractionBackend):
    """Model-free backend: per-channel means over a grid of cells.

    Gives a coarse spatial-color signature (grid x grid x 3 values in
    [0, 1]). Not a learned representation, but deterministic, dependency
    free, and good enough to separate visually distinct image groups, so
    the whole pipeline can run without any model runtime.
    """

    def __init__(self, grid: int = 8):
        if INPUT_SIZE % grid != 0:
            raise ValueError(f"grid must divide {INPUT_SIZE}, got {grid}")
        self.grid = grid
        self.name = f"pixelstats-{grid}x{grid}"
        self.output_dim = grid * grid * 3

    def _forward(self, pixels: np.ndarray) -> np.ndarray:
        cell = INPUT_SIZE // self.grid
        scaled = pixels.astype(np.float64) / 255.0
        blocks = scaled.reshape(self.grid, cell, self.grid, cell, 3)
        return blocks.mean(axis=(1, 3)).reshape(-1)


class OnnxBackend(ExtractionBackend):
    """Runs a serialized pretrained network from an ONNX file.

    ``scale`` sets the pixel scaling applied before inference (default
    1/255, i.e. [0,1] inputs); models wanting their own normalization
    should bake it into the graph or override via config. Input layout is
    NCHW float32.
    """

    def __init__(
        self,
        model_path,
        input_name: str,
        output_name: str,
        output_dim: int,
        scale: float = 1.0 / 255.0,
    ):
        try:
            import onnxruntime  # noqa: F401  (optional extra)
        except ImportError as exc:
            raise BackendUnavailableError(
                "onnxruntime is not installed; install the 'onnx' extra or "
                "run on precomputed embeddings"
            ) from exc
        self._session = onnxruntime.InferenceSession(
            str(model_path), providers=["CPUExecutionProvider"]
        )
        self.model_path = str(model_path)
        self.input_name = input_name
        self.output_name = output_name
        self.output_dim = output_dim
        self.scale = scale
        self.name = f"onnx:{Path(model_path).name}"

    def _forward(self, pixels: np.ndarray) -> np.ndarray:
        batch = (pixels.astype(np.float32) * self.scale).transpose(2, 0, 1)[None]
        (out,) = self._session.run([self.output_name], {self.input_name: batch})
        return np.asarray(out, dtype=np.float32).reshape(-1)


_BACKENDS = {"pixelstats": PixelStatsBackend}


def make_backend(spec: str, **kwargs) -> ExtractionBackend:
    """Build a backend from a config string: ``pixelstats`` or ``onnx``."""
    if spec == "pixelstats":
        return PixelStatsBackend(**kwargs)
    if spec == "onnx":
        return OnnxBackend(**kwargs)
    raise ValueError(f"unknown backend {spec!r}; known: pixelstats, onnx")


def extract(backend: ExtractionBackend, image_bytes: bytes) -> np.ndarray:
    """Extract one vector; module-level convenience over backend.extract."""
    return backend.extract(image_bytes)


def extract_many(
    backend: ExtractionBackend, items: list[tuple[str, bytes]]
) -> EmbeddingMatrix:
    """Extract vectors for (image_id, bytes) pairs into a matrix."""
    ids = [image_id for image_id, _ in items]
    if not items:
        return EmbeddingMatrix([], np.zeros((0, backend.output_dim), np.float32),
                               backend_tag=backend.name)
    values = np.stack([backend.extract(raw) for _, raw in items])
    return EmbeddingMatrix(ids, values, backend_tag=backend.name)


def normalize_rows(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Opt-in L2 normalization (clustering uses raw activations by default)."""
    norms = np.linalg.norm(matrix.values.astype(np.float64), axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return EmbeddingMatrix(
        list(matrix.ids),
        (matrix.values / norms).astype(np.float32),
        matrix.backend_tag + "+l2",
    )
