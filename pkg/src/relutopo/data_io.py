"""Byte-level formats: MNIST IDX input, model JSON, PGM images, orbit CSV."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    BadLabel,
    BadMagic,
    BadShape,
    DimensionMismatch,
    ParseError,
    Truncated,
)
from .mlp import MlpNetwork

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class ImageSet:
    images: np.ndarray  # (count, pixels) float64 in [0, 1]
    labels: np.ndarray  # (count,) int64

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DimensionMismatch(
                f"{len(self.images)} images but {len(self.labels)} labels")

    @property
    def count(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "ImageSet":
        return ImageSet(self.images[index], self.labels[index])


def _header(data: bytes, magic: int, ndims: int) -> tuple[int, ...]:
    need = 4 * (1 + ndims)
    if len(data) < 4:
        raise Truncated("file is too short to hold an IDX magic number")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise BadMagic(f"expected magic {magic}, found {got}")
    if len(data) < need:
        raise Truncated(f"IDX header needs {need} bytes, file has {len(data)}")
    return struct.unpack(">" + "I" * ndims, data[4:need])


def _payload(data: bytes, offset: int, size: int) -> np.ndarray:
    have = len(data) - offset
    if have < size:
        raise Truncated(f"header implies {size} payload bytes, found {have}")
    if have > size:
        raise BadShape(f"{have - size} trailing bytes after the IDX payload")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=offset)


def read_idx_images(data: bytes, require_784: bool = False) -> np.ndarray:
    """Decode an IDX3 image file into a ``(count, rows*cols)`` float array.

    Each byte ``b`` becomes ``b / 255``; pixel order within an image is
    row-major as stored.
    """
    count, rows, cols = _header(data, IMAGE_MAGIC, 3)
    if require_784 and rows * cols != 784:
        raise BadShape(f"images are {rows}x{cols}, expected 784 pixels")
    raw = _payload(data, 16, count * rows * cols)
    return raw.reshape(count, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(data: bytes) -> np.ndarray:
    (count,) = _header(data, LABEL_MAGIC, 1)
    raw = _payload(data, 8, count)
    if np.any(raw > 9):
        bad = int(raw[np.argmax(raw > 9)])
        raise BadLabel(f"label byte {bad} is outside 0..9")
    return raw.astype(np.int64)


def write_idx_images(images, rows: int = 28, cols: int = 28) -> bytes:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != rows * cols:
        raise DimensionMismatch(f"images of shape {images.shape} are not {rows}x{cols}")
    raw = _round_bytes(images)
    return struct.pack(">IIII", IMAGE_MAGIC, len(images), rows, cols) + raw.tobytes()


def write_idx_labels(labels) -> bytes:
    labels = np.asarray(labels)
    if np.any((labels < 0) | (labels > 9)):
        raise BadLabel("labels must lie in 0..9")
    return struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def _find_mnist_file(directory: Path, name: str) -> Path:
    # some mirrors ship "train-images.idx3-ubyte" instead of the canonical name
    for candidate in (name, name.replace("-idx", ".idx")):
        path = directory / candidate
        if path.is_file():
            return path
    raise FileNotFoundError(f"missing MNIST file {directory / name}")


def load_mnist_split(directory, split: str) -> ImageSet:
    """Load one split, ``"train"`` or ``"test"``."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    directory = Path(directory)
    images = _find_mnist_file(directory, MNIST_FILES[f"{split}_images"])
    labels = _find_mnist_file(directory, MNIST_FILES[f"{split}_labels"])
    return ImageSet(read_idx_images(images.read_bytes(), require_784=True),
                    read_idx_labels(labels.read_bytes()))


def load_mnist(directory) -> tuple[ImageSet, ImageSet]:
    """Load the (train, test) splits from the four uncompressed IDX files."""
    directory = Path(directory)
    for name in MNIST_FILES.values():
        _find_mnist_file(directory, name)  # report the first missing file before reading any
    return load_mnist_split(directory, "train"), load_mnist_split(directory, "test")


# --- model JSON -------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _json_vector(v: np.ndarray) -> str:
    return "[" + ", ".join(_fmt(x) for x in v) + "]"


def _json_matrix(m: np.ndarray) -> str:
    return "[\n    " + ",\n    ".join(_json_vector(row) for row in m) + "\n  ]"


def write_model(network: MlpNetwork) -> bytes:
    """Canonical JSON rendering; floats carry 17 significant digits."""
    text = (
        "{\n"
        f'  "d_in": {network.d_in},\n'
        f'  "d_hidden": {network.d_hidden},\n'
        f'  "d_out": {network.d_out},\n'
        f'  "w1": {_json_matrix(network.w1)},\n'
        f'  "b1": {_json_vector(network.b1)},\n'
        f'  "w2": {_json_matrix(network.w2)},\n'
        f'  "b2": {_json_vector(network.b2)}\n'
        "}\n"
    )
    return text.encode("utf-8")


def _as_array(doc: dict, key: str, shape: tuple[int, ...]) -> np.ndarray:
    if key not in doc:
        raise ParseError(f"model document lacks {key!r}")
    value = doc[key]
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        # ragged nested lists land here
        raise DimensionMismatch(f"{key!r} is not a rectangular numeric array") from exc
    if arr.shape != shape:
        raise DimensionMismatch(f"{key!r} has shape {arr.shape}, expected {shape}")
    return arr


def read_model(data) -> MlpNetwork:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("model file is not UTF-8") from exc
    try:
        # ".17g" writes negative zero as "-0", which json would read as the integer 0
        doc = json.loads(data, parse_int=lambda s: -0.0 if s == "-0" else int(s))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("model JSON must be an object")
    dims = []
    for key in ("d_in", "d_hidden", "d_out"):
        v = doc.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ParseError(f"{key!r} must be a positive integer")
        dims.append(v)
    d_in, d_hidden, d_out = dims
    return MlpNetwork(
        _as_array(doc, "w1", (d_in, d_hidden)),
        _as_array(doc, "b1", (d_hidden,)),
        _as_array(doc, "w2", (d_hidden, d_out)),
        _as_array(doc, "b2", (d_out,)),
    )


def save_model(network: MlpNetwork, path) -> None:
    Path(path).write_bytes(write_model(network))


def load_model(path) -> MlpNetwork:
    return read_model(Path(path).read_bytes())


# --- PGM ---------------------------------------------------------------------

def _round_bytes(values: np.ndarray) -> np.ndarray:
    # clamp then round half away from zero (all values are non-negative here)
    scaled = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def encode_pgm(pixels, width: int, height: int) -> bytes:
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1)
    if pixels.size != width * height:
        raise DimensionMismatch(f"{pixels.size} pixels for a {width}x{height} image")
    return f"P5\n{width} {height}\n255\n".encode("ascii") + _round_bytes(pixels).tobytes()


def write_pgm(image, path=None) -> bytes:
    """Render a 784-vector as a 28x28 binary PGM; optionally write it to ``path``."""
    data = encode_pgm(image, 28, 28)
    if path is not None:
        Path(path).write_bytes(data)
    return data


def write_pgm_strip(images: Sequence, path=None, side: int = 28) -> bytes:
    """Tile images left to right into one ``side x (side*len)`` PGM."""
    tiles = [np.asarray(im, dtype=np.float64).reshape(side, side) for im in images]
    if not tiles:
        raise DimensionMismatch("a strip needs at least one image")
    strip = np.hstack(tiles)
    data = encode_pgm(strip, strip.shape[1], side)
    if path is not None:
        Path(path).write_bytes(data)
    return data


# --- orbit CSV ---------------------------------------------------------------

ORBIT_CSV_HEADER = "seed_id,iter,argmax_class,prob,grad_norm,pc1,pc2"


def _num(v) -> str:
    return repr(float(v))


def write_orbit_summary(orbits: Iterable, projector=None, header: bool = True) -> bytes:
    """One CSV row per (orbit, iteration).

    ``projector`` is a :class:`relutopo.flow.PcaModel` (at least two
    components); without it the pc columns are left empty.
    """
    out = io.StringIO()
    if header:
        out.write(ORBIT_CSV_HEADER + "\n")
    dim = None
    for orbit in orbits:
        states = np.asarray(orbit.states)
        if dim is None:
            dim = states.shape[1]
            if projector is not None and projector.mean.shape[0] != dim:
                raise DimensionMismatch(
                    f"projector expects dimension {projector.mean.shape[0]}, states have {dim}")
        elif states.shape[1] != dim:
            raise DimensionMismatch("orbits do not share a state dimension")
        if projector is not None:
            pcs = projector.project(states)
        for t in range(len(states)):
            pc = f"{_num(pcs[t, 0])},{_num(pcs[t, 1])}" if projector is not None else ","
            out.write(f"{orbit.seed_id},{t},{int(orbit.classes[t])},"
                      f"{_num(orbit.probs[t])},{_num(orbit.grad_norms[t])},{pc}\n")
    return out.getvalue().encode("utf-8")
