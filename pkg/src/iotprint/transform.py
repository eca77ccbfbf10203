"""Session payloads to fixed-size byte images and IDX container files.

A session's payload is the concatenation of its packets' TCP payload
bytes in capture order. Payloads are truncated or zero-padded to exactly
784 bytes, viewable as a 28x28 grayscale image, and batches of them are
persisted in the MNIST-style IDX binary format (big-endian headers, raw
data bytes) so standard tooling can open them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capture import SessionRecord
from .errors import BadMagic, CountMismatch, DimensionMismatch, EmptyPayload, IoFailure

VECTOR_LEN = 784
IMAGE_SIDE = 28
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def extract_payload(session: SessionRecord, initiator_only: bool = False) -> bytes:
    """Concatenate the session's TCP payload bytes in capture order.

    Both directions contribute by default; *initiator_only* keeps just
    the bytes sent from the endpoint that opened the session. The result
    may be empty (pure-ACK sessions).
    """
    if initiator_only:
        origin = session.initiator_endpoint
        return b"".join(p.tcp_payload for p in session.packets
                        if (p.src_ip, p.src_port) == origin)
    return b"".join(p.tcp_payload for p in session.packets)


def dedupe_and_filter(payloads: list[bytes]) -> list[bytes]:
    """Drop empty payloads and all but the first of byte-identical ones."""
    seen: set[bytes] = set()
    kept = []
    for payload in payloads:
        if not payload or payload in seen:
            continue
        seen.add(payload)
        kept.append(payload)
    return kept


def fix_length(payload: bytes) -> bytes:
    """Clamp a nonempty payload to exactly VECTOR_LEN bytes.

    Longer payloads keep their first 784 bytes; shorter ones are padded
    with trailing 0x00 bytes.
    """
    if not payload:
        raise EmptyPayload("cannot build an image from an empty payload; "
                           "filter empties before fixing length")
    if len(payload) >= VECTOR_LEN:
        return bytes(payload[:VECTOR_LEN])
    return bytes(payload) + b"\x00" * (VECTOR_LEN - len(payload))


def to_image(vector: bytes | np.ndarray) -> np.ndarray:
    """Row-major 28x28 view of a 784-byte vector."""
    arr = np.frombuffer(bytes(vector), dtype=np.uint8) if isinstance(vector, (bytes, bytearray)) \
        else np.asarray(vector, dtype=np.uint8)
    if arr.size != VECTOR_LEN:
        raise DimensionMismatch(f"vector has {arr.size} bytes, need {VECTOR_LEN}")
    return arr.reshape(IMAGE_SIDE, IMAGE_SIDE).copy()


def from_image(image: np.ndarray) -> bytes:
    """Inverse of to_image."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise DimensionMismatch(f"image has shape {arr.shape}, need "
                                f"({IMAGE_SIDE}, {IMAGE_SIDE})")
    return arr.reshape(VECTOR_LEN).tobytes()


def stack_payload_vectors(vectors: list[bytes]) -> np.ndarray:
    """Stack fixed-length payload byte strings into an (N, 784) array."""
    if not vectors:
        return np.zeros((0, VECTOR_LEN), dtype=np.uint8)
    return np.frombuffer(b"".join(vectors), dtype=np.uint8).reshape(-1, VECTOR_LEN).copy()


@dataclass
class IdxDataset:
    """Images plus labels plus the label-index-to-name map."""

    images: np.ndarray                  # (N, 784) uint8
    labels: np.ndarray                  # (N,) uint8
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.images.ndim != 2 or self.images.shape[1] != VECTOR_LEN:
            raise DimensionMismatch(
                f"images must be (N, {VECTOR_LEN}), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatch(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if self.label_names and len(self.labels) and \
                int(self.labels.max()) >= len(self.label_names):
            raise CountMismatch(
                f"label {int(self.labels.max())} out of range for "
                f"{len(self.label_names)} label names")

    def __len__(self) -> int:
        return len(self.images)


def _names_path(label_path) -> Path:
    return Path(str(label_path) + ".names")


def write_idx(ds: IdxDataset, image_path, label_path) -> None:
    """Write an IdxDataset as MNIST-compatible image and label files.

    The image file carries magic 0x00000803 and big-endian N/28/28
    dimension fields; the label file carries magic 0x00000801 and N.
    Label names go to a sidecar "<label_path>.names" text map with one
    "index<TAB>name" line per class.
    """
    n = len(ds)
    try:
        with open(image_path, "wb") as fh:
            fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, IMAGE_SIDE, IMAGE_SIDE))
            fh.write(ds.images.tobytes())
        with open(label_path, "wb") as fh:
            fh.write(struct.pack(">II", LABEL_MAGIC, n))
            fh.write(ds.labels.tobytes())
        if ds.label_names:
            lines = [f"{i}\t{name}" for i, name in enumerate(ds.label_names)]
            _names_path(label_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write IDX files to {image_path}: {exc}") from exc


def _read_exact(fh, count: int, path, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CountMismatch(f"{path}: {what} needs {count} bytes, file has {len(data)}")
    return data


def read_idx(image_path, label_path) -> IdxDataset:
    """Read image/label IDX files back into an IdxDataset.

    Validates both magics, the 28x28 dimension fields and that the two
    files agree on N. Loads the label-name sidecar when present.
    """
    try:
        with open(image_path, "rb") as fh:
            magic, n_images, rows, cols = struct.unpack(
                ">IIII", _read_exact(fh, 16, image_path, "image header"))
            if magic != IMAGE_MAGIC:
                raise BadMagic(f"{image_path}: image magic 0x{magic:08X}, "
                               f"expected 0x{IMAGE_MAGIC:08X}")
            if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
                raise DimensionMismatch(f"{image_path}: dimensions {rows}x{cols}, "
                                        f"expected {IMAGE_SIDE}x{IMAGE_SIDE}")
            pixels = _read_exact(fh, n_images * VECTOR_LEN, image_path, "pixel data")
        with open(label_path, "rb") as fh:
            magic, n_labels = struct.unpack(
                ">II", _read_exact(fh, 8, label_path, "label header"))
            if magic != LABEL_MAGIC:
                raise BadMagic(f"{label_path}: label magic 0x{magic:08X}, "
                               f"expected 0x{LABEL_MAGIC:08X}")
            if n_labels != n_images:
                raise CountMismatch(f"image file has N={n_images} but label file "
                                    f"has N={n_labels}")
            labels = _read_exact(fh, n_labels, label_path, "label data")
    except OSError as exc:
        raise IoFailure(f"cannot read IDX files {image_path}/{label_path}: {exc}") from exc

    names_file = _names_path(label_path)
    label_names: list[str] = []
    if names_file.exists():
        for line in names_file.read_text(encoding="utf-8").splitlines():
            if line.strip():
                _, name = line.split("\t", 1)
                label_names.append(name)
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n_images, VECTOR_LEN).copy()
    return IdxDataset(images=images,
                      labels=np.frombuffer(labels, dtype=np.uint8).copy(),
                      label_names=label_names)


def write_image_idx(images: np.ndarray, path) -> None:
    """Write a bare image IDX file (no labels) for a single-device corpus."""
    if images.ndim != 2 or images.shape[1] != VECTOR_LEN:
        raise DimensionMismatch(f"images must be (N, {VECTOR_LEN}), got {images.shape}")
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack(">IIII", IMAGE_MAGIC, len(images),
                                 IMAGE_SIDE, IMAGE_SIDE))
            fh.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write image IDX {path}: {exc}") from exc


def read_image_idx(path) -> np.ndarray:
    """Read a bare image IDX file into an (N, 784) uint8 array."""
    try:
        with open(path, "rb") as fh:
            magic, n_images, rows, cols = struct.unpack(
                ">IIII", _read_exact(fh, 16, path, "image header"))
            if magic != IMAGE_MAGIC:
                raise BadMagic(f"{path}: image magic 0x{magic:08X}, "
                               f"expected 0x{IMAGE_MAGIC:08X}")
            if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
                raise DimensionMismatch(f"{path}: dimensions {rows}x{cols}, "
                                        f"expected {IMAGE_SIDE}x{IMAGE_SIDE}")
            pixels = _read_exact(fh, n_images * VECTOR_LEN, path, "pixel data")
    except OSError as exc:
        raise IoFailure(f"cannot read image IDX {path}: {exc}") from exc
    return np.frombuffer(pixels, dtype=np.uint8).reshape(n_images, VECTOR_LEN).copy()


def dump_payloads(payloads: list[bytes], out_dir, prefix: str = "session") -> list[Path]:
    """Write each payload as a raw headerless .bin file; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    try:
        for i, payload in enumerate(payloads):
            path = out_dir / f"{prefix}-{i:06d}.bin"
            path.write_bytes(payload)
            paths.append(path)
    except OSError as exc:
        raise IoFailure(f"cannot write payload dumps under {out_dir}: {exc}") from exc
    return paths
