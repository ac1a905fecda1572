"""8-bit RGB image buffers, lossless PNG/PPM I/O, tensor preprocessing."""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractError, CorruptImageError, ShapeError, UnsupportedFormatError
from .tensor import Tensor


@dataclass
class ImageBuffer:
    width: int
    height: int
    samples: np.ndarray  # uint8, shape (height, width, 3)

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.uint8)
        if self.samples.shape != (self.height, self.width, 3):
            raise ShapeError(
                f"sample block {self.samples.shape} != ({self.height}, {self.width}, 3)"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"expected (H, W, 3) uint8 samples, got {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], samples=arr)


def _sniff_format(path: str, blob: bytes) -> str:
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        return "png"
    if blob[:2] == b"P6":
        return "ppm"
    ext = os.path.splitext(str(path))[1].lower()
    raise UnsupportedFormatError(f"unsupported image format for {path!r} (ext {ext!r})")


def load_image(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        blob = fh.read()
    fmt = _sniff_format(path, blob)
    if fmt == "ppm":
        return _decode_ppm(blob, path)
    try:
        with Image.open(io.BytesIO(blob)) as img:
            img.load()  # force full decode so truncation surfaces here
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptImageError(f"cannot decode {path!r}: {exc}") from exc
    return ImageBuffer.from_array(arr)


def save_image(buffer: ImageBuffer, path) -> None:
    """Atomic write; format chosen by extension (.png default, .ppm for P6)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        payload = _encode_ppm(buffer)
    elif ext in (".png", ""):
        bio = io.BytesIO()
        Image.fromarray(buffer.samples, mode="RGB").save(bio, format="PNG")
        payload = bio.getvalue()
    else:
        raise UnsupportedFormatError(f"cannot write format {ext!r}")
    _write_atomic(path, payload)


def _write_atomic(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _decode_ppm(blob: bytes, path) -> ImageBuffer:
    # P6 with a single maxval of 255; comments allowed in the header
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptImageError(f"truncated PPM header in {path!r}")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise CorruptImageError(f"bad PPM header in {path!r}") from exc
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval} unsupported (only 255)")
    need = width * height * 3
    data = blob[pos : pos + need]
    if len(data) != need:
        raise CorruptImageError(f"PPM pixel data truncated in {path!r}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return ImageBuffer(width=width, height=height, samples=arr.copy())


def _encode_ppm(buffer: ImageBuffer) -> bytes:
    header = f"P6\n{buffer.width} {buffer.height}\n255\n".encode("ascii")
    return header + buffer.samples.tobytes()


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class PreprocessSpec:
    scale_to_unit: bool = True
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    resize: tuple[int, int] | None = None  # (width, height)

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ContractError(f"preprocess std must be positive, got {self.std}")

    @classmethod
    def from_metadata(cls, metadata: dict[str, str]) -> "PreprocessSpec":
        """Read normalization constants recorded in a weight file blob."""

        def triple(key, default):
            raw = metadata.get(key)
            if raw is None:
                return default
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 3:
                raise ContractError(f"metadata {key!r} must have 3 values, got {raw!r}")
            return tuple(parts)

        scale = metadata.get("preprocess.scale", "unit") == "unit"
        return cls(scale_to_unit=scale,
                   mean=triple("preprocess.mean", (0.0, 0.0, 0.0)),
                   std=triple("preprocess.std", (1.0, 1.0, 1.0)))

    def to_metadata(self) -> dict[str, str]:
        return {
            "preprocess.scale": "unit" if self.scale_to_unit else "raw",
            "preprocess.mean": ",".join(f"{v:g}" for v in self.mean),
            "preprocess.std": ",".join(f"{v:g}" for v in self.std),
        }


def preprocess(buffer: ImageBuffer, spec: PreprocessSpec) -> Tensor:
    arr = buffer.samples
    if spec.resize is not None and (buffer.width, buffer.height) != spec.resize:
        img = Image.fromarray(arr, mode="RGB").resize(spec.resize, Image.BILINEAR)
        arr = np.asarray(img, dtype=np.uint8)
    x = arr.astype(np.float32)
    if spec.scale_to_unit:
        x = x / np.float32(255.0)
    mean = np.asarray(spec.mean, dtype=np.float32).reshape(1, 1, 3)
    std = np.asarray(spec.std, dtype=np.float32).reshape(1, 1, 3)
    x = (x - mean) / std
    chw = np.ascontiguousarray(x.transpose(2, 0, 1)[None])
    return Tensor(chw)


def deprocess(tensor: Tensor, spec: PreprocessSpec) -> ImageBuffer:
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if data.ndim != 4 or data.shape[0] != 1 or data.shape[1] != 3:
        raise ShapeError(f"deprocess expects a (1, 3, H, W) tensor, got {data.shape}")
    hwc = data[0].transpose(1, 2, 0).astype(np.float32)
    mean = np.asarray(spec.mean, dtype=np.float32).reshape(1, 1, 3)
    std = np.asarray(spec.std, dtype=np.float32).reshape(1, 1, 3)
    x = hwc * std + mean
    if spec.scale_to_unit:
        x = x * np.float32(255.0)
    x = np.clip(np.rint(x), 0, 255).astype(np.uint8)
    return ImageBuffer.from_array(x)
