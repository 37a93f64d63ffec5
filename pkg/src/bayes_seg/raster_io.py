"""Image loading, saving and rendering.

Only PNG (8-bit gray, RGB, palette) and binary PGM are read. Renders are PNG.
Color input is reduced to intensity with Rec.709 luma, rounded half-up.
"""

import colorsys
import io
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from PIL import Image, UnidentifiedImageError

from .utils import ConfigurationError, ImageFormatError, ImageReadError

logger = logging.getLogger(__name__)

REC709 = (0.2126, 0.7152, 0.0722)
MAX_PALETTE = 16

Color = tuple[int, int, int]


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale raster; ``data`` is a row-major (height, width) array."""

    data: NDArray[np.uint8]

    def __post_init__(self) -> None:
        if self.data.ndim != 2 or self.data.dtype != np.uint8:
            raise ImageFormatError(
                f"gray image must be a 2-D uint8 array, got {self.data.ndim}-D {self.data.dtype}"
            )
        if self.data.size == 0:
            raise ImageFormatError("gray image is empty")

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @classmethod
    def from_array(cls, values: NDArray[np.generic] | list[list[int]]) -> "GrayImage":
        """Build from any integer-valued 2-D array, checking the 0..255 range."""
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise ImageFormatError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ImageFormatError("intensities must lie in 0..255")
        return cls(np.ascontiguousarray(arr, dtype=np.uint8))


@dataclass(frozen=True)
class LabelImage:
    """Pixel-resolved class map with labels in ``1..k``."""

    labels: NDArray[np.int32]
    k: int

    def __post_init__(self) -> None:
        if self.labels.ndim != 2:
            raise ImageFormatError(f"label image must be 2-D, got shape {self.labels.shape}")
        if self.k < 1:
            raise ImageFormatError(f"label image needs k >= 1, got {self.k}")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > self.k):
            raise ImageFormatError(f"labels must lie in 1..{self.k}")

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @classmethod
    def from_array(cls, values: NDArray[np.generic] | list[list[int]], k: int | None = None) -> "LabelImage":
        arr = np.ascontiguousarray(np.asarray(values), dtype=np.int32)
        return cls(arr, int(arr.max()) if k is None else k)


def luminance(rgb: NDArray[np.generic]) -> NDArray[np.uint8]:
    """Rec.709 luma of an (..., 3) RGB array, rounded half-up to uint8."""
    channels = np.asarray(rgb, dtype=np.float64)
    luma = channels @ np.asarray(REC709)
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def _open(path: Path) -> Image.Image:
    try:
        image = Image.open(path)
        image.load()
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"unsupported image format: {path}") from e
    except OSError as e:
        raise ImageReadError(f"cannot read image {path}: {e}") from e
    if image.format not in ("PNG", "PPM"):
        raise ImageFormatError(f"unsupported image format {image.format}: {path}")
    return image


def _to_gray(image: Image.Image, path: Path) -> NDArray[np.uint8]:
    if image.format == "PPM" and image.mode != "L":
        raise ImageFormatError(f"only 8-bit binary PGM is supported, got mode {image.mode}: {path}")
    mode = image.mode
    if mode == "L":
        return np.asarray(image, dtype=np.uint8)
    if mode in ("1", "LA"):
        return np.asarray(image.convert("L"), dtype=np.uint8)
    if mode in ("RGB", "RGBA", "P", "PA"):
        return luminance(np.asarray(image.convert("RGB")))
    raise ImageFormatError(f"unsupported pixel mode {mode}: {path}")


def load_gray(path: str | Path) -> GrayImage:
    """Load a PNG or binary PGM file as an 8-bit grayscale image."""
    path = Path(path)
    image = _open(path)
    data = _to_gray(image, path)
    logger.debug("loaded %s (%dx%d, mode %s)", path, data.shape[1], data.shape[0], image.mode)
    return GrayImage(np.ascontiguousarray(data))


def load_labels(path: str | Path) -> LabelImage:
    """Load a ground-truth map. Distinct gray values are ranked to classes 1..k."""
    path = Path(path)
    data = _to_gray(_open(path), path)
    values, inverse = np.unique(data, return_inverse=True)
    labels = inverse.reshape(data.shape).astype(np.int32) + 1
    return LabelImage(labels, len(values))


def encode_png(pixels: NDArray[np.uint8]) -> bytes:
    """Encode a (h, w) or (h, w, 3) uint8 array as PNG bytes."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def encode_pgm(pixels: NDArray[np.uint8] | NDArray[np.int32]) -> bytes:
    """Encode a 2-D array as binary PGM (P5); int32 input is written 16-bit (maxval 65535)."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buf, format="PPM")
    return buf.getvalue()


def save_gray(img: GrayImage, path: str | Path) -> Path:
    """Write an image as PGM when the suffix is ``.pgm``, PNG otherwise."""
    path = Path(path)
    payload = encode_pgm(img.data) if path.suffix.lower() == ".pgm" else encode_png(img.data)
    path.write_bytes(payload)
    return path


def save_id_map_pgm(assignment: NDArray[np.integer], path: str | Path) -> Path:
    """Write superpixel ids as a 16-bit PGM for inspection."""
    if assignment.size and int(assignment.max()) > np.iinfo(np.uint16).max:
        raise ImageFormatError("too many superpixels for a 16-bit id map")
    path = Path(path)
    path.write_bytes(encode_pgm(assignment.astype(np.int32)))
    return path


def default_palette(k: int) -> dict[int, Color]:
    """Fixed palette of ``k`` <= 16 hues, each prefix as spread out as possible."""
    if not 1 <= k <= MAX_PALETTE:
        raise ConfigurationError(f"default palette covers 1..{MAX_PALETTE} classes, got {k}")
    # bit-reversed slot order: 0, 8, 4, 12, 2, ...
    slots = [int(f"{i:04b}"[::-1], 2) for i in range(MAX_PALETTE)]
    palette: dict[int, Color] = {}
    for label, slot in enumerate(slots[:k], start=1):
        r, g, b = colorsys.hsv_to_rgb(slot / MAX_PALETTE, 1.0, 1.0)
        palette[label] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


def render_labels(labels: LabelImage, palette: Mapping[int, Color] | None = None) -> bytes:
    """Render a label map to RGB PNG bytes. Identical input gives identical bytes."""
    palette = default_palette(labels.k) if palette is None else palette
    present = np.unique(labels.labels)
    missing = [int(v) for v in present if int(v) not in palette]
    if missing:
        raise ConfigurationError(f"palette has no color for labels {missing}")
    lut = np.zeros((int(present.max()) + 1, 3), dtype=np.uint8)
    for v in present:
        lut[int(v)] = palette[int(v)]
    return encode_png(lut[labels.labels])


def boundary_mask(assignment: NDArray[np.integer]) -> NDArray[np.bool_]:
    """Pixels whose right or lower neighbour belongs to a different region."""
    mask = np.zeros(assignment.shape, dtype=bool)
    mask[:, :-1] |= assignment[:, :-1] != assignment[:, 1:]
    mask[:-1, :] |= assignment[:-1, :] != assignment[1:, :]
    return mask


def render_overlay(
    img: GrayImage,
    assignment: NDArray[np.integer],
    color: Color = (255, 0, 0),
) -> bytes:
    """Render region boundaries over the gray image as RGB PNG bytes."""
    if assignment.shape != img.data.shape:
        raise ImageFormatError(
            f"assignment shape {assignment.shape} does not match image {img.data.shape}"
        )
    rgb = np.repeat(img.data[:, :, None], 3, axis=2)
    rgb[boundary_mask(assignment)] = color
    return encode_png(rgb)
