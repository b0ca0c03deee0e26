import io
import logging
import os
import re
import tempfile
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Union

import numpy as np
from PIL import Image

from spinsplat.exceptions import SchemaError
from spinsplat.scene.models import ImageBuffer

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def atomic_write(path: PathLike, payload: Union[bytes, str]):
    """Write to a temp file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode('utf-8') if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def linear_to_srgb(values: np.ndarray) -> np.ndarray:
    """sRGB transfer curve for linear values in [0, 1]"""
    v = np.clip(values, 0.0, 1.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * np.power(v, 1.0 / 2.4) - 0.055)


def srgb_to_linear(values: np.ndarray) -> np.ndarray:
    """Inverse of linear_to_srgb"""
    v = np.clip(values, 0.0, 1.0)
    return np.where(v <= 0.04045, v / 12.92, np.power((v + 0.055) / 1.055, 2.4))


class ImageCodec(ABC):
    """Abstract base class for on-disk image formats"""

    @abstractmethod
    def encode(self, image: ImageBuffer) -> bytes:
        pass

    @abstractmethod
    def decode(self, payload: bytes) -> ImageBuffer:
        pass

    def write(self, path: PathLike, image: ImageBuffer):
        atomic_write(path, self.encode(image))

    def read(self, path: PathLike) -> ImageBuffer:
        with open(path, 'rb') as f:
            return self.decode(f.read())


class PngCodec(ImageCodec):
    """8-bit sRGB PNG for viewing; lossy with respect to linear radiance"""

    def encode(self, image: ImageBuffer) -> bytes:
        quantized = np.round(linear_to_srgb(image.pixels) * 255.0).astype(np.uint8)
        buffer = io.BytesIO()
        Image.fromarray(quantized, 'RGB').save(buffer, format='PNG')
        return buffer.getvalue()

    def decode(self, payload: bytes) -> ImageBuffer:
        pixels = np.asarray(Image.open(io.BytesIO(payload)).convert('RGB'), dtype=np.float64)
        return ImageBuffer(srgb_to_linear(pixels / 255.0))


class PfmCodec(ImageCodec):
    """32-bit float PFM, little-endian, rows stored bottom to top"""

    HEADER = re.compile(rb"^PF\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s")

    def encode(self, image: ImageBuffer) -> bytes:
        header = f"PF\n{image.width} {image.height}\n-1.0\n".encode('ascii')
        body = np.ascontiguousarray(image.pixels[::-1], dtype='<f4').tobytes()
        return header + body

    def decode(self, payload: bytes) -> ImageBuffer:
        match = self.HEADER.match(payload)
        if match is None:
            raise SchemaError('Not a color PFM file')
        width, height = int(match.group(1)), int(match.group(2))
        dtype = '<f4' if float(match.group(3)) < 0 else '>f4'
        body = payload[match.end():]
        expected = width * height * 3 * 4
        if len(body) != expected:
            raise SchemaError(f'PFM body has {len(body)} bytes, expected {expected}')
        pixels = np.frombuffer(body, dtype=dtype).reshape(height, width, 3)[::-1]
        return ImageBuffer(pixels.astype(np.float64))


class MaskCodec:
    """Alpha masks as 8-bit grayscale PNG"""

    def encode(self, mask: np.ndarray) -> bytes:
        quantized = np.round(np.clip(mask, 0.0, 1.0) * 255.0).astype(np.uint8)
        buffer = io.BytesIO()
        Image.fromarray(quantized, 'L').save(buffer, format='PNG')
        return buffer.getvalue()

    def write(self, path: PathLike, mask: np.ndarray):
        atomic_write(path, self.encode(mask))

    def read(self, path: PathLike) -> np.ndarray:
        with Image.open(path) as image:
            return np.asarray(image.convert('L'), dtype=np.float64) / 255.0


CODECS: Dict[str, ImageCodec] = {'.png': PngCodec(), '.pfm': PfmCodec()}


def codec_for(path: PathLike) -> ImageCodec:
    """Codec chosen by file extension"""
    suffix = Path(path).suffix.lower()
    if suffix not in CODECS:
        raise SchemaError(f"Unsupported image format '{suffix}'")
    return CODECS[suffix]


def write_image(path: PathLike, image: ImageBuffer):
    """Write an image with the codec for its extension"""
    codec_for(path).write(path, image)


def read_image(path: PathLike) -> ImageBuffer:
    """Read an image with the codec for its extension"""
    return codec_for(path).read(path)


def write_mask(path: PathLike, mask: np.ndarray):
    """Write an object mask as an 8-bit grayscale PNG"""
    MaskCodec().write(path, mask)


def read_mask(path: PathLike) -> np.ndarray:
    return MaskCodec().read(path)
