"""Loading and normalizing sketch images from files and request payloads.

Anything that is not already a 64x64 single-channel image is converted to
grayscale, center-cropped square, resampled with nearest neighbor, and
binarized at 0.5 so inputs match the edge-map training domain.
"""

from __future__ import annotations

import base64
import binascii
import io

import numpy as np

SKETCH_SIZE = 64
RAW_PAYLOAD_BYTES = SKETCH_SIZE * SKETCH_SIZE


class PayloadError(ValueError):
    """Request payload is not decodable as an image."""


def normalize_sketch(array):
    """Float image in [0,1] of any size -> binarized 64x64 float32."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    if arr.ndim != 2:
        raise PayloadError("sketch image must be 2-d")
    h, w = arr.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    arr = arr[top : top + side, left : left + side]
    if side != SKETCH_SIZE:
        idx = (np.arange(SKETCH_SIZE) * side / SKETCH_SIZE).astype(np.int64)
        arr = arr[np.ix_(idx, idx)]
    return (arr > 0.5).astype(np.float32)


def load_sketch(path):
    """Read an image file (any raster format Pillow knows) as a sketch."""
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    return normalize_sketch(arr)


def sketch_from_payload(payload_b64):
    """Decode a base64 request payload into a normalized sketch.

    The payload is either exactly 4096 raw bytes (a 64x64 uint8 image,
    row-major) or a lossless raster file such as PNG.
    """
    try:
        blob = base64.b64decode(payload_b64, validate=True)
    except (binascii.Error, ValueError, TypeError) as exc:
        raise PayloadError(f"image is not valid base64: {exc}")
    if len(blob) == RAW_PAYLOAD_BYTES:
        arr = np.frombuffer(blob, dtype=np.uint8).reshape(SKETCH_SIZE, SKETCH_SIZE)
        return normalize_sketch(arr.astype(np.float32) / 255.0)
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(blob)) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise PayloadError(f"image payload is neither raw 64x64 nor a raster file: {exc}")
    return normalize_sketch(arr)


def sketch_to_payload(sketch):
    """Inverse of the raw-byte payload: 64x64 floats -> base64 string."""
    arr = (np.asarray(sketch, dtype=np.float32) * 255).clip(0, 255).astype(np.uint8)
    return base64.b64encode(arr.tobytes()).decode("ascii")
