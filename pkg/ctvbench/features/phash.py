"""
64-bit DCT perceptual hashing and the shared bicubic resampling kernel.

Hash construction: luma -> bicubic resample to 32x32 -> orthonormal 2-D DCT-II
-> top-left 8x8 block (DC term included) -> bit set iff the coefficient is
strictly above the block median. Bits are packed row-major with coefficient
(0, 0) in the most significant position.
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.fft import dct

from ..core.errors import ImageDecodeError
from ..utils.logging import get_logger
from ..utils.validation import validate_dimensions

logger = get_logger(__name__)

HASH_SIZE = 8
DCT_SIZE = 32
CATMULL_ROM_A = -0.5
# coefficients are quantized before thresholding so float noise cannot flip bits
COEFF_DECIMALS = 6
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

ImageLike = Union[np.ndarray, Image.Image]


def load_rgb(path: Union[str, Path]) -> np.ndarray:
    """Decode an image file into an HxWx3 float64 array."""
    try:
        with Image.open(path) as img:
            img.load()
            return np.asarray(img.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def to_array(image: ImageLike) -> np.ndarray:
    """Coerce a PIL image or array into a float64 array (HxW or HxWxC)."""
    if isinstance(image, Image.Image):
        mode = "L" if image.mode in ("L", "1", "I", "F") else "RGB"
        return np.asarray(image.convert(mode), dtype=np.float64)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ImageDecodeError(f"expected a 2-D or 3-D image array, got shape {arr.shape}")
    return arr


def luma(image: ImageLike) -> np.ndarray:
    """Rec. 601 luma of an RGB image; grayscale input is returned as is."""
    arr = to_array(image)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[..., 0]
    r, g, b = LUMA_WEIGHTS
    return r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]


def cubic_kernel(x: np.ndarray, a: float = CATMULL_ROM_A) -> np.ndarray:
    """Keys cubic convolution kernel (Catmull-Rom for a = -0.5)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def axis_weights(src: int, dst: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tap indices and normalized weights for resampling one axis.

    When shrinking, the kernel is stretched by the scale factor so every
    source pixel contributes. Indices are clamped to the edge.
    """
    scale = src / dst
    stretch = max(scale, 1.0)
    support = 2.0 * stretch
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    taps = int(np.ceil(2.0 * support)) + 1
    first = np.floor(centers - support).astype(np.int64) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    weights = cubic_kernel((idx - centers[:, None]) / stretch)
    weights /= weights.sum(axis=1, keepdims=True)
    return np.clip(idx, 0, src - 1), weights


def _resample_axis(arr: np.ndarray, dst: int, axis: int) -> np.ndarray:
    src = arr.shape[axis]
    if src == dst:
        return arr
    idx, weights = axis_weights(src, dst)
    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros((dst,) + moved.shape[1:], dtype=np.float64)
    shape = (dst,) + (1,) * (moved.ndim - 1)
    for t in range(idx.shape[1]):
        out += weights[:, t].reshape(shape) * moved[idx[:, t]]
    return np.moveaxis(out, 0, axis)


def resample_bicubic(image: ImageLike, target_w: int, target_h: int) -> np.ndarray:
    """
    Separable bicubic resampling with edge clamping.

    Returns a float64 array with channel values clamped to [0, 255].
    """
    if not validate_dimensions(target_w, target_h):
        raise ValueError(f"target dimensions must be >= 1, got {target_w}x{target_h}")
    arr = to_array(image)
    if not validate_dimensions(arr.shape[1], arr.shape[0]):
        raise ValueError(f"source dimensions must be >= 1, got {arr.shape[1]}x{arr.shape[0]}")
    out = _resample_axis(arr, target_h, axis=0)
    out = _resample_axis(out, target_w, axis=1)
    return np.clip(out, 0.0, 255.0)


def dct2(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II."""
    return dct(dct(block, type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)


def bits_to_int(bits: np.ndarray) -> int:
    value = 0
    for bit in np.asarray(bits, dtype=bool).ravel():
        value = (value << 1) | int(bit)
    return value


def threshold_block(coeffs: np.ndarray) -> int:
    """
    Pack the low-frequency block into a hash: 1 iff strictly above the median.

    Coefficients are rounded to COEFF_DECIMALS places first. This only
    settles near-ties: coefficients that are zero in exact arithmetic come
    out of the DCT as +-1e-13 noise and would otherwise set random bits.
    """
    block = np.round(np.asarray(coeffs, dtype=np.float64)[:HASH_SIZE, :HASH_SIZE], COEFF_DECIMALS)
    return bits_to_int(block > np.median(block))


def phash64(image: ImageLike) -> int:
    """Compute the 64-bit perceptual hash of a decoded image."""
    small = resample_bicubic(luma(image), DCT_SIZE, DCT_SIZE)
    return threshold_block(dct2(small))


def phash_file(path: Union[str, Path]) -> int:
    """Decode a file and hash it; raises ImageDecodeError when unreadable."""
    return phash64(load_rgb(path))


def hamming(a: int, b: int) -> int:
    """Number of differing bits between two 64-bit hashes."""
    return bin((a ^ b) & 0xFFFFFFFFFFFFFFFF).count("1")
