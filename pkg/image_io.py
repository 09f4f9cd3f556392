"""
Reading and writing of mask and camera arrays.

Grayscale images (8 or 16 bit) go through OpenCV; `.dat` and `.txt`
files are whitespace-separated columns with `#` comment lines.
"""
import logging
import os

import cv2
import numpy as np

from core import ParseError

logger = logging.getLogger(__name__)

TEXT_EXTENSIONS = ('.dat', '.txt', '.csv')


def load_array(path: str) -> np.ndarray:
    """
    Load a 2D float array from an image or a columnar text file.

    Args:
        path: File path

    Returns:
        Array of floats; image pixels keep their raw 8/16-bit values
    """
    if not os.path.exists(path):
        raise ParseError(f"file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext in TEXT_EXTENSIONS:
        delimiter = ',' if ext == '.csv' else None
        try:
            return np.atleast_2d(np.loadtxt(path, comments='#', delimiter=delimiter))
        except ValueError as e:
            raise ParseError(f"{path}: {e}") from e
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise ParseError(f"{path}: not a readable image")
    if image.ndim == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGR2GRAY)
    logger.debug("loaded %s image %s from %s", image.dtype, image.shape, path)
    return image.astype(float)


def save_image(path: str, array: np.ndarray, bits: int = 16) -> str:
    """
    Write an array as a grayscale image scaled to the full bit range.

    Args:
        path: Output path (extension selects the format, e.g. .png)
        array: Real 2D array
        bits: 8 or 16

    Returns:
        The path written
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    data = np.asarray(array, dtype=float)
    low = float(np.min(data))
    span = float(np.max(data)) - low
    top = 255 if bits == 8 else 65535
    scaled = np.zeros(data.shape) if span == 0 else (data - low) / span * top
    image = np.round(scaled).astype(np.uint8 if bits == 8 else np.uint16)
    if not cv2.imwrite(path, image):
        raise OSError(f"could not write image {path}")
    return path
