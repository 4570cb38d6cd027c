from functools import lru_cache

import numpy as np

from depthsr.errors import ShapeError
from .rasters import DepthMap

CUBIC_A = -0.5


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    absx = np.abs(x)
    absx2 = absx**2
    absx3 = absx**3
    near = ((a + 2) * absx3 - (a + 3) * absx2 + 1) * (absx <= 1)
    far = (a * absx3 - 5 * a * absx2 + 8 * a * absx - 4 * a) * ((absx > 1) & (absx <= 2))
    return near + far


@lru_cache(maxsize=64)
def resize_matrix(in_length: int, out_length: int, antialiasing: bool = True) -> np.ndarray:
    """Dense (out_length x in_length) bicubic resampling operator.

    Sample positions, kernel widening on downscale and symmetric border
    handling follow MATLAB's imresize.
    """
    scale = out_length / in_length
    kernel_width = 4.0
    if scale < 1 and antialiasing:
        kernel_width = kernel_width / scale

    x = np.arange(1, out_length + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - kernel_width / 2)
    taps = int(np.ceil(kernel_width)) + 2
    indices = left[:, None] + np.arange(taps, dtype=np.float64)[None, :]

    distance = u[:, None] - indices
    if scale < 1 and antialiasing:
        weights = scale * cubic(distance * scale)
    else:
        weights = cubic(distance)
    weights = weights / weights.sum(axis=1, keepdims=True)

    mirror = np.concatenate([np.arange(in_length), np.arange(in_length)[::-1]])
    columns = mirror[np.mod(indices.astype(np.int64) - 1, 2 * in_length)]

    matrix = np.zeros((out_length, in_length), dtype=np.float64)
    rows = np.repeat(np.arange(out_length), taps)
    np.add.at(matrix, (rows, columns.ravel()), weights.ravel())
    matrix.setflags(write=False)
    return matrix


def imresize(values: np.ndarray, out_height: int, out_width: int, antialiasing: bool = True) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    rows = resize_matrix(values.shape[0], out_height, antialiasing)
    cols = resize_matrix(values.shape[1], out_width, antialiasing)
    if values.ndim == 2:
        return rows @ values @ cols.T
    return np.einsum("ij,jkc,lk->ilc", rows, values, cols)


def bicubic_downsample(d_hr: DepthMap, scale: int) -> DepthMap:
    if d_hr.height % scale or d_hr.width % scale:
        raise ShapeError(f"{d_hr.size} is not divisible by scale {scale}; crop first")
    out = imresize(d_hr.values, d_hr.height // scale, d_hr.width // scale)
    return DepthMap(np.clip(out, 0.0, 1.0), name=d_hr.name, unit_scale=d_hr.unit_scale)


def bicubic_upsample(d_lr: DepthMap, scale: int) -> DepthMap:
    out = imresize(d_lr.values, d_lr.height * scale, d_lr.width * scale)
    return DepthMap(np.clip(out, 0.0, 1.0), name=d_lr.name, unit_scale=d_lr.unit_scale)


def modcrop(depth: DepthMap, scale: int) -> DepthMap:
    return depth.crop(0, 0, depth.height - depth.height % scale, depth.width - depth.width % scale)
