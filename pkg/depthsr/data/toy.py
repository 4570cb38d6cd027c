import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .io import COLOR_SUFFIX, DEPTH_SUFFIX, save_rgb, write_png16
from .rasters import DepthMap, RgbImage

logger = logging.getLogger(__name__)

MIN_TOY_SIZE = 32
GRID = 3
# share of objects whose colour matches what lies behind them, hiding the depth edge in RGB
EDGE_MISMATCH_RATE = 0.1
PLANES = np.linspace(0.1, 0.55, 10)


def _object_mask(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray, cell: Tuple[int, int, int]) -> np.ndarray:
    row, col, cell_size = cell
    half_min = max(cell_size // 6, 2)
    half_max = max(cell_size // 2 - 1, half_min + 1)
    half = int(rng.integers(half_min, half_max))
    cy = row * cell_size + cell_size // 2
    cx = col * cell_size + cell_size // 2
    if rng.random() < 0.5:
        half_w = int(rng.integers(half_min, half_max))
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half_w)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= half**2


def generate_toy_scene(seed: int, size: int) -> Tuple[RgbImage, DepthMap]:
    if size < MIN_TOY_SIZE:
        raise ValueError(f"toy scene size must be at least {MIN_TOY_SIZE}, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    slope_y, slope_x = rng.uniform(0.05, 0.15, size=2)
    depth = 0.75 + slope_y * (yy / size - 0.5) + slope_x * (xx / size - 0.5)

    background = rng.uniform(0.2, 0.8, size=3)
    rgb = np.empty((size, size, 3))
    rgb[:] = background
    rgb += 0.05 * (xx / size)[..., None]

    count = int(rng.integers(3, 9))
    cell_size = size // GRID
    cells = rng.choice(GRID * GRID, size=count, replace=False)
    planes = np.sort(rng.choice(PLANES, size=count, replace=False))[::-1]

    # far to near, so nearer objects are painted last
    for plane, cell in zip(planes, cells):
        mask = _object_mask(rng, yy, xx, (int(cell) // GRID, int(cell) % GRID, cell_size))
        if rng.random() < EDGE_MISMATCH_RATE:
            color = rgb[mask].mean(axis=0)
        else:
            color = np.array([plane, 1.0 - plane, 0.5]) * rng.uniform(0.6, 1.0, size=3)
        frequency = rng.uniform(0.2, 0.8)
        texture = 0.08 * np.sin(frequency * (xx + yy))[..., None] + rng.normal(0.0, 0.02, size=(size, size, 1))
        depth[mask] = plane
        rgb[mask] = (color + texture)[mask]

    rgb = np.clip(rgb, 0.0, 1.0)
    depth = np.clip(depth, 0.0, 1.0)
    name = f"toy{seed}"
    return RgbImage(rgb, name=name), DepthMap(depth, name=name)


def make_toy_dataset(directory: Path, count: int, size: int, seed: int) -> List[str]:
    """Write `count` toy scenes in the colour/depth pair naming convention."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stems: List[str] = []
    for k in range(count):
        rgb, depth = generate_toy_scene(seed + k, size)
        stem = f"toy{seed + k:05d}"
        save_rgb(directory / f"{stem}{COLOR_SUFFIX}.png", rgb.values)
        write_png16(directory / f"{stem}{DEPTH_SUFFIX}.png", depth.values * 65535.0)
        stems.append(stem)
    logger.info("wrote %d toy scenes of %dpx to %s", count, size, directory)
    return stems
