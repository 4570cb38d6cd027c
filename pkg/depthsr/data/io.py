import logging
import re
from enum import Enum
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from depthsr.errors import PairingError, ShapeError
from .rasters import DepthMap, RgbImage

logger = logging.getLogger(__name__)

COLOR_SUFFIX = "_color"
DEPTH_SUFFIX = "_depth"


class DepthFormat(Enum):
    PNG16 = "png16"
    PFM = "pfm"

    @property
    def extension(self) -> str:
        return ".png" if self == DepthFormat.PNG16 else ".pfm"

    @classmethod
    def from_path(cls, path: Path) -> "DepthFormat":
        return cls.PFM if Path(path).suffix.lower() == ".pfm" else cls.PNG16


def read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("latin-1").rstrip()
        if header not in ("Pf", "PF"):
            raise OSError(f"{path} is not a PFM file")
        dims = re.match(r"^(\d+)\s+(\d+)\s*$", f.readline().decode("latin-1"))
        if not dims:
            raise OSError(f"{path} has a malformed PFM header")
        width, height = int(dims.group(1)), int(dims.group(2))
        scale = float(f.readline().decode("latin-1").rstrip())
        endian = "<" if scale < 0 else ">"
        channels = 3 if header == "PF" else 1
        data = np.fromfile(f, dtype=endian + "f4", count=width * height * channels)
    if data.size != width * height * channels:
        raise OSError(f"{path} is truncated")
    shape = (height, width, 3) if channels == 3 else (height, width)
    # rows are stored bottom-to-top
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_pfm(path: Path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{values.shape[1]} {values.shape[0]}\n".encode("latin-1"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(np.flipud(values)).tobytes())


def read_png16(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64)


def write_png16(path: Path, values: np.ndarray) -> None:
    raw = np.clip(np.rint(values), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def read_raw_depth(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        if DepthFormat.from_path(path) == DepthFormat.PFM:
            raw = read_pfm(path)
        else:
            raw = read_png16(path)
    except (OSError, ValueError) as err:
        raise OSError(f"cannot read depth file {path}: {err}") from err
    if raw.ndim != 2:
        raise ShapeError(f"{path} is not single-channel (shape {raw.shape})")
    return raw


def write_raw_depth(path: Path, values: np.ndarray) -> None:
    if DepthFormat.from_path(path) == DepthFormat.PFM:
        write_pfm(path, values)
    else:
        write_png16(path, values)


def read_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as err:
        raise OSError(f"cannot read colour file {path}: {err}") from err


def save_rgb(path: Path, values: np.ndarray) -> None:
    Image.fromarray(np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)).save(path)


def fill_invalid(raw: np.ndarray, name: str = "") -> np.ndarray:
    invalid = raw <= 0
    if not invalid.any():
        return raw
    if invalid.all():
        raise ValueError(f"depth map {name} has no valid pixels")
    indices = ndimage.distance_transform_edt(invalid, return_distances=False, return_indices=True)
    return raw[tuple(indices)]


def _pair_paths(directory: Path, fmt: DepthFormat) -> List[Tuple[str, Path, Path]]:
    colors = {p.stem[: -len(COLOR_SUFFIX)]: p for p in directory.glob(f"*{COLOR_SUFFIX}.png")}
    depths = {p.stem[: -len(DEPTH_SUFFIX)]: p for p in directory.glob(f"*{DEPTH_SUFFIX}{fmt.extension}")}

    orphans = [
        f"{colors[stem].name} has no partner: missing {stem}{DEPTH_SUFFIX}{fmt.extension}"
        for stem in sorted(set(colors) - set(depths))
    ] + [
        f"{depths[stem].name} has no partner: missing {stem}{COLOR_SUFFIX}.png"
        for stem in sorted(set(depths) - set(colors))
    ]
    if orphans:
        raise PairingError("; ".join(orphans))
    return [(stem, colors[stem], depths[stem]) for stem in sorted(colors)]


def load_rgbd_pairs(path: Path, fmt: DepthFormat = DepthFormat.PNG16) -> List[Tuple[RgbImage, DepthMap]]:
    directory = Path(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    fmt = DepthFormat(fmt)

    raws: List[Tuple[str, np.ndarray, np.ndarray]] = []
    for stem, color_path, depth_path in _pair_paths(directory, fmt):
        rgb = read_rgb(color_path)
        raw = fill_invalid(read_raw_depth(depth_path), name=stem)
        if rgb.shape[:2] != raw.shape:
            raise ShapeError(f"{stem}: colour {rgb.shape[:2]} and depth {raw.shape} differ in size")
        raws.append((stem, rgb, raw))

    if not raws:
        return []
    depth_max = max(float(raw.max()) for _, _, raw in raws)
    logger.info("loaded %d RGB-D pairs from %s (depth max %.6g)", len(raws), directory, depth_max)
    return [
        (RgbImage(rgb, name=stem), DepthMap(raw / depth_max, name=stem, unit_scale=depth_max))
        for stem, rgb, raw in raws
    ]
