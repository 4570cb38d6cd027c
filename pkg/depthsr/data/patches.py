import logging
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from depthsr.errors import ShapeError
from .rasters import DepthMap, RgbImage, StructureMap, TrainingSample, SUPPORTED_SCALES
from .resize import bicubic_downsample

logger = logging.getLogger(__name__)

LAPLACIAN = np.array(
    [
        [0.0, -1.0, 0.0],
        [-1.0, 4.0, -1.0],
        [0.0, -1.0, 0.0],
    ]
)


def compute_structure_gt(d_hr: DepthMap) -> StructureMap:
    # replicate padding: scipy's "nearest" mode
    return StructureMap(ndimage.convolve(d_hr.values, LAPLACIAN, mode="nearest"))


def extract_patches(
    pairs: List[Tuple[RgbImage, DepthMap]],
    patch_size: int,
    count: int,
    scale: int,
    seed: int,
) -> List[TrainingSample]:
    if scale not in SUPPORTED_SCALES:
        raise ShapeError(f"unsupported scale {scale}; supported: {SUPPORTED_SCALES}")
    if patch_size % scale:
        raise ShapeError(f"patch size {patch_size} is not divisible by scale {scale}")
    for index, (_, depth) in enumerate(pairs):
        if depth.height < patch_size or depth.width < patch_size:
            raise ShapeError(
                f"image {depth.name or index} is {depth.height}x{depth.width}, smaller than patch size {patch_size}"
            )
    if count == 0:
        return []
    if not pairs:
        raise ValueError("cannot extract patches from an empty pair list")

    rng = np.random.default_rng(seed)
    samples: List[TrainingSample] = []
    for _ in range(count):
        index = int(rng.integers(len(pairs)))
        rgb, depth = pairs[index]
        top = int(rng.integers(0, depth.height - patch_size + 1))
        left = int(rng.integers(0, depth.width - patch_size + 1))

        d_hr = depth.crop(top, left, patch_size, patch_size)
        samples.append(
            TrainingSample(
                d_lr=bicubic_downsample(d_hr, scale),
                d_hr=d_hr,
                rgb=rgb.crop(top, left, patch_size, patch_size),
                s_gt=compute_structure_gt(d_hr),
                scale=scale,
                provenance={"source": depth.name, "origin": [top, left], "rotated": False},
            )
        )
    logger.debug("extracted %d patches of %d px from %d pairs", count, patch_size, len(pairs))
    return samples


def augment_rotate180(sample: TrainingSample) -> TrainingSample:
    provenance = dict(sample.provenance)
    provenance["rotated"] = not provenance.get("rotated", False)
    return TrainingSample(
        d_lr=sample.d_lr.rotate180(),
        d_hr=sample.d_hr.rotate180(),
        rgb=sample.rgb.rotate180(),
        s_gt=sample.s_gt.rotate180(),
        scale=sample.scale,
        provenance=provenance,
    )


def augment_samples(samples: List[TrainingSample]) -> List[TrainingSample]:
    return samples + [augment_rotate180(sample) for sample in samples]
