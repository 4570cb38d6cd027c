import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset

from depthsr.errors import ArchiveError
from .rasters import DepthMap, RgbImage, StructureMap, TrainingSample
from .patches import augment_samples

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SHARD_FORMAT_VERSION = 1
RASTERS = ("d_lr", "d_hr", "rgb", "s_gt")

# Shard container (one torch.save archive per shard):
#   d_lr  float64 [M, h, w]       d_hr  float64 [M, H, W]
#   rgb   float64 [M, H, W, 3]    s_gt  float64 [M, H, W]
#   scale int, provenance: list of {source, origin [top, left], rotated}
# manifest.json lists each shard with its sample count and the SHA-256 of its raster payload.


def payload_digest(tensors: Dict[str, torch.Tensor]) -> str:
    digest = hashlib.sha256()
    for key in RASTERS:
        array = tensors[key].contiguous().numpy()
        digest.update(key.encode())
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


def _stack(samples: List[TrainingSample]) -> Dict[str, torch.Tensor]:
    return {
        "d_lr": torch.from_numpy(np.stack([s.d_lr.values for s in samples])),
        "d_hr": torch.from_numpy(np.stack([s.d_hr.values for s in samples])),
        "rgb": torch.from_numpy(np.stack([s.rgb.values for s in samples])),
        "s_gt": torch.from_numpy(np.stack([s.s_gt.values for s in samples])),
    }


def write_shards(
    samples: List[TrainingSample],
    directory: Path,
    shard_size: int = 1000,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scales = {s.scale for s in samples}
    if len(scales) > 1:
        raise ValueError(f"samples mix scales {sorted(scales)}")

    entries: List[Dict[str, Any]] = []
    for index, start in enumerate(range(0, len(samples), shard_size)):
        chunk = samples[start : start + shard_size]
        tensors = _stack(chunk)
        name = f"shard{index:04d}.pt"
        archive = dict(tensors)
        archive["scale"] = chunk[0].scale
        archive["provenance"] = [s.provenance for s in chunk]
        torch.save(archive, directory / name)
        entries.append({"file": name, "count": len(chunk), "sha256": payload_digest(tensors)})

    manifest = {
        "format_version": SHARD_FORMAT_VERSION,
        "count": len(samples),
        "scale": scales.pop() if scales else None,
        "unit_scale": samples[0].d_hr.unit_scale if samples else 1.0,
        "shards": entries,
    }
    manifest.update(extra or {})
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("wrote %d samples in %d shards to %s", len(samples), len(entries), directory)
    return manifest


def read_manifest(directory: Path) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as err:
        raise ArchiveError(f"cannot read shard manifest {path}: {err}") from err


def read_shards(directory: Path) -> List[TrainingSample]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    unit_scale = float(manifest.get("unit_scale", 1.0))
    samples: List[TrainingSample] = []
    for entry in manifest["shards"]:
        path = directory / entry["file"]
        try:
            archive = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as err:
            raise ArchiveError(f"cannot read shard {path}: {err}") from err
        if payload_digest(archive) != entry["sha256"]:
            raise ArchiveError(f"checksum mismatch for shard {path}")
        for k in range(entry["count"]):
            provenance = archive["provenance"][k]
            source = provenance.get("source", "")
            samples.append(
                TrainingSample(
                    d_lr=DepthMap(archive["d_lr"][k].numpy(), name=source, unit_scale=unit_scale),
                    d_hr=DepthMap(archive["d_hr"][k].numpy(), name=source, unit_scale=unit_scale),
                    rgb=RgbImage(archive["rgb"][k].numpy(), name=source),
                    s_gt=StructureMap(archive["s_gt"][k].numpy()),
                    scale=int(archive["scale"]),
                    provenance=provenance,
                )
            )
    return samples


Batch = Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]


class SampleBank:
    """Training samples stacked as NCHW tensors (d_lr, d_hr, rgb, s_gt)."""

    def __init__(self, samples: List[TrainingSample], dtype: torch.dtype = torch.float32, augment: bool = False):
        if not samples:
            raise ValueError("sample bank needs at least one sample")
        if augment:
            samples = augment_samples(samples)
        tensors = _stack(samples)
        self.scale: int = samples[0].scale
        self.unit_scale: float = samples[0].d_hr.unit_scale
        self.dataset = TensorDataset(
            tensors["d_lr"].unsqueeze(1).to(dtype),
            tensors["d_hr"].unsqueeze(1).to(dtype),
            tensors["rgb"].permute(0, 3, 1, 2).contiguous().to(dtype),
            tensors["s_gt"].unsqueeze(1).to(dtype),
        )

    def __len__(self):
        return len(self.dataset)

    def batches(self, batch_size: int, seed: int, epoch: int, shuffle: bool = True) -> Iterator[Batch]:
        # order depends only on (seed, epoch), so resumed runs replay identical batches
        generator = torch.Generator().manual_seed(seed * 100003 + epoch)
        loader = DataLoader(self.dataset, batch_size=batch_size, shuffle=shuffle, generator=generator)
        yield from loader
