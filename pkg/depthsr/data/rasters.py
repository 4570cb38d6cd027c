from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from depthsr.errors import ShapeError

SUPPORTED_SCALES: Tuple[int, ...] = (2, 4, 8, 16)


class Raster:
    ndim: int = 2

    def __init__(self, values: Any):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != self.ndim:
            raise ShapeError(f"{type(self).__name__} needs {self.ndim} dimensions, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"{type(self).__name__} must be at least 1x1, got {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError(f"{type(self).__name__} contains non-finite values")
        self.values: np.ndarray = values

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> Tuple[int, int]:
        return self.height, self.width

    def rotate180(self):
        rotated = self.__class__.__new__(self.__class__)
        rotated.__dict__.update(self.__dict__)
        rotated.values = np.ascontiguousarray(self.values[::-1, ::-1])
        return rotated

    def crop(self, top: int, left: int, height: int, width: int):
        cropped = self.__class__.__new__(self.__class__)
        cropped.__dict__.update(self.__dict__)
        cropped.values = self.values[top : top + height, left : left + width].copy()
        return cropped

    def __eq__(self, other: object):
        if not isinstance(other, self.__class__):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"<{type(self).__name__}: height={self.height}, width={self.width}>"


class DepthMap(Raster):
    def __init__(self, values: Any, name: str = "", unit_scale: float = 1.0):
        super().__init__(values)
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError(
                f"depth map {name or ''} outside [0, 1]: [{self.values.min():.4g}, {self.values.max():.4g}]"
            )
        self.name: str = name
        # native depth units represented by 1.0
        self.unit_scale: float = float(unit_scale)

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.values).to(dtype)[None, None]

    @classmethod
    def from_tensor(cls, tensor: torch.Tensor, name: str = "", unit_scale: float = 1.0) -> "DepthMap":
        values = tensor.detach().to(torch.float64).cpu().numpy().reshape(tensor.shape[-2:])
        return cls(np.clip(values, 0.0, 1.0), name=name, unit_scale=unit_scale)

    def __repr__(self):
        return f"<DepthMap: name={self.name!r}, height={self.height}, width={self.width}>"


class RgbImage(Raster):
    ndim: int = 3

    def __init__(self, values: Any, name: str = ""):
        super().__init__(values)
        if self.values.shape[2] != 3:
            raise ShapeError(f"RGB image needs 3 channels, got {self.values.shape[2]}")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError(f"RGB image {name} outside [0, 1]")
        self.name: str = name

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(self.values.transpose(2, 0, 1))).to(dtype)[None]


class StructureMap(Raster):
    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.values).to(dtype)[None, None]


class TrainingSample:
    def __init__(
        self,
        d_lr: DepthMap,
        d_hr: DepthMap,
        rgb: RgbImage,
        s_gt: StructureMap,
        scale: int,
        provenance: Optional[Dict[str, Any]] = None,
    ):
        if scale not in SUPPORTED_SCALES:
            raise ShapeError(f"unsupported scale {scale}; supported: {SUPPORTED_SCALES}")
        if d_hr.size != (d_lr.height * scale, d_lr.width * scale):
            raise ShapeError(f"d_hr {d_hr.size} is not d_lr {d_lr.size} x {scale}")
        if rgb.size != d_hr.size or s_gt.size != d_hr.size:
            raise ShapeError(f"rgb {rgb.size} and s_gt {s_gt.size} must match d_hr {d_hr.size}")
        self.d_lr: DepthMap = d_lr
        self.d_hr: DepthMap = d_hr
        self.rgb: RgbImage = rgb
        self.s_gt: StructureMap = s_gt
        self.scale: int = scale
        self.provenance: Dict[str, Any] = dict(provenance or {})

    def __eq__(self, other: object):
        if not isinstance(other, TrainingSample):
            return NotImplemented
        return (
            self.scale == other.scale
            and self.d_lr == other.d_lr
            and self.d_hr == other.d_hr
            and self.rgb == other.rgb
            and self.s_gt == other.s_gt
        )

    def __repr__(self):
        return f"<TrainingSample: scale={self.scale}, hr={self.d_hr.size}, provenance={self.provenance}>"
