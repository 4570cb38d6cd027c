from dataclasses import dataclass
from typing import Any, List, Union

import numpy as np
import torch
from torchmetrics.functional import structural_similarity_index_measure

from depthsr.data import DepthMap
from depthsr.distill import check_same_shape, mean_abs_error
from depthsr.errors import Error, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# normalized depth
SSIM_RANGE = 1.0


@dataclass
class LossWeights:
    gamma: float = 0.5
    lam: float = 0.2
    rho1: float = 0.1
    rho2: float = 0.1

    def validate(self) -> List[Error]:
        errors: List[Error] = []
        for name in ("gamma", "lam", "rho1", "rho2"):
            if getattr(self, name) < 0:
                errors.append(f"loss.{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.lam <= 1:
            errors.append(f"loss.lambda must lie in [0, 1], got {self.lam}")
        return errors


def _nchw(x: torch.Tensor) -> torch.Tensor:
    while x.dim() < 4:
        x = x.unsqueeze(0)
    return x


def dsr_loss(d_sr: torch.Tensor, d_hr: torch.Tensor) -> torch.Tensor:
    return mean_abs_error(d_sr, d_hr)


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    check_same_shape(a, b, "ssim")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {tuple(a.shape[-2:])}")
    _, full = structural_similarity_index_measure(
        _nchw(a),
        _nchw(b),
        gaussian_kernel=True,
        sigma=SSIM_SIGMA,
        kernel_size=SSIM_WINDOW,
        data_range=SSIM_RANGE,
        k1=SSIM_K1,
        k2=SSIM_K2,
        return_full_image=True,
    )
    # windows that lie fully inside the image
    pad = (SSIM_WINDOW - 1) // 2
    return full[..., pad:-pad, pad:-pad].mean()


def de_loss(d_de: torch.Tensor, d_hr: torch.Tensor, lam: float = 0.2) -> torch.Tensor:
    l1 = mean_abs_error(d_de, d_hr)
    if lam == 0:
        return l1
    return lam * (1 - ssim(d_de, d_hr)) / 2 + (1 - lam) * l1


def total_student_loss(task_loss: Any, l_struc: Any, l_distill: Any, w: LossWeights) -> Any:
    return task_loss + w.rho1 * l_struc + w.rho2 * l_distill


Raster = Union[DepthMap, np.ndarray, torch.Tensor]


def _values(raster: Raster) -> np.ndarray:
    if isinstance(raster, DepthMap):
        return raster.values
    if isinstance(raster, torch.Tensor):
        return raster.detach().to(torch.float64).cpu().numpy()
    return np.asarray(raster, dtype=np.float64)


def _metric_pair(pred: Raster, gt: Raster):
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise ShapeError(f"metric inputs differ in shape: {p.shape} vs {g.shape}")
    return p, g


def mad_metric(pred: Raster, gt: Raster, unit_scale: float = 1.0) -> float:
    p, g = _metric_pair(pred, gt)
    return float(np.mean(np.abs(p * unit_scale - g * unit_scale)))


def rmse_metric(pred: Raster, gt: Raster, unit_scale: float = 1.0) -> float:
    p, g = _metric_pair(pred, gt)
    return float(np.sqrt(np.mean((p * unit_scale - g * unit_scale) ** 2)))
