import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from depthsr.data import write_png16
from depthsr.distill import check_same_shape, mean_abs_error
from depthsr.errors import ContractError, ShapeError
from depthsr.networks import DEFAULT_CHANNELS, FeatureStack, SPNet

logger = logging.getLogger(__name__)


class UncertaintyConv(nn.Conv2d):
    """1x1 convolution over the signed recovery residual; starts as identity."""

    def __init__(self):
        super().__init__(1, 1, kernel_size=1)
        nn.init.ones_(self.weight)
        nn.init.zeros_(self.bias)


def uncertainty_map(pred: torch.Tensor, gt: Optional[torch.Tensor], conv: nn.Module) -> torch.Tensor:
    if gt is None:
        raise ContractError("uncertainty maps need ground-truth depth and exist only during training")
    check_same_shape(pred, gt, "uncertainty_map")
    return torch.sigmoid(conv(pred - gt))


def attention_fuse(
    f_sr: torch.Tensor,
    f_de: torch.Tensor,
    u_sr: Optional[torch.Tensor],
    u_de: Optional[torch.Tensor],
) -> torch.Tensor:
    size = f_sr.shape[-2:]
    for name, raster in (("f_de", f_de), ("u_sr", u_sr), ("u_de", u_de)):
        if raster is not None and raster.shape[-2:] != size:
            raise ShapeError(f"{name} is {tuple(raster.shape[-2:])}, expected {tuple(size)}")
    # u = None is the plain-concatenation fusion
    sr = f_sr if u_sr is None else f_sr * (1 + u_sr)
    de = f_de if u_de is None else f_de * (1 + u_de)
    return torch.cat([sr, de], dim=1)


def structure_loss(s_pred: torch.Tensor, s_gt: torch.Tensor) -> torch.Tensor:
    return mean_abs_error(s_pred, s_gt)


class StructureBranch(nn.Module):
    """Uncertainty-induced attention fusion followed by SPNet."""

    def __init__(self, channels: int = DEFAULT_CHANNELS, use_uncertainty: bool = True):
        super().__init__()
        self.use_uncertainty: bool = use_uncertainty
        self.u_sr = UncertaintyConv()
        self.u_de = UncertaintyConv()
        self.spnet = SPNet(2 * channels, channels)

    def fuse(self, sr: FeatureStack, de: FeatureStack, d_hr: torch.Tensor) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        u_sr: Optional[torch.Tensor] = None
        u_de: Optional[torch.Tensor] = None
        if self.use_uncertainty:
            u_sr = uncertainty_map(sr.final_output, d_hr, self.u_sr)
            u_de = uncertainty_map(de.final_output, d_hr, self.u_de)
        f_struc = attention_fuse(sr.last_feature, de.last_feature, u_sr, u_de)
        return f_struc, {"u_sr": u_sr, "u_de": u_de, "f_struc": f_struc}

    def forward(self, sr: FeatureStack, de: FeatureStack, d_hr: torch.Tensor) -> torch.Tensor:
        f_struc, _ = self.fuse(sr, de, d_hr)
        return self.spnet(f_struc)


def _to_png16(path: Path, raster: torch.Tensor) -> None:
    values = raster.detach().to(torch.float64).cpu().numpy()
    lo, hi = float(values.min()), float(values.max())
    scaled = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    write_png16(path, scaled * 65535.0)


def dump_fusion_diagnostics(
    branch: StructureBranch,
    sr: FeatureStack,
    de: FeatureStack,
    d_hr: torch.Tensor,
    directory: Path,
    prefix: str = "sample",
) -> None:
    """Write U_sr, U_de, channel means of F_struc and S per sample as min-max scaled PNGs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        f_struc, parts = branch.fuse(sr, de, d_hr)
        s_pred = branch.spnet(f_struc)
    half = f_struc.shape[1] // 2
    for k in range(f_struc.shape[0]):
        rasters = {
            "f_struc_sr": f_struc[k, :half].mean(dim=0),
            "f_struc_de": f_struc[k, half:].mean(dim=0),
            "structure": s_pred[k, 0],
        }
        if parts["u_sr"] is not None:
            rasters["u_sr"] = parts["u_sr"][k, 0]
            rasters["u_de"] = parts["u_de"][k, 0]
        for name, raster in rasters.items():
            _to_png16(directory / f"{prefix}{k:03d}_{name}.png", raster)
    logger.info("wrote fusion diagnostics for %d samples to %s", f_struc.shape[0], directory)
