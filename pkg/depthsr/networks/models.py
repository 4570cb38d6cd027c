import hashlib
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from depthsr.errors import ShapeError
from .blocks import (
    BackProjectionBlock,
    ResidualStage,
    SideOutputHead,
    check_scale,
    conv,
    init_weights,
    shallow_block,
)

DEFAULT_STAGES = 5
DEFAULT_CHANNELS = 32
RESIDUAL_UNITS = 4


class FeatureStack:
    def __init__(self, features: List[torch.Tensor], side_outputs: List[torch.Tensor], final_output: torch.Tensor):
        if len(features) != len(side_outputs):
            raise ShapeError(f"{len(features)} features but {len(side_outputs)} side outputs")
        size = final_output.shape[-2:]
        for raster in [*features, *side_outputs]:
            if raster.shape[-2:] != size:
                raise ShapeError(f"stage raster {tuple(raster.shape[-2:])} differs from output {tuple(size)}")
        self.features: List[torch.Tensor] = features
        self.side_outputs: List[torch.Tensor] = side_outputs
        self.final_output: torch.Tensor = final_output

    @property
    def stage_count(self) -> int:
        return len(self.features)

    @property
    def last_feature(self) -> torch.Tensor:
        return self.features[-1]

    def detach(self) -> "FeatureStack":
        return FeatureStack(
            [f.detach() for f in self.features],
            [d.detach() for d in self.side_outputs],
            self.final_output.detach(),
        )

    def __repr__(self):
        return f"<FeatureStack: stages={self.stage_count}, size={tuple(self.final_output.shape)}>"


class DSRNet(nn.Module):
    def __init__(self, scale: int, stage_count: int = DEFAULT_STAGES, channels: int = DEFAULT_CHANNELS):
        super().__init__()
        check_scale(scale)
        self.scale: int = scale
        self.stage_count: int = stage_count
        self.channels: int = channels

        self.shallow = shallow_block(1, channels)
        self.blocks = nn.ModuleList(
            [BackProjectionBlock(channels, scale, project_down=n < stage_count - 1) for n in range(stage_count)]
        )
        self.reconstruct = conv(channels, 1)
        self.side_heads = nn.ModuleList([SideOutputHead(channels) for _ in range(stage_count)])
        init_weights(self)

    def forward(self, d_lr: torch.Tensor) -> FeatureStack:
        if d_lr.shape[1] != 1:
            raise ShapeError(f"DSRNet takes a single-channel depth map, got {d_lr.shape[1]} channels")
        lr = self.shallow(d_lr)
        features: List[torch.Tensor] = []
        for block in self.blocks:
            hr, lr = block(lr)
            features.append(hr)
        side_outputs = [head(f) for head, f in zip(self.side_heads, features)]
        return FeatureStack(features, side_outputs, self.reconstruct(features[-1]))


class DENet(nn.Module):
    def __init__(self, stage_count: int = DEFAULT_STAGES, channels: int = DEFAULT_CHANNELS, units: int = RESIDUAL_UNITS):
        super().__init__()
        self.stage_count: int = stage_count
        self.channels: int = channels

        self.shallow = shallow_block(3, channels)
        self.stages = nn.ModuleList([ResidualStage(channels, units) for _ in range(stage_count)])
        self.reconstruct = conv(channels, 1)
        self.side_heads = nn.ModuleList([SideOutputHead(channels) for _ in range(stage_count)])
        init_weights(self)

    def forward(self, rgb: torch.Tensor) -> FeatureStack:
        if rgb.dim() != 4 or rgb.shape[1] != 3:
            raise ShapeError(f"DENet takes a 3-channel image, got shape {tuple(rgb.shape)}")
        x = self.shallow(rgb)
        features: List[torch.Tensor] = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        side_outputs = [head(f) for head, f in zip(self.side_heads, features)]
        return FeatureStack(features, side_outputs, self.reconstruct(features[-1]))


class SPNet(nn.Module):
    """Structure CNN: five Conv+ReLU layers and a final Conv."""

    def __init__(self, in_channels: int, channels: int = DEFAULT_CHANNELS, depth: int = 5):
        super().__init__()
        self.in_channels: int = in_channels
        widths = [in_channels] + [channels] * depth
        self.hidden = nn.ModuleList([conv(a, b) for a, b in zip(widths[:-1], widths[1:])])
        self.out = conv(channels, 1)
        init_weights(self)

    def forward(self, f_struc: torch.Tensor) -> torch.Tensor:
        if f_struc.shape[1] != self.in_channels:
            raise ShapeError(f"SPNet expects {self.in_channels} channels, got {f_struc.shape[1]}")
        x = f_struc
        for layer in self.hidden:
            x = F.relu(layer(x))
        return self.out(x)


def parameter_checksum(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
