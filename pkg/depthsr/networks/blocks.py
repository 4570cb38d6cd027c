from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from depthsr.data import SUPPORTED_SCALES
from depthsr.errors import ConfigError

# scale -> (kernel, stride, padding) of one projection
PROJECTION: Dict[int, Tuple[int, int, int]] = {
    2: (6, 2, 2),
    4: (8, 4, 2),
    8: (12, 8, 2),
}


def check_scale(scale: int) -> None:
    if scale not in SUPPORTED_SCALES:
        raise ConfigError([f"unsupported scale {scale}; supported: {', '.join(map(str, SUPPORTED_SCALES))}"])


def conv(in_channels: int, out_channels: int, kernel_size: int = 3) -> nn.Conv2d:
    return nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2)


def upsampler(channels: int, scale: int) -> nn.Module:
    if scale == 16:
        return nn.Sequential(upsampler(channels, 4), nn.ReLU(), upsampler(channels, 4))
    kernel, stride, padding = PROJECTION[scale]
    return nn.ConvTranspose2d(channels, channels, kernel, stride, padding)


def downsampler(channels: int, scale: int) -> nn.Module:
    if scale == 16:
        return nn.Sequential(downsampler(channels, 4), nn.ReLU(), downsampler(channels, 4))
    kernel, stride, padding = PROJECTION[scale]
    return nn.Conv2d(channels, channels, kernel, stride, padding)


class UpProjection(nn.Module):
    def __init__(self, channels: int, scale: int):
        super().__init__()
        self.up1 = upsampler(channels, scale)
        self.down = downsampler(channels, scale)
        self.up2 = upsampler(channels, scale)

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        h0 = F.relu(self.up1(lr))
        l0 = F.relu(self.down(h0))
        h1 = F.relu(self.up2(l0 - lr))
        return h0 + h1


class DownProjection(nn.Module):
    def __init__(self, channels: int, scale: int):
        super().__init__()
        self.down1 = downsampler(channels, scale)
        self.up = upsampler(channels, scale)
        self.down2 = downsampler(channels, scale)

    def forward(self, hr: torch.Tensor) -> torch.Tensor:
        l0 = F.relu(self.down1(hr))
        h0 = F.relu(self.up(l0))
        l1 = F.relu(self.down2(h0 - hr))
        return l0 + l1


class BackProjectionBlock(nn.Module):
    """Up-projection to HR followed by a down-projection feeding the next block.

    The last block of a stack has no consumer for its LR output and is built
    without the down-projection.
    """

    def __init__(self, channels: int, scale: int, project_down: bool = True):
        super().__init__()
        self.up = UpProjection(channels, scale)
        self.down: Optional[DownProjection] = DownProjection(channels, scale) if project_down else None

    def forward(self, lr: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        hr = self.up(lr)
        if self.down is None:
            return hr, None
        return hr, self.down(hr)


class ResidualUnit(nn.Module):
    # pre-activation: x + conv(relu(conv(relu(x))))
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv(channels, channels)
        self.conv2 = conv(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(F.relu(self.conv1(F.relu(x))))


class ResidualStage(nn.Sequential):
    def __init__(self, channels: int, units: int = 4):
        super().__init__(*[ResidualUnit(channels) for _ in range(units)])


class SideOutputHead(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv(channels, channels // 2)
        self.conv2 = conv(channels // 2, 1)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.relu(self.conv1(feature)))


def shallow_block(in_channels: int, channels: int) -> nn.Sequential:
    return nn.Sequential(
        conv(in_channels, channels),
        nn.ReLU(),
        conv(channels, channels),
        nn.ReLU(),
        conv(channels, channels, kernel_size=1),
        nn.ReLU(),
    )


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
