import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F

from depthsr.errors import DivergenceError, ShapeError
from depthsr.networks import FeatureStack

DEFAULT_GAMMA = 0.5
DEFAULT_POOL_SIZE = 32


class Role(Enum):
    DSR = "DSR"
    DE = "DE"

    @property
    def other(self) -> "Role":
        return Role.DE if self == Role.DSR else Role.DSR


class RoleAssignment:
    def __init__(self, teacher: Role, e_dsr: float, e_de: float, forced: bool = False):
        self.teacher: Role = teacher
        self.student: Role = teacher.other
        self.e_dsr: float = float(e_dsr)
        self.e_de: float = float(e_de)
        self.forced: bool = forced

    def to_record(self) -> Dict[str, Any]:
        return {"teacher": self.teacher.value, "e_dsr": self.e_dsr, "e_de": self.e_de, "forced": self.forced}

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "RoleAssignment":
        return cls(Role(record["teacher"]), record["e_dsr"], record["e_de"], record.get("forced", False))

    def __eq__(self, other: object):
        if not isinstance(other, RoleAssignment):
            return NotImplemented
        return (
            self.teacher == other.teacher
            and self.e_dsr == other.e_dsr
            and self.e_de == other.e_de
            and self.forced == other.forced
        )

    def __repr__(self):
        return f"<RoleAssignment: teacher={self.teacher.value}, e_dsr={self.e_dsr:.6g}, e_de={self.e_de:.6g}>"


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def mean_abs_error(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    check_same_shape(pred, gt, "mean_abs_error")
    return (pred - gt).abs().mean()


def select_roles(e_dsr: float, e_de: float) -> RoleAssignment:
    if math.isnan(e_dsr) or math.isnan(e_de):
        raise DivergenceError("recovery error", components={"e_dsr": e_dsr, "e_de": e_de})
    if e_dsr < 0 or e_de < 0 or math.isinf(e_dsr) or math.isinf(e_de):
        raise ValueError(f"recovery errors must be finite and non-negative, got {e_dsr}, {e_de}")
    teacher = Role.DSR if e_dsr <= e_de else Role.DE
    return RoleAssignment(teacher, e_dsr, e_de)


def forced_roles(student: Role, e_dsr: float, e_de: float) -> RoleAssignment:
    return RoleAssignment(student.other, e_dsr, e_de, forced=True)


def _batched(feature: torch.Tensor) -> torch.Tensor:
    return feature.unsqueeze(0) if feature.dim() == 3 else feature


def affinity_logits(feature: torch.Tensor, pool_size: Optional[int] = DEFAULT_POOL_SIZE) -> torch.Tensor:
    feature = _batched(feature)
    h, w = feature.shape[-2:]
    if pool_size is not None:
        if pool_size > min(h, w):
            raise ShapeError(f"pool size {pool_size} exceeds feature size {h}x{w}")
        if (h, w) != (pool_size, pool_size):
            feature = F.adaptive_avg_pool2d(feature, pool_size)
    # R(F): (B, wh, C)
    r = feature.flatten(2).transpose(1, 2)
    return r @ r.transpose(1, 2)


def affinity(feature: torch.Tensor, pool_size: Optional[int] = DEFAULT_POOL_SIZE) -> torch.Tensor:
    return affinity_logits(feature, pool_size).softmax(dim=-1)


def output_space_loss(sr_outputs: List[torch.Tensor], de_outputs: List[torch.Tensor]) -> torch.Tensor:
    if len(sr_outputs) != len(de_outputs) or not sr_outputs:
        raise ShapeError(f"output lists differ in length: {len(sr_outputs)} vs {len(de_outputs)}")
    terms = [mean_abs_error(sr, de) for sr, de in zip(sr_outputs, de_outputs)]
    return torch.stack(terms).mean()


def affinity_space_loss(
    sr_features: List[torch.Tensor],
    de_features: List[torch.Tensor],
    pool_size: Optional[int] = DEFAULT_POOL_SIZE,
) -> torch.Tensor:
    if len(sr_features) != len(de_features) or not sr_features:
        raise ShapeError(f"feature lists differ in length: {len(sr_features)} vs {len(de_features)}")
    terms = []
    for sr, de in zip(sr_features, de_features):
        check_same_shape(sr, de, "affinity_space_loss")
        terms.append((affinity(sr, pool_size) - affinity(de, pool_size)).abs().mean())
    return torch.stack(terms).mean()


def distill_loss(l_o: torch.Tensor, l_a: torch.Tensor, gamma: float = DEFAULT_GAMMA) -> torch.Tensor:
    return l_o + gamma * l_a


def order_stacks(roles: RoleAssignment, student: FeatureStack, teacher: FeatureStack) -> Tuple[FeatureStack, FeatureStack]:
    """Return (sr, de) stacks with the teacher side cut from the graph."""
    teacher = teacher.detach()
    if roles.student == Role.DSR:
        return student, teacher
    return teacher, student
