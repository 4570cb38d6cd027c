import logging
import math
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import torch
import torch.nn as nn
from tqdm import tqdm

from depthsr.data import DepthMap, SampleBank, TrainingSample
from depthsr.distill import (
    Role,
    RoleAssignment,
    affinity_space_loss,
    distill_loss,
    forced_roles,
    order_stacks,
    output_space_loss,
    select_roles,
)
from depthsr.errors import DivergenceError, ShapeError
from depthsr.losses import de_loss, dsr_loss, total_student_loss
from depthsr.networks import DENet, DSRNet, FeatureStack
from depthsr.structure import StructureBranch, dump_fusion_diagnostics, structure_loss
from .config import TrainConfig
from .records import RecordLog

logger = logging.getLogger(__name__)

DTYPES: Dict[str, torch.dtype] = {"float32": torch.float32, "float64": torch.float64}

EpochHook = Callable[["TrainState"], None]


class ErrorAccumulator:
    """Running per-sample means of the DSR and DE recovery errors."""

    def __init__(self):
        self.sum_dsr: float = 0.0
        self.sum_de: float = 0.0
        self.count: int = 0
        self.count_de: int = 0

    def add(self, d_sr: torch.Tensor, d_de: Optional[torch.Tensor], d_hr: torch.Tensor) -> None:
        self.sum_dsr += float((d_sr - d_hr).abs().flatten(1).mean(dim=1).sum())
        self.count += d_hr.shape[0]
        if d_de is not None:
            self.sum_de += float((d_de - d_hr).abs().flatten(1).mean(dim=1).sum())
            self.count_de += d_hr.shape[0]

    def means(self) -> Tuple[float, float]:
        if self.count == 0:
            raise ValueError("no samples accumulated")
        e_de = self.sum_de / self.count_de if self.count_de else math.nan
        return self.sum_dsr / self.count, e_de

    def reset(self) -> None:
        self.sum_dsr = self.sum_de = 0.0
        self.count = self.count_de = 0

    def to_dict(self) -> Dict[str, float]:
        return {"sum_dsr": self.sum_dsr, "sum_de": self.sum_de, "count": self.count, "count_de": self.count_de}

    @classmethod
    def from_dict(cls, values: Dict[str, float]) -> "ErrorAccumulator":
        acc = cls()
        acc.sum_dsr = float(values["sum_dsr"])
        acc.sum_de = float(values["sum_de"])
        acc.count = int(values["count"])
        acc.count_de = int(values["count_de"])
        return acc

    def __repr__(self):
        return f"<ErrorAccumulator: count={self.count}>"


class TrainState:
    def __init__(
        self,
        config: TrainConfig,
        dsr: DSRNet,
        de: DENet,
        optimizers: Dict[str, torch.optim.Optimizer],
        structure: Optional[StructureBranch] = None,
    ):
        self.config: TrainConfig = config
        self.dsr: DSRNet = dsr
        self.de: DENet = de
        self.structure: Optional[StructureBranch] = structure
        self.optimizers: Dict[str, torch.optim.Optimizer] = optimizers
        self.epoch: int = 0
        self.step: int = 0
        self.errors: ErrorAccumulator = ErrorAccumulator()
        self.role_history: List[RoleAssignment] = []
        self.loss_trace: List[Dict[str, float]] = []
        self.unit_scale: float = 1.0

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.config.dtype]

    def network(self, role: Role) -> nn.Module:
        return self.dsr if role == Role.DSR else self.de

    def __repr__(self):
        return f"<TrainState: epoch={self.epoch}, step={self.step}, roles={len(self.role_history)}>"


def make_optimizer(module: nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        module.parameters(),
        lr=config.initial_lr,
        betas=(config.beta1, config.beta2),
        eps=config.epsilon,
    )


def build_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)
    dtype = DTYPES[config.dtype]
    dsr = DSRNet(config.scale, config.stage_count, config.channels).to(dtype)
    de = DENet(config.stage_count, config.channels).to(dtype)
    optimizers = {"dsr": make_optimizer(dsr, config), "de": make_optimizer(de, config)}
    return TrainState(config, dsr, de, optimizers)


def init_structure(state: TrainState) -> StructureBranch:
    # own seed so the DSR/DE initialisation does not depend on ablation switches
    torch.manual_seed(state.config.seed + 1)
    branch = StructureBranch(state.config.channels, use_uncertainty=state.config.ablation.uncertainty)
    state.structure = branch.to(state.dtype)
    state.optimizers["structure"] = make_optimizer(state.structure, state.config)
    return state.structure


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    if epoch < 1:
        raise ValueError(f"epochs are numbered from 1, got {epoch}")
    return config.initial_lr * config.lr_decay_factor ** ((epoch - 1) // config.lr_decay_period)


def optimizer_step(
    optimizer: torch.optim.Optimizer,
    named_params: Iterable[Tuple[str, nn.Parameter]],
    lr: float,
) -> None:
    for name, param in named_params:
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise DivergenceError(f"gradient for parameter {name}")
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()


def _check_finite(epoch: int, batch: int, losses: Dict[str, torch.Tensor]) -> None:
    values = {k: float(v) for k, v in losses.items()}
    if not all(math.isfinite(v) for v in values.values()):
        raise DivergenceError("loss", epoch, batch, values)


def _progress(data: SampleBank, config: TrainConfig, epoch: int, desc: str):
    batches = data.batches(config.batch_size, config.seed, epoch)
    total = math.ceil(len(data) / config.batch_size)
    return tqdm(batches, total=total, desc=f"{desc} epoch {epoch}", leave=False, disable=not config.progress)


def _log_epoch(
    state: TrainState,
    log: Optional[RecordLog],
    step: str,
    lr: float,
    totals: Dict[str, float],
    batches: int,
    started: float,
    roles: Optional[RoleAssignment] = None,
) -> None:
    e_dsr, e_de = state.errors.means()
    record = {
        "epoch": state.epoch,
        "step": step,
        "lr": lr,
        "losses": {k: v / max(batches, 1) for k, v in totals.items()},
        "e_dsr": roles.e_dsr if roles is not None else e_dsr,
        "e_de": roles.e_de if roles is not None else (None if math.isnan(e_de) else e_de),
        "measured": {"e_dsr": e_dsr, "e_de": None if math.isnan(e_de) else e_de},
        "teacher": roles.teacher.value if roles is not None else None,
        "wall_time": time.perf_counter() - started,
    }
    logger.info(
        "%s epoch %d lr %.3g %s teacher=%s",
        step,
        state.epoch,
        lr,
        " ".join(f"{k}={v:.5f}" for k, v in record["losses"].items()),
        record["teacher"],
    )
    if log is not None:
        log.append(record)


def measure_errors(state: TrainState, data: SampleBank) -> ErrorAccumulator:
    acc = ErrorAccumulator()
    with torch.no_grad():
        for d_lr, d_hr, rgb, _ in data.batches(state.config.batch_size, state.config.seed, 0, shuffle=False):
            de = state.de(rgb).final_output if state.config.ablation.cross_task else None
            acc.add(state.dsr(d_lr).final_output, de, d_hr)
    return acc


def evaluate_bank(state: TrainState, data: SampleBank) -> Dict[str, float]:
    """Validation pass: recovery errors and, when SPNet exists, the structure MAD."""
    acc = ErrorAccumulator()
    s_sum, s_count = 0.0, 0
    with torch.no_grad():
        for d_lr, d_hr, rgb, s_gt in data.batches(state.config.batch_size, state.config.seed, 0, shuffle=False):
            sr = state.dsr(d_lr)
            de = state.de(rgb)
            acc.add(sr.final_output, de.final_output, d_hr)
            if state.structure is not None:
                s_pred = state.structure(sr, de, d_hr)
                s_sum += float((s_pred - s_gt).abs().flatten(1).mean(dim=1).sum())
                s_count += d_hr.shape[0]
    e_dsr, e_de = acc.means()
    report = {"e_dsr": e_dsr, "e_de": e_de}
    if s_count:
        report["structure_mad"] = s_sum / s_count
    return report


def _pretrain_epoch(state: TrainState, data: SampleBank, epoch: int, log: Optional[RecordLog], train_de: bool) -> None:
    config = state.config
    lr = lr_at_epoch(epoch, config)
    totals: Dict[str, float] = defaultdict(float)
    started = time.perf_counter()
    state.errors.reset()
    batches = 0
    for batch, (d_lr, d_hr, rgb, _) in enumerate(_progress(data, config, epoch, "step1")):
        sr = state.dsr(d_lr)
        losses = {"dsr": dsr_loss(sr.final_output, d_hr)}
        de: Optional[FeatureStack] = None
        if train_de:
            de = state.de(rgb)
            losses["de"] = de_loss(de.final_output, d_hr, config.weights.lam)
        _check_finite(epoch, batch, losses)

        state.optimizers["dsr"].zero_grad(set_to_none=True)
        state.optimizers["de"].zero_grad(set_to_none=True)
        sum(losses.values()).backward()
        optimizer_step(state.optimizers["dsr"], state.dsr.named_parameters(), lr)
        if train_de:
            optimizer_step(state.optimizers["de"], state.de.named_parameters(), lr)

        state.errors.add(sr.final_output.detach(), de.final_output.detach() if de is not None else None, d_hr)
        state.step += 1
        batches += 1
        trace = {k: float(v) for k, v in losses.items()}
        state.loss_trace.append(trace)
        for k, v in trace.items():
            totals[k] += v
    state.epoch = epoch
    _log_epoch(state, log, "step1" if epoch <= config.step1_epochs else "step2", lr, totals, batches, started)


def run_step1(
    config: TrainConfig,
    data: SampleBank,
    state: Optional[TrainState] = None,
    log: Optional[RecordLog] = None,
    on_epoch: Optional[EpochHook] = None,
) -> TrainState:
    if state is None:
        state = build_state(config)
    for epoch in range(state.epoch + 1, config.step1_epochs + 1):
        _pretrain_epoch(state, data, epoch, log, train_de=config.ablation.cross_task)
        if on_epoch is not None:
            on_epoch(state)
    return state


def _choose_roles(state: TrainState) -> RoleAssignment:
    e_dsr, e_de = state.errors.means()
    if state.config.force_student is not None:
        return forced_roles(Role(state.config.force_student), e_dsr, e_de)
    return select_roles(e_dsr, e_de)


def _student_losses(
    state: TrainState,
    roles: RoleAssignment,
    sr: FeatureStack,
    de: FeatureStack,
    d_hr: torch.Tensor,
    s_gt: torch.Tensor,
) -> Dict[str, torch.Tensor]:
    config = state.config
    ablation = config.ablation
    if roles.student == Role.DSR:
        task = dsr_loss(sr.final_output, d_hr)
    else:
        task = de_loss(de.final_output, d_hr, config.weights.lam)
    zero = task.new_zeros(())

    l_o, l_a = zero, zero
    if ablation.distill and ablation.output_space:
        l_o = output_space_loss(sr.side_outputs, de.side_outputs)
    if ablation.distill and ablation.affinity_space:
        pool = min(config.pool_size, *sr.last_feature.shape[-2:])
        l_a = affinity_space_loss(sr.features, de.features, pool)
    l_struc = zero
    if state.structure is not None:
        l_struc = structure_loss(state.structure(sr, de, d_hr), s_gt)

    l_distill = distill_loss(l_o, l_a, config.weights.gamma)
    total = total_student_loss(task, l_struc, l_distill, config.effective_weights())
    return {"total": total, "task": task, "output": l_o, "affinity": l_a, "distill": l_distill, "structure": l_struc}


def _collaborative_epoch(
    state: TrainState,
    data: SampleBank,
    epoch: int,
    log: Optional[RecordLog],
    val_data: Optional[SampleBank],
) -> None:
    config = state.config
    if state.errors.count == 0 or state.errors.count_de == 0:
        state.errors = measure_errors(state, val_data if config.role_split == "val" else data)
    roles = _choose_roles(state)
    state.role_history.append(roles)
    student = state.network(roles.student)
    teacher = state.network(roles.teacher)
    optimizer = state.optimizers["dsr" if roles.student == Role.DSR else "de"]

    lr = lr_at_epoch(epoch, config)
    totals: Dict[str, float] = defaultdict(float)
    started = time.perf_counter()
    state.errors.reset()
    batches = 0
    teacher.requires_grad_(False)
    try:
        for batch, (d_lr, d_hr, rgb, s_gt) in enumerate(_progress(data, config, epoch, "step2")):
            student_input, teacher_input = (d_lr, rgb) if roles.student == Role.DSR else (rgb, d_lr)
            with torch.no_grad():
                teacher_stack = teacher(teacher_input)
            sr, de = order_stacks(roles, student(student_input), teacher_stack)
            losses = _student_losses(state, roles, sr, de, d_hr, s_gt)
            _check_finite(epoch, batch, losses)

            optimizer.zero_grad(set_to_none=True)
            if state.structure is not None:
                state.optimizers["structure"].zero_grad(set_to_none=True)
            losses["total"].backward()
            optimizer_step(optimizer, student.named_parameters(), lr)
            if state.structure is not None:
                optimizer_step(state.optimizers["structure"], state.structure.named_parameters(), lr)

            state.errors.add(sr.final_output.detach(), de.final_output.detach(), d_hr)
            state.step += 1
            batches += 1
            trace = {k: float(v) for k, v in losses.items()}
            state.loss_trace.append(trace)
            for k, v in trace.items():
                totals[k] += v
    finally:
        teacher.requires_grad_(True)

    if config.role_split == "val" and val_data is not None:
        state.errors = measure_errors(state, val_data)
    state.epoch = epoch
    _log_epoch(state, log, "step2", lr, totals, batches, started, roles)


def run_step2(
    state: TrainState,
    config: TrainConfig,
    data: SampleBank,
    log: Optional[RecordLog] = None,
    val_data: Optional[SampleBank] = None,
    on_epoch: Optional[EpochHook] = None,
) -> TrainState:
    if state.epoch < config.step1_epochs:
        raise ValueError(f"step 2 needs a completed step 1, state is at epoch {state.epoch} of {config.step1_epochs}")
    if config.role_split == "val" and val_data is None:
        raise ValueError("role_split 'val' needs validation samples")
    cross_task = config.ablation.cross_task
    if cross_task and config.ablation.structure and state.structure is None:
        init_structure(state)
    for epoch in range(state.epoch + 1, config.max_epochs + 1):
        if cross_task:
            _collaborative_epoch(state, data, epoch, log, val_data)
        else:
            # DSRNet without cross-task training keeps minimising its own loss
            _pretrain_epoch(state, data, epoch, log, train_de=False)
        if on_epoch is not None:
            on_epoch(state)
    return state


def train(
    config: TrainConfig,
    data: SampleBank,
    val_data: Optional[SampleBank] = None,
    state: Optional[TrainState] = None,
    log: Optional[RecordLog] = None,
    on_epoch: Optional[EpochHook] = None,
) -> TrainState:
    config.check()
    if data.scale != config.scale:
        raise ShapeError(f"samples are x{data.scale} but the configuration trains x{config.scale}")
    if state is None:
        state = build_state(config)
    state.unit_scale = data.unit_scale
    state = run_step1(config, data, state, log, on_epoch)
    state = run_step2(state, config, data, log, val_data, on_epoch)
    if val_data is not None:
        logger.info("validation: %s", evaluate_bank(state, val_data))
    return state


def dump_diagnostics(state: TrainState, data: SampleBank, directory: Path) -> bool:
    if state.structure is None:
        logger.warning("no structure branch at epoch %d, skipping fusion diagnostics", state.epoch)
        return False
    d_lr, d_hr, rgb, _ = data.dataset[0]
    with torch.no_grad():
        sr = state.dsr(d_lr[None])
        de = state.de(rgb[None])
    dump_fusion_diagnostics(state.structure, sr, de, d_hr[None], directory)
    return True


def infer(d_lr: DepthMap, dsr: DSRNet, expected_scale: Optional[int] = None) -> DepthMap:
    if expected_scale is not None and dsr.scale != expected_scale:
        raise ShapeError(f"network super-resolves x{dsr.scale}, expected x{expected_scale}")
    dtype = next(dsr.parameters()).dtype
    was_training = dsr.training
    dsr.eval()
    with torch.no_grad():
        d_sr = dsr(d_lr.to_tensor(dtype)).final_output
    dsr.train(was_training)
    return DepthMap.from_tensor(d_sr, name=d_lr.name, unit_scale=d_lr.unit_scale)


def sample_bank(samples: List[TrainingSample], config: TrainConfig) -> SampleBank:
    return SampleBank(samples, dtype=DTYPES[config.dtype], augment=config.augment)
