import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import torch

from depthsr.distill import RoleAssignment
from depthsr.errors import CheckpointError
from depthsr.networks import DSRNet
from .config import TrainConfig
from .trainer import DTYPES, ErrorAccumulator, TrainState, build_state, init_structure

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
PREFIXES = ("dsr", "de", "structure")

# Checkpoint archive (torch.save, loadable with weights_only=True):
#   header      {format_version, scale, stage_count, channels, epoch, step, unit_scale, role_history}
#   config      TrainConfig.to_dict()
#   tensors     "<dsr|de|structure>.<state_dict key>" -> tensor
#   optimizers  {"dsr"|"de"|"structure": optimizer state_dict}
#   errors      ErrorAccumulator.to_dict()


def named_tensors(state: TrainState) -> Dict[str, torch.Tensor]:
    modules = {"dsr": state.dsr, "de": state.de, "structure": state.structure}
    tensors: Dict[str, torch.Tensor] = {}
    for prefix, module in modules.items():
        if module is None:
            continue
        for key, tensor in module.state_dict().items():
            tensors[f"{prefix}.{key}"] = tensor.detach().cpu()
    return tensors


def save_checkpoint(state: TrainState, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config = state.config
    archive = {
        "header": {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "scale": config.scale,
            "stage_count": config.stage_count,
            "channels": config.channels,
            "dtype": config.dtype,
            "epoch": state.epoch,
            "step": state.step,
            "unit_scale": state.unit_scale,
            "role_history": [r.to_record() for r in state.role_history],
        },
        "config": config.to_dict(),
        "tensors": named_tensors(state),
        "optimizers": {name: opt.state_dict() for name, opt in state.optimizers.items()},
        "errors": state.errors.to_dict(),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(archive, tmp)
    os.replace(tmp, path)
    logger.info("saved checkpoint for epoch %d to %s", state.epoch, path)
    return path


def read_archive(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        archive = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if not isinstance(archive, dict) or "header" not in archive or "tensors" not in archive:
        raise CheckpointError(f"{path} is not a depthsr checkpoint")
    if archive["header"].get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path} has unsupported format version {archive['header'].get('format_version')}")
    return archive


def _mismatches(expected: Dict[str, torch.Tensor], found: Dict[str, torch.Tensor]) -> List[str]:
    offending: List[str] = []
    for key, tensor in expected.items():
        if key not in found:
            offending.append(f"{key} (missing)")
        elif tuple(found[key].shape) != tuple(tensor.shape):
            offending.append(f"{key} {tuple(found[key].shape)} != {tuple(tensor.shape)}")
    offending += [f"{key} (unexpected)" for key in found if key not in expected]
    return offending


def _load_module(module: torch.nn.Module, prefix: str, tensors: Dict[str, torch.Tensor]) -> None:
    cut = len(prefix) + 1
    module.load_state_dict({k[cut:]: v for k, v in tensors.items() if k.startswith(prefix + ".")})


def load_checkpoint(path: Path, config: Optional[TrainConfig] = None) -> TrainState:
    archive = read_archive(path)
    if config is None:
        config = TrainConfig.from_dict(archive["config"])
    tensors: Dict[str, torch.Tensor] = archive["tensors"]

    state = build_state(config)
    if any(k.startswith("structure.") for k in tensors):
        init_structure(state)
    offending = _mismatches(named_tensors(state), tensors)
    if offending:
        raise CheckpointError(f"checkpoint {path} does not match the configuration", offending)

    for prefix in PREFIXES:
        module = getattr(state, prefix)
        if module is not None:
            _load_module(module, prefix, tensors)
    try:
        for name, opt_state in archive.get("optimizers", {}).items():
            state.optimizers[name].load_state_dict(opt_state)
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"optimizer state in {path} does not match the configuration: {err}") from err

    header = archive["header"]
    state.epoch = int(header["epoch"])
    state.step = int(header["step"])
    state.unit_scale = float(header.get("unit_scale", 1.0))
    state.role_history = [RoleAssignment.from_record(r) for r in header["role_history"]]
    state.errors = ErrorAccumulator.from_dict(archive["errors"])
    logger.info("resumed from %s at epoch %d", path, state.epoch)
    return state


def load_inference_model(path: Path) -> Tuple[DSRNet, Dict[str, Any]]:
    """Rebuild DSRNet from the dsr.* tensors alone."""
    archive = read_archive(path)
    header = archive["header"]
    dsr = DSRNet(header["scale"], header["stage_count"], header["channels"]).to(DTYPES[header.get("dtype", "float32")])
    tensors = {k: v for k, v in archive["tensors"].items() if k.startswith("dsr.")}
    expected = {f"dsr.{k}": v for k, v in dsr.state_dict().items()}
    offending = _mismatches(expected, tensors)
    if offending:
        raise CheckpointError(f"DSRNet tensors in {path} do not match the header", offending)
    _load_module(dsr, "dsr", tensors)
    return dsr, header
