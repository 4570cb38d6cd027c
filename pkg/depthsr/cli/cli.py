import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from depthsr.data import (
    SUPPORTED_SCALES,
    DepthFormat,
    DepthMap,
    extract_patches,
    load_rgbd_pairs,
    make_toy_dataset,
    read_raw_depth,
    read_shards,
    write_raw_depth,
    write_shards,
)
from depthsr.errors import ArchiveError, ConfigError, DepthSRError, DivergenceError, PairingError, ShapeError
from depthsr.trainer import (
    ABLATION_FLAGS,
    RecordLog,
    TrainConfig,
    dump_diagnostics,
    evaluate_scenes,
    format_table,
    infer,
    load_checkpoint,
    load_inference_model,
    run_ablation_ladder,
    sample_bank,
    save_checkpoint,
    setup_logging,
    train,
    write_report,
    write_run_manifest,
)
from depthsr.trainer.evaluation import Predictor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ABORT = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _args_digest(args: argparse.Namespace) -> str:
    values = {k: str(v) for k, v in vars(args).items() if k != "handler"}
    return hashlib.sha256(json.dumps(values, sort_keys=True).encode()).hexdigest()


def _check_scale(scale: int) -> None:
    if scale not in SUPPORTED_SCALES:
        raise ConfigError([f"unsupported scale {scale}; supported: {', '.join(map(str, SUPPORTED_SCALES))}"])


def cmd_prepare(args: argparse.Namespace) -> int:
    _check_scale(args.scale)
    pairs = load_rgbd_pairs(args.input, DepthFormat(args.format))
    samples = extract_patches(pairs, args.patch_size, args.count, args.scale, args.seed)
    write_shards(
        samples,
        args.output,
        extra={"source": str(args.input), "patch_size": args.patch_size, "seed": args.seed},
    )
    print(f"{args.input}: {len(pairs)} pairs, {len(samples)} patches of {args.patch_size}px at x{args.scale}")
    write_run_manifest(args.output, "prepare", _args_digest(args), args.seed)
    return EXIT_OK


def cmd_make_toy(args: argparse.Namespace) -> int:
    stems = make_toy_dataset(args.output, args.count, args.size, args.seed)
    print(f"wrote {len(stems)} toy scenes to {args.output}")
    write_run_manifest(args.output, "make-toy", _args_digest(args), args.seed)
    return EXIT_OK


def load_config(args: argparse.Namespace) -> TrainConfig:
    overrides = args.set or []
    if args.config is not None:
        config = TrainConfig.from_toml(args.config, overrides)
    else:
        config = TrainConfig.toy()
        errors = config.apply_overrides(overrides)
        if errors:
            raise ConfigError(errors)
    errors = config.apply_ablations(args.ablate or [])
    errors += config.validate()
    if not config.train_dir:
        errors.append("data.train_dir is required")
    if errors:
        raise ConfigError(errors)
    return config


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args)
    run_dir = Path(config.run_dir)
    setup_logging(run_dir / "train.log", filemode="a" if args.resume else "w")
    write_run_manifest(run_dir, "train", config.digest(), config.seed, {"resume": str(args.resume or "")})

    data = sample_bank(read_shards(config.train_dir), config)
    val_data = sample_bank(read_shards(config.val_dir), config) if config.val_dir else None
    state = load_checkpoint(args.resume, config) if args.resume else None

    def on_epoch(s) -> None:
        save_checkpoint(s, run_dir / "last.pt")

    log = RecordLog(run_dir / "epochs.jsonl", append=args.resume is not None)
    state = train(config, data, val_data, state, log, on_epoch)
    final = save_checkpoint(state, run_dir / "final.pt")
    teachers = ",".join(r.teacher.value for r in state.role_history)
    print(f"trained to epoch {state.epoch}; teacher per step-2 epoch: {teachers or '-'}; checkpoint {final}")
    if args.dump_diagnostics is not None and dump_diagnostics(state, val_data or data, args.dump_diagnostics):
        print(f"fusion diagnostics in {args.dump_diagnostics}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, predictor: Optional[Predictor] = None) -> int:
    pairs = load_rgbd_pairs(args.data, DepthFormat(args.format))
    scale = args.scale
    if predictor is None:
        dsr, header = load_inference_model(args.checkpoint)
        if scale is not None and scale != dsr.scale:
            raise ShapeError(f"checkpoint super-resolves x{dsr.scale}, requested x{scale}")
        scale = dsr.scale

        def predictor(d_lr: DepthMap) -> DepthMap:
            return infer(d_lr, dsr, scale)

    if scale is None:
        raise ConfigError(["--scale is required without a checkpoint"])
    _check_scale(scale)
    unit_scale = args.unit_scale
    if unit_scale is None:
        unit_scale = pairs[0][1].unit_scale if pairs else 1.0
    rows = evaluate_scenes(predictor, pairs, scale, unit_scale)
    write_report(rows, args.output)
    write_run_manifest(args.output, "eval", _args_digest(args), None)
    print(format_table(rows), end="")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    dsr, header = load_inference_model(args.checkpoint)
    unit_scale = float(header.get("unit_scale", 1.0))
    raw = read_raw_depth(args.input)
    name = Path(args.input).stem
    d_lr = DepthMap(np.clip(raw / unit_scale, 0.0, 1.0), name=name, unit_scale=unit_scale)
    d_sr = infer(d_lr, dsr)
    output = Path(args.output)
    write_raw_depth(output, d_sr.values * unit_scale)
    elapsed = time.perf_counter() - started
    write_run_manifest(output.parent, "infer", _args_digest(args), None)
    print(f"{args.input} {d_lr.height}x{d_lr.width} -> {output} {d_sr.height}x{d_sr.width} in {elapsed:.3f}s")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args)
    test_dir = args.test or config.test_dir
    if not test_dir:
        raise ConfigError(["ablate needs --test or data.test_dir"])
    test_pairs = load_rgbd_pairs(test_dir)
    output = Path(args.output)
    setup_logging(output / "ablation.log")
    write_run_manifest(output, "ablate", config.digest(), None, {"seeds": args.seeds})
    data = sample_bank(read_shards(config.train_dir), config)
    result = run_ablation_ladder(config, data, test_pairs, args.seeds)
    (output / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2))
    for rung, median in result.medians().items():
        print(f"{rung:<18} {median:.5f}")
    print(f"monotone: {result.is_monotone()}  improvement: {result.improvement():.1%}")
    return EXIT_OK


def _config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML configuration (toy preset when omitted)")
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    parser.add_argument("--ablate", action="append", choices=list(ABLATION_FLAGS), help="switch off a component")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="depthsr", description="Depth-only super-resolution with cross-task distillation")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    prepare = commands.add_parser("prepare", help="cut training patches from RGB-D pairs")
    prepare.add_argument("--input", type=Path, required=True)
    prepare.add_argument("--output", type=Path, required=True)
    prepare.add_argument("--scale", type=int, default=4)
    prepare.add_argument("--patch-size", type=int, default=256)
    prepare.add_argument("--count", type=int, required=True)
    prepare.add_argument("--seed", type=int, default=0)
    prepare.add_argument("--format", choices=[f.value for f in DepthFormat], default=DepthFormat.PNG16.value)
    prepare.set_defaults(handler=cmd_prepare)

    toy = commands.add_parser("make-toy", help="write procedural RGB-D scenes")
    toy.add_argument("--output", type=Path, required=True)
    toy.add_argument("--count", type=int, default=20)
    toy.add_argument("--size", type=int, default=96)
    toy.add_argument("--seed", type=int, default=0)
    toy.set_defaults(handler=cmd_make_toy)

    train_cmd = commands.add_parser("train", help="run both training steps")
    _config_flags(train_cmd)
    train_cmd.add_argument("--resume", type=Path, help="checkpoint to continue from")
    train_cmd.add_argument("--dump-diagnostics", type=Path, metavar="DIR", help="write fusion maps of the first sample")
    train_cmd.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="MAD/RMSE on full RGB-D scenes")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--scale", type=int)
    evaluate.add_argument("--unit-scale", type=float, help="native units per normalized unit (dataset max by default)")
    evaluate.add_argument("--format", choices=[f.value for f in DepthFormat], default=DepthFormat.PNG16.value)
    evaluate.add_argument("--output", type=Path, default=Path("eval"))
    evaluate.set_defaults(handler=cmd_eval)

    # depth in, depth out: there is deliberately no colour-image flag
    infer_cmd = commands.add_parser("infer", help="super-resolve one depth map")
    infer_cmd.add_argument("--checkpoint", type=Path, required=True)
    infer_cmd.add_argument("--input", type=Path, required=True, help="LR depth (.png 16-bit or .pfm)")
    infer_cmd.add_argument("--output", type=Path, required=True, help="HR depth (.png 16-bit or .pfm)")
    infer_cmd.set_defaults(handler=cmd_infer)

    ablate = commands.add_parser("ablate", help="train the component ladder over several seeds")
    _config_flags(ablate)
    ablate.add_argument("--test", type=Path, help="held-out RGB-D scenes (data.test_dir by default)")
    ablate.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ablate.add_argument("--output", type=Path, default=Path("ablation"))
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        handler: Callable[[argparse.Namespace], int] = args.handler
        return handler(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ShapeError, PairingError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, ArchiveError, DepthSRError, OSError) as err:
        print(f"aborted: {err}", file=sys.stderr)
        return EXIT_ABORT


def main() -> None:
    sys.exit(run())
