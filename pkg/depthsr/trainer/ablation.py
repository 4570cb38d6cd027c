import copy
import logging
import statistics
from typing import Dict, List, Sequence, Tuple

from depthsr.data import DepthMap, RgbImage, SampleBank
from .config import Ablation, TrainConfig
from .evaluation import evaluate_scenes, mean_row
from .trainer import infer, train

logger = logging.getLogger(__name__)

# rung name -> ablation flags, from the plain DSRNet up to the full model
LADDER: Dict[str, List[str]] = {
    "baseline": ["no-ct"],
    "+output": ["no-affinity", "no-spnet"],
    "+output+affinity": ["no-spnet"],
    "full": [],
}


class LadderResult:
    def __init__(self, seeds: Sequence[int]):
        self.seeds: List[int] = list(seeds)
        self.mads: Dict[str, List[float]] = {rung: [] for rung in LADDER}

    def medians(self) -> Dict[str, float]:
        return {rung: statistics.median(values) for rung, values in self.mads.items() if values}

    def is_monotone(self, tolerance: float = 0.01) -> bool:
        medians = [self.medians()[rung] for rung in LADDER]
        return all(b <= a * (1 + tolerance) for a, b in zip(medians[:-1], medians[1:]))

    def improvement(self) -> float:
        medians = self.medians()
        return 1 - medians["full"] / medians["baseline"]

    def to_dict(self) -> Dict[str, object]:
        return {"seeds": self.seeds, "mads": self.mads, "medians": self.medians()}

    def __repr__(self):
        parts = ", ".join(f"{k}={v:.5f}" for k, v in self.medians().items())
        return f"<LadderResult: {parts}>"


def rung_config(base: TrainConfig, flags: List[str], seed: int) -> TrainConfig:
    config = copy.deepcopy(base)
    config.seed = seed
    config.ablation = Ablation()
    config.apply_ablations(flags)
    return config


def run_ablation_ladder(
    base_config: TrainConfig,
    samples: SampleBank,
    test_pairs: Sequence[Tuple[RgbImage, DepthMap]],
    seeds: Sequence[int],
) -> LadderResult:
    result = LadderResult(seeds)
    for seed in seeds:
        for rung, flags in LADDER.items():
            config = rung_config(base_config, flags, seed)
            state = train(config, samples)
            rows = evaluate_scenes(lambda d_lr: infer(d_lr, state.dsr, config.scale), test_pairs, config.scale)
            mad = float(mean_row(rows)["mad"])
            result.mads[rung].append(mad)
            logger.info("seed %d rung %s: test MAD %.5f", seed, rung, mad)
    return result
