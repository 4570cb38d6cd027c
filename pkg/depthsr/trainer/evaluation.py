import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

from depthsr.data import DepthMap, RgbImage, bicubic_downsample, bicubic_upsample, modcrop
from depthsr.losses import mad_metric, rmse_metric

logger = logging.getLogger(__name__)

# LR depth -> HR depth; never sees the colour image
Predictor = Callable[[DepthMap], DepthMap]

MetricRow = Dict[str, object]


def evaluate_scenes(
    predict: Predictor,
    pairs: Sequence[Tuple[RgbImage, DepthMap]],
    scale: int,
    unit_scale: float = 1.0,
) -> List[MetricRow]:
    rows: List[MetricRow] = []
    for _, depth in pairs:
        d_hr = modcrop(depth, scale)
        d_lr = bicubic_downsample(d_hr, scale)
        for method, d_sr in (("model", predict(d_lr)), ("bicubic", bicubic_upsample(d_lr, scale))):
            rows.append(
                {
                    "scene": d_hr.name,
                    "method": method,
                    "mad": mad_metric(d_sr, d_hr, unit_scale),
                    "rmse": rmse_metric(d_sr, d_hr, unit_scale),
                }
            )
    for method in ("model", "bicubic"):
        scored = [r for r in rows if r["method"] == method]
        if scored:
            rows.append(
                {
                    "scene": "mean",
                    "method": method,
                    "mad": sum(r["mad"] for r in scored) / len(scored),
                    "rmse": sum(r["rmse"] for r in scored) / len(scored),
                }
            )
    return rows


def mean_row(rows: List[MetricRow], method: str = "model") -> MetricRow:
    for row in rows:
        if row["scene"] == "mean" and row["method"] == method:
            return row
    raise KeyError(f"no mean row for {method}")


def format_table(rows: List[MetricRow]) -> str:
    width = max([len("scene")] + [len(str(r["scene"])) for r in rows])
    lines = [f"{'scene':<{width}}  {'method':<8}  {'MAD':>10}  {'RMSE':>10}"]
    for r in rows:
        lines.append(f"{r['scene']:<{width}}  {r['method']:<8}  {r['mad']:>10.4f}  {r['rmse']:>10.4f}")
    return "\n".join(lines) + "\n"


def write_report(rows: List[MetricRow], directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "metrics.json").write_text(json.dumps(rows, indent=2))
    (directory / "metrics.txt").write_text(format_table(rows))
    logger.info("wrote metrics for %d rows to %s", len(rows), directory)
