import csv
import logging
import math
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Sequence, Union

logger = logging.getLogger("more_offline_rl")

DYNAMICS_REPORT_COLUMNS = ("epoch", "train_loss", "val_loss")
VAE_REPORT_COLUMNS = ("epoch", "train_loss", "elbo")
SWEEP_COLUMNS = ("cost_limit", "mean_return", "mean_discounted_return", "mean_discounted_cost", "satisfied")
ABLATION_COLUMNS = (
    "variant",
    "beta_u",
    "beta_p",
    "rollout_length",
    "l_u",
    "l_p",
    "dataset_hash",
    "eval_return",
    "eval_cost",
)


def format_cell(value: Any) -> str:
    """Empty for None, repr for floats so values survive a round trip."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(path: Union[str, Path], columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> int:
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(column)) for column in columns])
            count += 1
    logger.info(f"Wrote {count} rows to {path}")
    return count


def read_csv(path: Union[str, Path]) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))
