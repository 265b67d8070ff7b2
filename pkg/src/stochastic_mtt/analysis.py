from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from stochastic_mtt.metrics import METRIC_NAMES, time_average

(
    " analysis.py Cross-run aggregation: per-run time averages and"
    " the mean/median summary per filter and metric over the seed"
    " list, with failed runs kept visible."
)

OK = "ok"
FAILED = "failed"


@dataclass
class RunOutcome:
    """What one (filter, seed) run produced, or why it failed."""

    label: str
    seed: int
    status: str = OK
    averages: Dict[str, Optional[float]] = field(default_factory=dict)
    ambiguity: Optional[float] = None
    position_accuracy: Optional[float] = None
    deletions: int = 0
    repairs: int = 0
    rejections: int = 0
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.status == FAILED


def run_averages(frame: pd.DataFrame) -> Dict[str, Optional[float]]:
    """Time-averaged value of every metric in a per-run metric table."""
    averages = {}
    for name in METRIC_NAMES:
        values = frame.loc[frame["metric"] == name, "value"].to_numpy(dtype=float)
        averages[name] = time_average(values)
    return averages


def runs_frame(outcomes: Sequence[RunOutcome]) -> pd.DataFrame:
    rows = []
    for outcome in outcomes:
        row = {
            "tracker_label": outcome.label,
            "seed": outcome.seed,
            "status": outcome.status,
        }
        for name in METRIC_NAMES:
            value = outcome.averages.get(name)
            row[name] = np.nan if value is None else value
        row["run_siap_ambiguity"] = (
            np.nan if outcome.ambiguity is None else outcome.ambiguity
        )
        row["run_siap_position_accuracy"] = (
            np.nan if outcome.position_accuracy is None else outcome.position_accuracy
        )
        row["deletions"] = outcome.deletions
        row["repairs"] = outcome.repairs
        row["rejections"] = outcome.rejections
        row["error"] = outcome.error or ""
        rows.append(row)
    return pd.DataFrame(rows)


def summarize_runs(outcomes: Sequence[RunOutcome]) -> pd.DataFrame:
    (
        " Mean and median of the per-run time averages, per filter"
        " label and metric. Failed runs and runs where a metric is"
        " undefined do not contribute to that metric."
    )
    labels: List[str] = []
    for outcome in outcomes:
        if outcome.label not in labels:
            labels.append(outcome.label)

    rows = []
    for label in labels:
        runs = [o for o in outcomes if o.label == label]
        failed = [o.seed for o in runs if o.failed]
        for name in METRIC_NAMES:
            values = np.array(
                [
                    o.averages[name]
                    for o in runs
                    if not o.failed and o.averages.get(name) is not None
                ],
                dtype=float,
            )
            rows.append(
                {
                    "tracker_label": label,
                    "metric": name,
                    "runs": int(values.size),
                    "failed": len(failed),
                    "mean": float(np.mean(values)) if values.size else np.nan,
                    "median": float(np.median(values)) if values.size else np.nan,
                    "failed_seeds": " ".join(str(s) for s in failed),
                }
            )
    return pd.DataFrame(
        rows,
        columns=["tracker_label", "metric", "runs", "failed", "mean", "median", "failed_seeds"],
    )
