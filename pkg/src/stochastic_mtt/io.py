import json
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from stochastic_mtt.association import Detection
from stochastic_mtt.metrics import MetricSeries
from stochastic_mtt.scenarios import GroundTruthPath
from stochastic_mtt.tracker import ScanLog

logger = logging.getLogger(__name__)

(
    " io.py CSV, NDJSON and JSON writers for run artifacts. Floats"
    " carry 17 significant digits so every value read back is the"
    " value that was computed."
)

FLOAT_FORMAT = "%.17g"
STATE_COLUMNS = {
    4: ["north", "v_north", "east", "v_east"],
    6: ["north", "v_north", "east", "v_east", "up", "v_up"],
}


def save_json(data, filepath):
    Path(filepath).write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")


def write_csv(frame: pd.DataFrame, filepath) -> Path:
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(
        path,
        index=False,
        float_format=FLOAT_FORMAT,
        encoding="utf-8",
        lineterminator="\n",
    )
    logger.debug("Wrote %d row(s) to %s", len(frame), path)
    return path


def write_metric_series(series: MetricSeries, filepath) -> Path:
    return write_csv(series.to_frame(), filepath)


def read_metric_csv(filepath) -> pd.DataFrame:
    return pd.read_csv(filepath, encoding="utf-8")


def _state_columns(n_x: int) -> List[str]:
    return STATE_COLUMNS.get(n_x, [f"x{i}" for i in range(n_x)])


def truth_frame(paths: Sequence[GroundTruthPath]) -> pd.DataFrame:
    """One row per (scan, target): scan,time,target_id,<state components>."""
    if not paths:
        return pd.DataFrame(columns=["scan", "time", "target_id"])
    times = np.unique(np.concatenate([p.times for p in paths]))
    scan_of = {float(t): k for k, t in enumerate(times)}
    columns = _state_columns(paths[0].states.shape[1])
    rows = []
    for path in paths:
        for t, state in zip(path.times, path.states):
            rows.append(
                [scan_of[float(t)], float(t), path.target_id, *state.tolist()]
            )
    frame = pd.DataFrame(rows, columns=["scan", "time", "target_id", *columns])
    return frame.sort_values(["scan", "target_id"], kind="mergesort").reset_index(
        drop=True
    )


def detections_frame(scans: Iterable[Tuple[float, Sequence[Detection]]]) -> pd.DataFrame:
    """scan,time,target_id,z0..,sensor,clutter; clutter rows have no target."""
    rows = []
    width = 0
    for k, (t, detections) in enumerate(scans):
        for det in detections:
            width = max(width, det.z.shape[0])
            rows.append(
                (k, float(t), det.target_id or "", det.z.tolist(), det.sensor,
                 det.is_clutter_truth_flag)
            )
    z_columns = [f"z{i}" for i in range(width)]
    records = []
    for k, t, target, z, sensor, clutter in rows:
        padded = z + [np.nan] * (width - len(z))
        records.append([k, t, target, *padded, sensor, clutter])
    return pd.DataFrame(
        records, columns=["scan", "time", "target_id", *z_columns, "sensor", "clutter"]
    )


def write_trace(logs: Iterable[ScanLog], filepath) -> Path:
    """Scan logs as newline-delimited JSON, one scan per line."""
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for log in logs:
            handle.write(json.dumps(log.to_record(), sort_keys=True))
            handle.write("\n")
    return path
