"""Writers for pair sets, checkpoints, training history, trajectories and tables.

CSV floats are written with ``%.17g`` and JSON floats with their shortest
round-trip ``repr``, so every value reads back bit-exactly. Nothing written
here carries a timestamp; reruns with the same inputs give the same bytes
apart from the timing columns.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Optional, Union

import numpy as np
import pandas as pd

if TYPE_CHECKING:
    from rdnn.evaluate import TrajectoryResult
    from rdnn.optimize import LossReport
    from rdnn.systems import DataPairSet

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def pair_columns(d: int) -> list[str]:
    return (["t1"] + [f"phi1_{i}" for i in range(1, d + 1)]
            + ["t2"] + [f"phi2_{i}" for i in range(1, d + 1)])


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(payload: Any, path: PathLike) -> Path:
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def _write_frame(df: pd.DataFrame, path: Path, header_line: Optional[str] = None) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_line is not None:
            fh.write(header_line + "\n")
        df.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_pairs(data: "DataPairSet", path: PathLike) -> tuple[Path, Path]:
    """Pair-set CSV (``# dim=<d>`` line, then one pair per row) plus metadata sidecar."""
    path = _prepare(path)
    d = data.dim
    values = np.hstack([data.t1[:, None], data.phi1, data.t2[:, None], data.phi2]) if len(data) else \
        np.empty((0, 2 * d + 2))
    _write_frame(pd.DataFrame(values, columns=pair_columns(d)), path, f"# dim={d}")
    meta = write_json({**data.metadata, "rows": len(data), "dim": d}, sidecar_path(path))
    return path, meta


def write_checkpoint(payload: dict, path: PathLike) -> Path:
    return write_json(payload, path)


def write_history(history: Iterable["LossReport"], path: PathLike) -> Path:
    from rdnn.optimize import HISTORY_COLUMNS

    df = pd.DataFrame([r.to_row() for r in history], columns=list(HISTORY_COLUMNS))
    return _write_frame(df, _prepare(path))


def write_trajectory(result: "TrajectoryResult", path: PathLike) -> tuple[Path, Path]:
    """Columns ``t, true_1..true_d, pred_1..pred_d``.

    A diverged prediction is padded with empty cells after the failure time;
    without a reference trajectory the ``true_*`` columns are omitted.
    """
    path = _prepare(path)
    d = result.dim
    k = result.times.size
    pred = np.full((k, d), np.nan)
    pred[:result.predicted_states.shape[0]] = result.predicted_states
    columns = {"t": result.times}
    if result.true_states is not None:
        columns.update({f"true_{i + 1}": result.true_states[:, i] for i in range(d)})
    columns.update({f"pred_{i + 1}": pred[:, i] for i in range(d)})
    _write_frame(pd.DataFrame(columns), path)

    sidecar = {
        "metric_rel": result.metric_rel,
        "metric_abs": result.metric_abs,
        "diverged": result.diverged,
        "failure_time": result.failure_time,
        "points": int(k),
        "dim": int(d),
        "provenance": result.provenance,
    }
    return path, write_json(sidecar, sidecar_path(path))


def write_table(df: pd.DataFrame, path: PathLike, text: Optional[str] = None) -> tuple[Path, Optional[Path]]:
    """Table CSV, plus the rendered text grid next to it when given."""
    path = _write_frame(df, _prepare(path))
    text_path = None
    if text is not None:
        text_path = path.with_suffix(".txt")
        text_path.write_text(text + "\n", encoding="utf-8")
    return path, text_path
