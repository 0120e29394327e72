"""Readers for the files written by :mod:`rdnn.data.writer`."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

from rdnn.data.writer import pair_columns, sidecar_path
from rdnn.errors import ConfigurationError, ContractError, DataFormatError
from rdnn.evaluate import TrajectoryResult
from rdnn.network import CHECKPOINT_FORMAT, NetworkParams, from_checkpoint
from rdnn.systems import DataPairSet, ExactModel, get_system
from rdnn.utils._logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

_DIM_LINE = re.compile(r"^#\s*dim\s*=\s*(\d+)\s*$")
_PARSER_LINE = re.compile(r"line (\d+)")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise DataFormatError(str(path), f"invalid JSON: {e.msg} at line {e.lineno}") from None


def _read_dim(path: Path) -> int:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    match = _DIM_LINE.match(first)
    if not match:
        raise DataFormatError(str(path), f"expected a '# dim=<d>' first line, found {first[:40]!r}")
    return int(match.group(1))


def read_pairs(path: PathLike) -> DataPairSet:
    """Parse a pair-set CSV; rows in error messages count data rows from 1."""
    path = Path(path)
    d = _read_dim(path)
    expected = pair_columns(d)
    try:
        raw = pd.read_csv(path, skiprows=1, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        line = _PARSER_LINE.search(str(e))
        row = int(line.group(1)) - 2 if line else None
        raise DataFormatError(str(path), "wrong number of columns", row=row) from None
    except pd.errors.EmptyDataError:
        raise DataFormatError(str(path), "missing column header") from None
    if list(raw.columns) != expected:
        raise DataFormatError(str(path), f"expected columns {','.join(expected)}, got {','.join(raw.columns)}")

    values = raw.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce")).to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataFormatError(str(path), f"non-numeric or non-finite value {raw.iat[i, j]!r} in column "
                                         f"{expected[j]}", row=int(i) + 1)
    t1, phi1 = values[:, 0], values[:, 1:d + 1]
    t2, phi2 = values[:, d + 1], values[:, d + 2:]
    order = np.flatnonzero(t2 <= t1)
    if order.size:
        raise DataFormatError(str(path), "t2 must be greater than t1", row=int(order[0]) + 1)

    metadata = {}
    meta_path = sidecar_path(path)
    if meta_path.exists():
        metadata = read_json(meta_path)
    logger.debug(f"Read {len(values)} pairs (d={d}) from {path}")
    if len(values) == 0:
        return DataPairSet.empty(metadata)
    return DataPairSet(phi1, t1, phi2, t2, metadata)


def read_checkpoint(path: PathLike) -> tuple[Union[NetworkParams, ExactModel], dict]:
    """Load a model and the raw checkpoint payload.

    ``kind: exact`` checkpoints name a true system whose RHS stands in for the
    network.
    """
    path = Path(path)
    payload = read_json(path)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(str(path), f"not an {CHECKPOINT_FORMAT} file")
    kind = payload.get("kind", "network")
    try:
        if kind == "exact":
            get_system(payload["system"])
            return ExactModel(payload["system"]), payload
        if kind == "network":
            return from_checkpoint(payload), payload
    except KeyError as e:
        raise DataFormatError(str(path), f"missing field {e.args[0]!r}") from None
    except (ConfigurationError, ContractError) as e:
        raise DataFormatError(str(path), str(e)) from None
    raise DataFormatError(str(path), f"unknown checkpoint kind {kind!r}")


def read_trajectory(path: PathLike) -> TrajectoryResult:
    path = Path(path)
    df = pd.read_csv(path)
    sidecar = read_json(sidecar_path(path)) if sidecar_path(path).exists() else {}
    pred_cols = [c for c in df.columns if c.startswith("pred_")]
    true_cols = [c for c in df.columns if c.startswith("true_")]
    if "t" not in df.columns or not pred_cols:
        raise DataFormatError(str(path), "expected columns t and pred_1..pred_d")
    pred = df[pred_cols].to_numpy(dtype=np.float64)
    diverged = bool(sidecar.get("diverged", False))
    if diverged:
        pred = pred[np.all(np.isfinite(pred), axis=1)]
    return TrajectoryResult(
        times=df["t"].to_numpy(dtype=np.float64),
        predicted_states=pred,
        true_states=df[true_cols].to_numpy(dtype=np.float64) if true_cols else None,
        metric_rel=sidecar.get("metric_rel"),
        metric_abs=sidecar.get("metric_abs"),
        diverged=diverged,
        failure_time=sidecar.get("failure_time"),
        provenance=sidecar.get("provenance", {}),
    )
