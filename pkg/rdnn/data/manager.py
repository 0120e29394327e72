"""
DataPaths & DataSaver Workflow Overview
1. Paths
    └─ paths = DataPaths.build(cfg)    # deterministic names under cfg["out"]
2. Saving command outputs via DataSaver
    ├─ saver.pairs(data)                # pair-set CSV + metadata sidecar
    ├─ saver.checkpoint(payload)        # network checkpoint JSON
    ├─ saver.history(history)           # training history CSV
    ├─ saver.trajectory(result, i)      # trajectory CSV + metrics sidecar
    └─ saver.table(df, text)            # table CSV + text grid
Every file name starts with the system name, so outputs of different systems
can share one directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from logging import Logger
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional

import pandas as pd

from rdnn.data import writer
from rdnn.utils._logger import get_logger

if TYPE_CHECKING:
    from rdnn.config import RunConfig
    from rdnn.evaluate import TrajectoryResult
    from rdnn.optimize import LossReport
    from rdnn.systems import DataPairSet


def _num(x: float) -> str:
    return f"{x:g}".replace(".", "p")


@dataclass
class DataPaths:
    """Output paths for one command, derived from the :class:`RunConfig` only."""

    root: Path
    pairs: Path
    checkpoint: Path
    history: Path
    trajectory_stem: str
    table: Path

    @classmethod
    def build(cls, cfg: "RunConfig") -> "DataPaths":
        root = Path(cfg.get("out"))
        system = cfg.get("system")
        dt = cfg.get("dt")
        run = f"{system}_{cfg.get('scheme')}_M{cfg.get('stages')}"
        if dt is not None:
            run += f"_dt{_num(dt)}"
        table_system = system
        if cfg.get("table") is not None:
            from rdnn.evaluate import TABLE_SYSTEMS

            table_system = TABLE_SYSTEMS.get(cfg.get("table"), system)
        truth = cfg.get("truth") or system
        return cls(
            root=root,
            pairs=root / f"{system}_dt{_num(dt) if dt is not None else 'x'}_n{cfg.get('n_pairs')}"
                         f"_seed{cfg.get('seed')}_pairs.csv",
            checkpoint=root / f"{run}_checkpoint.json",
            history=root / f"{run}_history.csv",
            trajectory_stem=f"{truth}_trajectory",
            table=root / f"{table_system}_table{cfg.get('table')}_{cfg.get('scale')}.csv",
        )

    def trajectory(self, index: int) -> Path:
        return self.root / f"{self.trajectory_stem}_{index}.csv"


@dataclass
class DataSaver:
    """Writes command outputs to the locations named by :class:`DataPaths`.

    Unlike logging, write failures are not swallowed: the ``OSError`` is
    logged with its path and re-raised.
    """

    cfg: "RunConfig"
    paths: DataPaths = field(init=False)
    logger: Logger = field(default_factory=lambda: get_logger("DataSaver"))

    def __post_init__(self) -> None:
        self.paths = DataPaths.build(self.cfg)
        self.logger.debug(f"Prepared output paths: {self.paths}")

    def _guard(self, what: str, path: Path, action):
        try:
            result = action()
        except OSError as e:
            self.logger.error(f"Error saving {what} to {path}: {e}")
            raise
        self.logger.info(f"{what.capitalize()} saved to {path}")
        return result

    def pairs(self, data: "DataPairSet") -> tuple[Path, Path]:
        path = self.paths.pairs
        return self._guard("pair set", path, lambda: writer.write_pairs(data, path))

    def checkpoint(self, payload: dict, quiet: bool = False) -> Path:
        path = self.paths.checkpoint
        if quiet:
            return writer.write_checkpoint(payload, path)
        return self._guard("checkpoint", path, lambda: writer.write_checkpoint(payload, path))

    def history(self, history: Iterable["LossReport"]) -> Path:
        path = self.paths.history
        return self._guard("history", path, lambda: writer.write_history(history, path))

    def trajectory(self, result: "TrajectoryResult", index: int = 0) -> tuple[Path, Path]:
        path = self.paths.trajectory(index)
        return self._guard("trajectory", path, lambda: writer.write_trajectory(result, path))

    def table(self, df: pd.DataFrame, text: Optional[str] = None) -> tuple[Path, Optional[Path]]:
        path = self.paths.table
        return self._guard("table", path, lambda: writer.write_table(df, path, text))
