"""
Procedure runner behind the rdnn commands.

A :class:`Procedure` owns the validated :class:`RunConfig`, the output
:class:`DataSaver` and a logger, and exposes one method per command. The CLI
builds it with :func:`create_procedure` and only prints the returned summary.
"""

import errno
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Type

from rdnn.config import RunConfig
from rdnn.data.load import read_checkpoint, read_pairs
from rdnn.data.manager import DataSaver
from rdnn.errors import ContractError, DivergenceError, EvaluationError
from rdnn.utils._logger import get_logger, log_this_fr


@dataclass
class ProcedureConfig:
    """Configuration container for procedures."""
    command: str = "train"
    config_path: Optional[str] = None
    out_dir: Optional[str] = None
    overrides: Dict[str, Any] = field(default_factory=dict)


def _require_file(path: Optional[str], what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(errno.ENOENT, f"{what} not found", str(p))
    return p


class Procedure:
    """One rdnn command run: configuration, outputs and the pipeline step."""

    def __init__(self, procedure_config: ProcedureConfig):
        self.command = procedure_config.command
        self.config = RunConfig()
        if procedure_config.config_path:
            self.config.load(procedure_config.config_path)
        self.config.update({**procedure_config.overrides, "out": procedure_config.out_dir})
        self.config.validate(self.command)

        self.logger = get_logger(f"PROCEDURE.{self.command}")
        self.saver = DataSaver(self.config)
        self.logger.info(f"Initialized procedure: {self.command}")

    # ------------------------------------------------------------------

    def run(self) -> Dict[str, Any]:
        steps = {
            "gen-data": self.generate_data,
            "train": self.train,
            "predict": self.predict,
            "reproduce": self.reproduce,
        }
        return steps[self.command]()

    @log_this_fr
    def generate_data(self) -> Dict[str, Any]:
        from rdnn.systems import generate_pairs

        cfg = self.config
        system = cfg.system()
        domain = cfg.domain() or system.domain
        data = generate_pairs(system, domain, cfg.get("n_pairs"), cfg.get("dt"), cfg.get("seed"),
                              cfg.get("substeps"))
        csv_path, _ = self.saver.pairs(data)
        return {
            "system": system.name,
            "n_pairs": len(data),
            "dt": cfg.get("dt"),
            "domain": domain.to_dict(),
            "seed": cfg.get("seed"),
            "path": str(csv_path),
        }

    @log_this_fr
    def train(self) -> Dict[str, Any]:
        from rdnn.network import to_checkpoint
        from rdnn.optimize import train

        cfg = self.config
        data_path = _require_file(cfg.get("data"), "dataset")
        data = read_pairs(data_path)
        if len(data) == 0:
            raise ContractError(f"{data_path} holds no data pairs")
        # outputs are named after the system the data came from
        for key in ("system", "dt"):
            if data.metadata.get(key) is not None:
                cfg.set(key, data.metadata[key])
        self.saver = DataSaver(cfg)

        scheme = cfg.scheme()
        extra = {"system": cfg.get("system"), "data": data_path.name}

        def on_checkpoint(params, step: int) -> None:
            self.saver.checkpoint(to_checkpoint(params, scheme.to_dict(), step=step, **extra), quiet=True)

        params, history = train(scheme, data, cfg.network_config(), cfg.train_config(),
                                callback=on_checkpoint, progress=cfg.get("progress"))
        last = history[-1]
        checkpoint = self.saver.checkpoint(to_checkpoint(params, scheme.to_dict(), step=last.step,
                                                         final_loss=last.loss, **extra))
        history_path = self.saver.history(history)
        if last.error:
            raise DivergenceError(f"training stopped early, best checkpoint kept in {checkpoint}: {last.error}")
        return {
            "scheme": str(scheme),
            "n_pairs": len(data),
            "final_loss": last.loss,
            "checkpoint": str(checkpoint),
            "history": str(history_path),
        }

    @log_this_fr
    def predict(self) -> Dict[str, Any]:
        from rdnn.evaluate import evaluate_model
        from rdnn.systems import get_system

        cfg = self.config
        model, payload = read_checkpoint(_require_file(cfg.get("checkpoint"), "checkpoint"))
        system = get_system(cfg.get("truth")) if cfg.get("truth") else None
        if system is not None and getattr(model, "state_dim", system.dim) != system.dim:
            raise ContractError(
                f"checkpoint state dimension {model.state_dim} does not match {system.name} (d={system.dim})"
            )
        ics = [cfg.get("ic")] if cfg.get("ic") is not None else list(system.eval_ics)
        horizon = cfg.get("horizon") or system.horizon
        eval_step = cfg.get("eval_step") or system.eval_step

        outputs, metrics = [], []
        for i, ic in enumerate(ics):
            result = evaluate_model(model, ic, horizon, eval_step, system=system,
                                    truth_substeps=cfg.get("truth_substeps"))
            result.provenance["checkpoint"] = Path(cfg.get("checkpoint")).name
            outputs.append(str(self.saver.trajectory(result, i)[0]))
            metrics.append(result.metric_rel)
            if result.diverged:
                self.logger.warning(f"Prediction from {ic} diverged at t={result.failure_time:g}")
        return {"trajectories": outputs, "metric_rel": metrics if system is not None else None}

    @log_this_fr
    def reproduce(self) -> Dict[str, Any]:
        from rdnn.evaluate import format_table, reproduce_table

        cfg = self.config
        spec = cfg.table_spec()
        df = reproduce_table(spec, workers=cfg.get("workers"), progress=cfg.get("progress"))
        text = format_table(df, spec.reference)
        csv_path, _ = self.saver.table(df, text)
        if not df["status"].isin(["ok", "training_diverged"]).any():
            raise EvaluationError(f"no cell of table {spec.table_id} succeeded, see {csv_path}")
        return {"table": str(csv_path), "text": text, "cells": len(df)}


def create_procedure(command: str,
                     config_path: Optional[str] = None,
                     out_dir: Optional[str] = None,
                     procedure_class: Type[Procedure] = Procedure,
                     **overrides) -> Procedure:
    """
    Factory function to create procedure instances.

    Args:
        command: One of ``gen-data``, ``train``, ``predict``, ``reproduce``
        config_path: Optional YAML/JSON configuration file
        out_dir: Output directory, overrides the ``out`` key
        procedure_class: The procedure class to instantiate
        **overrides: Configuration keys given as flags; ``None`` means unset

    Returns:
        Instance of the specified procedure class, with its configuration
        loaded and validated
    """
    config = ProcedureConfig(
        command=command,
        config_path=config_path,
        out_dir=out_dir,
        overrides=overrides,
    )

    return procedure_class(config)
