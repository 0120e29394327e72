import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Type, TypeVar, Union

import yaml

from rdnn.errors import ConfigurationError, ContractError
from rdnn.utils._logger import get_logger

T = TypeVar('T')

COMMANDS = ("gen-data", "train", "predict", "reproduce")
SECTIONS = ("data", "model", "training", "evaluation", "reproduce", "paths")
# RunConfig keys that map one to one onto TableSpec fields
TABLE_FIELDS = {
    "dts": "dts",
    "n_pairs": "n_pairs",
    "substeps": "data_substeps",
    "scheme": "scheme_kind",
    "horizon": "horizon",
    "eval_step": "eval_step",
}


def float_tuple(value: Any) -> Tuple[float, ...]:
    """Accept ``[1, 2]``, ``(1, 2)``, ``"1,2"`` or a single number."""
    if isinstance(value, str):
        value = [v for v in value.replace(" ", "").split(",") if v]
    if isinstance(value, (int, float)):
        value = [value]
    return tuple(float(v) for v in value)


def int_tuple(value: Any) -> Tuple[int, ...]:
    floats = float_tuple(value)
    if any(int(v) != v for v in floats):
        raise ValueError(f"expected integers, got {value!r}")
    return tuple(int(v) for v in floats)


def as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def as_int(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError("expected an integer, got a boolean")
    number = float(value)
    if int(number) != number:
        raise ValueError(f"expected an integer, got {value!r}")
    return int(number)


def batch_value(value: Any) -> Union[str, int]:
    if isinstance(value, str) and value.strip().lower() == "full":
        return "full"
    return as_int(value)


# Configuration Registry pattern
class ConfigRegister:
    """A registry that maintains configuration values with optional type validation."""

    def __init__(self):
        self._registry: Dict[str, Any] = {}
        self._metadata: Dict[str, Dict[str, Any]] = {}

    def register(self, key: str, default: Any = None,
                 type_hint: Optional[Union[Type, Callable[[Any], Any]]] = None,
                 description: str = "",
                 category: str = "general") -> None:
        """Register a configuration parameter with metadata."""
        self._registry[key] = default
        self._metadata[key] = {
            "type": type_hint,
            "description": description,
            "category": category
        }

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value."""
        return self._registry.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Set a configuration value, coercing it to the registered type."""
        if key not in self._registry:
            self.register(key, value)

        type_hint = self._metadata.get(key, {}).get("type")
        if value is not None and type_hint is not None:
            if not (isinstance(type_hint, type) and isinstance(value, type_hint)):
                try:
                    value = type_hint(value)
                except (ValueError, TypeError):
                    name = getattr(type_hint, "__name__", str(type_hint))
                    raise TypeError(f"Invalid type for {key}. Expected {name}, got {type(value).__name__}")

        self._registry[key] = value

    def has(self, key: str) -> bool:
        """Check if a key exists in the registry."""
        return key in self._registry

    def keys(self) -> List[str]:
        """Get all registered keys."""
        return list(self._registry.keys())

    def items(self) -> Dict[str, Any]:
        """Get all key-value pairs."""
        return self._registry.copy()

    def get_metadata(self, key: str) -> Dict[str, Any]:
        """Get metadata for a key."""
        return self._metadata.get(key, {})


class RunConfig(ConfigRegister):
    """## Configuration of one rdnn command.

    Values come from the registered defaults, then an optional YAML/JSON file,
    then command-line flags (flags win).

    #### Example Usage:
    ```python
    cfg = RunConfig()
    cfg.load("dev.yaml")
    cfg.update({"seed": 7, "stages": None})   # None means "flag not given"
    cfg.validate("train")
    scheme = cfg.scheme()
    ```
    """

    def __init__(self):
        super().__init__()
        self.logger = get_logger(__name__)
        self.source: Optional[str] = None
        self.explicit: set = set()
        self._register_default_parameters()

    def _register_default_parameters(self):
        r = self.register
        r("system", "cubic_oscillator", str, "Benchmark system name", "data")
        r("domain_lower", None, float_tuple, "Lower corner of the sampling box", "data")
        r("domain_upper", None, float_tuple, "Upper corner of the sampling box", "data")
        r("n_pairs", 1000, as_int, "Number of data pairs", "data")
        r("dt", None, float, "Time lag t2 - t1 of generated pairs", "data")
        r("substeps", None, as_int, "RK4 substeps of the data generator", "data")

        r("scheme", "recursive_rk4", str, "Residual scheme kind", "model")
        r("stages", 1, as_int, "Recursive stage count M", "model")
        r("hidden", (128,), int_tuple, "Hidden layer widths", "model")
        r("autonomous", True, as_bool, "Network ignores time when true", "model")

        r("adam_steps", 10000, as_int, "Adam steps", "training")
        r("adam_lr", 1e-3, float, "Adam learning rate", "training")
        r("adam_beta1", 0.9, float, "Adam first-moment decay", "training")
        r("adam_beta2", 0.999, float, "Adam second-moment decay", "training")
        r("adam_eps", 1e-8, float, "Adam epsilon", "training")
        r("lbfgs_max_iters", 5000, as_int, "L-BFGS iteration cap", "training")
        r("lbfgs_memory", 10, as_int, "L-BFGS history length", "training")
        r("lbfgs_grad_tol", 1e-9, float, "L-BFGS gradient-norm tolerance", "training")
        r("batch", "full", batch_value, "'full' or a mini-batch size for Adam", "training")
        r("seed", 0, as_int, "Random seed", "training")
        r("log_every", 100, as_int, "History cadence in steps", "training")
        r("checkpoint_every", 100, as_int, "Checkpoint cadence in steps", "training")
        r("divergence_penalty", None, float, "Loss added per diverging pair", "training")

        r("ic", None, float_tuple, "Initial condition for predict", "evaluation")
        r("horizon", None, float, "Prediction horizon", "evaluation")
        r("eval_step", None, float, "Evaluation grid step", "evaluation")
        r("truth_substeps", 1, as_int, "RK4 substeps per grid interval for the truth", "evaluation")
        r("truth", None, str, "True system to compare predictions against", "evaluation")

        r("table", None, as_int, "Benchmark table id", "reproduce")
        r("dts", None, float_tuple, "Time lags of the table rows, replacing the preset ones", "reproduce")
        r("scale", "paper", str, "Table scale: paper or smoke", "reproduce")
        r("workers", 1, as_int, "Worker threads for table cells", "reproduce")
        r("progress", False, as_bool, "Show progress bars", "reproduce")

        r("data", None, str, "Pair-set CSV to train on", "paths")
        r("checkpoint", None, str, "Checkpoint JSON to predict with", "paths")
        r("out", ".", str, "Output directory", "paths")

    # -- loading ---------------------------------------------------------------

    def _assign(self, key: str, value: Any) -> None:
        if not self.has(key):
            raise ConfigurationError(f"unknown configuration key {key!r}")
        try:
            self.set(key, value)
        except TypeError as e:
            raise ConfigurationError(str(e)) from None
        if value is not None:
            self.explicit.add(key)

    def load(self, path: str) -> None:
        """Load a YAML (``.yaml``/``.yml``) or JSON file; one level of sections is flattened."""
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            if path.suffix.lower() in (".yaml", ".yml"):
                try:
                    payload = yaml.safe_load(fh) or {}
                except yaml.YAMLError as e:
                    raise ConfigurationError(f"{path}: invalid YAML: {e}") from None
            else:
                try:
                    payload = json.load(fh)
                except json.JSONDecodeError as e:
                    raise ConfigurationError(f"{path}: invalid JSON: {e.msg}") from None
        if not isinstance(payload, dict):
            raise ConfigurationError(f"{path}: expected a mapping at the top level")

        for key, value in payload.items():
            if key in SECTIONS and isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    self._assign(sub_key, sub_value)
            else:
                self._assign(key, value)
        self.source = str(path)
        self.logger.info(f"Loaded configuration from {path}")

    def update(self, overrides: Dict[str, Any]) -> None:
        """Apply flag overrides; ``None`` values mean the flag was not given."""
        for key, value in overrides.items():
            if value is not None:
                self._assign(key, value)

    # -- typed views -------------------------------------------------------------

    def system(self):
        from rdnn.systems import get_system

        return get_system(self.get("system"))

    def domain(self):
        from rdnn.systems import Domain

        lower, upper = self.get("domain_lower"), self.get("domain_upper")
        if lower is None and upper is None:
            return None
        if lower is None or upper is None:
            raise ConfigurationError("domain_lower and domain_upper must be given together")
        return Domain(lower, upper)

    def scheme(self):
        from rdnn.residual import ResidualScheme

        return ResidualScheme(self.get("scheme"), self.get("stages"))

    def network_config(self):
        from rdnn.network import NetworkConfig

        return NetworkConfig(hidden=tuple(self.get("hidden")), autonomous=self.get("autonomous"))

    def train_config(self):
        from rdnn.optimize import TrainConfig

        return TrainConfig(
            adam_steps=self.get("adam_steps"),
            adam_lr=self.get("adam_lr"),
            adam_betas=(self.get("adam_beta1"), self.get("adam_beta2")),
            adam_eps=self.get("adam_eps"),
            lbfgs_max_iters=self.get("lbfgs_max_iters"),
            lbfgs_memory=self.get("lbfgs_memory"),
            lbfgs_grad_tol=self.get("lbfgs_grad_tol"),
            seed=self.get("seed"),
            batch=self.get("batch"),
            log_every=self.get("log_every"),
            checkpoint_every=self.get("checkpoint_every"),
            divergence_penalty=self.get("divergence_penalty"),
        )

    def table_spec(self):
        """The preset for ``table``/``scale`` with every explicitly set key applied.

        Setting ``dts`` or ``stages`` replaces the preset grid and drops the
        smoke cell subset; a lone ``dt`` or ``stages`` gives a single row or column.
        """
        from dataclasses import fields, replace

        from rdnn.evaluate import table_spec

        table, scale = self.get("table"), self.get("scale")
        preset = table_spec(table, scale)
        given = self.explicit
        if "system" in given and self.get("system") != preset.system:
            raise ConfigurationError(f"table {table} is {preset.system}, configuration names {self.get('system')}")

        overrides: Dict[str, Any] = {"base_seed": self.get("seed"), "truth_substeps": self.get("truth_substeps")}
        for key, name in TABLE_FIELDS.items():
            if key in given:
                overrides[name] = self.get(key)
        if "dt" in given and "dts" not in given:
            overrides["dts"] = (self.get("dt"),)
        if "stages" in given:
            overrides["stages"] = (self.get("stages"),)
        if given & {"dt", "dts", "stages"}:
            overrides["cells"] = None
        if "ic" in given:
            overrides["eval_ics"] = (self.get("ic"),)
        if given & {"domain_lower", "domain_upper"}:
            overrides["domain"] = self.domain()
        if given & {"hidden", "autonomous"}:
            overrides["net_config"] = self.network_config()

        training = {f.name for f in fields(preset.train_config)} - {"seed"}
        chosen = self.train_config()
        changed = {name: getattr(chosen, name) for name in training if name in given}
        if given & {"adam_beta1", "adam_beta2"}:
            b1, b2 = preset.train_config.adam_betas
            changed["adam_betas"] = (self.get("adam_beta1") if "adam_beta1" in given else b1,
                                     self.get("adam_beta2") if "adam_beta2" in given else b2)
        if changed:
            overrides["train_config"] = replace(preset.train_config, **changed)

        return table_spec(table, scale, **overrides)

    # -- validation --------------------------------------------------------------

    def _require(self, key: str) -> Any:
        value = self.get(key)
        if value is None:
            raise ConfigurationError(f"{key} is required")
        return value

    def _positive(self, key: str) -> None:
        value = self.get(key)
        if value is not None and not value > 0:
            raise ConfigurationError(f"{key} must be positive, got {value}")

    def validate(self, command: str) -> None:
        """Check every value the command will use before any work starts."""
        if command not in COMMANDS:
            raise ConfigurationError(f"unknown command {command!r}")
        if self.get("seed") < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.get('seed')}")

        if command == "gen-data":
            system = self.system()
            self._require("dt")
            for key in ("dt", "n_pairs", "substeps"):
                self._positive(key)
            domain = self.domain()
            if domain is not None and domain.dim != system.dim:
                raise ConfigurationError(f"domain has dimension {domain.dim}, {system.name} has {system.dim}")

        elif command == "train":
            self._require("data")
            self.scheme()
            self.network_config()
            self.train_config()

        elif command == "predict":
            self._require("checkpoint")
            truth = self.get("truth")
            if truth is not None:
                from rdnn.systems import get_system

                get_system(truth)
            elif self.get("ic") is None or self.get("horizon") is None or self.get("eval_step") is None:
                raise ConfigurationError("predict needs ic, horizon and eval_step unless truth names a system")
            for key in ("horizon", "eval_step", "truth_substeps"):
                self._positive(key)

        elif command == "reproduce":
            from rdnn.evaluate import SCALES, TABLE_SYSTEMS

            table = self._require("table")
            if table not in TABLE_SYSTEMS:
                raise ConfigurationError(f"table must be one of {sorted(TABLE_SYSTEMS)}, got {table}")
            if self.get("scale") not in SCALES:
                raise ConfigurationError(f"scale must be one of {SCALES}, got {self.get('scale')!r}")
            self._positive("workers")
            self._positive("truth_substeps")
            for key in ("horizon", "eval_step", "n_pairs", "substeps"):
                self._positive(key)
            try:
                self.table_spec()
            except ContractError as e:
                raise ConfigurationError(str(e)) from None
            unused = sorted(self.explicit & {"data", "checkpoint", "truth"})
            if unused:
                self.logger.warning(f"reproduce ignores {', '.join(unused)}")

        self.logger.debug(f"Validated configuration for {command}")
