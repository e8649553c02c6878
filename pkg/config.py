"""Configuration management for twinuplift experiments."""

import json
import logging
import os
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any

from data import SplitPlan, SyntheticSpec
from exceptions import UsageError
from losses import LossVariant, alpha_from_lambda
from model import DEFAULT_HIDDEN_WIDTHS
from training import TrainConfig
from utils import parse_bool, parse_float, parse_int, parse_int_list, require_existing_path

logger = logging.getLogger(__name__)

ENV_PREFIX = "TWINUPLIFT_"
CONFIG_FILE_ENV = "TWINUPLIFT_CONFIG_FILE"
MODEL_NAMES = ("TO", "IE", "L1", "two_model", "interaction", "oracle")

Parser = Callable[[Any, str], Any]


def _int(minimum: int | None = None) -> Parser:
    return lambda value, key: parse_int(value, key, minimum=minimum)


def _float(low=None, high=None, open_low=False, open_high=False) -> Parser:
    return lambda value, key: parse_float(value, key, low, high, open_low, open_high)


def _choice(*options: str) -> Parser:
    def parse(value: Any, key: str) -> str:
        word = str(value).strip()
        if word not in options:
            raise UsageError(f"{key} must be one of {', '.join(options)}, got {value!r}", key=key)
        return word

    return parse


def _names(value: Any, key: str) -> tuple[str, ...]:
    if isinstance(value, str):
        names = tuple(part.strip() for part in value.split(",") if part.strip())
    elif isinstance(value, list | tuple):
        names = tuple(str(part) for part in value)
    else:
        raise UsageError(f"Invalid list for {key}: {value!r}", key=key)
    unknown = [name for name in names if name not in MODEL_NAMES]
    if unknown or not names:
        raise UsageError(
            f"{key} must list models from {', '.join(MODEL_NAMES)}, got {value!r}", key=key
        )
    return names


def _input_path(value: Any, key: str) -> str:
    return str(require_existing_path(value, key))


def _text(value: Any, key: str) -> str:
    text = str(value).strip()
    if not text:
        raise UsageError(f"{key} must not be empty", key=key)
    return text


PARSERS: dict[str, Parser] = {
    # common
    "seed": _int(0),
    "out": _text,
    "log_level": _choice("DEBUG", "INFO", "WARNING", "ERROR"),
    "workers": _int(1),
    "qini_grid": _int(1),
    "kendall_bins": _int(2),
    "qini_literal": parse_bool,
    # data inputs
    "data": _input_path,
    "truth": _input_path,
    "model": _input_path,
    "generator_model": _input_path,
    "outcome_col": _text,
    "treatment_col": _text,
    "propensity": _float(0.0, 1.0, open_low=True, open_high=True),
    # synthetic data
    "mode": _choice("parametric", "bootstrap"),
    "n": _int(2),
    "p": _int(1),
    "sparsity": _float(0.0, 1.0),
    "baseline_rate": _float(0.0, 1.0, open_low=True, open_high=True),
    "uplift_magnitude": _float(),
    "uplift_intercept": _float(),
    "data_seed": _int(0),
    "regenerate": parse_bool,
    # splitting
    "holdout_fraction": _float(0.0, 1.0, open_high=True),
    "train_fraction": _float(0.0, 1.0, open_low=True, open_high=True),
    "repeats": _int(2),
    "balance_method": _choice("undersample", "oversample"),
    # training
    "variant": _choice(*(v.value for v in LossVariant)),
    "alpha": _float(0.0, 1.0),
    "alpha_to": _float(0.0, 1.0),
    "alpha_ie": _float(0.0, 1.0),
    "lambda_to": _float(0.0),
    "lambda_ie": _float(0.0),
    "learning_rate": _float(0.0),
    "epochs": _int(1),
    "batch_size": _int(1),
    "hidden_widths": parse_int_list,
    "linear_prefix": _int(0),
    "slope": _float(0.0),
    "standardize": parse_bool,
    # benchmark
    "runs": _int(1),
    "seed_stride": _int(0),
    "models": _names,
    # evaluate
    "permutations": _int(0),
}

COMMON_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out": "results",
    "log_level": "INFO",
    "workers": None,
    "qini_grid": 100,
    "kendall_bins": 10,
    "qini_literal": False,
}
DATA_DEFAULTS: dict[str, Any] = {
    "data": None,
    "outcome_col": "outcome",
    "treatment_col": "treatment",
    "propensity": None,
}
SYNTHETIC_DEFAULTS: dict[str, Any] = {
    "n": 10_000,
    "p": 100,
    "sparsity": 0.1,
    "baseline_rate": 0.10,
    "uplift_magnitude": 0.5,
    "uplift_intercept": 0.05,
}
TRAIN_DEFAULTS: dict[str, Any] = {
    "learning_rate": 0.03,
    "epochs": 200,
    "batch_size": 256,
    "hidden_widths": list(DEFAULT_HIDDEN_WIDTHS),
    "linear_prefix": 2,
    "slope": 0.01,
    "standardize": True,
}

COMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {
        **COMMON_DEFAULTS,
        **DATA_DEFAULTS,
        **SYNTHETIC_DEFAULTS,
        "mode": "parametric",
        "generator_model": None,
    },
    "tune": {
        **COMMON_DEFAULTS,
        **DATA_DEFAULTS,
        **SYNTHETIC_DEFAULTS,
        **TRAIN_DEFAULTS,
        "data_seed": 0,
        "variant": "IE",
        "alpha": 0.5,
        "holdout_fraction": 0.30,
        "train_fraction": 0.60,
        "repeats": 10,
        "balance_method": "undersample",
    },
    "benchmark": {
        **COMMON_DEFAULTS,
        **DATA_DEFAULTS,
        **SYNTHETIC_DEFAULTS,
        **TRAIN_DEFAULTS,
        "truth": None,
        "generator_model": None,
        "data_seed": 0,
        "regenerate": False,
        "runs": 30,
        "seed_stride": 1,
        "holdout_fraction": 0.0,
        "train_fraction": 0.70,
        "models": "TO,IE,two_model,interaction,oracle",
        "alpha_to": 0.5,
        "alpha_ie": 0.5,
        "lambda_to": None,
        "lambda_ie": None,
        "balance_method": "undersample",
    },
    "evaluate": {
        **COMMON_DEFAULTS,
        **DATA_DEFAULTS,
        "model": None,
        "permutations": 0,
    },
}


class ExperimentConfig:
    """Resolved settings for one command.

    Configuration priority (highest to lowest):
    1. Command-line flags
    2. Environment variables ``TWINUPLIFT_<KEY>``
    3. The flat JSON configuration file
    4. Hard-coded defaults for the command

    Every value is parsed and range-checked on construction, so a bad key
    fails before any work begins.
    """

    def __init__(
        self,
        command: str,
        flags: Mapping[str, Any] | None = None,
        environ: Mapping[str, str] | None = None,
    ):
        if command not in COMMAND_DEFAULTS:
            raise UsageError(f"Unknown command {command!r}", key="command")
        self.command = command
        environ = os.environ if environ is None else environ
        flags = {key: value for key, value in (flags or {}).items() if value is not None}
        config_file = flags.pop("config", None) or environ.get(CONFIG_FILE_ENV)
        self.config_file = str(config_file) if config_file else None

        defaults = COMMAND_DEFAULTS[command]
        json_config = self._load_json_config(self.config_file)
        # Artifact headers name their command; such a header is itself a valid config file.
        json_config.pop("command", None)
        unknown = sorted(set(json_config) - set(PARSERS))
        if unknown:
            raise UsageError(f"Unknown configuration key {unknown[0]!r}", key=unknown[0])
        # One file may serve several commands; keys another command uses are skipped.
        ignored = sorted(set(json_config) - set(defaults))
        if ignored:
            logger.debug("%s ignores configuration keys %s", command, ", ".join(ignored))
        unused = sorted(set(flags) - set(defaults))
        if unused:
            raise UsageError(f"{unused[0]} is not used by {command}", key=unused[0])

        self._values: dict[str, Any] = {}
        for key, default in defaults.items():
            raw = self._get_config(key, flags, environ, json_config, default)
            self._values[key] = None if raw is None else PARSERS[key](raw, key)
        if self._values["workers"] is None:
            self._values["workers"] = os.cpu_count() or 1
        self._check_command_rules()

    def _load_json_config(self, config_file: str | None) -> dict[str, Any]:
        """Load the flat JSON configuration file.

        Args:
            config_file: Path to the file, or None when no file was given

        Returns:
            The key/value pairs of the file, or an empty dict

        Raises:
            UsageError: If the file is missing, unparsable or not flat
        """
        if config_file is None:
            return {}
        config_path = Path(config_file)
        if not config_path.exists():
            raise UsageError(f"Config file does not exist: {config_path}", key="config")
        try:
            with open(config_path, encoding="utf-8") as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise UsageError(f"Error parsing JSON config file {config_path}: {e}", key="config")
        if not isinstance(payload, dict):
            raise UsageError(f"Config file {config_path} must hold a JSON object", key="config")
        for key, value in payload.items():
            if isinstance(value, dict):
                raise UsageError(f"Config key {key!r} must not be a nested object", key=key)
        return payload

    def _get_config(
        self,
        key: str,
        flags: Mapping[str, Any],
        environ: Mapping[str, str],
        json_config: Mapping[str, Any],
        default: Any,
    ) -> Any:
        if key in flags:
            return flags[key]
        env_value = environ.get(ENV_PREFIX + key.upper())
        if env_value:
            return env_value
        if json_config.get(key) is not None:
            return json_config[key]
        return default

    def _check_command_rules(self) -> None:
        values = self._values
        if self.command == "evaluate":
            for key in ("model", "data"):
                if values[key] is None:
                    raise UsageError(f"evaluate requires {key}", key=key)
        if self.command == "simulate" and values["mode"] == "bootstrap":
            for key in ("data", "generator_model"):
                if values[key] is None:
                    raise UsageError(f"bootstrap simulation requires {key}", key=key)
        if self.command == "tune" and not values["holdout_fraction"] > 0.0:
            raise UsageError("tune requires holdout_fraction in (0, 1)", key="holdout_fraction")
        if self.command == "benchmark":
            if values["truth"] and not values["data"]:
                raise UsageError("truth is only used together with data", key="truth")
            if values["generator_model"] and not values["data"]:
                raise UsageError(
                    "generator_model resamples data, which is not set", key="generator_model"
                )
            if values["generator_model"] and values["truth"]:
                raise UsageError("truth and generator_model are exclusive", key="truth")
            if values["regenerate"] and values["data"] and not values["generator_model"]:
                raise UsageError(
                    "regenerate needs synthetic data or a generator_model", key="regenerate"
                )
        if "hidden_widths" in values:
            widths = values["hidden_widths"]
            if values["linear_prefix"] > len(widths):
                raise UsageError(
                    f"linear_prefix {values['linear_prefix']} exceeds {len(widths)} hidden layers",
                    key="linear_prefix",
                )
        if self.command == "benchmark":
            for suffix in ("to", "ie"):
                lam = values[f"lambda_{suffix}"]
                if lam is not None:
                    values[f"alpha_{suffix}"] = alpha_from_lambda(lam)

    def __getattr__(self, key: str) -> Any:
        values = self.__dict__.get("_values", {})
        if key in values:
            return values[key]
        raise AttributeError(key)

    def as_dict(self) -> dict[str, Any]:
        """Fully resolved configuration, as embedded in every artifact."""
        resolved = {key: list(v) if isinstance(v, tuple) else v for key, v in self._values.items()}
        return {"command": self.command, **resolved}

    def train_config(self, variant: str, alpha: float, seed: int) -> TrainConfig:
        return TrainConfig(
            variant=LossVariant(variant),
            alpha=alpha,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed,
            hidden_widths=tuple(self.hidden_widths),
            linear_prefix=self.linear_prefix,
            slope=self.slope,
            standardize=self.standardize,
            qini_grid=self.qini_grid,
        )

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec.default(
            n=self.n,
            p=self.p,
            seed=seed,
            sparsity=self.sparsity,
            baseline_rate=self.baseline_rate,
            uplift_magnitude=self.uplift_magnitude,
            uplift_intercept=self.uplift_intercept,
        )

    def split_plan(self) -> SplitPlan:
        return SplitPlan(
            holdout_fraction=self.holdout_fraction,
            train_fraction_of_rest=self.train_fraction,
            repeats=self.repeats,
            seed=self.seed,
        )
