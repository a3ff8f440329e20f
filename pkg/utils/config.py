"""
Cấu hình một lần chạy pipeline.

Thứ tự ưu tiên (thấp → cao): giá trị mặc định < biến môi trường VIXSIG_<KEY>
(đọc từ .env qua python-dotenv) < file config dạng `key = value` < cờ CLI.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

import dotenv

from model_service.dynamics import DT, EconomicParams
from model_service.network import CERTAINTY_EQUIVALENT, QUADRATIC, TrainConfig
from model_service.utility import DEFAULT_GAMMA, EXPONENTIAL, PIECEWISE_LINEAR, UtilitySpec
from trading_service.backtest import CONTIGUOUS, DEFAULT_FOLDS, FOLD_CONFIGURATIONS
from trading_service.signal import CostModel
from utils.artifacts import config_hash
from utils.errors import EXIT_CONFIG, EXIT_IO, PipelineError

dotenv.load_dotenv()

ENV_PREFIX = "VIXSIG_"


class ConfigError(PipelineError):
    code = "config_error"
    exit_code = EXIT_CONFIG


class MissingInputError(PipelineError):
    """File dữ liệu được cấu hình nhưng không tồn tại."""

    code = "missing_input"
    exit_code = EXIT_IO


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"không phải boolean: {text!r}")


def _parse_optional_str(text: str) -> Optional[str]:
    text = text.strip()
    return text or None


# key -> parser; None means "not set"
KEYS: Dict[str, Callable[[str], Any]] = {
    "futures_file": _parse_optional_str,
    "vix_file": _parse_optional_str,
    "calendar_file": _parse_optional_str,
    "reference_file": _parse_optional_str,
    "r": float,
    "dt": float,
    "utility_kind": str,
    "gamma": float,
    "loss_kind": str,
    "n_states": int,
    "m_inner": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "adam_eps": float,
    "hidden_layers": int,
    "hidden_units": int,
    "alpha": float,
    "output_activation": str,
    "standardize_inputs": _parse_bool,
    "chunk_size": int,
    "epsilon_bps": float,
    "half_tick": float,
    "multiplier": float,
    "folds": int,
    "fold_config": str,
    "min_mode_samples": int,
    "seed": int,
    "jobs": int,
    "out_dir": str,
    "integer_contracts": _parse_bool,
    "retrain_every": int,
}

# keys that never change numerical results
UNHASHED = ("jobs", "out_dir")


@dataclass(frozen=True)
class DataPaths:
    futures_file: Optional[str] = None
    vix_file: Optional[str] = None
    calendar_file: Optional[str] = None
    reference_file: Optional[str] = None

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if not value:
                raise ConfigError(f"thiếu cấu hình {name}")
            if not Path(value).exists():
                raise MissingInputError(f"{name}: không tìm thấy {value}")

    def check_configured(self) -> None:
        """Mọi file đã được cấu hình phải tồn tại ngay khi bắt đầu chạy."""
        self.require(*[name for name, value in vars(self).items() if value])


@dataclass(frozen=True)
class FoldOptions:
    folds: int = DEFAULT_FOLDS
    fold_config: str = CONTIGUOUS
    min_mode_samples: int = 100
    retrain_every: int = 5

    def __post_init__(self) -> None:
        if self.fold_config not in FOLD_CONFIGURATIONS:
            raise ValueError(f"fold_config phải thuộc {FOLD_CONFIGURATIONS}")
        if self.folds < 2 or self.min_mode_samples < 1 or self.retrain_every < 1:
            raise ValueError("folds ≥ 2, min_mode_samples ≥ 1, retrain_every ≥ 1.")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    data: DataPaths = field(default_factory=DataPaths)
    econ: EconomicParams = field(default_factory=EconomicParams)
    utility: UtilitySpec = field(default_factory=UtilitySpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    cost: CostModel = field(default_factory=CostModel)
    fold: FoldOptions = field(default_factory=FoldOptions)
    jobs: int = 1
    out_dir: str = "outputs"
    integer_contracts: bool = False
    flat: Dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def hash(self) -> str:
        return config_hash({k: v for k, v in self.flat.items() if k not in UNHASHED})

    def out(self, name: str) -> str:
        return str(Path(self.out_dir) / name)


def _defaults() -> Dict[str, Any]:
    train = TrainConfig()
    cost = CostModel()
    return {
        "futures_file": None,
        "vix_file": None,
        "calendar_file": None,
        "reference_file": None,
        "r": 0.0,
        "dt": DT,
        "utility_kind": PIECEWISE_LINEAR,
        "gamma": None,
        "loss_kind": None,
        "n_states": train.n_states,
        "m_inner": train.m_inner,
        "epochs": train.epochs,
        "batch_size": train.batch_size,
        "learning_rate": train.learning_rate,
        "beta1": train.beta1,
        "beta2": train.beta2,
        "adam_eps": train.adam_eps,
        "hidden_layers": train.hidden_layers,
        "hidden_units": train.hidden_units,
        "alpha": train.alpha,
        "output_activation": train.output_activation,
        "standardize_inputs": train.standardize_inputs,
        "chunk_size": train.chunk_size,
        "epsilon_bps": cost.epsilon_bps,
        "half_tick": cost.half_tick,
        "multiplier": cost.multiplier,
        "folds": DEFAULT_FOLDS,
        "fold_config": CONTIGUOUS,
        "min_mode_samples": 100,
        "seed": None,
        "jobs": 1,
        "out_dir": "outputs",
        "integer_contracts": False,
        "retrain_every": 5,
    }


def _parse(source: str, key: str, raw: Any) -> Any:
    if key not in KEYS:
        raise ConfigError(f"{source}: khóa không hỗ trợ {key!r}")
    if raw is None or not isinstance(raw, str):
        return raw
    try:
        return KEYS[key](raw)
    except ValueError as ex:
        raise ConfigError(f"{source}: giá trị không hợp lệ cho {key}: {raw!r} ({ex})") from ex


def load_config(
    config_file: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Gộp các nguồn cấu hình thành RunConfig.

    Args:
        config_file: File `key = value`, None nếu không dùng
        overrides: Giá trị từ cờ CLI (None = không đặt)
        environ: Môi trường, mặc định os.environ

    Raises:
        ConfigError: khóa lạ, giá trị không đọc được, thiếu seed hoặc vi phạm ràng buộc
    """
    flat = _defaults()
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key in KEYS:
                flat[key] = _parse(f"env {name}", key, raw)
    if config_file:
        if not Path(config_file).exists():
            raise MissingInputError(f"không tìm thấy file config {config_file}")
        for key, raw in dotenv.dotenv_values(config_file).items():
            flat[key] = _parse(config_file, key, raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = _parse("flag", key, value)

    if flat["seed"] is None:
        raise ConfigError("seed là bắt buộc (cờ --seed, khóa seed hoặc VIXSIG_SEED)")
    kind = flat["utility_kind"]
    if kind not in DEFAULT_GAMMA:
        raise ConfigError(f"utility_kind không hỗ trợ: {kind}")
    if flat["gamma"] is None:
        flat["gamma"] = DEFAULT_GAMMA[kind]
    if flat["loss_kind"] is None:
        flat["loss_kind"] = CERTAINTY_EQUIVALENT if kind == EXPONENTIAL else QUADRATIC

    try:
        train = TrainConfig(
            n_states=flat["n_states"],
            m_inner=flat["m_inner"],
            epochs=flat["epochs"],
            batch_size=flat["batch_size"],
            learning_rate=flat["learning_rate"],
            beta1=flat["beta1"],
            beta2=flat["beta2"],
            adam_eps=flat["adam_eps"],
            seed=flat["seed"],
            loss_kind=flat["loss_kind"],
            hidden_layers=flat["hidden_layers"],
            hidden_units=flat["hidden_units"],
            alpha=flat["alpha"],
            output_activation=flat["output_activation"],
            standardize_inputs=flat["standardize_inputs"],
            chunk_size=flat["chunk_size"],
            jobs=flat["jobs"],
        )
        utility = UtilitySpec(kind=kind, gamma=flat["gamma"])
        train.check_utility(utility)
        config = RunConfig(
            seed=flat["seed"],
            data=DataPaths(
                futures_file=flat["futures_file"],
                vix_file=flat["vix_file"],
                calendar_file=flat["calendar_file"],
                reference_file=flat["reference_file"],
            ),
            econ=EconomicParams(r=flat["r"], dt=flat["dt"]),
            utility=utility,
            train=train,
            cost=CostModel(epsilon_bps=flat["epsilon_bps"], half_tick=flat["half_tick"], multiplier=flat["multiplier"]),
            fold=FoldOptions(
                folds=flat["folds"],
                fold_config=flat["fold_config"],
                min_mode_samples=flat["min_mode_samples"],
                retrain_every=flat["retrain_every"],
            ),
            jobs=flat["jobs"],
            out_dir=flat["out_dir"],
            integer_contracts=flat["integer_contracts"],
            flat=dict(flat),
        )
    except ValueError as ex:
        raise ConfigError(str(ex)) from ex
    return config
