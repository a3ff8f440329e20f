"""
K-fold backtest theo khối thời gian: chia ngày thành k khối liên tiếp, huấn
luyện trên phần còn lại (contiguous) hoặc bỏ thêm hai khối kề (non-adjacent),
giao dịch trên khối test và tính các chỉ số hiệu quả.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from curve_service.curve import CurveSeries, StateSeries, build_curves, index_returns, state_vectors
from data_service.ingest import FuturesPanel
from model_service.dynamics import EconomicParams, fit_curve_model
from model_service.network import QNetwork, TrainConfig, build_training_set, network_for, train
from model_service.utility import ACTIONS, Action, UtilitySpec
from trading_service.signal import CostModel, CurveRow, PortfolioPath, curve_rows, policy_batch, run_portfolio
from utils.artifacts import write_csv
from utils.errors import DataError, TradingError
from utils.logger import show_log

CONTIGUOUS = "contiguous"
NON_ADJACENT = "non-adjacent"
FOLD_CONFIGURATIONS = (CONTIGUOUS, NON_ADJACENT)
DEFAULT_FOLDS = 10


class TooFewDatesError(DataError):
    code = "too_few_dates"


class DateCoverageError(DataError):
    """Chuỗi tham chiếu thiếu ngày nằm trong khối test."""

    code = "date_coverage"


class DegenerateSeriesError(TradingError):
    code = "degenerate_series"


@dataclass(frozen=True)
class FoldPlan:
    dates: np.ndarray
    bounds: Tuple[Tuple[int, int], ...]  # [start, end) per fold

    @property
    def k(self) -> int:
        return len(self.bounds)

    def fold_dates(self, fold: int) -> np.ndarray:
        start, end = self.bounds[fold]
        return self.dates[start:end]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "fold": range(self.k),
                "start": [str(self.dates[s]) for s, _ in self.bounds],
                "end": [str(self.dates[e - 1]) for _, e in self.bounds],
                "n_days": [e - s for s, e in self.bounds],
            }
        )


@dataclass(frozen=True)
class Metrics:
    annualized_excess_return: float
    annualized_mean_return: float
    annualized_std: float
    sharpe: float
    max_drawdown: float
    profit_pct: float
    pnl_per_transaction: float
    n_transactions: int
    n_days: int
    total_costs: float = 0.0


@dataclass(frozen=True)
class BacktestData:
    """Panel, đường cong, trạng thái và lợi suất thật, căn theo ngày trạng thái."""

    panel: FuturesPanel
    curves: CurveSeries
    states: StateSeries
    returns: np.ndarray  # (n_panel − 1, 5), row k spans panel dates k → k+1
    offset: int  # panel index of states.dates[0]

    def window(self, start: int, end: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[CurveRow]]:
        """Ngày, trạng thái, lợi suất (m−1 dòng) và CurveRow cho trạng thái [start, end)."""
        lo, hi = start + self.offset, end + self.offset
        return (
            self.states.dates[start:end],
            self.states.x[start:end],
            self.returns[lo:hi - 1],
            curve_rows(self.panel, self.curves, range(lo, hi)),
        )


@dataclass
class FoldResult:
    fold: int
    path: PortfolioPath
    metrics: Metrics
    net: Optional[QNetwork] = None


@dataclass
class KFoldResult:
    plan: FoldPlan
    configuration: str
    folds: List[FoldResult] = field(default_factory=list)

    def metrics_frame(self) -> pd.DataFrame:
        rows = []
        for result in self.folds:
            row = {"fold": result.fold, "configuration": self.configuration}
            row.update(asdict(result.metrics))
            rows.append(row)
        return pd.DataFrame(rows)


def prepare_data(panel: FuturesPanel, econ: EconomicParams, curves: Optional[CurveSeries] = None) -> BacktestData:
    curves = curves if curves is not None else build_curves(panel, dt=econ.dt)
    states = state_vectors(curves)
    offset = int(np.searchsorted(panel.dates, states.dates[0]))
    return BacktestData(
        panel=panel,
        curves=curves,
        states=states,
        returns=index_returns(panel, curves, r=econ.r, dt=econ.dt),
        offset=offset,
    )


def make_folds(dates: np.ndarray, k: int = DEFAULT_FOLDS) -> FoldPlan:
    """
    k khối liên tiếp, cỡ lệch nhau tối đa 1 ngày; các khối đầu nhận ngày dư.

    Raises:
        TooFewDatesError: ít ngày hơn số khối
    """
    n = len(dates)
    if k < 2:
        raise ValueError("k phải ≥ 2.")
    if n < k:
        raise TooFewDatesError(f"{n} ngày không đủ cho {k} khối")
    base, extra = divmod(n, k)
    bounds, start = [], 0
    for fold in range(k):
        end = start + base + (1 if fold < extra else 0)
        bounds.append((start, end))
        start = end
    return FoldPlan(dates=np.asarray(dates), bounds=tuple(bounds))


def excluded_folds(k: int, test_fold: int, configuration: str) -> Tuple[int, ...]:
    if configuration == CONTIGUOUS:
        return (test_fold,)
    if configuration == NON_ADJACENT:
        return tuple(sorted({(test_fold - 1) % k, test_fold, (test_fold + 1) % k}))
    raise ValueError(f"cấu hình fold không hỗ trợ: {configuration}")


def training_transitions(plan: FoldPlan, test_fold: int, configuration: str = CONTIGUOUS) -> Tuple[np.ndarray, List[int]]:
    """
    Chỉ số ngày dùng để fit mô hình và các break: vị trí b trong mảng đã ghép
    mà bước b → b+1 nối hai khối không liền nhau nên không phải transition.
    """
    if not 0 <= test_fold < plan.k:
        raise ValueError(f"fold {test_fold} ngoài khoảng [0, {plan.k})")
    skip = set(excluded_folds(plan.k, test_fold, configuration))
    index: List[int] = []
    breaks: List[int] = []
    prev_fold = None
    for fold, (start, end) in enumerate(plan.bounds):
        if fold in skip:
            continue
        if prev_fold is not None and prev_fold != fold - 1:
            breaks.append(len(index) - 1)
        index.extend(range(start, end))
        prev_fold = fold
    return np.asarray(index, dtype=int), breaks


def compute_metrics(path: PortfolioPath, econ: EconomicParams, strict: bool = False) -> Metrics:
    """
    Chỉ số theo năm trên lợi suất ngày của P (đã gồm rΔt và phí).

    Raises:
        DegenerateSeriesError: strict=True và chuỗi không đủ/độ lệch chuẩn bằng 0
    """
    p = np.asarray(path.p, dtype=float)
    rets = p[1:] / p[:-1] - 1.0
    periods = 1.0 / econ.dt
    n = len(rets)
    if n == 0:
        raise DegenerateSeriesError("đường giá trị chỉ có một ngày")
    excess = float(np.prod(1.0 + rets) ** (periods / n) - (1.0 + econ.r))
    std = float(np.std(rets, ddof=1) * np.sqrt(periods)) if n > 1 else np.nan
    if not std > 0:
        if strict:
            raise DegenerateSeriesError(f"độ lệch chuẩn lợi suất bằng {std}")
        show_log(message=f"compute_metrics: std = {std}, sharpe reported as NaN", level="warning")
        sharpe = np.nan
    else:
        sharpe = excess / std

    held = path.positions[:-1] if len(path.positions) > 1 else path.positions
    changes = np.diff(np.vstack([np.zeros((1, held.shape[1])), held]), axis=0)
    n_tx = int(np.count_nonzero(np.any(changes != 0, axis=1)))
    pnl = (p[-1] - p[0]) * path.unit_value
    return Metrics(
        annualized_excess_return=excess,
        annualized_mean_return=float(np.mean(rets) * periods),
        annualized_std=std,
        sharpe=float(sharpe),
        max_drawdown=float(np.min(p / np.maximum.accumulate(p) - 1.0)),
        profit_pct=float(100.0 * (p[-1] / p[0] - 1.0)),
        pnl_per_transaction=float(pnl / n_tx) if n_tx else np.nan,
        n_transactions=n_tx,
        n_days=n,
        total_costs=float(np.sum(path.costs_paid)),
    )


def read_reference(path: str) -> pd.Series:
    """
    Chuỗi tham chiếu theo ngày: cột date kèm value (mức giá) hoặc return
    (lợi suất ngày, được cộng dồn thành mức giá bắt đầu từ 1).
    """
    frame = pd.read_csv(path, comment="#")
    if "date" not in frame.columns or not ({"value", "return"} & set(frame.columns)):
        raise DataError(f"{path}: cần cột date và value hoặc return")
    frame = frame.assign(date=pd.to_datetime(frame["date"])).sort_values("date")
    if "value" in frame.columns:
        values = frame["value"].to_numpy(dtype=float)
    else:
        values = np.cumprod(1.0 + frame["return"].to_numpy(dtype=float))
    return pd.Series(values, index=frame["date"].values.astype("datetime64[D]"))


def reference_series_metrics(series: pd.Series, dates: np.ndarray, econ: EconomicParams, strict: bool = False) -> Metrics:
    """Chỉ số cho một chỉ số tham chiếu trên đúng các ngày của khối."""
    dates = np.asarray(dates).astype("datetime64[D]")
    missing = np.setdiff1d(dates, series.index.values.astype("datetime64[D]"))
    if len(missing):
        raise DateCoverageError(f"chuỗi tham chiếu thiếu {len(missing)} ngày, ví dụ {missing[0]}")
    values = series.loc[dates].to_numpy(dtype=float)
    path = PortfolioPath(
        dates=dates,
        p=100.0 * values / values[0],
        actions=np.full(len(dates), -1),
        positions=np.zeros((len(dates), 4)),
        costs_paid=np.zeros(len(dates)),
    )
    return compute_metrics(path, econ, strict=strict)


def fixed_action_backtest(
    data: BacktestData,
    action: Action,
    start: int,
    end: int,
    econ: EconomicParams,
    cm: Optional[CostModel] = None,
    integer: bool = False,
) -> PortfolioPath:
    dates, _, rets, rows = data.window(start, end)
    return run_portfolio(dates, lambda _k, _p: action, rets, rows, econ, cm=cm, integer=integer)


def train_policy(
    states: np.ndarray,
    breaks: Sequence[int],
    utility: UtilitySpec,
    cfg: TrainConfig,
    econ: EconomicParams,
    min_mode_samples: int,
) -> QNetwork:
    """fit VAR trên trạng thái huấn luyện → sinh nhãn → huấn luyện Q-network."""
    model = fit_curve_model(states, breaks, min_mode_samples=min_mode_samples)
    training_set = build_training_set(model, econ, utility, cfg)
    net = network_for(model.dim, cfg)
    return train(net, training_set, cfg).net


def run_fold(
    data: BacktestData,
    plan: FoldPlan,
    test_fold: int,
    utility: UtilitySpec,
    cfg: TrainConfig,
    econ: EconomicParams,
    configuration: str = CONTIGUOUS,
    cm: Optional[CostModel] = None,
    integer: bool = False,
    min_mode_samples: int = 100,
) -> FoldResult:
    index, breaks = training_transitions(plan, test_fold, configuration)
    show_log(message=f"run_fold: fold {test_fold} ({configuration}) train {len(index)} days, {len(breaks)} breaks", level="info")
    net = train_policy(data.states.x[index], breaks, utility, cfg, econ, min_mode_samples)
    start, end = plan.bounds[test_fold]
    dates, states, rets, rows = data.window(start, end)
    actions = policy_batch(net, states)
    path = run_portfolio(dates, lambda k, _p: actions[k], rets, rows, econ, cm=cm, integer=integer)
    metrics = compute_metrics(path, econ)
    show_log(
        message=f"run_fold: fold {test_fold} excess {metrics.annualized_excess_return:.4f} sharpe {metrics.sharpe:.4f}",
        level="info",
    )
    return FoldResult(fold=test_fold, path=path, metrics=metrics, net=net)


def run_kfold(
    data: BacktestData,
    utility: UtilitySpec,
    cfg: TrainConfig,
    econ: EconomicParams,
    k: int = DEFAULT_FOLDS,
    configuration: str = CONTIGUOUS,
    cm: Optional[CostModel] = None,
    integer: bool = False,
    min_mode_samples: int = 100,
    jobs: int = 1,
    folds: Optional[Sequence[int]] = None,
) -> KFoldResult:
    """
    Chạy các fold song song (jobs luồng); mỗi fold có seed con riêng từ
    cfg.seed nên kết quả giống nhau với mọi số luồng.
    """
    plan = make_folds(data.states.dates, k)
    selected = list(range(k)) if folds is None else list(folds)
    seeds = np.random.SeedSequence(cfg.seed).spawn(k)
    results: Dict[int, FoldResult] = {}
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        futures = {
            executor.submit(
                run_fold,
                data,
                plan,
                fold,
                utility,
                replace(cfg, seed=int(seeds[fold].generate_state(1)[0])),
                econ,
                configuration,
                cm,
                integer,
                min_mode_samples,
            ): fold
            for fold in selected
        }
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return KFoldResult(plan=plan, configuration=configuration, folds=[results[f] for f in sorted(results)])


def benchmark_frame(
    data: BacktestData,
    plan: FoldPlan,
    econ: EconomicParams,
    cm: Optional[CostModel] = None,
    references: Optional[Dict[str, pd.Series]] = None,
) -> pd.DataFrame:
    """Chỉ số của các chiến lược giữ cố định một hành động và các chuỗi tham chiếu theo fold."""
    rows = []
    for fold, (start, end) in enumerate(plan.bounds):
        for idx in range(1, len(ACTIONS)):
            action = Action.from_index(idx)
            path = fixed_action_backtest(data, action, start, end, econ, cm=cm)
            rows.append({"fold": fold, "strategy": f"fixed{action}", **asdict(compute_metrics(path, econ))})
        for name, series in (references or {}).items():
            metrics = reference_series_metrics(series, plan.fold_dates(fold), econ)
            rows.append({"fold": fold, "strategy": name, **asdict(metrics)})
    return pd.DataFrame(rows)


def retraining_provider(
    data: BacktestData,
    start: int,
    utility: UtilitySpec,
    cfg: TrainConfig,
    econ: EconomicParams,
    retrain_every: int = 5,
    min_mode_samples: int = 100,
) -> Callable[[int], QNetwork]:
    """
    Mạng cho ngày start + k, huấn luyện lại mỗi retrain_every ngày trên toàn
    bộ lịch sử trạng thái tới ngày quyết định.
    """
    if retrain_every < 1:
        raise ValueError("retrain_every phải ≥ 1.")
    cache: Dict[int, QNetwork] = {}

    def provide(k: int) -> QNetwork:
        slot = k // retrain_every
        if slot not in cache:
            history = data.states.x[: start + slot * retrain_every + 1]
            show_log(message=f"retraining_provider: retrain on {len(history)} states", level="info")
            cache[slot] = train_policy(history, (), utility, replace(cfg, seed=cfg.seed + slot), econ, min_mode_samples)
        return cache[slot]

    return provide


def write_metrics(frame: pd.DataFrame, path: str, config_hash: Optional[str] = None) -> str:
    return write_csv(frame, path, config_hash=config_hash)
