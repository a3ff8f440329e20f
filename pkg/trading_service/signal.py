"""
Biến Q-network thành quyết định giao dịch, tính giá trị danh mục (có/không phí
giao dịch) và quy đổi hành động sang số hợp đồng F¹, F², F⁵, F⁶.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd

from curve_service.curve import CurveSeries
from data_service.ingest import FuturesPanel
from model_service.dynamics import EconomicParams
from model_service.network import QNetwork, forward
from model_service.utility import ACTIONS, NO_TRADE, Action, trade_return
from utils.errors import TradingError
from utils.logger import show_log

P0 = 100.0
TIE_TOL = 1e-9
LEGS = ("n1", "n2", "n5", "n6")
# ranks of F¹, F², F⁵, F⁶ in the panel's futures columns
LEG_RANKS = (0, 1, 4, 5)


class BankruptError(TradingError):
    """Giá trị danh mục không còn dương."""

    code = "bankrupt"


@dataclass(frozen=True)
class CostModel:
    epsilon_bps: float = 0.0
    half_tick: float = 0.025
    multiplier: float = 1000.0
    notional_per_unit: float = 1.0

    def __post_init__(self) -> None:
        if self.epsilon_bps < 0 or self.half_tick < 0:
            raise ValueError("epsilon và half_tick phải ≥ 0.")
        if not self.multiplier > 0 or not self.notional_per_unit > 0:
            raise ValueError("multiplier và notional_per_unit phải > 0.")

    @property
    def unit_value(self) -> float:
        """Tiền tệ ứng với 1 đơn vị P."""
        return self.multiplier * self.notional_per_unit


@dataclass(frozen=True)
class ContractPosition:
    n1: float = 0.0
    n2: float = 0.0
    n5: float = 0.0
    n6: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.n1, self.n2, self.n5, self.n6], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ContractPosition":
        return cls(*(float(v) for v in values))

    @property
    def net(self) -> float:
        return float(self.as_array().sum())

    def __sub__(self, other: "ContractPosition") -> "ContractPosition":
        return ContractPosition.from_array(self.as_array() - other.as_array())


FLAT = ContractPosition()


@dataclass(frozen=True)
class CurveRow:
    """Dữ liệu một ngày cần cho việc quy đổi hợp đồng và tính phí."""

    omega: float
    v1: float
    v5: float
    prices: np.ndarray  # F¹, F², F⁵, F⁶
    expiries: Optional[np.ndarray] = None  # expiry of F¹..F⁶
    curve_prices: Optional[np.ndarray] = None  # F¹..F⁶

    def leg_expiries(self) -> Optional[np.ndarray]:
        if self.expiries is None:
            return None
        return np.asarray(self.expiries)[list(LEG_RANKS)]


@dataclass
class PortfolioPath:
    dates: np.ndarray
    p: np.ndarray
    actions: np.ndarray  # action index decided at each date, -1 where none
    positions: np.ndarray  # (n, 4) contracts held from each date
    costs_paid: np.ndarray  # currency charged when entering each date's position
    unit_value: float = 1000.0
    bankrupt: bool = False

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"date": self.dates.astype(str), "p": self.p})
        frame["action"] = [str(Action.from_index(a)) if a >= 0 else "" for a in self.actions]
        for col, leg in enumerate(LEGS):
            frame[leg] = self.positions[:, col]
        frame["cost"] = self.costs_paid
        return frame


def curve_rows(panel: FuturesPanel, curves: CurveSeries, index: Sequence[int]) -> List[CurveRow]:
    return [
        CurveRow(
            omega=float(curves.omega[i]),
            v1=float(curves.cmf[i, 1]),
            v5=float(curves.cmf[i, 5]),
            prices=panel.futures[i, list(LEG_RANKS)],
            expiries=panel.expiries[i],
            curve_prices=panel.futures[i],
        )
        for i in index
    ]


def choose_action(q_values: np.ndarray) -> Action:
    """
    argmax Q; các giá trị cách cực đại trong 1e-9 coi là hòa, ưu tiên (0,0)
    rồi tới hành động có chỉ số nhỏ nhất.
    """
    q_values = np.asarray(q_values, dtype=float)
    tied = np.nonzero(q_values >= q_values.max() - TIE_TOL)[0]
    if NO_TRADE in tied:
        return Action.from_index(NO_TRADE)
    return Action.from_index(int(tied[0]))


def policy(net: QNetwork, x: np.ndarray) -> Action:
    return choose_action(forward(net, x))


def policy_batch(net: QNetwork, states: np.ndarray) -> List[Action]:
    return [choose_action(q) for q in forward(net, np.atleast_2d(states))]


def portfolio_step(p: float, action: Action, returns: np.ndarray, econ: EconomicParams) -> float:
    """P_{t+1} = P_t (1 + R_{t+1}(a) + rΔt)."""
    value = p * (1.0 + float(trade_return(action, returns, econ)) + econ.r * econ.dt)
    if value <= 0:
        raise BankruptError(f"danh mục phá sản: P = {value:.6f}")
    return value


def round_half_away(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def contracts_from_action(
    p: float,
    omega: float,
    action: Action,
    v1: float,
    v5: float,
    integer: bool = False,
) -> ContractPosition:
    """
    n¹ = ωa¹P/V¹, n² = (1−ω)a¹P/V¹, n⁵ = ωa⁵P/V⁵, n⁶ = (1−ω)a⁵P/V⁵;
    chế độ integer làm tròn từng thành phần, nửa xa số 0.
    """
    counts = np.array(
        [
            omega * action.a1 * p / v1,
            (1.0 - omega) * action.a1 * p / v1,
            omega * action.a5 * p / v5,
            (1.0 - omega) * action.a5 * p / v5,
        ]
    )
    if integer:
        counts = round_half_away(counts)
    return ContractPosition.from_array(counts + 0.0)


def transaction_cost(delta: ContractPosition, prices: np.ndarray, cm: CostModel) -> float:
    """Phí một chiều: Σ |Δn| (half_tick + ε·F) × multiplier, ε tính theo bps."""
    per_contract = cm.half_tick + cm.epsilon_bps / 1e4 * np.asarray(prices, dtype=float)
    return float(np.sum(np.abs(delta.as_array()) * per_contract) * cm.multiplier)


def rebalance_cost(
    prev_position: ContractPosition,
    prev_row: Optional[CurveRow],
    position: ContractPosition,
    row: CurveRow,
    cm: CostModel,
) -> float:
    """
    Phí chuyển từ vị thế hôm trước sang vị thế mới, so khớp theo từng hợp đồng
    (ngày đáo hạn) chứ không theo hạng.

    Sau một ngày đáo hạn các hạng dịch đi một bậc: F² cũ thành F¹ mới, F⁶ cũ
    thành F⁵ mới. Số hợp đồng giữ nguyên trên cùng một hợp đồng không tốn phí.
    Hợp đồng cũ không còn niêm yết hôm nay đã tất toán khi đáo hạn, không tính
    phí; hợp đồng còn niêm yết nhưng rời khỏi bốn chân thì đóng theo giá hôm nay.
    Thiếu thông tin đáo hạn thì quay về so khớp theo hạng.
    """
    prev_legs = prev_row.leg_expiries() if prev_row is not None else None
    legs = row.leg_expiries()
    if prev_legs is None or legs is None or row.curve_prices is None:
        return transaction_cost(position - prev_position, row.prices, cm)

    book = {}
    for expiry, count in zip(prev_legs, prev_position.as_array()):
        book[expiry] = book.get(expiry, 0.0) - count
    for expiry, count in zip(legs, position.as_array()):
        book[expiry] = book.get(expiry, 0.0) + count
    listed = {expiry: price for expiry, price in zip(np.asarray(row.expiries), np.asarray(row.curve_prices, dtype=float))}

    total = 0.0
    for expiry, delta in book.items():
        price = listed.get(expiry)
        if price is None:
            continue
        total += abs(delta) * (cm.half_tick + cm.epsilon_bps / 1e4 * price)
    return float(total * cm.multiplier)


def portfolio_step_with_costs(
    p: float,
    prev_position: ContractPosition,
    action: Action,
    row: CurveRow,
    returns: np.ndarray,
    econ: EconomicParams,
    cm: CostModel,
    integer: bool = False,
    prev_row: Optional[CurveRow] = None,
):
    """
    Cân lại vị thế về mục tiêu của hành động, trả phí trên phần thay đổi rồi
    áp lợi suất gộp: P_{t+1} = P_t(1 + R + rΔt) − phí / (giá trị 1 đơn vị P).

    prev_row là CurveRow của ngày vị thế cũ được lập; có nó thì phí tính theo
    từng hợp đồng nên ngày cuộn hạng không bị tính phí ảo.

    Returns:
        (P_{t+1}, vị thế mới, phí bằng tiền tệ)
    """
    position = contracts_from_action(p, row.omega, action, row.v1, row.v5, integer=integer)
    cost = rebalance_cost(prev_position, prev_row, position, row, cm)
    value = p * (1.0 + float(trade_return(action, returns, econ)) + econ.r * econ.dt) - cost / cm.unit_value
    if value <= 0:
        raise BankruptError(f"danh mục phá sản sau phí: P = {value:.6f}")
    return value, position, cost


def run_portfolio(
    dates: np.ndarray,
    decide: Callable[[int, float], Action],
    returns: np.ndarray,
    rows: Sequence[CurveRow],
    econ: EconomicParams,
    cm: Optional[CostModel] = None,
    integer: bool = False,
) -> PortfolioPath:
    """
    Chạy danh mục theo ngày: tại dates[k] chọn hành động, nhận lợi suất
    returns[k] tới dates[k+1]. cm = None nghĩa là không tính phí.

    Args:
        dates: m ngày
        decide: hàm (k, P_k) -> Action
        returns: (m−1, 5) lợi suất các chiến lược rolling
        rows: m CurveRow để quy đổi hợp đồng
    """
    m = len(dates)
    costs = cm or CostModel(half_tick=0.0)
    p = np.full(m, np.nan)
    p[0] = P0
    actions = np.full(m, -1, dtype=int)
    positions = np.zeros((m, len(LEGS)))
    paid = np.zeros(m)
    held = FLAT
    bankrupt = False
    last = m - 1
    for k in range(m - 1):
        action = decide(k, p[k])
        actions[k] = action.index
        try:
            if cm is None:
                held = contracts_from_action(p[k], rows[k].omega, action, rows[k].v1, rows[k].v5, integer=integer)
                p[k + 1] = portfolio_step(p[k], action, returns[k], econ)
            else:
                p[k + 1], held_next, paid[k] = portfolio_step_with_costs(
                    p[k],
                    held,
                    action,
                    rows[k],
                    returns[k],
                    econ,
                    costs,
                    integer=integer,
                    prev_row=rows[k - 1] if k > 0 else None,
                )
                held = held_next
        except BankruptError as ex:
            show_log(message=f"run_portfolio: {ex} at {dates[k + 1]}", level="warning")
            p[k + 1] = 0.0
            bankrupt = True
            last = k + 1
            break
        positions[k] = held.as_array()
    keep = slice(0, last + 1)
    return PortfolioPath(
        dates=np.asarray(dates)[keep],
        p=p[keep],
        actions=actions[keep],
        positions=positions[keep],
        costs_paid=paid[keep],
        unit_value=costs.unit_value,
        bankrupt=bankrupt,
    )


def replay_contracts(
    dates: np.ndarray,
    states: np.ndarray,
    returns: np.ndarray,
    rows: Sequence[CurveRow],
    policy_provider: Callable[[int], QNetwork],
    econ: EconomicParams,
    cm: Optional[CostModel] = None,
    integer: bool = True,
) -> pd.DataFrame:
    """
    Phát lại theo ngày kiểu bảng vị thế thực tế: mạng do policy_provider(k)
    cung cấp (ví dụ huấn luyện lại hằng tuần), số hợp đồng làm tròn, phí với
    ε = 0 mặc định.

    Returns:
        DataFrame: date, P, omega, a1, a5, n1, n2, n5, n6, net
    """
    cm = cm or CostModel()
    path = run_portfolio(
        dates,
        lambda k, _p: policy(policy_provider(k), states[k]),
        returns,
        rows,
        econ,
        cm=cm,
        integer=integer,
    )
    n = len(path.dates) - 1
    table = pd.DataFrame(
        {
            "date": path.dates[:n].astype(str),
            "P": path.p[:n],
            "omega": [rows[k].omega for k in range(n)],
            "a1": [ACTIONS[a][0] for a in path.actions[:n]],
            "a5": [ACTIONS[a][1] for a in path.actions[:n]],
        }
    )
    for col, leg in enumerate(LEGS):
        table[leg] = path.positions[:n, col]
    table["net"] = path.positions[:n].sum(axis=1)
    return table


def signal_line(day: str, p: float, omega: float, action: Action, position: ContractPosition) -> str:
    """Một dòng tín hiệu theo bố cục date P ω a¹ a⁵ n¹ n² n⁵ n⁶ Σn."""
    counts = " ".join(f"{v:g}" for v in position.as_array())
    return f"{day} {p:.2f} {omega:.5f} {action.a1} {action.a5} {counts} {position.net:g}"
