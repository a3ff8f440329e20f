"""
Hàm utility (piece-wise linear, exponential), hàm ngược và lợi nhuận giao dịch
R_{t+1}(a) trên không gian hành động rời rạc (a¹, a⁵).
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from model_service.dynamics import EconomicParams
from utils.errors import ModelError

PIECEWISE_LINEAR = "piecewise_linear"
EXPONENTIAL = "exponential"
DEFAULT_GAMMA = {PIECEWISE_LINEAR: 1.3, EXPONENTIAL: 3.0}

# (a¹, a⁵): weights on the one-month and five-month rolling strategies
ACTIONS: Tuple[Tuple[int, int], ...] = ((0, 0), (-1, 1), (-1, 2), (1, -1), (1, -2))
ACTION_MATRIX = np.array(ACTIONS, dtype=float)
NO_TRADE = 0


class UtilityDomainError(ModelError):
    """Giá trị nằm ngoài miền của hàm utility ngược."""

    code = "utility_domain"


@dataclass(frozen=True)
class UtilitySpec:
    kind: str = PIECEWISE_LINEAR
    gamma: float = DEFAULT_GAMMA[PIECEWISE_LINEAR]

    def __post_init__(self) -> None:
        if self.kind not in DEFAULT_GAMMA:
            raise ValueError(f"Loại utility không hỗ trợ: {self.kind}")
        if not self.gamma > 0:
            raise ValueError("gamma phải > 0.")

    @classmethod
    def default(cls, kind: str) -> "UtilitySpec":
        return cls(kind=kind, gamma=DEFAULT_GAMMA[kind])


@dataclass(frozen=True)
class Action:
    a1: int
    a5: int

    def __post_init__(self) -> None:
        if (self.a1, self.a5) not in ACTIONS:
            raise ValueError(f"Hành động không hợp lệ: {(self.a1, self.a5)}")

    @property
    def index(self) -> int:
        return ACTIONS.index((self.a1, self.a5))

    @classmethod
    def from_index(cls, idx: int) -> "Action":
        return cls(*ACTIONS[idx])

    def __str__(self) -> str:
        return f"({self.a1},{self.a5})"


def trade_return(action: Action, returns: np.ndarray, econ: EconomicParams) -> np.ndarray:
    """R = a¹(ΔI¹/I¹ − rΔt) + a⁵(ΔI⁵/I⁵ − rΔt); returns có trục cuối là 5 chiến lược."""
    returns = np.asarray(returns, dtype=float)
    excess = returns - econ.r * econ.dt
    return action.a1 * excess[..., 0] + action.a5 * excess[..., -1]


def trade_returns_all(returns: np.ndarray, econ: EconomicParams) -> np.ndarray:
    """R(a) cho cả 5 hành động; thêm trục cuối cỡ 5 theo thứ tự ACTIONS."""
    returns = np.asarray(returns, dtype=float)
    excess = returns[..., [0, -1]] - econ.r * econ.dt
    return excess @ ACTION_MATRIX.T


def evaluate(u: UtilitySpec, r_val: np.ndarray) -> np.ndarray:
    r_val = np.asarray(r_val, dtype=float)
    if u.kind == PIECEWISE_LINEAR:
        return np.maximum(r_val, 0.0) + u.gamma * np.minimum(r_val, 0.0)
    return -np.exp(-u.gamma * r_val) / u.gamma


def inverse(u: UtilitySpec, y: np.ndarray) -> np.ndarray:
    """
    U⁻¹: piece-wise y nếu y ≥ 0, ngược lại y/γ; exponential −log(−γy)/γ với y < 0.
    """
    y = np.asarray(y, dtype=float)
    if u.kind == PIECEWISE_LINEAR:
        return np.where(y >= 0, y, y / u.gamma)
    if np.any(y >= 0):
        raise UtilityDomainError("utility exponential chỉ nhận giá trị âm, không đảo được y ≥ 0")
    return -np.log(-u.gamma * y) / u.gamma
