"""
Dựng đường cong constant-maturity (CMF), roll yield, trọng số roll ω và vector
trạng thái 11 chiều X_t = [log VIX, log V¹..log V⁵, Roll¹..Roll⁵].

Quy ước: ω dùng chung cho mọi kỳ hạn, tính theo ngày lịch giữa hai ngày đáo
hạn liền kề; ngày đáo hạn có ω = 0 và V^i = F^{i+1}.
"""

from dataclasses import dataclass
from datetime import date
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.stats import gaussian_kde

from data_service.ingest import FuturesPanel
from utils.artifacts import write_csv
from utils.errors import DataError
from utils.logger import show_log

TRADING_DAYS = 252
DT = 1.0 / TRADING_DAYS
N_CMF = 5
STATE_DIM = 2 * N_CMF + 1
MODE_GRID_POINTS = 512
MIN_MODE_SAMPLES = 100

DateLike = Union[str, date, np.datetime64]
StateVector = np.ndarray


class BadIntervalError(DataError):
    """Ngày giao dịch nằm ngoài chu kỳ roll [t_prev, t_front)."""

    code = "bad_interval"


class InsufficientHistoryError(DataError):
    """Không đủ ngày liên tiếp để tính roll yield."""

    code = "insufficient_history"


class NonPositiveCmfError(DataError):
    """CMF không dương, không lấy log được."""

    code = "non_positive_cmf"


class TooFewSamplesError(DataError):
    """Không đủ trạng thái để ước lượng mode."""

    code = "too_few_samples"


@dataclass(frozen=True)
class CurveSeries:
    dates: np.ndarray  # datetime64[D], (n,)
    omega: np.ndarray  # (n,)
    cmf: np.ndarray  # (n, 6) V⁰..V⁵
    roll: Optional[np.ndarray] = None  # (n, 5), NaN on the first date
    omega_dot: Optional[np.ndarray] = None  # (n,), rate used for the roll stored at t+1


@dataclass(frozen=True)
class StateSeries:
    dates: np.ndarray
    x: np.ndarray  # (m, 11)

    def __len__(self) -> int:
        return len(self.dates)


def _day(value: DateLike) -> np.datetime64:
    return np.datetime64(value, "D")


def roll_weight(t: DateLike, t_prev: DateLike, t_front: DateLike) -> float:
    """
    Trọng số roll ω = (T_front − t)/(T_front − T_prev) theo ngày lịch.

    Raises:
        BadIntervalError: nếu t nằm ngoài [t_prev, t_front)
    """
    t, t_prev, t_front = _day(t), _day(t_prev), _day(t_front)
    if not (t_prev <= t < t_front):
        raise BadIntervalError(f"ngày {t} nằm ngoài chu kỳ [{t_prev}, {t_front})")
    return float((t_front - t) / (t_front - t_prev))


def cmf_from_futures(omega: np.ndarray, futures: np.ndarray) -> np.ndarray:
    """V^i = ω F^i + (1 − ω) F^{i+1} cho i = 1..5; broadcast theo ngày."""
    omega = np.asarray(omega, dtype=float)[..., None]
    return omega * futures[..., :-1] + (1.0 - omega) * futures[..., 1:]


def build_cmfs(panel: FuturesPanel) -> CurveSeries:
    """
    Tính ω_t và V⁰..V⁵ cho mọi ngày trong panel (chưa có roll).
    """
    omega = np.empty(len(panel))
    for idx, day in enumerate(panel.dates):
        front = panel.expiries[idx, 0]
        if day == front:
            omega[idx] = 0.0
        else:
            omega[idx] = roll_weight(day, panel.prev_expiry[idx], front)
    cmf = np.column_stack([panel.vix, cmf_from_futures(omega, panel.futures)])
    return CurveSeries(dates=panel.dates.copy(), omega=omega, cmf=cmf)


def roll_yield(omega_dot: np.ndarray, futures_next: np.ndarray, cmf_t: np.ndarray) -> np.ndarray:
    """Roll_{t+1}^i = ω̇_t (F_{t+1}^{i+1} − F_{t+1}^i) / V_t^i."""
    omega_dot = np.asarray(omega_dot, dtype=float)[..., None]
    return omega_dot * (futures_next[..., 1:] - futures_next[..., :-1]) / cmf_t


def roll_yields(panel: FuturesPanel, curves: CurveSeries, dt: float = DT) -> CurveSeries:
    """
    Điền roll yield; giá trị Roll_{t+1} được lưu tại ngày t+1.

    Ngày reset chu kỳ (prev_expiry đổi) không tính bước nhảy ω từ 0 lên ~1 mà
    dùng tốc độ trong chu kỳ mới: ω̇ = −1/(T_front − T_prev)/Δt.
    """
    n = len(panel)
    if n < 2:
        raise InsufficientHistoryError(f"cần ít nhất 2 ngày để tính roll yield, có {n}")
    omega_dot = np.full(n, np.nan)
    for idx in range(n - 1):
        if panel.prev_expiry[idx + 1] != panel.prev_expiry[idx]:
            cycle_days = (panel.expiries[idx + 1, 0] - panel.prev_expiry[idx + 1]) / np.timedelta64(1, "D")
            omega_dot[idx] = -1.0 / cycle_days / dt
        else:
            omega_dot[idx] = (curves.omega[idx + 1] - curves.omega[idx]) / dt
    roll = np.full((n, N_CMF), np.nan)
    roll[1:] = roll_yield(omega_dot[:-1], panel.futures[1:], curves.cmf[:-1, 1:])
    return CurveSeries(dates=curves.dates, omega=curves.omega, cmf=curves.cmf, roll=roll, omega_dot=omega_dot)


def build_curves(panel: FuturesPanel, dt: float = DT) -> CurveSeries:
    curves = roll_yields(panel, build_cmfs(panel), dt=dt)
    show_log(message=f"build_curves: {len(curves.dates)} dates, mean omega {curves.omega.mean():.4f}", level="info")
    return curves


def state_vectors(curves: CurveSeries) -> StateSeries:
    """
    X_t = [log V⁰, log V¹..log V⁵, Roll¹..Roll⁵]; bỏ các ngày chưa có roll.
    """
    if curves.roll is None:
        raise InsufficientHistoryError("CurveSeries chưa có roll yield")
    if np.any(curves.cmf <= 0):
        bad = curves.dates[np.any(curves.cmf <= 0, axis=1)][0]
        raise NonPositiveCmfError(f"CMF không dương tại ngày {bad}")
    keep = np.all(np.isfinite(curves.roll), axis=1)
    x = np.column_stack([np.log(curves.cmf[keep]), curves.roll[keep]])
    return StateSeries(dates=curves.dates[keep], x=x)


def estimate_mode(states: np.ndarray, min_samples: int = MIN_MODE_SAMPLES, grid_points: int = MODE_GRID_POINTS) -> StateVector:
    """
    Trạng thái mode X* ước lượng theo từng tọa độ bằng Gaussian KDE
    (bandwidth Silverman), lấy cực đại trên lưới đều giữa min và max.

    Args:
        states: Ma trận (T, dim) các trạng thái
        min_samples: Số trạng thái tối thiểu
        grid_points: Số điểm lưới

    Returns:
        Vector mode độ dài dim
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or len(states) < min_samples:
        raise TooFewSamplesError(f"cần ít nhất {min_samples} trạng thái để ước lượng mode, có {len(states)}")
    mode = np.empty(states.shape[1])
    for j in range(states.shape[1]):
        column = states[:, j]
        lo, hi = column.min(), column.max()
        if hi - lo <= 1e-12 * max(1.0, abs(lo)):
            mode[j] = lo
            continue
        grid = np.linspace(lo, hi, grid_points)
        density = gaussian_kde(column, bw_method="silverman")(grid)
        mode[j] = grid[int(np.argmax(density))]
    return mode


# --- rolling-strategy returns on data --------------------------------------


def contract_returns(omega_t: np.ndarray, futures_t: np.ndarray, futures_next: np.ndarray, r: float = 0.0, dt: float = DT) -> np.ndarray:
    """
    ΔI^i/I^i theo dạng hợp đồng: [ω ΔF^i + (1−ω) ΔF^{i+1}] / V_t^i + rΔt.

    futures_next phải là giá ngày t+1 của cùng các hợp đồng đang giữ tại t.
    """
    delta = futures_next - futures_t
    numerator = cmf_from_futures(omega_t, delta)
    return numerator / cmf_from_futures(omega_t, futures_t) + r * dt


def cmf_returns(cmf_t: np.ndarray, cmf_next: np.ndarray, roll_next: np.ndarray, r: float = 0.0, dt: float = DT) -> np.ndarray:
    """ΔI^i/I^i = (r + Roll_{t+1}^i)Δt + ΔV^i/V^i."""
    return (r + roll_next) * dt + (cmf_next - cmf_t) / cmf_t


def index_returns_from_cmfs(curves: CurveSeries, r: float = 0.0, dt: float = DT) -> np.ndarray:
    """
    Lợi suất I¹..I⁵ theo dạng CMF + roll yield; trùng với index_returns trên
    các ngày không đổi chu kỳ đáo hạn.

    Returns:
        Mảng (n−1, 5)
    """
    if curves.roll is None:
        raise InsufficientHistoryError("CurveSeries chưa có roll yield")
    return cmf_returns(curves.cmf[:-1, 1:], curves.cmf[1:, 1:], curves.roll[1:], r=r, dt=dt)


def index_returns(panel: FuturesPanel, curves: CurveSeries, r: float = 0.0, dt: float = DT) -> np.ndarray:
    """
    Lợi suất một ngày của 5 chiến lược rolling I¹..I⁵ từ dữ liệu thật.

    Hợp đồng được khớp theo ngày đáo hạn giữa t và t+1 nên qua ngày đáo hạn
    vẫn tính đúng P&L của các hợp đồng đang giữ.

    Returns:
        Mảng (n−1, 5); dòng k là lợi suất từ dates[k] tới dates[k+1]
    """
    n = len(panel)
    if n < 2:
        raise InsufficientHistoryError(f"cần ít nhất 2 ngày, có {n}")
    out = np.empty((n - 1, N_CMF))
    for idx in range(n - 1):
        f_t = panel.futures[idx]
        f_next = np.full_like(f_t, np.nan)
        for rank, expiry in enumerate(panel.expiries[idx]):
            match = np.nonzero(panel.expiries[idx + 1] == expiry)[0]
            if len(match):
                f_next[rank] = panel.futures[idx + 1, match[0]]
        weights = np.zeros(len(f_t))
        weights[:-1] += curves.omega[idx]
        weights[1:] += 1.0 - curves.omega[idx]
        # an expired contract can only be missing if nothing is held in it
        f_next = np.where(np.isnan(f_next) & (weights == 0), f_t, f_next)
        if np.isnan(f_next[:N_CMF + 1]).any():
            raise InsufficientHistoryError(f"không khớp được hợp đồng giữa {panel.dates[idx]} và {panel.dates[idx + 1]}")
        out[idx] = contract_returns(curves.omega[idx], f_t, f_next, r=r, dt=dt)
    return out


def curves_frame(curves: CurveSeries) -> pd.DataFrame:
    frame = pd.DataFrame({"date": curves.dates.astype(str), "omega": curves.omega})
    for i in range(N_CMF + 1):
        frame[f"v{i}"] = curves.cmf[:, i]
    roll = curves.roll if curves.roll is not None else np.full((len(curves.dates), N_CMF), np.nan)
    for i in range(N_CMF):
        frame[f"roll{i + 1}"] = roll[:, i]
    return frame


def write_curves(curves: CurveSeries, path: str, config_hash: Optional[str] = None) -> str:
    """Ghi curves.csv: date, omega, v0..v5, roll1..roll5."""
    return write_csv(curves_frame(curves), path, config_hash=config_hash)
