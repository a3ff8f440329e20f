"""
Sinh bộ dữ liệu tổng hợp (futures.csv, vix.csv, calendar.csv) cho test và demo.

log-VIX và mức dài hạn của đường cong là hai nhân tố của một VarModel đường
chéo (FACTOR_MODEL), mô phỏng từng ngày bằng `step` của model_service.dynamics.
Giá futures kỳ hạn τ: exp(z + (y − z)·e^{−κτ}), nên đường cong thường ở trạng
thái contango và luôn dương. Ngày đáo hạn là thứ Tư tuần thứ ba mỗi tháng.
"""

from typing import Dict

import numpy as np
import pandas as pd

from data_service.ingest import N_CONTRACTS, FuturesPanel, write_panel
from model_service.dynamics import VarModel, step
from utils.logger import show_log

SPOT_MEAN = np.log(18.0)
LONG_MEAN = np.log(21.0)
SPOT_PERSISTENCE = 0.9
LONG_PERSISTENCE = 0.95
SPOT_VOL = 0.07
LONG_VOL = 0.015
CURVE_SPEED = 4.0
# per-contract pricing noise, keeps the state covariates full rank
CONTRACT_NOISE = 0.01

FACTOR_MODEL = VarModel(
    mode=np.array([SPOT_MEAN, LONG_MEAN]),
    mu=np.zeros(2),
    a_matrix=np.diag([SPOT_PERSISTENCE, LONG_PERSISTENCE]),
    sigma=np.diag([SPOT_VOL**2, LONG_VOL**2]),
)


def expiry_calendar(first_day: np.datetime64, last_day: np.datetime64) -> np.ndarray:
    """Các thứ Tư tuần thứ ba, từ trước first_day một chu kỳ tới sau last_day đủ sáu hợp đồng."""
    start = pd.Timestamp(first_day) - pd.DateOffset(months=2)
    end = pd.Timestamp(last_day) + pd.DateOffset(months=N_CONTRACTS + 2)
    return pd.date_range(start, end, freq="WOM-3WED").values.astype("datetime64[D]")


def make_synthetic_panel(n_days: int = 200, seed: int = 7, start: str = "2010-01-04") -> FuturesPanel:
    if n_days < 2:
        raise ValueError("n_days phải ≥ 2.")
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range(start, periods=n_days).values.astype("datetime64[D]")
    calendar = expiry_calendar(dates[0], dates[-1])

    factors = np.empty((n_days, FACTOR_MODEL.dim))
    factors[0] = FACTOR_MODEL.mode
    for idx in range(1, n_days):
        factors[idx] = step(FACTOR_MODEL, factors[idx - 1], 1, rng)[0]
    spot, level = factors[:, 0], factors[:, 1]

    expiries = np.empty((n_days, N_CONTRACTS), dtype="datetime64[D]")
    prev_expiry = np.empty(n_days, dtype="datetime64[D]")
    for idx, day in enumerate(dates):
        front = int(np.searchsorted(calendar, day, side="left"))
        expiries[idx] = calendar[front:front + N_CONTRACTS]
        prev_expiry[idx] = calendar[front - 1]
    tau = (expiries - dates[:, None]) / np.timedelta64(1, "D") / 365.0
    log_futures = level[:, None] + (spot - level)[:, None] * np.exp(-CURVE_SPEED * tau)
    log_futures += CONTRACT_NOISE * rng.standard_normal(log_futures.shape)
    panel = FuturesPanel(
        dates=dates,
        vix=np.round(np.exp(spot), 2),
        futures=np.round(np.exp(log_futures), 4),
        expiries=expiries,
        prev_expiry=prev_expiry,
    )
    show_log(message=f"make_synthetic_panel: {n_days} days {dates[0]}..{dates[-1]} seed {seed}", level="info")
    return panel


def write_fixture(out_dir: str, n_days: int = 200, seed: int = 7) -> Dict[str, str]:
    return write_panel(make_synthetic_panel(n_days=n_days, seed=seed), out_dir)
