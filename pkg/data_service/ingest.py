"""
Đọc, kiểm tra và căn chỉnh dữ liệu settle hằng ngày của VIX spot và VIX futures.

`parse_panel` nhận futures.csv (dạng long: trade_date,expiry_date,settle),
vix.csv (trade_date,vix) và calendar.csv tùy chọn (expiry_date) rồi trả về
FuturesPanel chỉ gồm các ngày có đủ VIX và sáu hợp đồng tháng đầu tiên.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.errors import DataError
from utils.logger import show_log

N_CONTRACTS = 6


class MalformedRowError(DataError):
    """Dòng CSV có ngày hoặc số không hợp lệ."""

    code = "malformed_row"


class CalendarInconsistentError(DataError):
    """Lịch đáo hạn không tăng chặt hoặc đã qua ngày giao dịch."""

    code = "calendar_inconsistent"


class EmptyIntersectionError(DataError):
    """Hai file không có ngày giao dịch chung nào hợp lệ."""

    code = "empty_intersection"


@dataclass(frozen=True)
class FuturesPanel:
    dates: np.ndarray  # datetime64[D], (n,)
    vix: np.ndarray  # (n,)
    futures: np.ndarray  # (n, 6) F¹..F⁶
    expiries: np.ndarray  # datetime64[D], (n, 6)
    prev_expiry: np.ndarray  # datetime64[D], (n,)
    dropped: Dict[str, int] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.dates)

    def subset(self, mask: np.ndarray) -> "FuturesPanel":
        return FuturesPanel(
            dates=self.dates[mask],
            vix=self.vix[mask],
            futures=self.futures[mask],
            expiries=self.expiries[mask],
            prev_expiry=self.prev_expiry[mask],
            dropped=dict(self.dropped),
        )


@dataclass
class CheckResult:
    passed: int = 0
    failed: int = 0
    offenders: List[str] = field(default_factory=list)


@dataclass
class ValidationReport:
    checks: Dict[str, CheckResult]

    @property
    def ok(self) -> bool:
        return all(check.failed == 0 for check in self.checks.values())

    def offender_count(self) -> int:
        return len({d for check in self.checks.values() for d in check.offenders})


def _read_csv(path: str, columns: Sequence[str]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True, comment="#")
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MalformedRowError(f"{path}: thiếu cột {missing}")
    frame = frame[list(columns)].apply(lambda col: col.str.strip())
    # line numbers as seen in the file (header is line 1)
    frame["_line"] = np.arange(len(frame)) + 2
    return frame


def _parse_dates(frame: pd.DataFrame, column: str, path: str) -> pd.Series:
    parsed = pd.to_datetime(frame[column], format="%Y-%m-%d", errors="coerce")
    bad = parsed.isna()
    if bad.any():
        line = int(frame.loc[bad, "_line"].iloc[0])
        raise MalformedRowError(f"{path}:{line}: ngày không hợp lệ '{frame.loc[bad, column].iloc[0]}'")
    return parsed.dt.normalize()


def _parse_numbers(frame: pd.DataFrame, column: str, path: str) -> pd.Series:
    """Blank cells are missing values; anything else must parse as a number."""
    raw = frame[column]
    values = pd.to_numeric(raw.where(raw != "", None), errors="coerce")
    bad = values.isna() & (raw != "")
    if bad.any():
        line = int(frame.loc[bad, "_line"].iloc[0])
        raise MalformedRowError(f"{path}:{line}: số không hợp lệ '{raw[bad].iloc[0]}'")
    return values.astype(float)


def _read_futures(path: str) -> pd.DataFrame:
    frame = _read_csv(path, ["trade_date", "expiry_date", "settle"])
    frame["trade_date"] = _parse_dates(frame, "trade_date", path)
    frame["expiry_date"] = _parse_dates(frame, "expiry_date", path)
    frame["settle"] = _parse_numbers(frame, "settle", path)
    return frame


def _read_vix(path: str) -> pd.Series:
    frame = _read_csv(path, ["trade_date", "vix"])
    frame["trade_date"] = _parse_dates(frame, "trade_date", path)
    frame["vix"] = _parse_numbers(frame, "vix", path)
    if frame["trade_date"].duplicated().any():
        dup = frame.loc[frame["trade_date"].duplicated(), "trade_date"].iloc[0]
        raise MalformedRowError(f"{path}: ngày trùng lặp {dup.date()}")
    return frame.set_index("trade_date")["vix"]


def _read_calendar(path: Optional[str]) -> List[np.datetime64]:
    if not path:
        return []
    frame = _read_csv(path, ["expiry_date"])
    return list(_parse_dates(frame, "expiry_date", path).values.astype("datetime64[D]"))


def _consecutive(calendar: np.ndarray, expiries: np.ndarray) -> bool:
    """expiries là các ngày đáo hạn liền nhau trong lịch, bắt đầu từ hợp đồng gần nhất."""
    start = int(np.searchsorted(calendar, expiries[0]))
    listed = calendar[start:start + len(expiries)]
    return len(listed) == len(expiries) and bool(np.all(listed == expiries))


def parse_panel(
    futures_file: str,
    vix_file: str,
    calendar_file: Optional[str] = None,
) -> FuturesPanel:
    """
    Đọc futures.csv và vix.csv thành FuturesPanel đã căn chỉnh.

    Thứ tự các hợp đồng trong một ngày giữ nguyên thứ tự dòng trong file
    (F¹ trước); ngày thiếu bất kỳ giá nào trong F¹..F⁶ hoặc VIX bị loại bỏ,
    không nội suy. Sáu hợp đồng phải liền nhau trong lịch đáo hạn (hợp nhất từ
    futures.csv và calendar.csv); thiếu một hợp đồng ở giữa thì ngày đó bị loại
    thay vì dồn hạng.

    Args:
        futures_file: Đường dẫn futures.csv
        vix_file: Đường dẫn vix.csv
        calendar_file: Đường dẫn calendar.csv bổ sung các ngày đáo hạn trước mẫu

    Returns:
        FuturesPanel
    """
    futures = _read_futures(futures_file)
    vix = _read_vix(vix_file)
    known_expiries = set(futures["expiry_date"].values.astype("datetime64[D]"))
    known_expiries.update(_read_calendar(calendar_file))
    calendar = np.array(sorted(known_expiries), dtype="datetime64[D]")

    dropped = {"missing_future": 0, "missing_vix": 0, "no_prev_expiry": 0}
    rows: List[Tuple[np.datetime64, float, np.ndarray, np.ndarray, np.datetime64]] = []
    for trade_date, group in futures.groupby("trade_date", sort=True):
        day = np.datetime64(trade_date.date(), "D")
        expiries = group["expiry_date"].values.astype("datetime64[D]")
        settles = group["settle"].to_numpy(dtype=float)
        if np.any(np.diff(expiries) <= np.timedelta64(0, "D")):
            raise CalendarInconsistentError(f"{futures_file}: đáo hạn không tăng chặt tại ngày {day}")
        if len(expiries) and expiries[0] < day:
            raise CalendarInconsistentError(f"{futures_file}: hợp đồng đã đáo hạn ({expiries[0]}) còn xuất hiện tại ngày {day}")
        if len(settles) < N_CONTRACTS or np.isnan(settles[:N_CONTRACTS]).any():
            dropped["missing_future"] += 1
            continue
        if not _consecutive(calendar, expiries[:N_CONTRACTS]):
            dropped["missing_future"] += 1
            continue
        spot = vix.get(trade_date)
        if spot is None or np.isnan(spot):
            dropped["missing_vix"] += 1
            continue
        front = expiries[0]
        earlier = calendar[calendar < front]
        if len(earlier) == 0:
            dropped["no_prev_expiry"] += 1
            continue
        if earlier[-1] >= day:
            # an earlier contract is still live, so the listed front is not F¹
            dropped["missing_future"] += 1
            continue
        rows.append((day, float(spot), settles[:N_CONTRACTS], expiries[:N_CONTRACTS], earlier[-1]))

    for reason, count in dropped.items():
        if count:
            show_log(message=f"parse_panel: dropped {count} dates ({reason})", level="warning")
    if not rows:
        raise EmptyIntersectionError(f"Không có ngày chung hợp lệ giữa {futures_file} và {vix_file}")

    panel = FuturesPanel(
        dates=np.array([r[0] for r in rows], dtype="datetime64[D]"),
        vix=np.array([r[1] for r in rows], dtype=float),
        futures=np.vstack([r[2] for r in rows]),
        expiries=np.vstack([r[3] for r in rows]),
        prev_expiry=np.array([r[4] for r in rows], dtype="datetime64[D]"),
        dropped=dropped,
    )
    show_log(message=f"parse_panel: {len(panel)} dates from {panel.dates[0]} to {panel.dates[-1]}", level="info")
    return panel


def validate_panel(panel: FuturesPanel) -> ValidationReport:
    """
    Kiểm tra các bất biến của panel, chỉ báo cáo, không sửa panel.

    Khoảng trống ngày (cuối tuần, ngày lễ) không bị coi là vi phạm.
    """
    checks = {name: CheckResult() for name in ("dates_increasing", "positive_prices", "expiry_order", "consecutive_expiries", "prev_expiry", "complete_rows")}
    calendar = np.unique(np.append(panel.expiries.reshape(-1), panel.prev_expiry))

    def record(name: str, ok: bool, day: np.datetime64) -> None:
        if ok:
            checks[name].passed += 1
        else:
            checks[name].failed += 1
            checks[name].offenders.append(str(day))

    for idx, day in enumerate(panel.dates):
        record("dates_increasing", idx == 0 or day > panel.dates[idx - 1], day)
        prices = np.append(panel.futures[idx], panel.vix[idx])
        record("complete_rows", bool(np.isfinite(prices).all()) and panel.futures.shape[1] == N_CONTRACTS, day)
        record("positive_prices", bool(np.all(prices > 0)), day)
        expiries = panel.expiries[idx]
        record("expiry_order", bool(day <= expiries[0] and np.all(np.diff(expiries) > np.timedelta64(0, "D"))), day)
        record("consecutive_expiries", _consecutive(calendar, expiries), day)
        prev = panel.prev_expiry[idx]
        record("prev_expiry", bool(prev < expiries[0] and prev <= day), day)

    failed = sum(c.failed for c in checks.values())
    show_log(message=f"validate_panel: {len(panel)} dates, {failed} failed checks", level="info" if failed == 0 else "warning")
    return ValidationReport(checks=checks)


def write_panel(panel: FuturesPanel, out_dir: str) -> Dict[str, str]:
    """
    Ghi panel ra futures.csv, vix.csv, calendar.csv theo đúng schema đầu vào.

    Returns:
        Dict tên file -> đường dẫn
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(panel)
    long = pd.DataFrame(
        {
            "trade_date": np.repeat(panel.dates, N_CONTRACTS).astype(str),
            "expiry_date": panel.expiries.reshape(-1).astype(str),
            "settle": panel.futures.reshape(-1),
        }
    )
    paths = {
        "futures": str(out / "futures.csv"),
        "vix": str(out / "vix.csv"),
        "calendar": str(out / "calendar.csv"),
    }
    long.to_csv(paths["futures"], index=False, float_format="%.17g")
    pd.DataFrame({"trade_date": panel.dates.astype(str), "vix": panel.vix}).to_csv(paths["vix"], index=False, float_format="%.17g")
    calendar = np.unique(panel.prev_expiry) if n else np.array([], dtype="datetime64[D]")
    pd.DataFrame({"expiry_date": calendar.astype(str)}).to_csv(paths["calendar"], index=False)
    return paths
