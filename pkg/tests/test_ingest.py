import numpy as np
import numpy.testing as npt
import pytest

from data_service.ingest import (
    CalendarInconsistentError,
    EmptyIntersectionError,
    MalformedRowError,
    parse_panel,
    validate_panel,
    write_panel,
)
from utils.fixture import FACTOR_MODEL, make_synthetic_panel

EXPIRIES = ["2020-01-22", "2020-02-19", "2020-03-18", "2020-04-15", "2020-05-20", "2020-06-17"]
DAYS = ["2020-01-02", "2020-01-03", "2020-01-06"]


def write_inputs(tmp_path, futures_rows, vix_rows, calendar=("2019-12-18",)):
    futures = tmp_path / "futures.csv"
    futures.write_text("trade_date,expiry_date,settle\n" + "".join(f"{d},{e},{s}\n" for d, e, s in futures_rows))
    vix = tmp_path / "vix.csv"
    vix.write_text("trade_date,vix\n" + "".join(f"{d},{v}\n" for d, v in vix_rows))
    calendar_file = None
    if calendar is not None:
        calendar_file = tmp_path / "calendar.csv"
        calendar_file.write_text("expiry_date\n" + "".join(f"{e}\n" for e in calendar))
    return str(futures), str(vix), str(calendar_file) if calendar_file else None


def full_rows(days=DAYS):
    return [(d, e, 15.0 + i + 0.1 * k) for k, d in enumerate(days) for i, e in enumerate(EXPIRIES)]


def vix_rows(days=DAYS):
    return [(d, 14.0 + k) for k, d in enumerate(days)]


class TestParsePanel:

    def test_aligned_panel(self, tmp_path):
        panel = parse_panel(*write_inputs(tmp_path, full_rows(), vix_rows()))
        assert len(panel) == 3
        assert panel.futures.shape == (3, 6)
        npt.assert_allclose(panel.futures[1], [15.1, 16.1, 17.1, 18.1, 19.1, 20.1])
        npt.assert_allclose(panel.vix, [14.0, 15.0, 16.0])
        assert str(panel.prev_expiry[0]) == "2019-12-18"
        assert str(panel.expiries[2, 0]) == "2020-01-22"

    def test_missing_far_contract_drops_date(self, tmp_path):
        rows = [r for r in full_rows() if not (r[0] == DAYS[1] and r[1] == EXPIRIES[5])]
        panel = parse_panel(*write_inputs(tmp_path, rows, vix_rows()))
        assert [str(d) for d in panel.dates] == [DAYS[0], DAYS[2]]
        assert panel.dropped["missing_future"] == 1

    def test_blank_settle_drops_date(self, tmp_path):
        rows = [(d, e, "" if (d == DAYS[0] and e == EXPIRIES[2]) else s) for d, e, s in full_rows()]
        panel = parse_panel(*write_inputs(tmp_path, rows, vix_rows()))
        assert len(panel) == 2

    def test_missing_vix_drops_date(self, tmp_path):
        panel = parse_panel(*write_inputs(tmp_path, full_rows(), vix_rows()[:2]))
        assert len(panel) == 2
        assert panel.dropped["missing_vix"] == 1

    def test_without_pre_sample_expiry_dates_are_dropped(self, tmp_path):
        with pytest.raises(EmptyIntersectionError):
            parse_panel(*write_inputs(tmp_path, full_rows(), vix_rows(), calendar=None))

    def test_unparsable_settle_reports_line(self, tmp_path):
        rows = full_rows()
        rows[7] = (rows[7][0], rows[7][1], "abc")
        with pytest.raises(MalformedRowError, match=":9:"):
            parse_panel(*write_inputs(tmp_path, rows, vix_rows()))

    def test_bad_date_is_malformed(self, tmp_path):
        rows = full_rows()
        rows[0] = ("2020-13-40", rows[0][1], rows[0][2])
        with pytest.raises(MalformedRowError):
            parse_panel(*write_inputs(tmp_path, rows, vix_rows()))

    def test_expiry_order_violation(self, tmp_path):
        rows = full_rows()
        rows[0], rows[1] = rows[1], rows[0]
        with pytest.raises(CalendarInconsistentError):
            parse_panel(*write_inputs(tmp_path, rows, vix_rows()))

    def test_expired_contract_in_list(self, tmp_path):
        rows = [("2020-01-23", e, 15.0) for e in EXPIRIES]
        with pytest.raises(CalendarInconsistentError):
            parse_panel(*write_inputs(tmp_path, rows, [("2020-01-23", 14.0)]))

    def test_gap_in_the_strip_drops_date(self, tmp_path):
        expiries = EXPIRIES + ["2020-07-22"]
        rows = [(d, e, 15.0 + i) for d in DAYS[:2] for i, e in enumerate(expiries) if not (d == DAYS[1] and e == "2020-03-18")]
        panel = parse_panel(*write_inputs(tmp_path, rows, vix_rows()[:2]))
        assert [str(d) for d in panel.dates] == [DAYS[0]]
        assert panel.dropped["missing_future"] == 1
        npt.assert_array_equal(panel.expiries[0].astype(str), EXPIRIES)

    def test_missing_front_drops_date(self, tmp_path):
        expiries = EXPIRIES + ["2020-07-22"]
        rows = [(d, e, 15.0 + i) for d in DAYS[:2] for i, e in enumerate(expiries) if not (d == DAYS[1] and e == EXPIRIES[0])]
        panel = parse_panel(*write_inputs(tmp_path, rows, vix_rows()[:2]))
        assert len(panel) == 1
        assert panel.dropped["missing_future"] == 1

    def test_no_common_dates(self, tmp_path):
        with pytest.raises(EmptyIntersectionError):
            parse_panel(*write_inputs(tmp_path, full_rows(), [("2021-01-04", 20.0)]))


class TestPanelRoundTrip:

    def test_write_then_parse_is_identity(self, synthetic_panel, tmp_path):
        paths = write_panel(synthetic_panel, str(tmp_path))
        again = parse_panel(paths["futures"], paths["vix"], paths["calendar"])
        npt.assert_array_equal(again.dates, synthetic_panel.dates)
        npt.assert_array_equal(again.futures, synthetic_panel.futures)
        npt.assert_array_equal(again.vix, synthetic_panel.vix)
        npt.assert_array_equal(again.expiries, synthetic_panel.expiries)
        npt.assert_array_equal(again.prev_expiry, synthetic_panel.prev_expiry)

    def test_synthetic_panel_validates(self, synthetic_panel):
        report = validate_panel(synthetic_panel)
        assert report.ok
        assert report.offender_count() == 0
        assert report.checks["positive_prices"].passed == len(synthetic_panel)


def test_validation_reports_offenders(synthetic_panel):
    bad = synthetic_panel.subset(np.arange(len(synthetic_panel)) < 5)
    bad.futures[2, 3] = -1.0
    report = validate_panel(bad)
    assert not report.ok
    assert report.checks["positive_prices"].offenders == [str(bad.dates[2])]


def test_validation_flags_non_consecutive_strip(synthetic_panel):
    bad = synthetic_panel.subset(np.ones(len(synthetic_panel), dtype=bool))
    calendar = np.unique(bad.expiries)
    skipped = calendar[np.searchsorted(calendar, bad.expiries[10, 5]) + 1]
    bad.expiries[10, 5] = skipped
    report = validate_panel(bad)
    assert report.checks["consecutive_expiries"].offenders == [str(bad.dates[10])]
    assert report.checks["expiry_order"].failed == 0


class TestSyntheticFixture:

    def test_same_seed_same_panel(self):
        first, second = make_synthetic_panel(n_days=120, seed=5), make_synthetic_panel(n_days=120, seed=5)
        npt.assert_array_equal(first.futures, second.futures)
        npt.assert_array_equal(first.vix, second.vix)
        npt.assert_array_equal(first.expiries, second.expiries)
        assert not np.array_equal(first.futures, make_synthetic_panel(n_days=120, seed=6).futures)

    def test_spot_follows_factor_model(self):
        log_vix = np.log(make_synthetic_panel(n_days=3000, seed=13).vix)
        slope, intercept = np.polyfit(log_vix[:-1], log_vix[1:], 1)
        persistence = FACTOR_MODEL.a_matrix[0, 0]
        assert slope == pytest.approx(persistence, abs=0.03)
        assert intercept / (1.0 - slope) == pytest.approx(FACTOR_MODEL.mode[0], abs=0.05)
