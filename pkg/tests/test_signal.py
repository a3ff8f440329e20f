import numpy as np
import numpy.testing as npt
import pytest

from curve_service.curve import build_curves
from model_service.dynamics import EconomicParams
from model_service.network import QNetwork
from model_service.utility import Action
from trading_service.signal import (
    FLAT,
    BankruptError,
    ContractPosition,
    CostModel,
    CurveRow,
    choose_action,
    contracts_from_action,
    curve_rows,
    policy,
    portfolio_step,
    portfolio_step_with_costs,
    rebalance_cost,
    replay_contracts,
    round_half_away,
    run_portfolio,
    signal_line,
    transaction_cost,
)

ECON = EconomicParams()


def flat_rows(m, omega=0.5, v1=20.0, v5=25.0, price=20.0):
    return [CurveRow(omega=omega, v1=v1, v5=v5, prices=np.full(4, price)) for _ in range(m)]


def constant_net(dim, favourite):
    bias = np.zeros(5)
    bias[favourite] = 1.0
    return QNetwork(weights=[np.zeros((dim, 5))], biases=[bias])


class TestPolicy:

    def test_argmax(self):
        assert choose_action([0.1, 0.5, 0.2, 0.0, -0.1]) == Action(-1, 1)

    def test_all_equal_is_no_trade(self):
        assert choose_action(np.full(5, 0.3)) == Action(0, 0)

    def test_near_ties(self):
        assert choose_action([0.5, 0.5 - 1e-12, 0.1, 0.2, 0.0]) == Action(0, 0)
        assert choose_action([0.0, 0.7, 0.1, 0.7 + 1e-12, 0.2]) == Action(-1, 1)

    def test_monotone_transform_invariance(self):
        q = np.random.default_rng(0).normal(size=(50, 5))
        for row in q:
            assert choose_action(row) == choose_action(3.0 * np.exp(row) + 1.0)

    def test_policy_uses_network(self):
        assert policy(constant_net(11, 4), np.zeros(11)) == Action(1, -2)


class TestPortfolioStep:

    def test_no_trade_without_rate(self):
        assert portfolio_step(100.0, Action(0, 0), np.full(5, 0.03), ECON) == 100.0

    def test_no_trade_earns_rate(self):
        econ = EconomicParams(r=0.0252)
        p = portfolio_step(100.0, Action(0, 0), np.zeros(5), econ)
        assert p / 100.0 - 1.0 == pytest.approx(1e-4, abs=1e-15)

    def test_trade_return(self):
        returns = np.array([-0.01, 0.0, 0.0, 0.0, -0.008])
        assert portfolio_step(100.0, Action(1, -1), returns, ECON) == pytest.approx(99.8, abs=1e-12)

    def test_bankrupt(self):
        with pytest.raises(BankruptError):
            portfolio_step(100.0, Action(1, -1), np.array([-0.8, 0, 0, 0, 0.7]), ECON)


class TestContracts:

    def test_worked_example(self):
        position = contracts_from_action(100.0, 0.5, Action(-1, 2), 20.0, 25.0)
        npt.assert_allclose(position.as_array(), [-2.5, -2.5, 4.0, 4.0])

    def test_no_trade_is_flat(self):
        assert contracts_from_action(100.0, 0.3, Action(0, 0), 20.0, 25.0) == FLAT

    def test_leg_ratio_and_exposure(self):
        omega = 0.37
        position = contracts_from_action(150.0, omega, Action(1, -2), 18.0, 22.0)
        assert position.n1 / position.n2 == pytest.approx(omega / (1 - omega))
        assert (position.n1 + position.n2) * 18.0 == pytest.approx(150.0)
        assert (position.n5 + position.n6) * 22.0 == pytest.approx(-300.0)
        assert np.sign(position.n1) == np.sign(position.n2) == 1
        assert np.sign(position.n5) == np.sign(position.n6) == -1

    def test_half_away_rounding(self):
        npt.assert_array_equal(round_half_away(np.array([2.5, -2.5, 0.49, -1.5, 0.0])), [3.0, -3.0, 0.0, -2.0, 0.0])

    def test_integer_position_row(self):
        # V¹ and V⁵ chosen inside the intervals that round to the recorded contracts
        position = contracts_from_action(100.0, 0.65714, Action(-1, 2), 24.0, 26.0, integer=True)
        npt.assert_array_equal(position.as_array(), [-3.0, -1.0, 5.0, 3.0])
        assert position.net == 4.0

    def test_signal_line(self):
        line = signal_line("2020-12-28", 100.0, 0.65714, Action(-1, 2), ContractPosition(-3, -1, 5, 3))
        assert line == "2020-12-28 100.00 0.65714 -1 2 -3 -1 5 3 4"


class TestCosts:

    def test_half_tick_only(self):
        assert transaction_cost(ContractPosition(n1=2.0), np.full(4, 31.7), CostModel()) == pytest.approx(50.0)

    def test_proportional_part(self):
        cost = transaction_cost(ContractPosition(n5=-1.0), np.full(4, 25.0), CostModel(epsilon_bps=20.0))
        assert cost == pytest.approx(75.0)

    def test_no_change_is_free(self):
        assert transaction_cost(FLAT, np.full(4, 25.0), CostModel(epsilon_bps=40.0)) == 0.0

    def test_round_trip_of_one_contract(self):
        # ω = 1 and a huge V⁵ leave a single F¹ contract after rounding
        row = CurveRow(omega=1.0, v1=100.0, v5=1e6, prices=np.full(4, 20.0))
        cm = CostModel()
        p1, held, cost1 = portfolio_step_with_costs(100.0, FLAT, Action(1, -1), row, np.zeros(5), ECON, cm, integer=True)
        assert held == ContractPosition(n1=1.0)
        p2, held, cost2 = portfolio_step_with_costs(p1, held, Action(0, 0), row, np.zeros(5), ECON, cm, integer=True)
        assert held == FLAT
        assert cost1 == cost2 == pytest.approx(25.0)
        assert 100.0 - p2 == pytest.approx(0.05, abs=1e-12)

    def test_invalid_cost_model(self):
        with pytest.raises(ValueError):
            CostModel(epsilon_bps=-1.0)
        with pytest.raises(ValueError):
            CostModel(multiplier=0.0)


def random_run(seed, m=60):
    rng = np.random.default_rng(seed)
    returns = rng.normal(scale=0.02, size=(m - 1, 5))
    choices = rng.integers(0, 5, size=m)
    dates = np.datetime64("2015-01-01") + np.arange(m)
    return dates, (lambda k, _p: Action.from_index(int(choices[k]))), returns


class TestRunPortfolio:

    def test_zero_costs_match_frictionless(self):
        dates, decide, returns = random_run(1)
        rows = flat_rows(len(dates))
        plain = run_portfolio(dates, decide, returns, rows, ECON)
        free = run_portfolio(dates, decide, returns, rows, ECON, cm=CostModel(half_tick=0.0))
        npt.assert_allclose(free.p, plain.p, rtol=0, atol=1e-12)
        assert plain.p[0] == 100.0
        npt.assert_array_equal(free.positions, plain.positions)

    def test_no_trade_costs_nothing(self):
        dates, _, returns = random_run(2)
        rows = flat_rows(len(dates))
        plain = run_portfolio(dates, lambda k, p: Action(0, 0), returns, rows, ECON)
        costly = run_portfolio(dates, lambda k, p: Action(0, 0), returns, rows, ECON, cm=CostModel(epsilon_bps=40.0))
        npt.assert_array_equal(costly.p, plain.p)
        npt.assert_array_equal(plain.p, 100.0)

    def test_cost_monotone_in_epsilon(self):
        dates, decide, returns = random_run(3)
        rows = flat_rows(len(dates))
        terminal = [
            run_portfolio(dates, decide, returns, rows, ECON, cm=CostModel(epsilon_bps=eps)).p[-1]
            for eps in (0.0, 20.0, 30.0, 40.0)
        ]
        assert all(a >= b for a, b in zip(terminal, terminal[1:]))
        assert terminal[0] > terminal[-1]

    def test_accounting(self):
        dates, decide, returns = random_run(4)
        rows = flat_rows(len(dates))
        cm = CostModel(epsilon_bps=20.0)
        path = run_portfolio(dates, decide, returns, rows, ECON, cm=cm)
        frictionless_growth = 0.0
        for k in range(len(dates) - 1):
            action = Action.from_index(int(path.actions[k]))
            gross = path.p[k] * (1.0 + action.a1 * returns[k, 0] + action.a5 * returns[k, 4])
            frictionless_growth += gross - path.p[k]
        assert path.p[-1] == pytest.approx(100.0 + frictionless_growth - path.costs_paid.sum() / cm.unit_value, abs=1e-9)
        frame = path.frame()
        assert list(frame.columns) == ["date", "p", "action", "n1", "n2", "n5", "n6", "cost"]

    def test_bankruptcy_halts(self):
        dates = np.datetime64("2015-01-01") + np.arange(10)
        returns = np.zeros((9, 5))
        returns[3] = [-0.8, 0.0, 0.0, 0.0, 0.7]
        path = run_portfolio(dates, lambda k, p: Action(1, -1), returns, flat_rows(10), ECON)
        assert path.bankrupt
        assert len(path.p) == 5
        assert path.p[-1] == 0.0
        assert np.all(path.p[:-1] > 0)


class TestReplay:

    def test_layout_and_integer_counts(self):
        m = 8
        dates = np.datetime64("2020-12-21") + np.arange(m)
        states = np.zeros((m, 3))
        returns = np.zeros((m - 1, 5))
        rows = flat_rows(m, omega=0.65714, v1=24.0, v5=26.0)
        calls = []

        def provider(k):
            calls.append(k)
            return constant_net(3, 2)

        table = replay_contracts(dates, states, returns, rows, provider, ECON)
        assert list(table.columns) == ["date", "P", "omega", "a1", "a5", "n1", "n2", "n5", "n6", "net"]
        assert len(table) == m - 1
        assert calls == list(range(m - 1))
        first = table.iloc[0]
        assert (first["a1"], first["a5"]) == (-1, 2)
        assert (first["n1"], first["n2"], first["n5"], first["n6"], first["net"]) == (-3, -1, 5, 3, 4)
        assert first["P"] == 100.0
        # entry cost is 12 contracts at half a tick
        assert table.iloc[1]["P"] == pytest.approx(100.0 - 12 * 25.0 / 1000.0)


def test_curve_rows_follow_panel(synthetic_panel):
    curves = build_curves(synthetic_panel)
    rows = curve_rows(synthetic_panel, curves, [5, 40])
    for row, i in zip(rows, [5, 40]):
        assert row.omega == curves.omega[i]
        assert row.v1 == curves.cmf[i, 1]
        assert row.v5 == curves.cmf[i, 5]
        npt.assert_array_equal(row.prices, synthetic_panel.futures[i, [0, 1, 4, 5]])
        npt.assert_array_equal(row.leg_expiries(), synthetic_panel.expiries[i, [0, 1, 4, 5]])
        npt.assert_array_equal(row.curve_prices, synthetic_panel.futures[i])


def rolled_rows():
    # the day before is the front contract's expiry; the next day every rank shifts by one
    listed = np.array(["2021-02-17", "2021-03-17", "2021-04-21", "2021-05-19", "2021-06-16", "2021-07-21", "2021-08-18"], dtype="datetime64[D]")
    prices = np.array([20.1, 23.0, 25.4, 26.8, 27.9, 28.6, 29.2])
    expiry_day = CurveRow(omega=0.0, v1=25.0, v5=28.0, prices=prices[[0, 1, 4, 5]], expiries=listed[:6], curve_prices=prices[:6])
    next_day = CurveRow(omega=0.96429, v1=26.0, v5=26.0, prices=prices[[1, 2, 5, 6]], expiries=listed[1:], curve_prices=prices[1:])
    return expiry_day, next_day


class TestRollCosts:

    def test_shifted_ranks_cost_nothing(self):
        expiry_day, next_day = rolled_rows()
        held = ContractPosition(n1=0.0, n2=-4.0, n5=0.0, n6=4.0)
        p, position, cost = portfolio_step_with_costs(
            115.25, held, Action(-1, 1), next_day, np.zeros(5), ECON, CostModel(epsilon_bps=40.0), integer=True, prev_row=expiry_day
        )
        assert position == ContractPosition(n1=-4.0, n2=0.0, n5=4.0, n6=0.0)
        assert cost == 0.0
        assert p == 115.25

    def test_rank_matching_without_expiries(self):
        expiry_day, next_day = rolled_rows()
        held = ContractPosition(n2=-4.0, n6=4.0)
        blind = CurveRow(omega=next_day.omega, v1=next_day.v1, v5=next_day.v5, prices=next_day.prices)
        _, _, cost = portfolio_step_with_costs(115.25, held, Action(-1, 1), blind, np.zeros(5), ECON, CostModel(), integer=True)
        assert cost == pytest.approx(16 * 25.0)

    def test_leg_leaving_the_book_is_closed(self):
        expiry_day, next_day = rolled_rows()
        # old F⁵ becomes F⁴, which is no longer traded
        held = ContractPosition(n5=2.0)
        position = FLAT
        cost = rebalance_cost(held, expiry_day, position, next_day, CostModel(epsilon_bps=20.0))
        assert cost == pytest.approx(2 * (0.025 + 0.002 * 27.9) * 1000.0)

    def test_expired_contract_settles_free(self):
        expiry_day, next_day = rolled_rows()
        held = ContractPosition(n1=3.0)
        assert rebalance_cost(held, expiry_day, FLAT, next_day, CostModel(epsilon_bps=40.0)) == 0.0

    def test_run_portfolio_uses_previous_row(self):
        expiry_day, next_day = rolled_rows()
        dates = np.array(["2021-02-17", "2021-02-18", "2021-02-19"], dtype="datetime64[D]")
        path = run_portfolio(dates, lambda k, p: Action(-1, 1), np.zeros((2, 5)), [expiry_day, next_day, next_day], ECON, cm=CostModel(), integer=True)
        npt.assert_array_equal(path.positions[0], [0.0, -4.0, 0.0, 4.0])
        npt.assert_array_equal(path.positions[1], [-4.0, 0.0, 4.0, 0.0])
        assert path.costs_paid[1] == 0.0


# date, P, ω, a¹, a⁵, n¹, n², n⁵, n⁶, Σn of a recorded daily contract book
RECORDED_BOOK = [
    ("2020-12-28", 100.00, 0.65714, -1, 2, -3, -1, 5, 3, 4),
    ("2020-12-29", 101.25, 0.62857, -1, 1, -3, -1, 2, 1, -1),
    ("2020-12-30", 103.20, 0.60000, 0, 0, 0, 0, 0, 0, 0),
    ("2020-12-31", 103.03, 0.57143, 0, 0, 0, 0, 0, 0, 0),
    ("2021-01-04", 103.03, 0.45714, -1, 2, -2, -2, 4, 4, 4),
    ("2021-01-05", 102.23, 0.42857, -1, 2, -2, -2, 3, 4, 3),
    ("2021-01-06", 101.15, 0.40000, -1, 2, -2, -2, 3, 5, 4),
    ("2021-01-07", 104.18, 0.37143, 0, 0, 0, 0, 0, 0, 0),
    ("2021-01-08", 103.88, 0.34286, -1, 1, -1, -3, 1, 3, 0),
    ("2021-01-11", 101.23, 0.25714, -1, 1, -1, -3, 1, 3, 0),
    ("2021-01-12", 103.22, 0.22857, -1, 1, -1, -3, 1, 3, 0),
    ("2021-01-13", 105.05, 0.20000, -1, 1, -1, -3, 1, 3, 0),
    ("2021-01-14", 105.45, 0.17143, -1, 1, -1, -4, 1, 3, -1),
    ("2021-01-15", 103.63, 0.14286, -1, 1, -1, -3, 1, 3, 0),
    ("2021-01-19", 105.99, 0.02857, -1, 2, 0, -4, 0, 8, 4),
    ("2021-01-20", 103.19, 0.00000, 0, 0, 0, 0, 0, 0, 0),
    ("2021-01-21", 102.89, 0.96429, -1, 2, -4, 0, 7, 0, 3),
    ("2021-01-22", 103.37, 0.92857, 0, 0, 0, 0, 0, 0, 0),
    ("2021-01-25", 103.10, 0.82143, -1, 1, -3, -1, 3, 1, 0),
    ("2021-01-26", 105.44, 0.78571, -1, 1, -3, -1, 3, 1, 0),
    ("2021-01-27", 92.60, 0.75000, -1, 2, -2, -1, 5, 2, 4),
    ("2021-01-28", 90.38, 0.71429, -1, 2, -2, -1, 4, 2, 3),
    ("2021-01-29", 89.03, 0.67857, -1, 2, -2, -1, 4, 2, 3),
    ("2021-02-01", 92.25, 0.57143, -1, 2, -2, -1, 4, 3, 4),
    ("2021-02-02", 93.27, 0.53571, -1, 2, -2, -2, 3, 3, 2),
    ("2021-02-03", 96.28, 0.50000, 0, 0, 0, 0, 0, 0, 0),
    ("2021-02-04", 96.03, 0.46429, -1, 1, -2, -2, 2, 2, 0),
    ("2021-02-05", 96.69, 0.42857, -1, 1, -2, -2, 1, 2, -1),
    ("2021-02-08", 98.28, 0.32143, -1, 1, -1, -3, 1, 2, -1),
    ("2021-02-09", 98.66, 0.28571, -1, 1, -1, -3, 1, 2, -1),
    ("2021-02-10", 98.85, 0.25000, -1, 1, -1, -3, 1, 3, 0),
    ("2021-02-11", 100.93, 0.21429, -1, 1, -1, -3, 1, 3, 0),
    ("2021-02-12", 104.66, 0.17857, -1, 1, -1, -3, 1, 3, 0),
    ("2021-02-16", 105.57, 0.03571, 1, -1, 0, 4, 0, -3, 1),
    ("2021-02-17", 115.42, 0.00000, -1, 1, 0, -4, 0, 4, 0),
    ("2021-02-18", 115.25, 0.96429, -1, 1, -4, 0, 4, 0, 0),
    ("2021-02-19", 118.17, 0.92857, 0, 0, 0, 0, 0, 0, 0),
]

CMF_GRID = np.arange(10.0, 60.0, 0.005)


def consistent_level(p, omega, weight, near, far):
    """Mức CMF đầu tiên trên lưới mà hai chân làm tròn đúng (near, far); None nếu không có."""
    rounded_near = round_half_away(omega * weight * p / CMF_GRID)
    rounded_far = round_half_away((1.0 - omega) * weight * p / CMF_GRID)
    hits = np.nonzero((rounded_near == near) & (rounded_far == far))[0]
    return float(CMF_GRID[hits[0]]) if len(hits) else None


@pytest.mark.parametrize("day, p, omega, a1, a5, n1, n2, n5, n6, net", RECORDED_BOOK, ids=[row[0] for row in RECORDED_BOOK])
def test_recorded_book_is_reproducible(day, p, omega, a1, a5, n1, n2, n5, n6, net):
    assert n1 + n2 + n5 + n6 == net
    v1 = consistent_level(p, omega, a1, n1, n2)
    v5 = consistent_level(p, omega, a5, n5, n6)
    assert v1 is not None and v5 is not None
    position = contracts_from_action(p, omega, Action(a1, a5), v1, v5, integer=True)
    npt.assert_array_equal(position.as_array(), [n1, n2, n5, n6])
    assert position.net == net
    for count, weight in ((n1, a1), (n2, a1), (n5, a5), (n6, a5)):
        assert count == 0 or np.sign(count) == np.sign(weight)
    line = signal_line(day, p, omega, Action(a1, a5), position)
    assert line.split()[-5:] == [str(v) for v in (n1, n2, n5, n6, net)]
