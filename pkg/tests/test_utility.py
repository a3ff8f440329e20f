import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from model_service.dynamics import DT, EconomicParams
from model_service.utility import (
    ACTIONS,
    EXPONENTIAL,
    PIECEWISE_LINEAR,
    Action,
    UtilityDomainError,
    UtilitySpec,
    evaluate,
    inverse,
    trade_return,
    trade_returns_all,
)

returns_values = st.floats(min_value=-0.5, max_value=0.5, allow_nan=False)
UTILITIES = [UtilitySpec.default(PIECEWISE_LINEAR), UtilitySpec.default(EXPONENTIAL)]


class TestTradeReturn:

    def test_no_trade(self):
        assert trade_return(Action(0, 0), np.array([0.01, 0.0, 0.0, 0.0, 0.02]), EconomicParams()) == 0.0

    def test_calendar_spread_symmetry(self):
        rets = np.array([0.013, 0.0, 0.0, 0.0, 0.013])
        assert trade_return(Action(1, -1), rets, EconomicParams()) == 0.0

    def test_direct_evaluation(self):
        rets = np.array([0.01, 0.0, 0.0, 0.0, 0.004])
        assert trade_return(Action(-1, 2), rets, EconomicParams()) == pytest.approx(-0.002)

    def test_interest_is_excess(self):
        econ = EconomicParams(r=0.05)
        rets = np.full(5, 0.05 * DT)
        assert trade_return(Action(-1, 2), rets, econ) == pytest.approx(0.0, abs=1e-15)

    def test_all_actions_match_single(self):
        rets = np.random.default_rng(0).normal(scale=0.02, size=(7, 5))
        econ = EconomicParams(r=0.01)
        everything = trade_returns_all(rets, econ)
        for idx, action in enumerate(ACTIONS):
            npt.assert_allclose(everything[:, idx], trade_return(Action(*action), rets, econ))

    def test_invalid_action(self):
        with pytest.raises(ValueError):
            Action(2, 0)

    def test_index_round_trip(self):
        assert [Action.from_index(i).index for i in range(5)] == list(range(5))
        assert str(Action(-1, 2)) == "(-1,2)"


class TestEvaluate:

    def test_piecewise_linear(self):
        u = UtilitySpec.default(PIECEWISE_LINEAR)
        assert u.gamma == 1.3
        assert evaluate(u, 0.1) == pytest.approx(0.1)
        assert evaluate(u, -0.1) == pytest.approx(-0.13)

    def test_exponential(self):
        u = UtilitySpec.default(EXPONENTIAL)
        assert u.gamma == 3.0
        assert evaluate(u, 0.0) == pytest.approx(-1 / 3)

    @pytest.mark.parametrize("u", UTILITIES)
    def test_strictly_increasing(self, u):
        grid = np.linspace(-0.5, 0.5, 1001)
        assert np.all(np.diff(evaluate(u, grid)) > 0)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            UtilitySpec(kind="power")
        with pytest.raises(ValueError):
            UtilitySpec(gamma=0.0)


class TestInverse:

    def test_known_values(self):
        assert inverse(UtilitySpec.default(EXPONENTIAL), -1 / 3) == pytest.approx(0.0, abs=1e-15)
        assert inverse(UtilitySpec.default(PIECEWISE_LINEAR), -0.13) == pytest.approx(-0.1)

    def test_exponential_domain(self):
        with pytest.raises(UtilityDomainError):
            inverse(UtilitySpec.default(EXPONENTIAL), 0.0)

    @pytest.mark.parametrize("u", UTILITIES)
    def test_bijection(self, u):
        x = np.random.default_rng(1).uniform(-0.5, 0.5, size=1000)
        npt.assert_allclose(inverse(u, evaluate(u, x)), x, rtol=0, atol=1e-12)


@pytest.mark.parametrize("u", UTILITIES)
@given(r1=returns_values, r2=returns_values, lam=st.floats(min_value=0.0, max_value=1.0))
def test_concavity(u, r1, r2, lam):
    mixed = evaluate(u, lam * r1 + (1 - lam) * r2)
    assert mixed >= lam * evaluate(u, r1) + (1 - lam) * evaluate(u, r2) - 1e-12
