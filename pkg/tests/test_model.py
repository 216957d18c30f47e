import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mab_abandon.model import (ArmSet, AssumptionError, BanditInstance, BinaryAbandonment,
                               DegenerateInstanceWarning, LogCurve, TableCurve, replication_rng,
                               step, transition_probs)

probs = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def binary_tables(draw):
    """Random q tables satisfying the monotonicity assumption with q00 > 0."""
    q11 = draw(st.floats(0.0, 0.9))
    q01 = draw(st.floats(q11, 1.0))
    q10 = draw(st.floats(q11, 1.0))
    q00 = draw(st.floats(max(q01, q10, 1e-3), 1.0))
    return q00, q01, q10, q11


@st.composite
def binary_instances(draw, max_arms=4):
    M = draw(st.integers(2, max_arms))
    means = draw(st.lists(st.floats(0.01, 0.98), min_size=M, max_size=M))
    return BanditInstance.binary(means, *draw(binary_tables()))


class TestArmSet:
    def test_order_is_best_first_and_stable(self):
        arms = ArmSet((0.5, 0.9, 0.5, 0.1))
        assert arms.order == (1, 0, 2, 3)
        assert arms.best == 1
        np.testing.assert_array_equal(arms.sorted_means, [0.9, 0.5, 0.5, 0.1])

    @given(st.lists(st.floats(0.0, 0.99), min_size=2, max_size=6))
    def test_user_order_round_trip(self, means):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateInstanceWarning)
            arms = ArmSet(tuple(means))
        x = np.arange(len(means), dtype=float)
        np.testing.assert_array_equal(arms.to_user_order(arms.to_sorted_order(x)), x)
        np.testing.assert_array_equal(arms.to_sorted_order(np.array(means)), arms.sorted_means)

    @pytest.mark.parametrize("means, fragment", [
        ((0.5,), "M >= 2"),
        ((1.0, 0.5), "mu(a_1) < 1"),
        ((1.2, 0.5), "[0, 1]"),
    ])
    def test_rejects(self, means, fragment):
        with pytest.raises(AssumptionError, match="Assumption 1") as info:
            ArmSet(means)
        assert fragment in str(info.value)

    def test_equal_best_means_warn(self):
        with pytest.warns(DegenerateInstanceWarning):
            ArmSet((0.7, 0.7))

    def test_non_strict_allows_certain_arm(self):
        assert ArmSet((1.0, 0.5), strict=False).best == 0


class TestBinaryAbandonment:
    def test_q00_must_be_positive(self):
        with pytest.raises(AssumptionError, match=r"q\(0,0\)>0"):
            BinaryAbandonment(0.0, 0.0, 0.0, 0.0)

    @pytest.mark.parametrize("q", [(0.5, 0.6, 0.1, 0.0), (0.5, 0.1, 0.6, 0.0), (0.5, 0.1, 0.1, 0.2)])
    def test_monotonicity(self, q):
        with pytest.raises(AssumptionError, match="monotone"):
            BinaryAbandonment(*q)

    def test_table_layout(self):
        ab = BinaryAbandonment(0.8, 0.2, 0.3, 0.1)
        assert ab.q(0, 1) == 0.2 and ab.q(1, 0) == 0.3
        np.testing.assert_array_equal(ab.table, [[0.8, 0.2], [0.3, 0.1]])


class TestCurves:
    @pytest.mark.parametrize("c6", [5.0, 50.0, 1000.0])
    def test_log_curve_endpoints(self, c6):
        curve = LogCurve(c6)
        assert curve(0.0) == pytest.approx(1.0)
        assert curve(1.0) == pytest.approx(0.0, abs=1e-15)
        assert np.all(np.diff(curve(np.linspace(0, 1, 101))) < 0)

    def test_log_curve_rejects_bad_constant(self):
        with pytest.raises(AssumptionError):
            LogCurve(0.0)

    def test_table_curve_interpolates(self):
        curve = TableCurve(((1.0, 0.0), (0.0, 1.0), (0.5, 0.2)))
        assert curve(0.25) == pytest.approx(0.6)
        assert curve(0.75) == pytest.approx(0.1)

    @pytest.mark.parametrize("points", [
        ((0.0, 0.5), (1.0, 0.6)),            # increasing
        ((0.0, 0.5), (0.9, 0.1)),            # does not reach s = 1
        ((0.0, 0.0), (1.0, 0.0)),            # q = 0 below s = 1
        ((0.0, 1.2), (1.0, 0.0)),            # not a probability
    ])
    def test_table_curve_rejects(self, points):
        with pytest.raises(AssumptionError, match="Assumption 2"):
            TableCurve(points)

    def test_theta_range(self):
        with pytest.raises(AssumptionError, match="theta"):
            BanditInstance.general([0.9, 0.8], LogCurve(5.0), 1.0)


class TestTransitions:
    @given(binary_instances(), st.sampled_from([0, 1]), st.data())
    def test_binary_probabilities_sum_to_one(self, inst, s, data):
        a = data.draw(st.integers(0, inst.M - 1))
        p = transition_probs(inst, s, a)
        assert min(p) >= 0.0
        assert sum(p) == pytest.approx(1.0)

    def test_binary_table(self, soft):
        # P(0|1,a) = (1-mu)(1-q10), P(1|1,a) = mu(1-q11)
        p_lo, p_hi, p_g = transition_probs(soft, 1, 1)
        assert p_lo == pytest.approx(0.2 * 0.8)
        assert p_hi == pytest.approx(0.8 * 0.9)
        assert p_g == pytest.approx(1 - 0.16 - 0.72)

    @given(st.floats(0.0, 1.0), st.floats(0.05, 0.95), st.floats(1.0, 1000.0))
    def test_general_probabilities_sum_to_one(self, s, theta, c6):
        inst = BanditInstance.general([0.9, 0.8], LogCurve(c6), theta)
        assert sum(transition_probs(inst, s, 1)) == pytest.approx(1.0)

    @pytest.mark.parametrize("state", [0, 1])
    def test_binary_step_frequencies(self, soft, state):
        rng = np.random.default_rng(7)
        n = 40_000
        counts = {0: 0, 1: 0, None: 0}
        for _ in range(n):
            counts[step(state, 1, soft, rng).next_state] += 1
        for key, p in zip((0, 1, None), transition_probs(soft, state, 1)):
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts[key] / n - p) < 5 * se + 1e-12

    def test_general_step_moves_average(self, general):
        rng = np.random.default_rng(3)
        for _ in range(200):
            out = step(0.6, 0, general, rng)
            if not out.terminal:
                assert out.next_state == pytest.approx(0.3 + 0.5 * out.reward)

    def test_certain_abandonment_ends_episode(self):
        inst = BanditInstance.binary([0.9, 0.8], 1.0, 1.0, 1.0, 1.0)
        rng = np.random.default_rng(0)
        assert all(step(1, 0, inst, rng).terminal for _ in range(100))

    def test_rejects_bad_state(self, simple, general):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            step(2, 0, simple, rng)
        with pytest.raises(ValueError):
            step(1.5, 0, general, rng)
        with pytest.raises(IndexError):
            step(1, 5, simple, rng)


class TestInitialState:
    def test_fixed_states_draw_nothing(self, simple):
        rng = np.random.default_rng(1)
        before = rng.bit_generator.state
        assert simple.sample_initial_state(rng) == 1
        assert rng.bit_generator.state == before

    def test_mixed_start(self):
        inst = BanditInstance.binary([0.9, 0.8], 1.0, 0.0, 0.0, 0.0, initial_state=0.3)
        rng = np.random.default_rng(2)
        draws = [inst.sample_initial_state(rng) for _ in range(20_000)]
        assert np.mean(draws) == pytest.approx(0.3, abs=0.02)


class TestStreams:
    def test_stream_depends_only_on_seed_and_index(self):
        a = replication_rng(11, 5).random(4)
        replication_rng(11, 4).random(100)
        np.testing.assert_array_equal(a, replication_rng(11, 5).random(4))

    def test_streams_differ(self):
        assert replication_rng(11, 0).random() != replication_rng(11, 1).random()
        assert replication_rng(11, 0).random() != replication_rng(12, 0).random()
