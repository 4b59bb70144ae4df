import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bystander.core import ContractViolation, StepOutcome, StructuralError, TrainingFault
from bystander.neural import Adam
from bystander.rewards import (
    EpisodeEstimator,
    GroundTruthReward,
    RewardModel,
    RewardSource,
    RuleBasedCalculator,
    WeightVector,
    reward_model_update,
    rule_based_terminal_reward,
    weighted_reward,
)


def out(terminal, success=False, failed=False, signals=(0.0, 0.0)):
    return StepOutcome(terminal, success, failed, np.asarray(signals, dtype=float))


def test_weight_vector_invariants():
    with pytest.raises(ValueError):
        WeightVector(np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        WeightVector(np.array([-0.1, 1.0]))
    assert len(WeightVector(np.array([0.7, 0.3]))) == 2


def test_weighted_reward_examples():
    assert weighted_reward(WeightVector(np.array([1.0, 0.0])), np.array([0.5, 9.0])) == 0.5
    assert weighted_reward(WeightVector(np.array([0.5, 0.5, 0.0])), np.array([2.0, 4.0, 8.0])) == 3.0
    assert weighted_reward(WeightVector(np.array([0.7, 0.3])), np.zeros(2)) == 0.0
    with pytest.raises(StructuralError):
        weighted_reward(WeightVector(np.array([1.0])), np.array([1.0, 2.0]))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(min_value=1, max_value=5),
    st.floats(min_value=0.0, max_value=10.0),
    st.floats(min_value=0.0, max_value=10.0),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_weighted_reward_linear_in_signals(n, a, b, seed):
    rng = np.random.default_rng(seed)
    w = WeightVector(rng.uniform(0.1, 1.0, size=n))
    r1, r2 = rng.uniform(0.0, 5.0, size=n), rng.uniform(0.0, 5.0, size=n)
    lhs = weighted_reward(w, a * r1 + b * r2)
    rhs = a * weighted_reward(w, r1) + b * weighted_reward(w, r2)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_terminal_rule_success_is_zero():
    gt = rule_based_terminal_reward(out(True, success=True), r_fail=20.0)
    assert gt.value == 0.0 and gt.source is RewardSource.VICTIM_SUCCESS


def test_terminal_rule_failure_is_r_fail():
    gt = rule_based_terminal_reward(out(True, failed=True), r_fail=20.0)
    assert gt.value == 20.0 and gt.source is RewardSource.VICTIM_FAILURE


def test_terminal_rule_rejects_nonterminal():
    with pytest.raises(ContractViolation):
        rule_based_terminal_reward(out(False), r_fail=20.0)


def test_ground_truth_invariants():
    with pytest.raises(ValueError):
        GroundTruthReward(1.0, RewardSource.VICTIM_SUCCESS)
    with pytest.raises(ValueError):
        GroundTruthReward(0.0, RewardSource.VICTIM_FAILURE)


def test_calculator_modes():
    w = WeightVector(np.array([0.7, 0.3]))
    oracle = RuleBasedCalculator(w, 20.0, oracle_access=True)
    deployed = RuleBasedCalculator(w, 20.0)
    signals = np.array([0.0, 1.0 / 60.0])
    assert oracle.immediate_reward(signals) == pytest.approx(0.3 / 60.0)
    assert deployed.ground_truth_immediate() == 0.0
    with pytest.raises(ContractViolation):
        deployed.immediate_reward(signals)


def test_zero_model_estimates_zero():
    model = RewardModel(4, 6, np.random.default_rng(0))
    for p in model.params():
        p.values[:] = 0.0
    state = model.initial_state()
    y, state = model.estimate_step(np.ones(4), state)
    assert y == 0.0


def test_estimate_layout_mismatch():
    model = RewardModel(4, 6, np.random.default_rng(0))
    with pytest.raises(StructuralError):
        model.estimate_step(np.ones(5), model.initial_state())


def test_episode_replay_matches_streaming_sum():
    rng = np.random.default_rng(3)
    model = RewardModel(5, 8, rng)
    episode = rng.normal(size=(10, 5))
    est = EpisodeEstimator(model, clip=100.0)
    streamed = sum(est.step(row) for row in episode)
    replayed = model.episode_sums([episode])[0]
    assert streamed == pytest.approx(replayed, abs=1e-12)
    # deterministic replay
    assert model.episode_sums([episode])[0] == replayed


def test_episode_isolation_state_reset():
    rng = np.random.default_rng(4)
    model = RewardModel(3, 6, rng)
    ep = rng.normal(size=(6, 3))
    first = model.episode_sums([ep])[0]
    model.episode_sums([rng.normal(size=(9, 3))])  # unrelated episode between
    assert model.episode_sums([ep])[0] == first  # no state leaks across episodes


def test_update_loss_zero_at_fixed_point():
    rng = np.random.default_rng(5)
    model = RewardModel(3, 6, rng)
    episodes = [rng.normal(size=(4, 3)) for _ in range(3)]
    gts = [float(model.episode_sums([ep])[0]) for ep in episodes]
    opt = Adam(model.params(), learning_rate=0.0)
    loss = reward_model_update(model, episodes, gts, opt)
    assert loss == pytest.approx(0.0, abs=1e-24)


def test_update_single_step_episode_hand_computed():
    # one 1-step episode: loss = (gt - y)^2 with y the cell's scalar head
    rng = np.random.default_rng(6)
    model = RewardModel(2, 4, rng)
    ep = rng.normal(size=(1, 2))
    y0 = model.episode_sums([ep])[0]
    gt = 3.0
    opt = Adam(model.params(), learning_rate=0.0)
    loss = reward_model_update(model, [ep], [gt], opt)
    assert loss == pytest.approx((gt - y0) ** 2, rel=1e-10)


def test_update_rejects_misaligned_batch():
    model = RewardModel(2, 4, np.random.default_rng(0))
    with pytest.raises(StructuralError):
        reward_model_update(model, [np.zeros((2, 2))], [1.0, 2.0], Adam(model.params()))
    with pytest.raises(StructuralError):
        reward_model_update(model, [], [], Adam(model.params()))


def test_loss_nonnegative_and_decreases_on_synthetic_corpus():
    rng = np.random.default_rng(7)
    model = RewardModel(3, 16, rng)
    w_true = np.array([1.0, -2.0, 0.5])
    episodes = [rng.uniform(-1, 1, size=(8, 3)) for _ in range(64)]
    gts = [float((ep @ w_true).sum()) for ep in episodes]
    opt = Adam(model.params(), learning_rate=3e-3)
    first = reward_model_update(model, episodes, gts, opt)
    losses = [reward_model_update(model, episodes, gts, opt) for _ in range(150)]
    assert first >= 0.0 and all(l >= 0.0 for l in losses)
    assert losses[-1] < 0.25 * first


def test_estimator_clipping():
    rng = np.random.default_rng(8)
    model = RewardModel(2, 4, rng)
    model.cell.b_out.values[:] = 50.0  # force a huge raw estimate
    est = EpisodeEstimator(model, clip=5.0)
    assert est.step(np.zeros(2)) == 5.0
    assert est.estimates[0] > 5.0  # raw value recorded unclipped
