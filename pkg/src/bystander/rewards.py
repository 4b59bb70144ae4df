"""Bystander reward machinery: failure-path weighting, the terminal
rule-based calculator, and the recurrent reward estimator that spreads an
episode-end ground truth over steps without ever seeing global state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import ContractViolation, StepOutcome, StructuralError, TrainingFault
from .neural import Adam, LSTMCell, RecurrentState


@dataclass(frozen=True)
class WeightVector:
    """Manual importances for the failure paths; non-negative with at least
    one strictly positive entry."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise StructuralError("weights must be a flat vector")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be >= 0 with at least one > 0")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


def weighted_reward(w: WeightVector, signals: np.ndarray) -> float:
    """Dot product of the weight vector with a failure-signal vector."""
    signals = np.asarray(signals, dtype=float)
    if signals.shape != w.weights.shape:
        raise StructuralError(
            f"signal length {signals.shape} != weight length {w.weights.shape}"
        )
    return float(w.weights @ signals)


class RewardSource(Enum):
    VICTIM_SUCCESS = "victim_success"
    VICTIM_FAILURE = "victim_failure"


@dataclass(frozen=True)
class GroundTruthReward:
    value: float
    source: RewardSource

    def __post_init__(self) -> None:
        if self.source is RewardSource.VICTIM_SUCCESS and self.value != 0.0:
            raise ValueError("success ground truth must be 0")
        if self.source is RewardSource.VICTIM_FAILURE and self.value <= 0.0:
            raise ValueError("failure ground truth must be > 0")


def rule_based_terminal_reward(outcome: StepOutcome, r_fail: float) -> GroundTruthReward:
    """Episode-end reward: 0 when the victims completed their task, r_fail
    when they did not. Only defined on terminal outcomes."""
    if not outcome.terminal:
        raise ContractViolation("terminal reward requested on a non-terminal step")
    if outcome.victim_success:
        return GroundTruthReward(0.0, RewardSource.VICTIM_SUCCESS)
    return GroundTruthReward(float(r_fail), RewardSource.VICTIM_FAILURE)


class RuleBasedCalculator:
    """Rule-based per-step reward calculator with two modes.

    Ground-truth mode emits zero immediate reward everywhere (the terminal
    rule reward is the only signal). Baseline mode scores every step as the
    weighted failure-signal dot product; it needs the simulator's failure
    signals, so it is available only when constructed with oracle access.
    """

    def __init__(self, weights: WeightVector, r_fail: float, oracle_access: bool = False):
        self.weights = weights
        self.r_fail = float(r_fail)
        self.oracle_access = oracle_access

    def terminal_reward(self, outcome: StepOutcome) -> GroundTruthReward:
        return rule_based_terminal_reward(outcome, self.r_fail)

    def immediate_reward(self, signals: np.ndarray) -> float:
        if not self.oracle_access:
            raise ContractViolation(
                "immediate rule-based rewards need global-state signals; "
                "construct with oracle_access=True (baseline/evaluation only)"
            )
        return weighted_reward(self.weights, signals)

    def ground_truth_immediate(self) -> float:
        return 0.0


class RewardModel:
    """Recurrent estimator of the bystander party's per-step reward.

    Input is the concatenation of all bystander observations in fixed agent
    order; the scalar outputs over an episode are trained so their sum
    matches the terminal rule-based ground truth. Recurrent state lives for
    exactly one episode.
    """

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden = hidden
        self.cell = LSTMCell("reward_model", input_dim, hidden, rng)

    def params(self):
        return self.cell.params()

    def initial_state(self) -> RecurrentState:
        return self.cell.initial_state()

    def estimate_step(
        self, concat_obs: np.ndarray, state: RecurrentState
    ) -> tuple[float, RecurrentState]:
        concat_obs = np.asarray(concat_obs, dtype=float)
        if concat_obs.shape != (self.input_dim,):
            raise StructuralError(
                f"observation layout {concat_obs.shape} != ({self.input_dim},)"
            )
        y, nxt, _ = self.cell.step(concat_obs, state)
        return float(y), nxt

    def episode_sums(self, episodes: Sequence[np.ndarray]) -> np.ndarray:
        """Sum of per-step estimates for each (T_i, input_dim) episode."""
        sums = np.zeros(len(episodes))
        for k, ep in enumerate(episodes):
            state = self.initial_state()
            total = 0.0
            for row in np.asarray(ep, dtype=float):
                y, state = self.estimate_step(row, state)
                total += y
            sums[k] = total
        return sums


def reward_model_update(
    model: RewardModel,
    episodes: Sequence[np.ndarray],
    ground_truths: Sequence[float],
    optimizer: Adam,
) -> float:
    """One optimizer step on the mean squared episode-sum error.

    Each episode is a (T, input_dim) array of concatenated bystander
    observations; its target is the scalar terminal ground truth. Gradients
    flow through the full recurrent unroll of every episode.
    """
    if len(episodes) != len(ground_truths):
        raise StructuralError("episodes and ground truths must align")
    if not episodes:
        raise StructuralError("need at least one episode")
    n = len(episodes)
    loss = 0.0
    optimizer.zero_grad()
    for ep, gt in zip(episodes, ground_truths):
        ep = np.asarray(ep, dtype=float)
        if ep.ndim != 2 or ep.shape[1] != model.input_dim:
            raise StructuralError(f"episode layout {ep.shape} incompatible")
        state = model.cell.initial_state(batch=1)
        caches = []
        total = 0.0
        for t in range(ep.shape[0]):
            y, state, cache = model.cell.step(ep[t : t + 1], state)
            caches.append(cache)
            total += float(y[0])
        err = total - float(gt)
        loss += err * err / n
        # d(loss)/d(y_t) is the same for every step of this episode
        dy = np.array([2.0 * err / n])
        dh = dc = None
        for cache in reversed(caches):
            _, dh, dc = model.cell.backward_step(cache, dy, dh, dc)
    if not np.isfinite(loss):
        raise TrainingFault("reward model loss is not finite")
    optimizer.step()
    return float(loss)


class EpisodeEstimator:
    """Streams one episode through the reward model during a rollout,
    recording inputs and estimates for the end-of-episode model update."""

    def __init__(self, model: RewardModel, clip: float):
        self.model = model
        self.clip = float(clip)
        self.state = model.initial_state()
        self.inputs: list[np.ndarray] = []
        self.estimates: list[float] = []

    def step(self, concat_obs: np.ndarray) -> float:
        y, self.state = self.model.estimate_step(concat_obs, self.state)
        self.inputs.append(np.asarray(concat_obs, dtype=float).copy())
        self.estimates.append(y)
        return float(np.clip(y, -self.clip, self.clip))

    def episode_inputs(self) -> np.ndarray:
        return np.stack(self.inputs) if self.inputs else np.zeros((0, self.model.input_dim))
