"""Two-phase pipeline: train victim agents to competence against scripted
opponents (bystanders acting randomly), freeze them, then train the
bystander party to break them.

The bystander learner only ever receives FrozenPolicy callables for the
victims: there is no code path handing it victim parameters, so its learning
signal can depend on victims only through the transitions they induce.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import ConfigError, Party, TrainingFault, derive_seed
from .envs import make_env
from .envs.base import Environment
from .neural import Adam, MLP, ParamTensor
from .qmix import (
    MASK_SENTINEL,
    AgentQNet,
    MixingNet,
    ReplayBuffer,
    TargetNetworkPair,
    learner_step,
)
from .rewards import (
    EpisodeEstimator,
    RewardModel,
    RuleBasedCalculator,
    WeightVector,
    reward_model_update,
    rule_based_terminal_reward,
)
from .rollout import Controller, EpsilonGreedyController, RandomController, run_episode


class RewardMode(Enum):
    TRADITIONAL = "traditional"
    RULE_IMMEDIATE = "rule_immediate"
    ESTIMATION = "estimation"


@dataclass
class TrainingConfig:
    episodes: int = 4000
    batch_size: int = 32
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_frac: float = 0.2
    buffer_capacity: int = 400
    target_sync_interval: int = 200
    learning_rate: float = 1e-3
    hidden_size: int = 64
    mix_embed: int = 16
    stack_frames: int = 1
    reward_mode: RewardMode = RewardMode.ESTIMATION
    victim_reward_access: bool = False
    r_fail: float = 20.0
    estimate_clip: float = 5.0
    warmup_episodes: int = 50
    model_hidden: int = 64
    model_learning_rate: float = 1e-3
    model_batch: int = 16
    eval_interval: int = 500
    eval_episodes: int = 200
    competence_floor: float = 0.8
    mixer_conditioning: str = "party_obs"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in (
            "episodes", "batch_size", "buffer_capacity", "target_sync_interval",
            "hidden_size", "mix_embed", "eval_interval", "eval_episodes",
            "model_hidden", "model_batch", "warmup_episodes",
        ):
            if getattr(self, name) < (0 if name == "warmup_episodes" else 1):
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if self.stack_frames not in (1, 2):
            raise ConfigError("stack_frames must be 1 or 2")
        if self.mixer_conditioning not in ("party_obs", "global_state"):
            raise ConfigError("mixer_conditioning must be party_obs or global_state")
        if self.reward_mode is RewardMode.TRADITIONAL and not self.victim_reward_access:
            raise ConfigError(
                "traditional reward mode negates the victims' task reward; "
                "set victim_reward_access=True to acknowledge the oracle flag"
            )
        if self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size cannot exceed buffer_capacity")

    def epsilon_at(self, episode: int) -> float:
        decay_len = max(int(self.episodes * self.epsilon_decay_frac), 1)
        frac = min(episode / decay_len, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class TrainingFailed(RuntimeError):
    """Raised when a trained party misses its competence floor."""

    def __init__(self, message: str, win_rate: float):
        super().__init__(message)
        self.win_rate = win_rate


class FrozenPolicy:
    """Immutable greedy snapshot of one party's Q networks.

    Parameters are copied and marked read-only; acting is a pure function of
    the (stacked) observations, so replays are bit-identical forever.
    """

    def __init__(self, party: Party, nets: Sequence[AgentQNet], stack_frames: int = 1):
        self.party = party
        self.stack_frames = stack_frames
        self.obs_dim = nets[0].obs_dim if nets else 0
        self.n_actions = nets[0].n_actions if nets else 0
        self._params: list[list[ParamTensor]] = []
        self._dims = []
        for net in nets:
            copies = [p.copy() for p in net.params()]
            for p in copies:
                p.values.setflags(write=False)
            self._params.append(copies)
            self._dims.append(net.mlp.dims)

    @property
    def n_agents(self) -> int:
        return len(self._params)

    def _forward(self, i: int, obs: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(obs)
        params = self._params[i]
        n_layers = len(params) // 2
        for layer in range(n_layers):
            w, b = params[2 * layer], params[2 * layer + 1]
            x = x @ w.array.T + b.array
            if layer < n_layers - 1:
                x = np.maximum(x, 0.0)
        return x

    def act(self, obs_mat: np.ndarray, mask_mat: np.ndarray) -> np.ndarray:
        actions = np.zeros(self.n_agents, dtype=int)
        for i in range(self.n_agents):
            q = self._forward(i, obs_mat[i])[0]
            q = np.where(mask_mat[i], q, MASK_SENTINEL)
            actions[i] = int(np.argmax(q))
        return actions

    def checksum(self) -> str:
        h = hashlib.sha256()
        for copies in self._params:
            for p in copies:
                h.update(p.values.tobytes())
        return h.hexdigest()

    def as_controller(self) -> "FrozenController":
        return FrozenController(self)

    def named_params(self) -> dict[str, ParamTensor]:
        return {p.name: p for copies in self._params for p in copies}


class FrozenController(Controller):
    def __init__(self, policy: FrozenPolicy):
        self.policy = policy
        self.stack_frames = policy.stack_frames

    def act(self, obs_mat, mask_mat):
        return self.policy.act(obs_mat, mask_mat)


# --- reward providers ---------------------------------------------------------


class VictimTaskProvider:
    """Native task reward of the victim party (phase 1 and defense retrain)."""

    def begin_episode(self) -> None:
        pass

    def step(self, outcome, signals, native_reward, adv_obs_concat) -> float:
        return native_reward

    def end_episode(self, outcome, estimator_inputs) -> None:
        pass


class TraditionalProvider:
    """Baseline bystander reward: the negated victim task reward. Reading the
    victims' reward channel is an oracle-only evaluation device."""

    def __init__(self, victim_reward_access: bool):
        if not victim_reward_access:
            raise ConfigError("traditional reward requires victim_reward_access")

    def begin_episode(self) -> None:
        pass

    def step(self, outcome, signals, native_reward, adv_obs_concat) -> float:
        return -native_reward

    def end_episode(self, outcome, estimator_inputs) -> None:
        pass


class RuleImmediateProvider:
    """Rule-based baseline: weighted failure signals each step plus the
    terminal rule reward. Needs simulator signals, hence oracle access."""

    def __init__(self, calculator: RuleBasedCalculator):
        self.calc = calculator

    def begin_episode(self) -> None:
        pass

    def step(self, outcome, signals, native_reward, adv_obs_concat) -> float:
        r = self.calc.immediate_reward(signals)
        if outcome.terminal:
            r += self.calc.terminal_reward(outcome).value
        return r

    def end_episode(self, outcome, estimator_inputs) -> None:
        pass


class EstimationProvider:
    """Recurrent estimator reward: per-step clipped estimates are the reward
    once the model has warmed up; before that, only the terminal rule reward
    is passed through. The model trains after every episode on a minibatch of
    recent episodes against their terminal ground truths."""

    def __init__(
        self,
        model: RewardModel,
        calculator: RuleBasedCalculator,
        optimizer: Adam,
        clip: float,
        warmup_episodes: int,
        model_batch: int,
        rng: np.random.Generator,
    ):
        self.model = model
        self.calc = calculator
        self.optimizer = optimizer
        self.clip = clip
        self.warmup_episodes = warmup_episodes
        self.model_batch = model_batch
        self.rng = rng
        self.episode_count = 0
        self.recent: list[tuple[np.ndarray, float]] = []
        self.last_model_loss = float("nan")
        self._estimator: EpisodeEstimator | None = None

    def begin_episode(self) -> None:
        self._estimator = EpisodeEstimator(self.model, self.clip)

    def step(self, outcome, signals, native_reward, adv_obs_concat) -> float:
        if adv_obs_concat is None:
            raise ConfigError("estimation reward needs bystander observations")
        estimate = self._estimator.step(adv_obs_concat)
        if self.episode_count < self.warmup_episodes:
            return self.calc.terminal_reward(outcome).value if outcome.terminal else 0.0
        return estimate

    def end_episode(self, outcome, estimator_inputs) -> None:
        gt = self.calc.terminal_reward(outcome).value
        inputs = self._estimator.episode_inputs()
        if len(inputs):
            self.recent.append((inputs, gt))
            if len(self.recent) > 4 * self.model_batch:
                self.recent.pop(0)
            take = min(self.model_batch, len(self.recent))
            idx = self.rng.choice(len(self.recent), size=take, replace=False)
            batch = [self.recent[int(i)] for i in idx]
            self.last_model_loss = reward_model_update(
                self.model, [b[0] for b in batch], [b[1] for b in batch], self.optimizer
            )
        self.episode_count += 1
        self._estimator = None


# --- metrics ------------------------------------------------------------------


class MetricsWriter:
    """Append-only CSV writers for the learner-step log and the eval curve."""

    def __init__(self, out_dir: Path | None, label: str):
        self.rows_steps: list[tuple] = []
        self.rows_curve: list[tuple] = []
        self._paths = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            self._paths = (
                out_dir / f"{label}_learner_steps.csv",
                out_dir / f"{label}_curve.csv",
            )
            for path, header in zip(
                self._paths,
                (
                    ("step", "loss", "epsilon", "buffer_fill", "target_syncs"),
                    ("episode", "win_rate", "mean_episode_reward", "loss", "epsilon"),
                ),
            ):
                with open(path, "w", newline="") as fh:
                    csv.writer(fh).writerow(header)

    def _append(self, idx: int, row: tuple) -> None:
        if self._paths is not None:
            with open(self._paths[idx], "a", newline="") as fh:
                csv.writer(fh).writerow(row)

    def step_row(self, step, loss, epsilon, buffer_fill, syncs) -> None:
        row = (step, f"{loss:.10g}", f"{epsilon:.6g}", buffer_fill, syncs)
        self.rows_steps.append(row)
        self._append(0, row)

    def curve_row(self, episode, win_rate, mean_reward, loss, epsilon) -> None:
        row = (
            episode,
            f"{win_rate:.10g}",
            f"{mean_reward:.10g}",
            f"{loss:.10g}",
            f"{epsilon:.6g}",
        )
        self.rows_curve.append(row)
        self._append(1, row)


# --- generic party trainer ----------------------------------------------------


@dataclass
class PartyTrainingResult:
    policy: FrozenPolicy
    pair: TargetNetworkPair
    metrics: MetricsWriter
    curve: list[tuple[int, float]]
    final_win_rate: float
    reward_model: RewardModel | None = None


def _build_learner(env: Environment, party: Party, cfg: TrainingConfig, seed_stream: str):
    n_agents = len(env.agents(party))
    obs_dim = env.descriptor.obs_dim(party) * cfg.stack_frames
    n_actions = env.descriptor.n_actions(party)
    if cfg.mixer_conditioning == "global_state":
        cond_dim = env.global_dim
    else:
        cond_dim = n_agents * obs_dim
    rng = np.random.default_rng(derive_seed(cfg.seed, f"{seed_stream}.init", 0))
    nets = [
        AgentQNet(f"{party.label}{i}", obs_dim, n_actions, cfg.hidden_size, rng)
        for i in range(n_agents)
    ]
    mixer = MixingNet(f"{party.label}_mixer", n_agents, cond_dim, cfg.mix_embed, rng)
    pair = TargetNetworkPair(nets, mixer, cfg.target_sync_interval, rng)
    optimizer = Adam(pair.online_params(), learning_rate=cfg.learning_rate)
    return pair, optimizer


def evaluate_party(
    env: Environment,
    controllers: Mapping[Party, Controller],
    episodes: int,
    seed: int,
    stream: str = "eval",
) -> float:
    """Greedy-policy victim success rate over seeded episodes."""
    wins = 0
    for k in range(episodes):
        result = run_episode(env, controllers, derive_seed(seed, stream, k))
        wins += int(result.outcome.victim_success)
    return wins / episodes


def train_party(
    env: Environment,
    party: Party,
    cfg: TrainingConfig,
    other_controllers: Mapping[Party, Controller],
    reward_provider,
    out_dir: Path | None = None,
    label: str | None = None,
    frozen_checksums: Mapping[str, str] | None = None,
) -> PartyTrainingResult:
    """Run the value-decomposition training loop for one party.

    other_controllers drive the remaining externally controlled parties and
    are used unchanged during periodic evaluations; frozen_checksums are
    re-verified at every evaluation checkpoint.
    """
    label = label or f"{party.label}_train"
    pair, optimizer = _build_learner(env, party, cfg, label)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    explore_rng = np.random.default_rng(derive_seed(cfg.seed, f"{label}.explore", 0))
    sample_rng = np.random.default_rng(derive_seed(cfg.seed, f"{label}.sample", 0))
    controller = EpsilonGreedyController(pair.nets, explore_rng, cfg.stack_frames)
    controllers = dict(other_controllers)
    controllers[party] = controller
    metrics = MetricsWriter(out_dir, label)
    curve: list[tuple[int, float]] = []
    loss = float("nan")
    returns_since_eval: list[float] = []
    learner_steps = 0

    def checkpoint_policies() -> None:
        for name, expect in (frozen_checksums or {}).items():
            frozen = controllers_by_name.get(name)
            if frozen is not None and frozen.policy.checksum() != expect:
                raise TrainingFault(f"frozen policy {name} changed during training")

    controllers_by_name = {
        p.label: c for p, c in controllers.items() if isinstance(c, FrozenController)
    }

    for episode in range(cfg.episodes):
        controller.epsilon = cfg.epsilon_at(episode)
        seed = derive_seed(cfg.seed, f"{label}.episode", episode)
        result = run_episode(
            env,
            controllers,
            seed,
            learning_party=party,
            reward_provider=reward_provider,
            conditioning=cfg.mixer_conditioning,
        )
        buffer.add(result.prepared)
        returns_since_eval.append(result.party_return)
        if len(buffer) >= cfg.batch_size:
            loss = learner_step(buffer, pair, optimizer, cfg.batch_size, cfg.gamma, sample_rng)
            learner_steps += 1
            metrics.step_row(learner_steps, loss, controller.epsilon, len(buffer), pair.syncs)
        if (episode + 1) % cfg.eval_interval == 0:
            checkpoint_policies()
            greedy = EpsilonGreedyController(pair.nets, explore_rng, cfg.stack_frames)
            eval_controllers = dict(controllers)
            eval_controllers[party] = greedy
            rate = evaluate_party(
                env,
                eval_controllers,
                cfg.eval_episodes,
                derive_seed(cfg.seed, f"{label}.eval", episode),
            )
            mean_ret = float(np.mean(returns_since_eval)) if returns_since_eval else 0.0
            metrics.curve_row(episode + 1, rate, mean_ret, loss, controller.epsilon)
            curve.append((episode + 1, rate))
            returns_since_eval = []

    policy = FrozenPolicy(party, pair.nets, cfg.stack_frames)
    final_rate = curve[-1][1] if curve else float("nan")
    reward_model = getattr(reward_provider, "model", None)
    return PartyTrainingResult(policy, pair, metrics, curve, final_rate, reward_model)


# --- phase wrappers -----------------------------------------------------------


@dataclass
class VictimTrainingResult:
    policy: FrozenPolicy
    no_attack_win_rate: float
    random_neutral_win_rate: float
    curve: list[tuple[int, float]]
    metrics: MetricsWriter


def _weights_for(env: Environment) -> WeightVector:
    return WeightVector(np.asarray(env.descriptor.default_weights))


def train_victims(
    env_config, cfg: TrainingConfig, out_dir: Path | None = None
) -> VictimTrainingResult:
    """Phase 1: victims learn their native task while any bystanders present
    act uniformly at random; returns frozen greedy policies."""
    env = make_env(env_config)
    other: dict[Party, Controller] = {}
    if env.agents(Party.ADVERSARY):
        other[Party.ADVERSARY] = RandomController(
            np.random.default_rng(derive_seed(cfg.seed, "victim_train.random_adv", 0))
        )
    result = train_party(
        env, Party.VICTIM, cfg, other, VictimTaskProvider(), out_dir, "victim_train"
    )
    policy = result.policy
    no_attack = evaluate_win_rate(env_config, policy, None, cfg.eval_episodes, cfg.seed)[0]
    random_rate = evaluate_win_rate(env_config, policy, "random", cfg.eval_episodes, cfg.seed)[0]
    if no_attack < cfg.competence_floor:
        raise TrainingFailed(
            f"victims reached win rate {no_attack:.3f} < floor {cfg.competence_floor}",
            no_attack,
        )
    return VictimTrainingResult(policy, no_attack, random_rate, result.curve, result.metrics)


@dataclass
class AdversaryTrainingResult:
    policy: FrozenPolicy
    reward_model: RewardModel | None
    under_attack_win_rate: float
    curve: list[tuple[int, float]]
    metrics: MetricsWriter


def _make_provider(env: Environment, cfg: TrainingConfig, label: str):
    weights = _weights_for(env)
    if cfg.reward_mode is RewardMode.TRADITIONAL:
        return TraditionalProvider(cfg.victim_reward_access)
    if cfg.reward_mode is RewardMode.RULE_IMMEDIATE:
        return RuleImmediateProvider(RuleBasedCalculator(weights, cfg.r_fail, oracle_access=True))
    n_adv = len(env.agents(Party.ADVERSARY))
    input_dim = env.descriptor.obs_dim(Party.ADVERSARY) * n_adv
    model_rng = np.random.default_rng(derive_seed(cfg.seed, f"{label}.model", 0))
    model = RewardModel(input_dim, cfg.model_hidden, model_rng)
    opt = Adam(model.params(), learning_rate=cfg.model_learning_rate)
    return EstimationProvider(
        model,
        RuleBasedCalculator(weights, cfg.r_fail),
        opt,
        cfg.estimate_clip,
        cfg.warmup_episodes,
        cfg.model_batch,
        np.random.default_rng(derive_seed(cfg.seed, f"{label}.model_batch", 0)),
    )


def train_adversaries(
    env_config,
    frozen_victims: FrozenPolicy,
    cfg: TrainingConfig,
    out_dir: Path | None = None,
) -> AdversaryTrainingResult:
    """Phase 2: bystanders learn against frozen victims under the configured
    reward mode."""
    if not isinstance(frozen_victims, FrozenPolicy):
        raise ConfigError("adversary training accepts only frozen victim policies")
    env = make_env(env_config)
    if not env.agents(Party.ADVERSARY):
        raise ConfigError("environment has no bystander agents to train")
    label = "adversary_train"
    provider = _make_provider(env, cfg, label)
    other = {Party.VICTIM: frozen_victims.as_controller()}
    result = train_party(
        env,
        Party.ADVERSARY,
        cfg,
        other,
        provider,
        out_dir,
        label,
        frozen_checksums={Party.VICTIM.label: frozen_victims.checksum()},
    )
    policy = result.policy
    under = evaluate_win_rate(env_config, frozen_victims, policy, cfg.eval_episodes, cfg.seed)[0]
    return AdversaryTrainingResult(policy, result.reward_model, under, result.curve, result.metrics)


@dataclass
class DefenseResult:
    retrained: FrozenPolicy
    before_under_attack: float | None
    before_no_attack: float | None
    after_under_attack: float
    after_no_attack: float
    curve: list[tuple[int, float]]


def retrain_victims_defense(
    env_config,
    frozen_adversaries: FrozenPolicy,
    cfg: TrainingConfig,
    original_victims: FrozenPolicy | None = None,
    out_dir: Path | None = None,
) -> DefenseResult:
    """Simple defense: retrain victims from scratch against the fixed attack
    and report win rates with and without the attack, before and after."""
    if not isinstance(frozen_adversaries, FrozenPolicy):
        raise ConfigError("defense retraining accepts only frozen bystander policies")
    env = make_env(env_config)
    adv_checksum = frozen_adversaries.checksum()
    other = {Party.ADVERSARY: frozen_adversaries.as_controller()}
    result = train_party(
        env,
        Party.VICTIM,
        cfg,
        other,
        VictimTaskProvider(),
        out_dir,
        "defense_retrain",
        frozen_checksums={Party.ADVERSARY.label: adv_checksum},
    )
    if frozen_adversaries.checksum() != adv_checksum:
        raise TrainingFault("bystander policy changed during defense retraining")
    retrained = result.policy
    after_under = evaluate_win_rate(
        env_config, retrained, frozen_adversaries, cfg.eval_episodes, cfg.seed
    )[0]
    after_no = evaluate_win_rate(env_config, retrained, None, cfg.eval_episodes, cfg.seed)[0]
    if retrained.checksum() != result.policy.checksum():
        raise TrainingFault("retrained policy changed after freezing")
    if after_no < cfg.competence_floor:
        raise TrainingFailed(
            f"retrained victims reached win rate {after_no:.3f} < floor {cfg.competence_floor}",
            after_no,
        )
    before_under = before_no = None
    if original_victims is not None:
        before_under = evaluate_win_rate(
            env_config, original_victims, frozen_adversaries, cfg.eval_episodes, cfg.seed
        )[0]
        before_no = evaluate_win_rate(env_config, original_victims, None, cfg.eval_episodes, cfg.seed)[0]
    return DefenseResult(retrained, before_under, before_no, after_under, after_no, result.curve)


def evaluate_win_rate(
    env_config,
    victim_policy: FrozenPolicy,
    adversary_policy,
    episodes: int,
    seed: int,
) -> tuple[float, float]:
    """Greedy victim success rate plus a Wilson 95% half-width.

    adversary_policy may be a FrozenPolicy, the string "random" (bystanders
    present but acting uniformly), or None (bystanders absent).
    """
    if episodes < 1:
        raise ConfigError("evaluation needs at least one episode")
    if adversary_policy is None:
        env_config = replace(env_config, adversary_count=0)
    env = make_env(env_config)
    controllers: dict[Party, Controller] = {Party.VICTIM: victim_policy.as_controller()}
    if adversary_policy is None:
        pass
    elif adversary_policy == "random":
        controllers[Party.ADVERSARY] = RandomController(
            np.random.default_rng(derive_seed(seed, "eval.random_adv", 0))
        )
    elif isinstance(adversary_policy, FrozenPolicy):
        controllers[Party.ADVERSARY] = adversary_policy.as_controller()
    else:
        raise ConfigError(f"unsupported adversary policy {adversary_policy!r}")
    wins = 0
    for k in range(episodes):
        result = run_episode(env, controllers, derive_seed(seed, "eval.episode", k))
        wins += int(result.outcome.victim_success)
    rate = wins / episodes
    return rate, wilson_half_width(rate, episodes)


def wilson_half_width(p_hat: float, n: int, z: float = 1.959963984540054) -> float:
    """Half-width of the Wilson 95% score interval."""
    denom = 1.0 + z * z / n
    return (z * np.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n))) / denom


# --- policy persistence ---------------------------------------------------


def save_policy(path, policy: FrozenPolicy) -> None:
    """Write a frozen policy as a versioned npz; round-trips bit-exactly."""
    import json

    arrays: dict[str, np.ndarray] = {}
    meta = {
        "version": 1,
        "party": policy.party.label,
        "stack_frames": policy.stack_frames,
        "dims": [list(d) for d in policy._dims],
        "names": [[p.name for p in copies] for copies in policy._params],
    }
    for i, copies in enumerate(policy._params):
        for p in copies:
            arrays[f"a{i}/{p.name}"] = p.values
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_policy(path) -> FrozenPolicy:
    import json

    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["version"] != 1:
            raise ConfigError(f"unsupported policy version {meta['version']}")
        policy = FrozenPolicy.__new__(FrozenPolicy)
        policy.party = Party.from_label(meta["party"])
        policy.stack_frames = int(meta["stack_frames"])
        policy._dims = [tuple(d) for d in meta["dims"]]
        policy._params = []
        for i, names in enumerate(meta["names"]):
            copies = []
            for name in names:
                values = data[f"a{i}/{name}"].copy()
                shape = _shape_for(name, policy._dims[i])
                p = ParamTensor(name, shape, values, np.zeros_like(values))
                p.values.setflags(write=False)
                copies.append(p)
            policy._params.append(copies)
        policy.obs_dim = policy._dims[0][0] if policy._dims else 0
        policy.n_actions = policy._dims[0][-1] if policy._dims else 0
    return policy


def _shape_for(name: str, dims: tuple[int, ...]) -> tuple[int, ...]:
    layer = int(name.rsplit(".l", 1)[1].split(".")[0])
    if name.endswith(".w"):
        return (dims[layer + 1], dims[layer])
    return (dims[layer + 1],)
