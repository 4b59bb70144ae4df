"""Lane-driving environment: victim vehicles must exit the far end of a
multi-lane corridor among scripted constant-speed traffic and neutral
bystander vehicles.

Resolution order per step:
  1. maneuvers — speed changes apply immediately; a lane change needs the
     target cell empty at tick start, conflicts go to the lowest AgentId and
     losers are canceled (canceled victim maneuvers count as rule
     violations).
  2. forward movement — per lane, front vehicle first; a vehicle sweeps one
     cell at a time up to its speed. A victim entering an occupied cell
     collides (episode failure); scripted traffic collides only with victims
     and stops behind anything else; bystanders always stop short (they can
     never initiate contact). Reaching the final column exits the road.
  3. outcome — any victim collision fails the episode; all victims exited is
     success; otherwise the horizon ends the episode as a failure.

Bystanders attack only through traffic: slowing down in front of victims,
walling lanes, forcing stops.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from ..core import (
    AgentId,
    ConfigError,
    ContractViolation,
    LifecycleError,
    Party,
    StepOutcome,
)
from .base import EnvDescriptor, Environment, FailurePathDescriptor, StepEvents

ACTIONS = ("keep", "faster", "slower", "lane_up", "lane_down")


@dataclass(frozen=True)
class CorridorConfig:
    lanes: int = 2
    length: int = 10
    victim_count: int = 1
    adversary_count: int = 2
    other_vehicle_count: int = 2
    horizon: int = 40
    speed_levels: int = 3
    sensing_cols: int = 2
    adversary_slots: int = 3
    failure_weights: tuple[float, ...] = (0.5, 0.3, 0.2)

    def __post_init__(self) -> None:
        if self.lanes < 1 or self.length < 6:
            raise ConfigError("corridor needs lanes >= 1 and length >= 6")
        if self.victim_count < 1:
            raise ConfigError("victim_count must be >= 1")
        if self.victim_count > self.lanes:
            raise ConfigError("victims all start at column 0: victim_count <= lanes")
        if self.adversary_count < 0 or self.other_vehicle_count < 0:
            raise ConfigError("vehicle counts must be >= 0")
        if self.adversary_count > self.adversary_slots:
            raise ConfigError("adversary_count exceeds adversary_slots")
        total = self.victim_count + self.adversary_count + self.other_vehicle_count
        if total > self.lanes * self.length:
            raise ConfigError("total vehicles exceed road capacity")
        if self.horizon < 1 or self.speed_levels < 2:
            raise ConfigError("horizon >= 1 and speed_levels >= 2 required")
        if self.adversary_count + self.other_vehicle_count > self.lanes * (self.length - 4):
            raise ConfigError("mid-road spawn zone cannot fit adversaries plus traffic")
        if len(self.failure_weights) != 3:
            raise ConfigError("corridor has exactly 3 failure paths")

    @property
    def goal_col(self) -> int:
        return self.length - 1


@dataclass(frozen=True)
class Vehicle:
    agent: AgentId
    lane: int
    col: int
    speed: int
    crashed: bool = False
    exited: bool = False

    @property
    def on_road(self) -> bool:
        return not self.crashed and not self.exited


@dataclass(frozen=True)
class CorridorState:
    vehicles: tuple[Vehicle, ...]
    step_count: int
    seed: int

    def vehicle(self, agent: AgentId) -> Vehicle:
        for v in self.vehicles:
            if v.agent == agent:
                return v
        raise KeyError(f"unknown agent {agent.key}")

    def party(self, party: Party) -> list[Vehicle]:
        return [v for v in self.vehicles if v.agent.party is party]


class CorridorEnv(Environment):
    FAILURE_PATHS = (
        FailurePathDescriptor(0, "collision", "1 when a victim vehicle collided this step"),
        FailurePathDescriptor(1, "timeout", "1/horizon per step, scaled by the fraction of victims not yet at the goal"),
        FailurePathDescriptor(2, "rule_violation", "1 per victim stopped on the road or forced to abort a maneuver this step"),
    )

    def __init__(self, config: CorridorConfig):
        self.config = config
        c = config
        self._agents = {
            Party.VICTIM: tuple(AgentId(Party.VICTIM, i) for i in range(c.victim_count)),
            Party.ADVERSARY: tuple(AgentId(Party.ADVERSARY, i) for i in range(c.adversary_count)),
            Party.THIRD: tuple(AgentId(Party.THIRD, i) for i in range(c.other_vehicle_count)),
        }
        self._descriptor = EnvDescriptor(
            name="corridor",
            horizon=c.horizon,
            party_counts={p: len(a) for p, a in self._agents.items()},
            action_labels={p: ACTIONS for p in Party},
            obs_labels={p: self._build_obs_labels(p) for p in Party},
            failure_paths=self.FAILURE_PATHS,
            default_weights=c.failure_weights,
        )

    def _slot_parties(self, party: Party) -> list[tuple[Party, int, bool]]:
        c = self.config
        return [
            (Party.VICTIM, c.victim_count - (1 if party is Party.VICTIM else 0), party is Party.VICTIM),
            (Party.THIRD, c.other_vehicle_count - (1 if party is Party.THIRD else 0), party is Party.THIRD),
            (
                Party.ADVERSARY,
                c.adversary_slots - (1 if party is Party.ADVERSARY else 0),
                party is Party.ADVERSARY,
            ),
        ]

    def _build_obs_labels(self, party: Party) -> tuple[str, ...]:
        labels = ["self_lane", "self_col", "self_speed", "self_on_road"]
        for slot_party, count, _ in self._slot_parties(party):
            for k in range(count):
                base = f"{slot_party.label}_slot{k}"
                labels += [f"{base}_present", f"{base}_dlane", f"{base}_dcol", f"{base}_speed"]
        return tuple(labels)

    @property
    def descriptor(self) -> EnvDescriptor:
        return self._descriptor

    def agents(self, party: Party) -> tuple[AgentId, ...]:
        return self._agents[party]

    def reset(self, seed: int) -> CorridorState:
        c = self.config
        rng = np.random.default_rng(seed)
        vehicles = []
        lanes = rng.permutation(c.lanes)
        for i, agent in enumerate(self._agents[Party.VICTIM]):
            vehicles.append(Vehicle(agent, int(lanes[i]), 0, 1))
        mid = [
            (lane, col)
            for lane in range(c.lanes)
            for col in range(2, c.length - 2)
        ]
        n_mid = c.adversary_count + c.other_vehicle_count
        if n_mid:
            picks = rng.choice(len(mid), size=n_mid, replace=False)
            order = list(self._agents[Party.ADVERSARY]) + list(self._agents[Party.THIRD])
            for agent, pick in zip(order, picks):
                lane, col = mid[int(pick)]
                vehicles.append(Vehicle(agent, lane, col, 1))
        vehicles.sort(key=lambda v: v.agent)
        return CorridorState(vehicles=tuple(vehicles), step_count=0, seed=seed)

    def positions(self, state: CorridorState) -> dict[AgentId, tuple]:
        return {v.agent: (v.lane, v.col) for v in state.vehicles if v.on_road}

    def global_features(self, state: CorridorState) -> np.ndarray:
        c = self.config
        feats = [state.step_count / c.horizon]
        for v in state.vehicles:
            feats += [
                v.lane / max(c.lanes - 1, 1),
                v.col / c.goal_col,
                v.speed / (c.speed_levels - 1),
                1.0 if v.on_road else 0.0,
            ]
        return np.array(feats)

    def observe(self, state: CorridorState, agent: AgentId) -> np.ndarray:
        c = self.config
        me = state.vehicle(agent)
        obs = np.zeros(len(self._descriptor.obs_labels[agent.party]))
        if not me.on_road:
            return obs
        obs[0] = me.lane / max(c.lanes - 1, 1)
        obs[1] = me.col / c.goal_col
        obs[2] = me.speed / (c.speed_levels - 1)
        obs[3] = 1.0
        i = 4
        for slot_party, count, skip_self in self._slot_parties(agent.party):
            others = [a for a in self._agents[slot_party] if not (skip_self and a == agent)]
            for k in range(count):
                if k < len(others):
                    other = state.vehicle(others[k])
                    if other.on_road and abs(other.col - me.col) <= c.sensing_cols:
                        obs[i] = 1.0
                        obs[i + 1] = (other.lane - me.lane) / max(c.lanes - 1, 1)
                        obs[i + 2] = (other.col - me.col) / c.sensing_cols
                        obs[i + 3] = other.speed / (c.speed_levels - 1)
                i += 4
        return obs

    def available_actions(self, state: CorridorState, agent: AgentId) -> np.ndarray:
        c = self.config
        me = state.vehicle(agent)
        mask = np.zeros(len(ACTIONS), dtype=bool)
        mask[0] = True
        if not me.on_road:
            return mask
        occupied = {(v.lane, v.col) for v in state.vehicles if v.on_road and v.agent != agent}
        mask[1] = me.speed < c.speed_levels - 1
        mask[2] = me.speed > 0
        mask[3] = me.lane + 1 < c.lanes and (me.lane + 1, me.col) not in occupied
        mask[4] = me.lane - 1 >= 0 and (me.lane - 1, me.col) not in occupied
        return mask

    # --- step ------------------------------------------------------------

    def step_events(
        self, state: CorridorState, joint_action: Mapping[AgentId, int]
    ) -> tuple[CorridorState, StepOutcome, StepEvents]:
        c = self.config
        if self._terminal(state):
            raise LifecycleError("cannot step a terminal state")
        actions: dict[AgentId, int] = {}
        for agent in self.controllable_agents:
            a = int(joint_action.get(agent, 0))
            mask = self.available_actions(state, agent)
            if not (0 <= a < mask.size) or not mask[a]:
                raise ContractViolation(f"agent {agent.key} chose unavailable action {a}")
            actions[agent] = a
        for agent in self._agents[Party.THIRD]:
            actions[agent] = 0  # scripted traffic keeps lane and speed

        vehicles = {v.agent: v for v in state.vehicles}
        occupied_at_start = {
            (v.lane, v.col): v.agent for v in state.vehicles if v.on_road
        }
        canceled: list[AgentId] = []

        # 1. maneuvers
        lane_claims: dict[tuple[int, int], list[AgentId]] = {}
        for agent, a in actions.items():
            v = vehicles[agent]
            if not v.on_road:
                continue
            label = ACTIONS[a]
            if label == "faster":
                vehicles[agent] = replace(v, speed=v.speed + 1)
            elif label == "slower":
                vehicles[agent] = replace(v, speed=v.speed - 1)
            elif label in ("lane_up", "lane_down"):
                tgt = (v.lane + (1 if label == "lane_up" else -1), v.col)
                lane_claims.setdefault(tgt, []).append(agent)
        for tgt, claimants in lane_claims.items():
            claimants.sort()
            winner = claimants[0] if tgt not in occupied_at_start else None
            for agent in claimants:
                if agent == winner:
                    vehicles[agent] = replace(vehicles[agent], lane=tgt[0])
                else:
                    canceled.append(agent)

        # 2. forward movement, front vehicle first
        moves: list[tuple[AgentId, tuple, tuple]] = []
        collisions: list[tuple[AgentId, AgentId]] = []
        occupancy = {
            (v.lane, v.col): v.agent for v in vehicles.values() if v.on_road
        }
        order = sorted(
            [v for v in vehicles.values() if v.on_road],
            key=lambda v: (-v.col, v.agent),
        )
        for v in order:
            v = vehicles[v.agent]
            start = (v.lane, v.col)
            del occupancy[start]
            col = v.col
            hit: AgentId | None = None
            for _ in range(v.speed):
                nxt_cell = (v.lane, col + 1)
                blocker = occupancy.get(nxt_cell)
                if blocker is None:
                    col += 1
                    if col >= c.goal_col:
                        break
                    continue
                if v.agent.party is Party.VICTIM or (
                    v.agent.party is Party.THIRD and blocker.party is Party.VICTIM
                ):
                    # a real collision: the victim is involved either way
                    collisions.append((v.agent, blocker))
                    hit = blocker
                    col += 1
                # bystanders and blocked traffic stop short of the obstacle
                break
            if hit is not None:
                vehicles[v.agent] = replace(v, col=col, crashed=True)
                victim_agent = v.agent if v.agent.party is Party.VICTIM else hit
                vv = vehicles[victim_agent]
                if not vv.crashed:
                    vehicles[victim_agent] = replace(vv, crashed=True)
            elif col >= c.goal_col:
                vehicles[v.agent] = replace(v, col=c.goal_col, exited=True)
                moves.append((v.agent, start, (v.lane, c.goal_col)))
            else:
                vehicles[v.agent] = replace(v, col=col)
                occupancy[(v.lane, col)] = v.agent
                if col != start[1] or v.lane != start[0]:
                    moves.append((v.agent, start, (v.lane, col)))

        new_vehicles = tuple(vehicles[v.agent] for v in state.vehicles)
        nxt = CorridorState(
            vehicles=new_vehicles, step_count=state.step_count + 1, seed=state.seed
        )
        outcome = self._outcome(state, nxt, canceled)
        events = StepEvents(
            attacks=(),
            moves=tuple(moves),
            collisions=tuple(collisions),
            canceled=tuple(canceled),
        )
        return nxt, outcome, events

    def _terminal(self, state: CorridorState) -> bool:
        victims = state.party(Party.VICTIM)
        return (
            state.step_count >= self.config.horizon
            or any(v.crashed for v in victims)
            or all(v.exited for v in victims)
        )

    def _outcome(
        self, prev: CorridorState, nxt: CorridorState, canceled: list[AgentId]
    ) -> StepOutcome:
        c = self.config
        victims = nxt.party(Party.VICTIM)
        crashed = any(v.crashed for v in victims)
        all_out = all(v.exited for v in victims)
        terminal = crashed or all_out or nxt.step_count >= c.horizon
        success = terminal and all_out and not crashed
        collision = 1.0 if crashed else 0.0
        not_done = sum(1 for v in victims if not v.exited)
        timeout = (1.0 / c.horizon) * not_done / c.victim_count
        stalls = sum(
            1.0 for v in victims if v.on_road and v.speed == 0
        ) + sum(1.0 for a in canceled if a.party is Party.VICTIM)
        return StepOutcome(
            terminal=terminal,
            victim_success=success,
            victim_failed=terminal and not success,
            failure_signals=np.array([collision, timeout, stalls]),
        )

    def victim_task_reward(
        self, prev: CorridorState, joint_action, nxt: CorridorState, outcome: StepOutcome
    ) -> float:
        c = self.config
        progress = 0.0
        for agent in self._agents[Party.VICTIM]:
            a, b = prev.vehicle(agent), nxt.vehicle(agent)
            progress += (b.col - a.col) / c.goal_col
        reward = progress / c.victim_count
        if outcome.victim_success:
            reward += 1.0
        if any(v.crashed for v in nxt.party(Party.VICTIM)):
            reward -= 1.0
        return reward

    # --- test/audit helpers ------------------------------------------------

    def state_from_vehicles(
        self, spec: Mapping[AgentId, tuple[int, int, int]], step_count: int = 0
    ) -> CorridorState:
        """Build a state from {agent: (lane, col, speed)}; omitted agents are
        treated as already exited."""
        vehicles = []
        for party in Party:
            for agent in self._agents[party]:
                if agent in spec:
                    lane, col, speed = spec[agent]
                    vehicles.append(Vehicle(agent, lane, col, speed))
                else:
                    vehicles.append(Vehicle(agent, 0, self.config.goal_col, 0, exited=True))
        return CorridorState(vehicles=tuple(vehicles), step_count=step_count, seed=-1)
