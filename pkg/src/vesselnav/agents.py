"""The two navigation policies.

The vanilla navigator (vvn) feeds normalized current/destination coordinates
to a dense Q-network and runs plain origin->destination episodes. The
planner-plus-local-view navigator (vnplv) follows a waypoint plan: each
episode targets the current intermediary goal, observed as a local-view
tensor with the goal's in-window shadow.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dqn, localview, tinynn
from .grid_env import (
    Action,
    AgentState,
    GeoTransform,
    GridMap,
    NavEnv,
    ObstacleField,
    Outcome,
    Point,
    distance,
    make_episode_spec,
)
from .planner import PlanSpec

AGENT_KINDS = ("vvn", "vnplv")


def vvn_encode(position: Point, destination: Point, transform: GeoTransform) -> np.ndarray:
    """4-vector (x, y, x_dest, y_dest), min-max normalized by the bounding box."""
    sx = transform.x_max - transform.x_min
    sy = transform.y_max - transform.y_min
    return np.array(
        [
            (position[0] - transform.x_min) / sx,
            (position[1] - transform.y_min) / sy,
            (destination[0] - transform.x_min) / sx,
            (destination[1] - transform.y_min) / sy,
        ],
        dtype=np.float64,
    )


def vnplv_encode(
    grid: GridMap,
    field: ObstacleField,
    position: Point,
    goal: Point,
    *,
    size: int = localview.DEFAULT_VIEW_SIZE,
    margin: int = localview.DEFAULT_MARGIN,
) -> np.ndarray:
    """(3, k, k) uint8 local-view tensor against the current intermediary goal."""
    return localview.extract(grid, field, position, goal, size=size, margin=margin).tensor()


@dataclass(frozen=True)
class PlanProgress:
    plan: PlanSpec
    index: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.index < len(self.plan.waypoints):
            raise ValueError("waypoint index out of range")

    @property
    def current_goal(self) -> Point:
        return self.plan.waypoints[self.index]

    @property
    def at_last(self) -> bool:
        return self.index == len(self.plan.waypoints) - 1


def advance_plan(progress: PlanProgress, position: Point, *, arrival_radius: float = 0.001) -> PlanProgress:
    """Move to the next waypoint once the current one is reached; the final
    waypoint is never skipped."""
    if progress.at_last:
        return progress
    if distance(position, progress.current_goal) <= arrival_radius:
        return PlanProgress(progress.plan, progress.index + 1)
    return progress


def act(
    net: tinynn.Network,
    observation: np.ndarray,
    explore_prob: float,
    rng: np.random.Generator,
) -> Action:
    return Action(dqn.select_action(net, observation, explore_prob, rng))


@dataclass
class RolloutResult:
    success: bool
    steps: int
    episode_outcomes: list[Outcome]
    goals: list[Point]  # episode goals in the order they were targeted
    final_state: AgentState


ExploreProb = float | Callable[[], float]
TransitionHook = Callable[[dqn.Transition, "object"], None]


def _explore(value: ExploreProb) -> float:
    return value() if callable(value) else value


def run_vvn_episode(
    env: NavEnv,
    net: tinynn.Network,
    spec,
    obstacles: ObstacleField,
    *,
    explore_prob: ExploreProb = 0.0,
    rng: np.random.Generator,
    on_transition: TransitionHook | None = None,
) -> RolloutResult:
    """One origin->destination episode under the coordinate policy."""
    transform = env.grid.transform
    state = env.reset(spec, obstacles)
    destination = spec.destination
    obs = vvn_encode(state.position, destination, transform)
    steps = 0
    while True:
        action = act(net, obs, _explore(explore_prob), rng)
        result = env.step(action)
        steps += 1
        next_obs = vvn_encode(result.next_state.position, destination, transform)
        if on_transition is not None:
            on_transition(dqn.Transition(obs, int(action), result.reward, next_obs, result.terminal), result)
        obs = next_obs
        if result.terminal:
            return RolloutResult(
                success=result.outcome is Outcome.ARRIVE_TARGET,
                steps=steps,
                episode_outcomes=[result.outcome],
                goals=[destination],
                final_state=result.next_state,
            )


def run_vnplv_plan(
    env: NavEnv,
    net: tinynn.Network,
    plan: PlanSpec,
    obstacles: ObstacleField,
    *,
    view_size: int = localview.DEFAULT_VIEW_SIZE,
    margin: int = localview.DEFAULT_MARGIN,
    explore_prob: ExploreProb = 0.0,
    rng: np.random.Generator,
    on_transition: TransitionHook | None = None,
) -> RolloutResult:
    """Execute a plan as a chain of episodes, one per intermediary goal.

    Arriving at a waypoint retargets the environment to the next one without
    respawning obstacles; any non-arrival terminal fails the whole plan. The
    plan succeeds iff the final episode arrives at the final destination.
    """
    grid = env.grid
    cfg = env.config
    progress = PlanProgress(plan, 0)
    goals = [progress.current_goal]
    outcomes: list[Outcome] = []

    spec = make_episode_spec(
        plan.origin,
        progress.current_goal,
        step_length=cfg.step_length,
        factor=cfg.max_steps_factor,
    )
    state = env.reset(spec, obstacles)
    obs = vnplv_encode(grid, env.obstacles, state.position, progress.current_goal, size=view_size, margin=margin)
    steps = 0
    while True:
        action = act(net, obs, _explore(explore_prob), rng)
        result = env.step(action)
        steps += 1
        next_state = result.next_state
        if result.terminal and result.outcome is not Outcome.NORMAL_MOVEMENT:
            # terminal next-states are unused by TD targets, and a hit-land
            # position cannot be rendered as a local view anyway
            next_obs = obs
        else:
            next_obs = vnplv_encode(
                grid, env.obstacles, next_state.position, progress.current_goal, size=view_size, margin=margin
            )
        if on_transition is not None:
            on_transition(dqn.Transition(obs, int(action), result.reward, next_obs, result.terminal), result)

        if not result.terminal:
            obs = next_obs
            continue

        outcomes.append(result.outcome)
        if result.outcome is not Outcome.ARRIVE_TARGET:
            return RolloutResult(False, steps, outcomes, goals, next_state)
        if progress.at_last:
            return RolloutResult(True, steps, outcomes, goals, next_state)
        progress = advance_plan(progress, next_state.position, arrival_radius=cfg.arrival_radius)
        goals.append(progress.current_goal)
        env.retarget(progress.current_goal)
        obs = vnplv_encode(
            grid, env.obstacles, next_state.position, progress.current_goal, size=view_size, margin=margin
        )
