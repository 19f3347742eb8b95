"""Q-learning machinery: replay buffer, exploration schedule, TD targets
against a target network, and the periodic learn/sync cadence.

Counters tick in environment steps (one per action). The trainer owns the
buffer and both networks; rollouts feed it through observe()/train_tick().
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tinynn

N_ACTIONS = 8


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Bounded FIFO of transitions; sampling is uniform with replacement."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear explore-weight anneal, constant after the horizon."""

    start_explore: float = 0.9
    end_explore: float = 0.1
    anneal_steps: int = 25_000

    def epsilon(self, env_step: int) -> float:
        if env_step < 0:
            raise ValueError("env_step must be >= 0")
        if env_step >= self.anneal_steps:
            return self.end_explore
        frac = env_step / self.anneal_steps
        return self.start_explore + frac * (self.end_explore - self.start_explore)


def epsilon(schedule: EpsilonSchedule, env_step: int) -> float:
    return schedule.epsilon(env_step)


def select_action(
    q_net: tinynn.Network,
    observation: np.ndarray,
    explore_prob: float,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy action index; greedy ties break to the lowest index.

    With explore_prob == 0 no random draw is consumed, so greedy evaluation
    is a pure function of (parameters, observation).
    """
    if explore_prob > 0.0 and rng.random() < explore_prob:
        return int(rng.integers(0, N_ACTIONS))
    q = q_net.forward(np.asarray(observation)[None, ...])
    return int(np.argmax(q[0]))


def td_targets(batch: list[Transition], target_net: tinynn.Network, gamma: float) -> np.ndarray:
    """One target per transition: r for terminal, else r + gamma * max_a' Q'."""
    if not batch:
        raise ValueError("batch must be non-empty")
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch], dtype=bool)
    targets = rewards.copy()
    if not terminal.all():
        next_states = np.stack([t.next_state for t in batch]).astype(np.float64)
        q_next = target_net.forward(next_states).max(axis=1)
        targets = targets + gamma * np.where(terminal, 0.0, q_next)
    return targets


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    batch_size: int = 3_000
    learn_every: int = 100  # environment steps between gradient updates
    sync_every: int = 200  # environment steps between target syncs
    learning_rate: float = 1e-3
    seed: int = 0
    buffer_capacity: int = 100_000
    huber_delta: float = 1.0
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if min(self.learn_every, self.sync_every, self.batch_size) < 1:
            raise ValueError("learn_every, sync_every and batch_size must be >= 1")


class Trainer:
    """Owns the online/target networks, the replay buffer and the optimizer.

    train_tick(env_step) performs a gradient update when env_step hits the
    learn cadence and the buffer is non-empty, then copies online -> target
    on the sync cadence (so at a step that is both, the target equals the
    just-updated online network). Counters are exposed for instrumentation.
    """

    def __init__(
        self,
        online: tinynn.Network,
        config: TrainerConfig = TrainerConfig(),
        schedule: EpsilonSchedule = EpsilonSchedule(),
    ):
        self.online = online
        self.target = tinynn.clone_network(online)
        self.config = config
        self.schedule = schedule
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.optimizer = tinynn.make_optimizer(config.optimizer, config.learning_rate)
        self._rng = np.random.default_rng(config.seed)
        self.update_count = 0
        self.sync_count = 0
        self.last_batch_size = 0

    def epsilon(self, env_step: int) -> float:
        return self.schedule.epsilon(env_step)

    def observe(self, transition: Transition) -> None:
        self.buffer.push(transition)

    def learn(self) -> float:
        """One gradient update on a sampled batch; returns the Huber loss."""
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, self._rng)
        targets = td_targets(batch, self.target, cfg.gamma)
        states = np.stack([t.state for t in batch]).astype(np.float64)
        actions = np.array([t.action for t in batch], dtype=np.int64)

        q = self.online.forward(states)
        taken = q[np.arange(len(batch)), actions]
        loss, grad_taken = tinynn.huber_loss(taken, targets, cfg.huber_delta)
        # only the taken action's output position carries loss gradient
        grad_q = np.zeros_like(q)
        grad_q[np.arange(len(batch)), actions] = grad_taken
        grads = self.online.backward(grad_q)
        self.optimizer.step(self.online.parameters(), grads)
        self.update_count += 1
        self.last_batch_size = len(batch)
        return loss

    def sync_target(self) -> None:
        tinynn.copy_parameters(self.online, self.target)
        self.sync_count += 1

    def train_tick(self, env_step: int) -> float | None:
        loss = None
        if env_step % self.config.learn_every == 0 and len(self.buffer) > 0:
            loss = self.learn()
        if env_step % self.config.sync_every == 0:
            self.sync_target()
        return loss


def train_tick(trainer: Trainer, env_step: int) -> float | None:
    return trainer.train_tick(env_step)
