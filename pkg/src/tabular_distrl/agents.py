"""Tabular PSRL-PI, implicit quantile Q-learning (IQQL) and tabular DAIF agents.

All agents share the harness-facing interface

    act(state) -> action                 greedy action under the current policy
    observe(transition, step, warmup, rng)
                                          absorb one transition, train, refresh policy

Warm-up exploration is handled by ``agent_act``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx import QuantileCritic, adam_step, backward, forward, head_transform_daif, sigmoid
from .envs import TabularMDP, Transition
from .numerics import check_loss, check_loss_grad, digamma, sample_dirichlet, trigamma

# A greedy policy is an int array mapping state index -> action index.
GreedyPolicy = np.ndarray

_TIE_TOL = 1e-12


class DivergenceError(ArithmeticError):
    """Raised when a training objective becomes non-finite."""


def uniform_open(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1)."""
    return np.clip(rng.random(size), 2.0**-53, 1.0 - 2.0**-53)


def argmax_first(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax with ties broken toward the lowest index."""
    return np.argmax(values, axis=-1)


# --------------------------------------------------------------------------
# PSRL-PI


@dataclass
class DirichletPosterior:
    concentration: np.ndarray

    @classmethod
    def uniform(cls, num_states: int, num_actions: int, prior: float = 1.0) -> "DirichletPosterior":
        if prior <= 0:
            raise ValueError("prior concentration must be positive")
        return cls(np.full((num_states, num_actions, num_states), float(prior)))

    def mean(self) -> np.ndarray:
        return self.concentration / self.concentration.sum(axis=-1, keepdims=True)


def psrl_update_posterior(post: DirichletPosterior, t: Transition) -> DirichletPosterior:
    post.concentration[t.state, t.action, t.next_state] += 1.0
    return post


def psrl_sample_mdp(post: DirichletPosterior, rng: np.random.Generator, reward: np.ndarray, gamma: float) -> TabularMDP:
    return TabularMDP(sample_dirichlet(post.concentration, rng), reward, gamma)


def policy_evaluation_exact(mdp: TabularMDP, pi: GreedyPolicy) -> np.ndarray:
    """Solve (I - gamma P_pi) V = R for the state-value vector."""
    states = np.arange(mdp.num_states)
    P_pi = mdp.transitions[states, np.asarray(pi)]
    A = np.eye(mdp.num_states) - mdp.gamma * P_pi
    V = np.linalg.solve(A, mdp.reward)
    if not np.all(np.isfinite(V)):
        raise np.linalg.LinAlgError("policy evaluation produced non-finite values")
    return V


def greedy_improvement(mdp: TabularMDP, V: np.ndarray, current: GreedyPolicy | None = None) -> GreedyPolicy:
    Q = mdp.reward[:, None] + mdp.gamma * mdp.transitions @ V
    best = argmax_first(Q)
    if current is None:
        return best
    states = np.arange(mdp.num_states)
    keep = Q[states, current] >= Q[states, best] - _TIE_TOL
    return np.where(keep, current, best)


def policy_iteration(mdp: TabularMDP, initial: GreedyPolicy | None = None, max_iter: int | None = None) -> GreedyPolicy:
    """Howard policy iteration; the incumbent action is kept on (near-)ties."""
    pi = np.zeros(mdp.num_states, dtype=int) if initial is None else np.asarray(initial, dtype=int).copy()
    limit = max_iter if max_iter is not None else 10 * mdp.num_states + 100
    for _ in range(limit):
        new = greedy_improvement(mdp, policy_evaluation_exact(mdp, pi), pi)
        if np.array_equal(new, pi):
            return pi
        pi = new
    return pi


class PsrlAgent:
    name = "psrl_pi"

    def __init__(self, num_states, num_actions, reward, gamma, prior=1.0, resample_every=1):
        self.posterior = DirichletPosterior.uniform(num_states, num_actions, prior)
        self.reward = np.asarray(reward, dtype=float)
        self.gamma = gamma
        self.resample_every = max(1, int(resample_every))
        self.policy = np.zeros(num_states, dtype=int)

    def act(self, state: int) -> int:
        return int(self.policy[state])

    def observe(self, t: Transition, step: int, warmup_steps: int, rng: np.random.Generator) -> None:
        psrl_update_posterior(self.posterior, t)
        greedy_from = step + 1 - warmup_steps
        if greedy_from >= 0 and greedy_from % self.resample_every == 0:
            mdp = psrl_sample_mdp(self.posterior, rng, self.reward, self.gamma)
            self.policy = policy_iteration(mdp, self.policy)


# --------------------------------------------------------------------------
# Replay and quantile critics


class ReplayBuffer:
    """Append-only transition store with uniform index sampling."""

    def __init__(self, capacity: int = 1024):
        self._cap = max(1, int(capacity))
        self.states = np.zeros(self._cap, dtype=int)
        self.actions = np.zeros(self._cap, dtype=int)
        self.rewards = np.zeros(self._cap)
        self.next_states = np.zeros(self._cap, dtype=int)
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        if self.size == self._cap:
            self._cap *= 2
            for name in ("states", "actions", "rewards", "next_states"):
                arr = getattr(self, name)
                grown = np.zeros(self._cap, dtype=arr.dtype)
                grown[: self.size] = arr[: self.size]
                setattr(self, name, grown)
        i = self.size
        self.states[i], self.actions[i] = t.state, t.action
        self.rewards[i], self.next_states[i] = t.reward, t.next_state
        self.size += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> "Batch":
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(self.size, size=batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx])


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        ts = list(transitions)
        return cls(
            np.array([t.state for t in ts], dtype=int),
            np.array([t.action for t in ts], dtype=int),
            np.array([t.reward for t in ts], dtype=float),
            np.array([t.next_state for t in ts], dtype=int),
        )

    def __len__(self) -> int:
        return len(self.states)


def iqql_objective(outputs: np.ndarray, targets: np.ndarray, taus: np.ndarray):
    """Mean check loss of (target - Q_tau) and its gradient w.r.t. the outputs."""
    u = targets - outputs[:, 0]
    loss = float(np.mean(check_loss(u, taus)))
    grad = np.zeros_like(outputs)
    grad[:, 0] = -check_loss_grad(u, taus) / len(u)
    return loss, grad


def daif_objective(outputs: np.ndarray, targets: np.ndarray, taus: np.ndarray, offset: float = 10.0):
    """Negative mean inverse-gamma-marginalized ALD log-likelihood and its output gradient."""
    mu, alpha, beta = head_transform_daif(outputs, offset)
    u = targets - mu
    c = np.abs(u) + (2 * taus - 1) * u
    loglik = np.log(taus * (1 - taus)) - np.log(beta) + digamma(alpha) - alpha / (2 * beta) * c
    loss = -float(np.mean(loglik))
    sgn = np.where(u >= 0, 1.0, -1.0)
    d_mu = alpha / (2 * beta) * (sgn + 2 * taus - 1)
    d_alpha = trigamma(alpha) - c / (2 * beta)
    d_beta = -1.0 / beta + alpha * c / (2 * beta**2)
    grad = np.empty_like(outputs)
    n = len(u)
    grad[:, 0] = -d_mu / n
    grad[:, 1] = -d_alpha * sigmoid(outputs[:, 1]) / n
    grad[:, 2] = -d_beta * sigmoid(outputs[:, 2]) / n
    return loss, grad


def critic_objective(critic: QuantileCritic, outputs, targets, taus):
    if critic.variant == "iqql":
        return iqql_objective(outputs, targets, taus)
    return daif_objective(outputs, targets, taus, critic.daif_offset)


def greedy_actions(critic: QuantileCritic, states, taus: np.ndarray) -> np.ndarray:
    """Greedy actions at ``states``, averaging the value head over the shared ``taus``."""
    uniq, inverse = np.unique(np.asarray(states, dtype=int), return_inverse=True)
    values = critic.value_grid(uniq, taus).mean(axis=-1)
    return argmax_first(values)[inverse]


def greedy_policy_from_critic(critic: QuantileCritic, K: int, rng: np.random.Generator) -> GreedyPolicy:
    """Full policy table from one fresh set of K quantile fractions."""
    if K < 1:
        raise ValueError("need at least one quantile sample")
    return greedy_actions(critic, np.arange(critic.num_states), uniform_open(rng, K))


def _policy_actions(pi, next_states: np.ndarray, num_actions: int, rng: np.random.Generator) -> np.ndarray:
    if pi is None:
        return rng.integers(num_actions, size=len(next_states))
    if callable(pi):
        return np.asarray(pi(next_states), dtype=int)
    return np.asarray(pi, dtype=int)[next_states]


def critic_train_step(critic: QuantileCritic, batch: Batch, pi, gamma: float, rng: np.random.Generator) -> float:
    """One Adam step on a replay minibatch; returns the pre-update loss.

    ``pi`` is a policy table, a callable mapping next-state indices to actions,
    or ``None`` for the uniform random policy.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    taus = uniform_open(rng, len(batch))
    tau_next = uniform_open(rng, len(batch))
    next_actions = _policy_actions(pi, batch.next_states, critic.num_actions, rng)
    # Targets are constants: no gradient flows through the bootstrap value.
    targets = batch.rewards + gamma * critic.value(batch.next_states, next_actions, tau_next)
    outputs, cache = forward(critic.params, critic.batch(batch.states, batch.actions, taus))
    loss, grad_out = critic_objective(critic, outputs, targets, taus)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad_out)):
        raise DivergenceError(f"non-finite {critic.variant} loss ({loss})")
    adam_step(critic.params, backward(critic.params, cache, grad_out), critic.opt)
    return loss


def iqql_train_step(critic, batch, pi, gamma, rng) -> QuantileCritic:
    if critic.variant != "iqql":
        raise ValueError("iqql_train_step needs an iqql critic")
    critic_train_step(critic, batch, pi, gamma, rng)
    return critic


def daif_train_step(critic, batch, pi, gamma, rng) -> QuantileCritic:
    if critic.variant != "daif":
        raise ValueError("daif_train_step needs a daif critic")
    critic_train_step(critic, batch, pi, gamma, rng)
    return critic


class QuantileAgent:
    """IQQL (``variant="iqql"``) or tabular DAIF (``variant="daif"``)."""

    def __init__(
        self,
        variant: str,
        num_states: int,
        num_actions: int,
        gamma: float,
        rng: np.random.Generator,
        hidden_dim: int = 0,
        lr: float = 1e-3,
        batch_size: int = 32,
        updates_per_step: int = 1,
        quantile_samples: int = 16,
        daif_offset: float = 10.0,
    ):
        self.name = variant
        self.critic = QuantileCritic.create(variant, num_states, num_actions, hidden_dim, rng, lr, daif_offset)
        self.gamma = gamma
        self.batch_size = batch_size
        self.updates_per_step = updates_per_step
        self.quantile_samples = quantile_samples
        self.buffer = ReplayBuffer()
        # None until warm-up ends: targets then follow the uniform random policy.
        self.policy_taus: np.ndarray | None = None

    def greedy(self, states) -> np.ndarray:
        return greedy_actions(self.critic, states, self.policy_taus)

    def act(self, state: int) -> int:
        if self.policy_taus is None:
            return 0
        return int(self.greedy([state])[0])

    def observe(self, t: Transition, step: int, warmup_steps: int, rng: np.random.Generator) -> None:
        self.buffer.add(t)
        pi = None if self.policy_taus is None else self.greedy
        for _ in range(self.updates_per_step):
            critic_train_step(self.critic, self.buffer.sample(self.batch_size, rng), pi, self.gamma, rng)
        if step + 1 >= warmup_steps:
            # Policy refresh: a fresh set of quantile fractions defines the
            # greedy table; entries are evaluated lazily where needed.
            self.policy_taus = uniform_open(rng, self.quantile_samples)

    def policy_table(self) -> GreedyPolicy:
        return self.greedy(np.arange(self.critic.num_states))


class RandomAgent:
    name = "random"

    def __init__(self, num_actions: int, rng: np.random.Generator):
        self.num_actions = num_actions
        self.rng = rng

    def act(self, state: int) -> int:
        return int(self.rng.integers(self.num_actions))

    def observe(self, t, step, warmup_steps, rng) -> None:
        pass


class FixedActionAgent:
    """Scripted agent that always plays the same action index, warm-up included."""

    uses_warmup = False

    def __init__(self, action: int, name: str = "fixed"):
        self.action = int(action)
        self.name = name

    def act(self, state: int) -> int:
        return self.action

    def observe(self, t, step, warmup_steps, rng) -> None:
        pass


def agent_act(agent, state: int, step: int, warmup_steps: int, rng: np.random.Generator, num_actions: int) -> int:
    """Uniform random action during warm-up, the agent's greedy action afterwards.

    Agents with ``uses_warmup = False`` (scripted baselines) act from the first step.
    """
    if step < warmup_steps and getattr(agent, "uses_warmup", True):
        return int(rng.integers(num_actions))
    return agent.act(state)
