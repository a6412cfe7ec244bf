"""RiverSwim and Latent RiverSwim as finite controlled Markov processes.

States and actions are exposed to agents as 0-based integer indices. The
paper-facing helpers (``riverswim_transition_row``, ``latent_encode``, ...)
keep the 1-based chain coordinates and the signed actions of the original
environment definitions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12
# floor() of an affine combination of integers; guards against 2.9999999.
_FLOOR_EPS = 1e-9

LATENT_ACTIONS: tuple[tuple[int, int], ...] = ((+1, 0), (-1, 0), (0, +1), (0, -1))
RIVERSWIM_ACTIONS: tuple[int, int] = (-1, +1)


class ConfigError(ValueError):
    """Invalid environment parameters or out-of-range indices."""


@dataclass(frozen=True)
class RiverSwimSpec:
    n: int
    p_forward: float = 0.3
    p_backward: float = 0.1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError(f"RiverSwim needs n >= 3, got {self.n}")
        if not (self.p_forward > 0 and self.p_backward > 0):
            raise ConfigError("p_forward and p_backward must be positive")
        if self.p_forward + self.p_backward >= 1:
            raise ConfigError(
                f"p_forward + p_backward must be < 1, got {self.p_forward + self.p_backward}"
            )


@dataclass(frozen=True)
class LatentRiverSwimSpec:
    n: int
    p_forward: float = 0.3
    p_backward: float = 0.1
    mix_alpha: float = 0.5

    def __post_init__(self):
        RiverSwimSpec(self.n, self.p_forward, self.p_backward)
        if not 0 < self.mix_alpha < 1:
            raise ConfigError(f"mix_alpha must lie in (0, 1), got {self.mix_alpha}")

    @property
    def chain(self) -> RiverSwimSpec:
        return RiverSwimSpec(self.n, self.p_forward, self.p_backward)


@dataclass
class TabularMDP:
    """Finite MDP with a state-indexed reward vector.

    ``transitions[x, a]`` is the next-state distribution; ``reward[x]`` is the
    reward attached to state ``x`` (the desired-state weights for RiverSwim).
    """

    transitions: np.ndarray
    reward: np.ndarray
    gamma: float = 0.95

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        if self.transitions.ndim != 3 or self.transitions.shape[0] != self.transitions.shape[2]:
            raise ConfigError(f"transition tensor must be (S, A, S), got {self.transitions.shape}")
        if self.reward.shape != (self.transitions.shape[0],):
            raise ConfigError("reward must be a vector over states")
        if np.any(self.transitions < 0) or np.max(np.abs(self.transitions.sum(-1) - 1)) > ROW_TOL:
            raise ConfigError("transition rows must be probability vectors")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int


def riverswim_desired_dist(n: int) -> np.ndarray:
    """Desired-state weights over states 1..n (returned 0-based)."""
    if n < 3:
        raise ConfigError(f"RiverSwim needs n >= 3, got {n}")
    weights = np.full(n, 0.005 / (n - 2))
    weights[0] = 0.005
    weights[-1] = 0.99
    return weights


def riverswim_transition_row(spec: RiverSwimSpec, k: int, a: int) -> np.ndarray:
    """Next-state distribution from 1-based state ``k`` under action ``a`` in {-1, +1}.

    Entry ``i`` of the returned vector is the probability of state ``i + 1``.
    """
    n, pf, pb = spec.n, spec.p_forward, spec.p_backward
    if not 1 <= k <= n:
        raise ConfigError(f"state {k} outside 1..{n}")
    if a not in (-1, +1):
        raise ConfigError(f"RiverSwim action must be -1 or +1, got {a}")
    row = np.zeros(n)
    if a == -1:
        row[max(k - 1, 1) - 1] = 1.0
        return row
    up = pf * (2 <= k <= n - 1) + (1 - (pf + pb)) * (k == 1)
    stay = (1 - (pf + pb)) * (k >= 2) + (pf + pb) * (k == 1)
    down = pb * (2 <= k <= n - 1) + (pf + pb) * (k == n)
    if k < n:
        row[k] += up
    row[k - 1] += stay
    if k > 1:
        row[k - 2] += down
    return row


def riverswim_reward(spec: RiverSwimSpec, k: int) -> float:
    if not 1 <= k <= spec.n:
        raise ConfigError(f"state {k} outside 1..{spec.n}")
    return float(riverswim_desired_dist(spec.n)[k - 1])


def riverswim_kernel(spec: RiverSwimSpec) -> np.ndarray:
    """(n, 2, n) tensor; action index 0 is -1 (left), 1 is +1 (right)."""
    return np.stack(
        [
            np.stack([riverswim_transition_row(spec, k, a) for a in RIVERSWIM_ACTIONS])
            for k in range(1, spec.n + 1)
        ]
    )


def latent_encode(spec: LatentRiverSwimSpec, obs: Sequence[int]) -> int:
    i, j = obs
    if not (1 <= i <= spec.n and 1 <= j <= spec.n):
        raise ConfigError(f"observation {tuple(obs)} outside the {spec.n}x{spec.n} grid")
    return int(math.floor(spec.mix_alpha * i + (1 - spec.mix_alpha) * j + _FLOOR_EPS))


def latent_action(spec: LatentRiverSwimSpec, a: Sequence[int]) -> int:
    a1, a2 = a
    if (a1, a2) not in LATENT_ACTIONS:
        raise ConfigError(f"unknown action {tuple(a)}")
    # sign(0) = +1; cannot occur for the four cardinal actions.
    return 1 if spec.mix_alpha * a1 + (1 - spec.mix_alpha) * a2 >= 0 else -1


def latent_preimages(spec: LatentRiverSwimSpec) -> dict[int, list[tuple[int, int]]]:
    pre: dict[int, list[tuple[int, int]]] = {k: [] for k in range(1, spec.n + 1)}
    for i, j in itertools.product(range(1, spec.n + 1), repeat=2):
        pre[latent_encode(spec, (i, j))].append((i, j))
    empty = [k for k, cells in pre.items() if not cells]
    if empty:
        raise ConfigError(f"latent states {empty} have an empty decoder preimage")
    return pre


def latent_decode(
    spec: LatentRiverSwimSpec,
    k: int,
    rng: np.random.Generator,
    preimages: dict[int, list[tuple[int, int]]] | None = None,
) -> tuple[int, int]:
    pre = latent_preimages(spec) if preimages is None else preimages
    if k not in pre:
        raise ConfigError(f"latent state {k} outside 1..{spec.n}")
    cells = pre[k]
    return cells[int(rng.integers(len(cells)))]


def _sample_row(cum_row: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(np.searchsorted(cum_row, rng.random(), side="right"))
    return min(idx, len(cum_row) - 1)


class TabularEnv:
    """Continuing environment driven by an explicit ``TabularMDP``.

    The reward paid on a step is ``mdp.reward[next_state]``.
    """

    name = "tabular"

    def __init__(self, mdp: TabularMDP, initial_state: int = 0, desired_states: Sequence[int] | None = None):
        self.mdp = mdp
        self.initial_state = int(initial_state)
        if desired_states is None:
            desired_states = [int(np.argmax(mdp.reward))]
        self._desired = np.zeros(mdp.num_states, dtype=bool)
        self._desired[list(desired_states)] = True
        self._cum = np.cumsum(mdp.transitions, axis=-1)

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    @property
    def reward_vector(self) -> np.ndarray:
        return self.mdp.reward

    def is_desired(self, state: int) -> bool:
        return bool(self._desired[state])

    def step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float]:
        nxt = _sample_row(self._cum[state, action], rng)
        return nxt, float(self.mdp.reward[nxt])

    def as_tabular_mdp(self, gamma: float | None = None) -> TabularMDP:
        g = self.mdp.gamma if gamma is None else gamma
        return TabularMDP(self.mdp.transitions.copy(), self.mdp.reward.copy(), g)


class RiverSwim(TabularEnv):
    name = "riverswim"

    def __init__(self, spec: RiverSwimSpec, gamma: float = 0.95):
        self.spec = spec
        mdp = TabularMDP(riverswim_kernel(spec), riverswim_desired_dist(spec.n), gamma)
        super().__init__(mdp, initial_state=0, desired_states=[spec.n - 1])


@dataclass
class LatentRiverSwim:
    """Grid observations whose dynamics live on a hidden RiverSwim chain.

    Observation ``(i, j)`` has state index ``(i - 1) * n + (j - 1)``; action
    indices follow ``LATENT_ACTIONS``.
    """

    spec: LatentRiverSwimSpec
    gamma: float = 0.95
    name: str = field(default="latent_riverswim", init=False)

    def __post_init__(self):
        n = self.spec.n
        self.preimages = latent_preimages(self.spec)
        self.chain_reward = riverswim_desired_dist(n)
        self._chain_cum = np.cumsum(riverswim_kernel(self.spec.chain), axis=-1)
        self.latent_of_state = np.array(
            [latent_encode(self.spec, self.obs_of(x)) for x in range(n * n)], dtype=int
        )
        self.latent_action_index = np.array(
            [0 if latent_action(self.spec, a) == -1 else 1 for a in LATENT_ACTIONS], dtype=int
        )
        self.initial_state = 0

    @property
    def num_states(self) -> int:
        return self.spec.n**2

    @property
    def num_actions(self) -> int:
        return len(LATENT_ACTIONS)

    @property
    def reward_vector(self) -> np.ndarray:
        return self.chain_reward[self.latent_of_state - 1]

    def obs_of(self, state: int) -> tuple[int, int]:
        i, j = divmod(int(state), self.spec.n)
        return i + 1, j + 1

    def state_of(self, obs: Sequence[int]) -> int:
        i, j = obs
        if not (1 <= i <= self.spec.n and 1 <= j <= self.spec.n):
            raise ConfigError(f"observation {tuple(obs)} outside the grid")
        return (i - 1) * self.spec.n + (j - 1)

    def is_desired(self, state: int) -> bool:
        return bool(self.latent_of_state[state] == self.spec.n)

    def latent_step(self, k: int, action: int, rng: np.random.Generator) -> int:
        """One step of the hidden chain from 1-based latent ``k``; returns 1-based."""
        return _sample_row(self._chain_cum[k - 1, self.latent_action_index[action]], rng) + 1

    def step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float]:
        k = int(self.latent_of_state[state])
        k_next = self.latent_step(k, action, rng)
        obs = latent_decode(self.spec, k_next, rng, self.preimages)
        return self.state_of(obs), float(self.chain_reward[k_next - 1])

    def as_tabular_mdp(self, gamma: float | None = None) -> TabularMDP:
        n = self.spec.n
        chain = riverswim_kernel(self.spec.chain)
        decoder = np.zeros((n, n * n))
        for k, cells in self.preimages.items():
            for obs in cells:
                decoder[k - 1, self.state_of(obs)] = 1.0 / len(cells)
        P = np.empty((n * n, self.num_actions, n * n))
        for x in range(n * n):
            for a in range(self.num_actions):
                latent_row = chain[self.latent_of_state[x] - 1, self.latent_action_index[a]]
                P[x, a] = latent_row @ decoder
        return TabularMDP(P, self.reward_vector.copy(), self.gamma if gamma is None else gamma)


def make_env(
    name: str,
    n: int,
    p_forward: float = 0.3,
    p_backward: float = 0.1,
    mix_alpha: float = 0.5,
    gamma: float = 0.95,
):
    if name == "riverswim":
        return RiverSwim(RiverSwimSpec(n, p_forward, p_backward), gamma)
    if name == "latent_riverswim":
        return LatentRiverSwim(LatentRiverSwimSpec(n, p_forward, p_backward, mix_alpha), gamma)
    raise ConfigError(f"unknown environment {name!r}")
