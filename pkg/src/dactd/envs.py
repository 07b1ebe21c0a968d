"""Jointly observable multi-agent environments.

The global state is the concatenation of per-agent local states; during
simulation each agent is shown only its own coordinate (plus its private
reward).  The concrete family used throughout is the coupled binary
environment: every agent has a binary local state and action, the next
local-state bits are drawn i.i.d. given the global (s, a) with

    p(s'_i = 1 | s, a) = (1 / 2N) * sum_j (s_j + a_j)

and only agent 1 is rewarded, with the same expression as its reward.
Rewards of this family depend on (s, a) only.  Episodes start from the
all-zeros state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

from .errors import CapacityError

STATE_CAP = 4096


@dataclass(frozen=True)
class JommdpSpec:
    """Sizes and discount of a finite jointly observable multi-agent MDP."""

    n_agents: int
    local_state_sizes: tuple[int, ...]
    local_action_sizes: tuple[int, ...]
    gamma: float

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if len(self.local_state_sizes) != self.n_agents:
            raise ValueError("one local state size per agent required")
        if len(self.local_action_sizes) != self.n_agents:
            raise ValueError("one local action size per agent required")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return prod(self.local_state_sizes)

    @property
    def n_actions(self) -> int:
        return prod(self.local_action_sizes)

    def state_index(self, s) -> int:
        return int(np.ravel_multi_index(tuple(int(x) for x in s),
                                        self.local_state_sizes))

    def index_state(self, idx: int) -> np.ndarray:
        return np.array(np.unravel_index(idx, self.local_state_sizes), dtype=np.int64)

    def action_index(self, a) -> int:
        return int(np.ravel_multi_index(tuple(int(x) for x in a),
                                        self.local_action_sizes))

    def index_action(self, idx: int) -> np.ndarray:
        return np.array(np.unravel_index(idx, self.local_action_sizes), dtype=np.int64)


class CoupledEnv:
    """The coupled binary environment for any number of agents."""

    def __init__(self, n_agents: int, gamma: float = 0.9):
        self.spec = JommdpSpec(
            n_agents=n_agents,
            local_state_sizes=(2,) * n_agents,
            local_action_sizes=(2,) * n_agents,
            gamma=gamma,
        )

    @property
    def n_agents(self) -> int:
        return self.spec.n_agents

    @property
    def gamma(self) -> float:
        return self.spec.gamma

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.n_agents, dtype=np.int64)

    def _validate(self, arr, name: str) -> np.ndarray:
        out = np.asarray(arr)
        if out.shape != (self.n_agents,):
            raise ValueError(f"{name} must have shape ({self.n_agents},), "
                             f"got {out.shape}")
        if not ((out == 0) | (out == 1)).all():
            raise ValueError(f"{name} entries must be binary, got {out!r}")
        return out.astype(np.int64)

    def coupling(self, s, a) -> float:
        """Shared Bernoulli parameter (1/2N) * sum_j (s_j + a_j)."""
        return float((np.sum(s) + np.sum(a)) / (2 * self.n_agents))

    def rewards(self, s, a) -> np.ndarray:
        """Private rewards: agent 1 earns the coupling value, others zero."""
        r = np.zeros(self.n_agents)
        r[0] = self.coupling(s, a)
        return r

    def step(self, s, a, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Sample the next state and return (s', rewards)."""
        s = self._validate(s, "state")
        a = self._validate(a, "action")
        q = self.coupling(s, a)
        s_next = (rng.random(self.n_agents) < q).astype(np.int64)
        return s_next, self.rewards(s, a)

    def next_state_probs(self, s, a) -> np.ndarray:
        """Exact distribution over global next-state indices given (s, a)."""
        q = self.coupling(s, a)
        per_agent = np.array([1.0 - q, q])
        out = np.array([1.0])
        for _ in range(self.n_agents):
            out = np.outer(out, per_agent).ravel()
        return out


def micro_env(gamma: float = 0.9) -> CoupledEnv:
    """Two-agent instance, small enough for exact oracle computations."""
    return CoupledEnv(2, gamma)


def line_env(gamma: float = 0.9) -> CoupledEnv:
    """Five-agent instance of the reference experiment."""
    return CoupledEnv(5, gamma)


@dataclass
class EnumeratedModel:
    """Dense tensors of a finite environment under a fixed joint policy."""

    spec: JommdpSpec
    policy_probs: np.ndarray      # (S, A) joint policy
    transition_sa: np.ndarray     # (S, A, S)
    rewards_sa: np.ndarray        # (N, S, A), independent of landing state
    transition_pi: np.ndarray = field(init=False)   # (S, S)
    rewards_pi: np.ndarray = field(init=False)      # (N, S) expected per state

    def __post_init__(self):
        self.transition_pi = np.einsum("sa,sat->st", self.policy_probs,
                                       self.transition_sa)
        self.rewards_pi = np.einsum("sa,nsa->ns", self.policy_probs,
                                    self.rewards_sa)

    @property
    def team_rewards_pi(self) -> np.ndarray:
        return self.rewards_pi.mean(axis=0)


def joint_policy_probs(spec: JommdpSpec, local_policies) -> np.ndarray:
    """(S, A) joint policy: product over agents of pi_i(a_i | s_i)."""
    if len(local_policies) != spec.n_agents:
        raise ValueError("one local policy per agent required")
    S, A = spec.n_states, spec.n_actions
    policy = np.zeros((S, A))
    for si in range(S):
        s = spec.index_state(si)
        joint = np.array([1.0])
        for i in range(spec.n_agents):
            probs_i = np.asarray(local_policies[i].probs(int(s[i])),
                                 dtype=np.float64)
            joint = np.outer(joint, probs_i).ravel()
        policy[si] = joint
    return policy


def enumerate_model(env: CoupledEnv, local_policies,
                    cap: int = STATE_CAP) -> EnumeratedModel:
    """Exhaustive model tensors for env under per-agent local policies.

    local_policies is one object per agent exposing probs(s_local) -> array
    over that agent's actions.  Raises CapacityError when the global state
    or action space exceeds cap.
    """
    spec = env.spec
    S, A = spec.n_states, spec.n_actions
    if S > cap or A > cap:
        raise CapacityError(
            f"global spaces ({S} states, {A} actions) exceed cap {cap}")
    policy = joint_policy_probs(spec, local_policies)
    transition_sa = np.zeros((S, A, S))
    rewards_sa = np.zeros((spec.n_agents, S, A))
    actions = [spec.index_action(ai) for ai in range(A)]
    for si in range(S):
        s = spec.index_state(si)
        for ai, a in enumerate(actions):
            transition_sa[si, ai] = env.next_state_probs(s, a)
            rewards_sa[:, si, ai] = env.rewards(s, a)

    rowsums = transition_sa.sum(axis=2)
    if not np.allclose(rowsums, 1.0, atol=1e-12):
        raise ValueError("transition kernel rows must sum to 1")
    if not np.allclose(policy.sum(axis=1), 1.0, atol=1e-10):
        raise ValueError("joint policy rows must sum to 1")
    return EnumeratedModel(spec=spec, policy_probs=policy,
                           transition_sa=transition_sa, rewards_sa=rewards_sa)
