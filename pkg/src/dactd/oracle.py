"""Exact reference computations on enumerable environments.

Everything here is dense 64-bit linear algebra on the tensors produced by
:func:`dactd.envs.enumerate_model`: stationary distributions, per-agent and
team value functions, the linear-critic fixed point the online updates
converge to, exhaustive policy-gradient directions, and the correction terms
that separate the learned update direction from the exact gradient when
critics only see local state.  These are the ground truth for every
convergence and bias test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import EnumeratedModel, JommdpSpec
from .errors import ModelError, RankError
from .funcapprox import FeatureMap


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Unique probability vector d with d P = d, residual <= 1e-12.

    Solved by replacing one balance equation with the normalization; falls
    back to power iteration when the solve is ill-conditioned.  Chains whose
    unit eigenvalue has numerical multiplicity > 1 (reducible / multiple
    stationary laws) are rejected.
    """
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    if P.shape != (n, n):
        raise ValueError("transition matrix must be square")
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-10) or (P < -1e-15).any():
        raise ValueError("transition matrix rows must be distributions")

    eigs = np.linalg.eigvals(P.T)
    if int(np.sum(np.abs(eigs - 1.0) < 1e-8)) != 1:
        raise ModelError("unit eigenvalue is not simple: chain is reducible "
                         "or has multiple stationary laws")

    M = P.T - np.eye(n)
    M[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        d = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        d = None

    def residual(vec: np.ndarray) -> float:
        return float(np.max(np.abs(vec @ P - vec)))

    if d is None or residual(d) > 1e-12 or d.min() < -1e-10:
        d = np.full(n, 1.0 / n)
        for _ in range(200000):
            nxt = d @ P
            if np.max(np.abs(nxt - d)) < 1e-15:
                d = nxt
                break
            d = nxt
        if residual(d) > 1e-12:
            raise ModelError("stationary distribution did not converge")
    d = np.clip(d, 0.0, None)
    d = d / d.sum()
    if residual(d) > 1e-12:
        raise ModelError("stationary distribution residual above tolerance")
    return d


def value_functions(model: EnumeratedModel) -> np.ndarray:
    """True per-agent values V^i(s) = E[sum_t gamma^t r^i_t | s]: rows of
    (I - gamma P)^{-1} applied to each agent's expected reward."""
    S = model.transition_pi.shape[0]
    A = np.eye(S) - model.spec.gamma * model.transition_pi
    return np.linalg.solve(A, model.rewards_pi.T).T


@dataclass
class ExactSolution:
    """Stationary law and exact values of a model under its joint policy."""

    model: EnumeratedModel
    d_pi: np.ndarray            # (S,)
    v_agents: np.ndarray        # (N, S) per-agent true values
    v_team: np.ndarray          # (S,) value of the team-average reward

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.d_pi)


def solve_model(model: EnumeratedModel) -> ExactSolution:
    d = stationary_distribution(model.transition_pi)
    v_agents = value_functions(model)
    return ExactSolution(model=model, d_pi=d, v_agents=v_agents,
                         v_team=v_agents.mean(axis=0))


def feature_matrix(spec: JommdpSpec, agent: int, fmap: FeatureMap,
                   on_global: bool = False) -> np.ndarray:
    """Features of every global state: rows are phi(s^agent) for local maps
    or phi(global index) when on_global is set."""
    if not (1 <= agent <= spec.n_agents):
        raise ValueError(f"agent id {agent} outside 1..{spec.n_agents}")
    rows = []
    for si in range(spec.n_states):
        s = spec.index_state(si)
        rows.append(fmap(si if on_global else int(s[agent - 1])))
    return np.array(rows)


def ode_matrix(P_pi: np.ndarray, d_pi: np.ndarray, gamma: float) -> np.ndarray:
    """D (gamma P - I): the drift whose eigenvalues must have negative real
    parts for the critic updates to be a stable linear system."""
    return np.diag(d_pi) @ (gamma * P_pi - np.eye(P_pi.shape[0]))


def critic_fixed_point(model: EnumeratedModel, d_pi: np.ndarray, agent: int,
                       Phi: np.ndarray) -> np.ndarray:
    """Weights the linear critic of one agent converges to.

    Solves  Phi^T D (gamma P - I) Phi v = -Phi^T D r_hat  densely, where
    r_hat is the agent's expected private reward per state.  Raises
    RankError when Phi is column-rank deficient or the system is singular
    beyond tolerance.
    """
    S = model.transition_pi.shape[0]
    if Phi.shape[0] != S:
        raise ValueError("feature matrix must have one row per global state")
    L = Phi.shape[1]
    if np.linalg.matrix_rank(Phi) < L:
        raise RankError("feature matrix has linearly dependent columns")
    r_hat = model.rewards_pi[agent - 1]
    A = Phi.T @ ode_matrix(model.transition_pi, d_pi, model.spec.gamma) @ Phi
    b = -Phi.T @ (d_pi * r_hat)
    try:
        v = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise RankError(f"critic fixed-point system is singular: {exc}") from exc
    if np.max(np.abs(A @ v - b)) > 1e-10:
        raise RankError("critic fixed-point residual above 1e-10")
    return v


# ---------------------------------------------------------------------------
# Exhaustive update directions and bias decomposition
# ---------------------------------------------------------------------------

def advantage_table(model: EnumeratedModel, value_table: np.ndarray) -> np.ndarray:
    """(S, A) table of the expected team TD error under the given team value
    table:  mean_reward(s,a) + gamma E[V(s')|s,a] - V(s)."""
    meanV = np.asarray(value_table, dtype=np.float64)
    return (model.rewards_sa.mean(axis=0)
            + model.spec.gamma * model.transition_sa @ meanV
            - meanV[:, None])


def _direction_from_table(model: EnumeratedModel, d_pi: np.ndarray,
                          table_sa: np.ndarray, policies) -> list[np.ndarray]:
    """Per-agent exhaustive expectation of table(s,a) * score_i(s^i, a^i)
    under d_pi and the model's joint policy."""
    spec = model.spec
    w_sa = d_pi[:, None] * model.policy_probs * table_sa
    states = [spec.index_state(si) for si in range(spec.n_states)]
    actions = [spec.index_action(ai) for ai in range(spec.n_actions)]
    out = []
    for i, pol in enumerate(policies):
        w_local = np.zeros((spec.local_state_sizes[i], spec.local_action_sizes[i]))
        for si, s in enumerate(states):
            for ai, a in enumerate(actions):
                w_local[s[i], a[i]] += w_sa[si, ai]
        g = np.zeros(pol.n_params)
        for sl in range(spec.local_state_sizes[i]):
            for al in range(spec.local_action_sizes[i]):
                if w_local[sl, al] != 0.0:
                    g += w_local[sl, al] * pol.score(sl, al)
        out.append(g)
    return out


def update_direction(model: EnumeratedModel, d_pi: np.ndarray,
                     critic_tables: np.ndarray, policies) -> list[np.ndarray]:
    """Exhaustive expected actor-update direction per agent when TD errors
    are computed from critic_tables ((N, S) values per agent, already
    broadcast to global states)."""
    table = advantage_table(model, np.asarray(critic_tables).mean(axis=0))
    return _direction_from_table(model, d_pi, table, policies)


def exact_policy_gradient(solution: ExactSolution, policies) -> list[np.ndarray]:
    """The exact gradient direction: update_direction evaluated with the
    true per-agent value functions."""
    return update_direction(solution.model, solution.d_pi,
                            solution.v_agents, policies)


def correction_terms(model: EnumeratedModel, d_pi: np.ndarray,
                     critic_tables: np.ndarray, true_values: np.ndarray,
                     policies) -> list[np.ndarray]:
    """Per-agent bias of the update direction caused by critic mismatch.

    With dV = mean_j(critic_j - true_value_j) as a global-state table, the
    bias weight per (s, a) is gamma E[dV(s')|s,a] - dV(s); by linearity
    update_direction(critics) = exact gradient + these terms.
    """
    dV = (np.asarray(critic_tables, dtype=np.float64)
          - np.asarray(true_values, dtype=np.float64)).mean(axis=0)
    corr_sa = model.spec.gamma * model.transition_sa @ dV - dV[:, None]
    return _direction_from_table(model, d_pi, corr_sa, policies)


def surrogate_objective(model: EnumeratedModel, d_frozen: np.ndarray,
                        critic_tables: np.ndarray, local_policies) -> float:
    """Scalar objective whose policy gradient equals update_direction when
    the state distribution and critics are frozen:

        J'(theta) = sum_s d(s) sum_a pi_theta(a|s) * delta_hat(s, a)

    Used for finite-difference verification of the analytic direction."""
    from .envs import joint_policy_probs

    policy = joint_policy_probs(model.spec, local_policies)
    table = advantage_table(model, np.asarray(critic_tables).mean(axis=0))
    return float(d_frozen @ (policy * table).sum(axis=1))
