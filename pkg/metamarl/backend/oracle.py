"""
Oracle - Brute-force ground truth for tiny games

Everything here is computed by enumerating every joint-action sequence, with
the full discounted return as the score weight (no baselines, no sampling).
"""

import itertools
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import OracleSizeError
from .games import MatrixGame
from .learning import Trajectory
from .policies import PolicyParams

MAX_OUTCOMES = 10**6
MAX_CHAIN = 2


@dataclass
class ExactDistribution:
    outcomes: List[Tuple[Trajectory, float]]

    @property
    def total_probability(self) -> float:
        return float(sum(p for _, p in self.outcomes))


@dataclass
class ExactQTable:
    """Finite-horizon values: q[t, s, joint, agent] and v[t, s, agent] (v[H] = 0)"""

    q: np.ndarray
    v: np.ndarray
    gamma: float


def _guard(game: MatrixGame, H: int):
    if game.n_joint_actions**H > MAX_OUTCOMES:
        raise OracleSizeError(
            f"{game.name}: {game.n_joint_actions}^{H} trajectories exceed the enumeration limit of {MAX_OUTCOMES}"
        )


def _joint_tables(game: MatrixGame, joint_params: Sequence[PolicyParams]) -> np.ndarray:
    """π(joint | s) as an (n_states, n_joint) table"""
    tables = [p.probs() for p in joint_params]
    joint = np.ones((game.n_states, game.n_joint_actions))
    for idx, actions in enumerate(game.joint_actions()):
        for j, a in enumerate(actions):
            joint[:, idx] *= tables[j][:, a]
    return joint


def enumerate_trajectories(game: MatrixGame, joint_params: Sequence[PolicyParams], H: int) -> ExactDistribution:
    """
    Every length-H joint-action sequence with its exact probability

    Args:
        game: Game to enumerate
        joint_params: One policy per agent
        H: Episode length

    Returns:
        ExactDistribution in lexicographic joint-action order
    """
    _guard(game, H)
    pi = _joint_tables(game, joint_params)
    joint_list = game.joint_actions()
    outcomes = []
    for seq in itertools.product(range(game.n_joint_actions), repeat=H):
        state, prob = 0, 1.0
        states = [0]
        for idx in seq:
            prob *= pi[state, idx]
            state = idx + 1
            states.append(state)
        actions = np.array([joint_list[idx] for idx in seq], dtype=int)
        rewards = np.array([game.payoff[joint_list[idx]] for idx in seq])
        outcomes.append((Trajectory(states=np.array(states), joint_actions=actions, rewards=rewards), prob))
    return ExactDistribution(outcomes=outcomes)


def _full_return(traj: Trajectory, gamma: float) -> np.ndarray:
    discounts = gamma ** np.arange(traj.horizon)
    return discounts @ traj.rewards


def exact_expected_return(game: MatrixGame, joint_params: Sequence[PolicyParams], H: int, gamma: float) -> np.ndarray:
    """E[Σ γ^t r_t] per agent"""
    dist = enumerate_trajectories(game, joint_params, H)
    total = np.zeros(game.n_agents)
    for traj, p in dist.outcomes:
        total += p * _full_return(traj, gamma)
    return total


def exact_q_table(game: MatrixGame, joint_params: Sequence[PolicyParams], H: int, gamma: float) -> ExactQTable:
    """Backward induction over the truncated horizon"""
    pi = _joint_tables(game, joint_params)
    rewards = np.array([game.payoff[a] for a in game.joint_actions()])  # (n_joint, n_agents)
    next_states = np.arange(game.n_joint_actions) + 1
    q = np.zeros((H, game.n_states, game.n_joint_actions, game.n_agents))
    v = np.zeros((H + 1, game.n_states, game.n_agents))
    for t in range(H - 1, -1, -1):
        q[t] = rewards[None, :, :] + gamma * v[t + 1][next_states][None, :, :]
        v[t] = np.einsum("sj,sja->sa", pi, q[t])
    return ExactQTable(q=q, v=v, gamma=gamma)


def bellman_residual(table: ExactQTable, game: MatrixGame, joint_params: Sequence[PolicyParams], H: int) -> float:
    """Largest gap between Q_0(s0, ·) and enumeration-conditioned returns"""
    dist = enumerate_trajectories(game, joint_params, H)
    joint_list = game.joint_actions()
    index = {a: i for i, a in enumerate(joint_list)}
    mass = np.zeros(game.n_joint_actions)
    value = np.zeros((game.n_joint_actions, game.n_agents))
    for traj, p in dist.outcomes:
        first = index[tuple(int(a) for a in traj.joint_actions[0])]
        mass[first] += p
        value[first] += p * _full_return(traj, table.gamma)
    seen = mass > 0
    conditioned = value[seen] / mass[seen][:, None]
    return float(np.max(np.abs(conditioned - table.q[0, 0][seen])))


def exact_policy_gradient(
    game: MatrixGame,
    joint_params: Sequence[PolicyParams],
    H: int,
    gamma: float,
    agent: int,
) -> np.ndarray:
    """∇ E[G^agent] on the agent's logits via Σ_τ p(τ) G(τ) ∇ log p(τ)"""
    dist = enumerate_trajectories(game, joint_params, H)
    probs = joint_params[agent].probs()
    eye = np.eye(game.n_actions)
    grad = np.zeros_like(joint_params[agent].logits)
    for traj, p in dist.outcomes:
        G = _full_return(traj, gamma)[agent]
        for t in range(traj.horizon):
            s = traj.states[t]
            grad[s] += p * G * (eye[traj.joint_actions[t, agent]] - probs[s])
    return grad


def exact_inner_update(
    game: MatrixGame,
    joint_params: Sequence[PolicyParams],
    alpha,
    H: int,
    gamma: float,
) -> List[PolicyParams]:
    """One exact policy-gradient ascent step for every agent"""
    alphas = np.broadcast_to(np.asarray(alpha, dtype=float), (game.n_agents,))
    return [
        params.with_logits(params.logits + alphas[j] * exact_policy_gradient(game, joint_params, H, gamma, j))
        for j, params in enumerate(joint_params)
    ]


def exact_meta_value(
    game: MatrixGame,
    joint_params0: Sequence[PolicyParams],
    alphas,
    L: int,
    H: int,
    gamma: float,
    agent_i: int,
) -> float:
    """
    Σ_{ℓ=0}^{L-1} E[G^i] under the exactly updated policies φ_{ℓ+1}

    Args:
        game: Game to evaluate
        joint_params0: Initial joint policy
        alphas: Inner learning rate (scalar or per agent)
        L: Chain length (at most 2)
        H: Episode length
        gamma: Discount factor
        agent_i: Meta-agent index

    Returns:
        Exact meta-value
    """
    if not 1 <= L <= MAX_CHAIN:
        raise OracleSizeError(f"exact meta-values support 1 <= L <= {MAX_CHAIN}, got {L}")
    _guard(game, H)
    params = list(joint_params0)
    total = 0.0
    for _ in range(L):
        params = exact_inner_update(game, params, alphas, H, gamma)
        total += float(exact_expected_return(game, params, H, gamma)[agent_i])
    return total


def finite_diff_meta_grad(
    game: MatrixGame,
    joint_params0: Sequence[PolicyParams],
    alphas,
    L: int,
    H: int,
    gamma: float,
    agent_i: int,
    h: float = 1e-5,
) -> np.ndarray:
    """Central differences of exact_meta_value over the meta-agent's logits (row-major)"""
    base = joint_params0[agent_i].logits
    grad = np.zeros(base.size)
    for c in range(base.size):
        values = []
        for sign in (1.0, -1.0):
            shifted = base.reshape(-1).copy()
            shifted[c] += sign * h
            params = list(joint_params0)
            params[agent_i] = joint_params0[agent_i].with_logits(shifted.reshape(base.shape))
            values.append(exact_meta_value(game, params, alphas, L, H, gamma, agent_i))
        grad[c] = (values[0] - values[1]) / (2.0 * h)
    return grad
