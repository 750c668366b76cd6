"""
Games - Repeated matrix games and their state encodings

States are 0 for the episode start and 1 + (row-major index of the previous
joint action) afterwards, with agent 0 as the most significant digit.
"""

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import GameError

COOPERATE, DEFECT = 0, 1
ROCK, PAPER, SCISSORS = 0, 1, 2

# Row player's payoff in 2-player RPS
_RPS_PAIRWISE = np.array(
    [
        [0.0, -1.0, 1.0],
        [1.0, 0.0, -1.0],
        [-1.0, 1.0, 0.0],
    ]
)

_IPD_PAYOFF = {
    (COOPERATE, COOPERATE): (0.5, 0.5),
    (COOPERATE, DEFECT): (-1.5, 1.5),
    (DEFECT, COOPERATE): (1.5, -1.5),
    (DEFECT, DEFECT): (-0.5, -0.5),
}


@dataclass(frozen=True, eq=False)
class MatrixGame:
    """n-agent repeated game with a deterministic previous-joint-action state"""

    name: str
    n_agents: int
    n_actions: int
    payoff: np.ndarray  # shape (n_actions,) * n_agents + (n_agents,)
    horizon_default: int = 150
    action_names: Tuple[str, ...] = ()
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.n_actions,) * self.n_agents + (self.n_agents,)
        if self.n_agents < 1 or self.n_actions < 1:
            raise GameError(f"{self.name}: need at least one agent and one action")
        if tuple(self.payoff.shape) != expected:
            raise GameError(f"{self.name}: payoff shape {self.payoff.shape} != {expected}")
        if not np.all(np.isfinite(self.payoff)):
            raise GameError(f"{self.name}: payoff entries must be finite")
        self.payoff.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.n_joint_actions + 1

    @property
    def n_joint_actions(self) -> int:
        return self.n_actions ** self.n_agents

    @property
    def zero_sum(self) -> bool:
        return bool(np.allclose(self.payoff.sum(axis=-1), 0.0))

    @property
    def state_weights(self) -> np.ndarray:
        """Row-major place values; state = 1 + joint_action @ state_weights"""
        return self.n_actions ** np.arange(self.n_agents - 1, -1, -1)

    def reward(self, joint_action: Sequence[int]) -> np.ndarray:
        """Per-agent reward vector for one joint action"""
        return self.payoff[self._checked(joint_action)].copy()

    def joint_actions(self) -> List[Tuple[int, ...]]:
        """All joint actions in state-index order"""
        return list(itertools.product(range(self.n_actions), repeat=self.n_agents))

    def _checked(self, joint_action: Sequence[int]) -> Tuple[int, ...]:
        joint = tuple(int(a) for a in joint_action)
        if len(joint) != self.n_agents:
            raise GameError(f"{self.name}: expected {self.n_agents} actions, got {len(joint)}")
        for a in joint:
            if not 0 <= a < self.n_actions:
                raise GameError(f"{self.name}: action {a} out of range [0, {self.n_actions})")
        return joint


def make_ipd(horizon: int = 150) -> MatrixGame:
    """Iterated prisoner's dilemma, actions C=0 and D=1"""
    payoff = np.zeros((2, 2, 2))
    for joint, rewards in _IPD_PAYOFF.items():
        payoff[joint] = rewards
    return MatrixGame(
        name="ipd",
        n_agents=2,
        n_actions=2,
        payoff=payoff,
        horizon_default=horizon,
        action_names=("C", "D"),
    )


def make_rps(n_agents: int = 2, horizon: int = 150) -> MatrixGame:
    """
    Rock-paper-scissors for n agents

    Args:
        n_agents: Number of players (>= 2)
        horizon: Default episode length

    Returns:
        Game whose rewards are each agent's summed pairwise payoffs
    """
    if n_agents < 2:
        raise GameError(f"RPS needs at least 2 agents, got {n_agents}")
    payoff = np.zeros((3,) * n_agents + (n_agents,))
    for joint in itertools.product(range(3), repeat=n_agents):
        for i in range(n_agents):
            payoff[joint + (i,)] = sum(
                _RPS_PAIRWISE[joint[i], joint[j]] for j in range(n_agents) if j != i
            )
    metadata = {} if n_agents == 2 else {"rps_payoff": "pairwise_sum"}
    return MatrixGame(
        name="rps" if n_agents == 2 else f"rps{n_agents}",
        n_agents=n_agents,
        n_actions=3,
        payoff=payoff,
        horizon_default=horizon,
        action_names=("R", "P", "S"),
        metadata=metadata,
    )


def make_game(name: str, n_agents: int = 2, horizon: int = 150) -> MatrixGame:
    """Build a game by config name"""
    if name == "ipd":
        if n_agents != 2:
            raise GameError(f"IPD is a 2-agent game, got n_agents={n_agents}")
        return make_ipd(horizon)
    if name == "rps":
        return make_rps(n_agents, horizon)
    raise GameError(f"Unsupported matrix game: {name}")


def encode_state(game: MatrixGame, prev_joint_action: Optional[Sequence[int]]) -> int:
    """0 for the episode start, otherwise 1 + row-major index of the joint action"""
    if prev_joint_action is None:
        return 0
    joint = game._checked(prev_joint_action)
    index = 0
    for a in joint:
        index = index * game.n_actions + a
    return index + 1


def decode_state(game: MatrixGame, state: int) -> Optional[Tuple[int, ...]]:
    """Inverse of encode_state; None for the start state"""
    if not 0 <= state < game.n_states:
        raise GameError(f"{game.name}: state {state} out of range [0, {game.n_states})")
    if state == 0:
        return None
    index = state - 1
    joint = []
    for _ in range(game.n_agents):
        joint.append(index % game.n_actions)
        index //= game.n_actions
    return tuple(reversed(joint))


def step(game: MatrixGame, state: int, joint_action: Sequence[int]) -> Tuple[int, np.ndarray]:
    """Deterministic transition: the next state records the joint action just played"""
    if not 0 <= state < game.n_states:
        raise GameError(f"{game.name}: state {state} out of range [0, {game.n_states})")
    joint = game._checked(joint_action)
    return encode_state(game, joint), game.payoff[joint].copy()
