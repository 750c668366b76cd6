"""
Policies - Tabular softmax policies, personas and populations
"""

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import PolicyError
from .games import MatrixGame
from .tape import Tape, Var

PERSONA_KINDS = {
    "ipd": ("cooperating", "defecting", "uniform"),
    "rps": ("rock", "paper", "scissors", "uniform"),
}
SPLITS = ("train", "val", "test")

_PREFERENCE = {"rock": 0, "paper": 1, "scissors": 2}
_PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Logit table [n_states x n_actions] for one agent"""

    agent_id: int
    logits: np.ndarray

    def __post_init__(self):
        table = np.array(self.logits, dtype=float)
        if table.ndim != 2:
            raise PolicyError(f"logits must be a matrix, got shape {table.shape}")
        if not np.all(np.isfinite(table)):
            raise PolicyError(f"agent {self.agent_id}: logits must be finite")
        table.setflags(write=False)
        object.__setattr__(self, "logits", table)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def probs(self) -> np.ndarray:
        return softmax_rows(self.logits)

    def with_logits(self, logits: np.ndarray) -> "PolicyParams":
        return PolicyParams(agent_id=self.agent_id, logits=logits)

    def with_agent(self, agent_id: int) -> "PolicyParams":
        return PolicyParams(agent_id=agent_id, logits=self.logits)

    def flat(self) -> np.ndarray:
        return self.logits.reshape(-1).copy()


def uniform_params(game: MatrixGame, agent_id: int) -> PolicyParams:
    return PolicyParams(agent_id=agent_id, logits=np.zeros((game.n_states, game.n_actions)))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def action_probs(params: PolicyParams, state: int) -> np.ndarray:
    """Softmax of one logits row"""
    if not 0 <= state < params.n_states:
        raise PolicyError(f"state {state} out of range [0, {params.n_states})")
    return softmax_rows(params.logits[state])


def sample_from_rows(prob_rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw, one action per row"""
    cdf = np.cumsum(prob_rows, axis=-1)
    return (cdf[..., :-1] <= uniforms[..., None]).sum(axis=-1)


def sample_action(params: PolicyParams, state: int, rng: np.random.Generator, nodes: Optional["PolicyNodes"] = None):
    """
    Draw one action for params at state

    Args:
        params: Policy to sample from
        state: Current state index
        rng: Seeded generator
        nodes: Tape-resident version of params; when given the log-prob is a tape node

    Returns:
        (action, log_prob) with log_prob a float or a Var
    """
    probs = action_probs(params, state)
    action = int(sample_from_rows(probs, np.asarray(rng.random())))
    if nodes is not None:
        return action, nodes.log_prob(state, action)
    return action, float(log_softmax_rows(params.logits[state])[action])


class PolicyNodes:
    """Tape-resident logits of one agent at one chain step"""

    def __init__(self, tape: Tape, agent_id: int, logits: List[List[Var]], handles: List[Var]):
        self.tape = tape
        self.agent_id = agent_id
        self.logits = logits
        self.handles = handles
        self._rows: Dict[int, List[Var]] = {}

    @classmethod
    def from_params(cls, tape: Tape, params: PolicyParams) -> "PolicyNodes":
        """Fresh param leaves holding the current logits"""
        logits = [[tape.param(v) for v in row] for row in params.logits]
        return cls(tape, params.agent_id, logits, [v for row in logits for v in row])

    @classmethod
    def from_nodes(cls, tape: Tape, agent_id: int, base: List[List[Var]]) -> "PolicyNodes":
        """
        Wrap computed logits with zero-valued probe params

        Gradients w.r.t. the probes equal gradients w.r.t. the computed
        logits, while the probes stay valid targets for Tape.gradient.
        """
        probes = [[tape.param(0.0) for _ in row] for row in base]
        logits = [[tape.add(b, d) for b, d in zip(brow, drow)] for brow, drow in zip(base, probes)]
        return cls(tape, agent_id, logits, [d for row in probes for d in row])

    @property
    def n_states(self) -> int:
        return len(self.logits)

    @property
    def n_actions(self) -> int:
        return len(self.logits[0])

    def log_prob_row(self, state: int) -> List[Var]:
        row = self._rows.get(state)
        if row is None:
            row = self._build_row(state)
            self._rows[state] = row
        return row

    def log_prob(self, state: int, action: int) -> Var:
        return self.log_prob_row(state)[action]

    def values(self) -> PolicyParams:
        return PolicyParams(
            agent_id=self.agent_id,
            logits=np.array([[v.value for v in row] for row in self.logits]),
        )

    def _build_row(self, state: int) -> List[Var]:
        tape = self.tape
        xs = self.logits[state]
        c = max(x.value for x in xs)
        total = tape.sum([tape.exp(tape.sum([x], bias=-c)) for x in xs])
        lse = tape.log(total)
        return [tape.sum([x, lse], [1.0, -1.0], bias=-c) for x in xs]


# ----------------------------------------------------------------------
# personas


@dataclass(frozen=True)
class PersonaSpec:
    kind: str
    seed: int


def game_family(game: MatrixGame) -> str:
    if game.action_names == ("C", "D"):
        return "ipd"
    if game.action_names == ("R", "P", "S"):
        return "rps"
    raise PolicyError(f"no persona family for game {game.name}")


def sample_persona(
    game: MatrixGame,
    spec: PersonaSpec,
    rng: Optional[np.random.Generator] = None,
    agent_id: int = 1,
) -> PolicyParams:
    """
    Draw a persona's logit table

    Args:
        game: Target game
        spec: Persona kind and seed
        rng: Generator to draw from (defaults to one seeded with spec.seed)
        agent_id: Seat the persona will occupy

    Returns:
        Logits equal to the log of the sampled action probabilities
    """
    family = game_family(game)
    if spec.kind not in PERSONA_KINDS[family]:
        raise PolicyError(f"persona kind {spec.kind!r} is not defined for {family}")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n_states = game.n_states

    if spec.kind == "uniform":
        return uniform_params(game, agent_id)
    if spec.kind in ("cooperating", "defecting"):
        low, high = (0.5, 1.0) if spec.kind == "cooperating" else (0.0, 0.5)
        p_c = rng.uniform(low, high, size=n_states)
        probs = np.stack([p_c, 1.0 - p_c], axis=1)
    else:
        probs = np.array([_preference_row(_PREFERENCE[spec.kind], rng) for _ in range(n_states)])
    return PolicyParams(agent_id=agent_id, logits=np.log(np.maximum(probs, _PROB_FLOOR)))


def _preference_row(preferred: int, rng: np.random.Generator) -> np.ndarray:
    # flat Dirichlet draws rejected until the preferred action is the strict argmax
    while True:
        row = rng.dirichlet(np.ones(3))
        if np.all(np.delete(row, preferred) < row[preferred]):
            return row


# ----------------------------------------------------------------------
# populations


@dataclass
class Population:
    members: List[PolicyParams]
    specs: List[PersonaSpec]
    split: Dict[str, List[int]]

    def __post_init__(self):
        seen = set()
        for name in SPLITS:
            idx = set(self.split.get(name, []))
            if seen & idx:
                raise PolicyError(f"split {name} overlaps another split")
            seen |= idx
        if seen != set(range(len(self.members))):
            raise PolicyError("splits must cover every member exactly once")

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return tuple(len(self.split[name]) for name in SPLITS)

    def members_of(self, split: str) -> List[PolicyParams]:
        if split not in SPLITS:
            raise PolicyError(f"unknown split {split!r}")
        return [self.members[i] for i in self.split[split]]


def build_population(
    game: MatrixGame,
    counts: Dict[str, int],
    split_sizes: Sequence[int],
    rng: np.random.Generator,
) -> Population:
    """
    Sample personas and partition them into train/val/test

    Args:
        game: Target game
        counts: Number of personas per kind, in sampling order
        split_sizes: (train, val, test) sizes summing to the member count
        rng: Seeded generator

    Returns:
        Population with disjoint splits
    """
    total = sum(counts.values())
    if len(split_sizes) != 3 or any(n < 0 for n in split_sizes) or sum(split_sizes) != total:
        raise PolicyError(f"split sizes {tuple(split_sizes)} must be three counts summing to {total}")

    specs: List[PersonaSpec] = []
    members: List[PolicyParams] = []
    for kind, count in counts.items():
        for _ in range(count):
            spec = PersonaSpec(kind=kind, seed=int(rng.integers(0, 2**31 - 1)))
            specs.append(spec)
            members.append(sample_persona(game, spec))

    order = rng.permutation(total)
    n_train, n_val, _ = split_sizes
    split = {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val :]),
    }
    return Population(members=members, specs=specs, split=split)


def dump_population(population: Population, game: MatrixGame, path: str) -> str:
    """Write one tab-separated record per member: kind, seed, split, row-major logits"""
    labels = {i: name for name in SPLITS for i in population.split[name]}
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# metamarl population game={game.name} n_states={game.n_states} n_actions={game.n_actions}\n")
        for i, (spec, member) in enumerate(zip(population.specs, population.members)):
            values = "\t".join(f"{v:.17g}" for v in member.flat())
            f.write(f"{spec.kind}\t{spec.seed}\t{labels[i]}\t{values}\n")
    return path


def load_population(game: MatrixGame, path: str) -> Population:
    """Read a file written by dump_population"""
    specs, members = [], []
    split: Dict[str, List[int]] = {name: [] for name in SPLITS}
    width = game.n_states * game.n_actions
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 + width or fields[2] not in SPLITS:
                raise PolicyError(f"malformed population record: {line[:60]}")
            index = len(members)
            specs.append(PersonaSpec(kind=fields[0], seed=int(fields[1])))
            logits = np.array([float(v) for v in fields[3:]]).reshape(game.n_states, game.n_actions)
            members.append(PolicyParams(agent_id=1, logits=logits))
            split[fields[2]].append(index)
    return Population(members=members, specs=specs, split=split)
