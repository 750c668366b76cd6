"""
Learning - Trajectory batches, baselines, the inner-loop update and chain rollouts
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from . import LearningError
from .games import MatrixGame
from .policies import PolicyNodes, PolicyParams, sample_from_rows, softmax_rows
from .tape import GradRequest, Tape, Var

LearningRate = Union[float, Var]


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray  # (H+1,)
    joint_actions: np.ndarray  # (H, n_agents)
    rewards: np.ndarray  # (H, n_agents)
    log_prob_nodes: Optional[List[List[Var]]] = None  # [t][agent]

    @property
    def horizon(self) -> int:
        return len(self.joint_actions)


@dataclass(eq=False)
class TrajectoryBatch:
    trajectories: List[Trajectory]
    params_snapshot: List[PolicyParams]
    weights: np.ndarray  # 1/K when sampled, outcome probabilities when exact
    exact: bool = False

    @property
    def size(self) -> int:
        return len(self.trajectories)

    @property
    def horizon(self) -> int:
        return self.trajectories[0].horizon

    @property
    def n_agents(self) -> int:
        return len(self.params_snapshot)

    @property
    def recorded(self) -> bool:
        return all(traj.log_prob_nodes is not None for traj in self.trajectories)

    def states(self) -> np.ndarray:
        return np.stack([traj.states for traj in self.trajectories])

    def actions(self) -> np.ndarray:
        return np.stack([traj.joint_actions for traj in self.trajectories])

    def rewards(self) -> np.ndarray:
        return np.stack([traj.rewards for traj in self.trajectories])


@dataclass
class ChainStep:
    params: List[PolicyParams]
    batch: TrajectoryBatch
    nodes: Optional[List[PolicyNodes]] = None


@dataclass
class ChainRollout:
    steps: List[ChainStep]
    inner_lrs: list
    gamma: float
    tape: Optional[Tape] = None

    @property
    def length(self) -> int:
        """Number of inner-loop updates (L)"""
        return len(self.steps) - 1

    @property
    def on_tape(self) -> bool:
        return self.tape is not None


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.96
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise LearningError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise LearningError(f"lambda must lie in [0, 1], got {self.lam}")


# ----------------------------------------------------------------------
# collection


def collect_batch(
    game: MatrixGame,
    joint_params: Sequence[PolicyParams],
    K: int,
    H: int,
    rng: Optional[np.random.Generator],
    record_tape: bool = False,
    nodes: Optional[Sequence[PolicyNodes]] = None,
    exact: bool = False,
) -> TrajectoryBatch:
    """
    Play K episodes from the start state under joint_params

    Args:
        game: Game to play
        joint_params: One PolicyParams per agent
        K: Number of episodes (ignored in exact mode)
        H: Episode length
        rng: Seeded generator (unused in exact mode)
        record_tape: Record per-step log-probability nodes for DiCE objectives
        nodes: Tape-resident policies matching joint_params, required with record_tape
        exact: Enumerate every trajectory with its probability as weight

    Returns:
        TrajectoryBatch collected under joint_params
    """
    if len(joint_params) != game.n_agents:
        raise LearningError(f"{game.name} needs {game.n_agents} policies, got {len(joint_params)}")
    if H < 1:
        raise LearningError(f"horizon must be >= 1, got {H}")

    if exact:
        from .oracle import enumerate_trajectories

        dist = enumerate_trajectories(game, joint_params, H)
        batch = TrajectoryBatch(
            trajectories=[traj for traj, _ in dist.outcomes],
            params_snapshot=list(joint_params),
            weights=np.array([p for _, p in dist.outcomes]),
            exact=True,
        )
    else:
        if K < 1:
            raise LearningError(f"batch size must be >= 1, got {K}")
        batch = _sample_batch(game, joint_params, K, H, rng)

    if record_tape:
        if nodes is None:
            raise LearningError("record_tape needs tape-resident policies")
        batch = attach_log_probs(batch, nodes)
    return batch


def _sample_batch(game: MatrixGame, joint_params, K: int, H: int, rng: np.random.Generator) -> TrajectoryBatch:
    n = game.n_agents
    tables = [params.probs() for params in joint_params]
    weights = game.state_weights
    states = np.zeros((K, H + 1), dtype=int)
    actions = np.zeros((K, H, n), dtype=int)
    for t in range(H):
        for j in range(n):
            actions[:, t, j] = sample_from_rows(tables[j][states[:, t]], rng.random(K))
        states[:, t + 1] = 1 + actions[:, t, :] @ weights
    rewards = game.payoff[tuple(actions[..., j] for j in range(n))]
    trajectories = [
        Trajectory(states=states[k], joint_actions=actions[k], rewards=rewards[k]) for k in range(K)
    ]
    return TrajectoryBatch(
        trajectories=trajectories,
        params_snapshot=list(joint_params),
        weights=np.full(K, 1.0 / K),
    )


def attach_log_probs(batch: TrajectoryBatch, nodes: Sequence[PolicyNodes]) -> TrajectoryBatch:
    """Copy of batch whose trajectories carry log-prob nodes from the given policies"""
    if len(nodes) != batch.n_agents:
        raise LearningError(f"expected {batch.n_agents} tape policies, got {len(nodes)}")
    trajectories = []
    for traj in batch.trajectories:
        per_step = [
            [nodes[j].log_prob(int(traj.states[t]), int(traj.joint_actions[t, j])) for j in range(len(nodes))]
            for t in range(traj.horizon)
        ]
        trajectories.append(replace(traj, log_prob_nodes=per_step))
    return replace(batch, trajectories=trajectories)


# ----------------------------------------------------------------------
# returns and baselines


def discounted_return(traj: Trajectory, gamma: float, agent: int, from_t: int = 0) -> float:
    """Σ_{t>=from_t} γ^(t-from_t) r_t for one agent"""
    if not 0 <= from_t <= traj.horizon:
        raise LearningError(f"from_t={from_t} outside [0, {traj.horizon}]")
    total = 0.0
    for r in traj.rewards[from_t:, agent][::-1]:
        total = r + gamma * total
    return float(total)


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns-to-go along the last axis"""
    out = np.zeros_like(rewards, dtype=float)
    running = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        running = rewards[..., t] + gamma * running
        out[..., t] = running
    return out


class LinearFeatureBaseline:
    """Ridge-regularized least squares on [one-hot(state), t/H, (t/H)^2, (t/H)^3, 1]"""

    def __init__(self, n_states: int, horizon: int, reg_coeff: float = 1e-5):
        self.n_states = n_states
        self.horizon = horizon
        self.reg_coeff = reg_coeff
        self.coeffs: Optional[np.ndarray] = None

    @property
    def n_features(self) -> int:
        return self.n_states + 4

    def features(self, states: np.ndarray) -> np.ndarray:
        """(K, H) visited states -> (K, H, F) features"""
        K, H = states.shape
        onehot = np.eye(self.n_states)[states]
        t = np.broadcast_to(np.arange(H) / self.horizon, (K, H))
        return np.concatenate(
            [onehot, t[..., None], (t**2)[..., None], (t**3)[..., None], np.ones((K, H, 1))],
            axis=-1,
        )

    def fit(self, states: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> "LinearFeatureBaseline":
        X = self.features(states).reshape(-1, self.n_features)
        w = np.repeat(weights, states.shape[1])
        y = targets.reshape(-1)
        penalty = np.full(self.n_features, self.reg_coeff)
        penalty[-1] = 0.0  # intercept is not shrunk
        A = X.T @ (w[:, None] * X) + np.diag(penalty)
        b = X.T @ (w * y)
        try:
            self.coeffs = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            self.coeffs = np.linalg.lstsq(A, b, rcond=None)[0]
        return self

    def predict(self, states: np.ndarray) -> np.ndarray:
        if self.coeffs is None:
            return np.zeros(states.shape)
        return self.features(states) @ self.coeffs


def linear_baseline(
    batch: TrajectoryBatch,
    agent: int,
    gamma: float,
    rewards: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Fit the linear feature baseline on the batch and return its fitted values

    Args:
        batch: Collected trajectories
        agent: Whose discounted returns-to-go are regressed
        gamma: Discount factor
        rewards: Optional (K, H) rewards of that agent replacing the recorded ones

    Returns:
        Fitted values, shape (K, H)
    """
    if batch.size == 0:
        raise LearningError("cannot fit a baseline on an empty batch")
    states, targets = _regression_data(batch, agent, gamma, rewards)
    n_states = batch.params_snapshot[0].n_states
    model = LinearFeatureBaseline(n_states, batch.horizon).fit(states, targets, batch.weights)
    return model.predict(states)


def cross_fitted_baseline(
    batch: TrajectoryBatch,
    agent: int,
    gamma: float,
    rewards: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Baseline where each half of the batch is predicted by a fit on the other half"""
    if batch.exact:
        return linear_baseline(batch, agent, gamma, rewards)
    K = batch.size
    values = np.zeros((K, batch.horizon))
    if K < 2:
        return values
    states, targets = _regression_data(batch, agent, gamma, rewards)
    n_states = batch.params_snapshot[0].n_states
    folds = [np.arange(0, K, 2), np.arange(1, K, 2)]
    for fit_idx, predict_idx in ((folds[0], folds[1]), (folds[1], folds[0])):
        w = np.full(len(fit_idx), 1.0 / len(fit_idx))
        model = LinearFeatureBaseline(n_states, batch.horizon).fit(states[fit_idx], targets[fit_idx], w)
        values[predict_idx] = model.predict(states[predict_idx])
    return values


def _regression_data(batch: TrajectoryBatch, agent: int, gamma: float, rewards: Optional[np.ndarray]):
    rew = batch.rewards()[..., agent] if rewards is None else rewards
    return batch.states()[:, :-1], returns_to_go(rew, gamma)


def gae_advantages(traj: Trajectory, values: np.ndarray, cfg: GaeConfig, agent: int = 0) -> np.ndarray:
    """
    Generalized advantage estimates for one trajectory

    Args:
        traj: Trajectory whose rewards are used
        values: Value estimates, length H+1 with the terminal entry 0
        cfg: Discount and GAE lambda
        agent: Whose rewards are used

    Returns:
        Advantages, length H
    """
    H = traj.horizon
    values = np.asarray(values, dtype=float)
    if values.shape != (H + 1,):
        raise LearningError(f"values must have length H+1={H + 1}, got {values.shape}")
    return batch_gae(traj.rewards[None, :, agent], values[None, :], cfg)[0]


def batch_gae(rewards: np.ndarray, values: np.ndarray, cfg: GaeConfig) -> np.ndarray:
    """GAE over (K, H) rewards with (K, H+1) values"""
    deltas = rewards + cfg.gamma * values[:, 1:] - values[:, :-1]
    adv = np.zeros_like(deltas)
    running = np.zeros(deltas.shape[0])
    decay = cfg.gamma * cfg.lam
    for t in range(deltas.shape[1] - 1, -1, -1):
        running = deltas[:, t] + decay * running
        adv[:, t] = running
    return adv


# ----------------------------------------------------------------------
# inner loop


def policy_gradient_estimate(
    batch: TrajectoryBatch,
    agent: int,
    gamma: float,
    rewards: Optional[np.ndarray] = None,
) -> np.ndarray:
    """REINFORCE estimate Σ_k w_k Σ_t γ^t (G_t − b_t) ∇ log π(a_t|s_t) on the logits"""
    params = batch.params_snapshot[agent]
    states = batch.states()[:, :-1]
    acts = batch.actions()[..., agent]
    rew = batch.rewards()[..., agent] if rewards is None else rewards[..., agent]
    coef = _score_coefficients(batch, agent, gamma, rew)
    score = np.eye(params.n_actions)[acts] - params.probs()[states]
    grad = np.zeros_like(params.logits)
    np.add.at(grad, states, coef[..., None] * score)
    return grad


def _score_coefficients(batch: TrajectoryBatch, agent: int, gamma: float, rew: np.ndarray) -> np.ndarray:
    advantages = returns_to_go(rew, gamma) - cross_fitted_baseline(batch, agent, gamma, rew)
    discounts = gamma ** np.arange(batch.horizon)
    return batch.weights[:, None] * discounts[None, :] * advantages


def inner_loop_update(
    joint_params: Sequence[Union[PolicyParams, PolicyNodes]],
    batch: TrajectoryBatch,
    inner_lrs: Sequence[LearningRate],
    on_tape: bool = False,
    gamma: float = 0.96,
    rewards: Optional[np.ndarray] = None,
    agents: Optional[Sequence[int]] = None,
) -> list:
    """
    One policy-gradient step for every agent on its own returns

    Args:
        joint_params: PolicyParams (off tape) or PolicyNodes (on tape) per agent
        batch: Batch collected under joint_params
        inner_lrs: Step size per agent (tape nodes allowed on tape)
        on_tape: Build the update from DiCE surrogates on the tape
        gamma: Discount factor
        rewards: Optional (K, H, n) rewards replacing the recorded ones
        agents: Subset of agents to advance (default: all)

    Returns:
        Updated PolicyParams, or PolicyNodes wrapping the new tape logits
    """
    n = len(joint_params)
    if len(inner_lrs) != n:
        raise LearningError(f"expected {n} learning rates, got {len(inner_lrs)}")
    agents = range(n) if agents is None else agents
    rew = batch.rewards() if rewards is None else rewards

    if not on_tape:
        out = list(joint_params)
        for j in agents:
            alpha = _as_float(inner_lrs[j])
            params = joint_params[j]
            grad = policy_gradient_estimate(batch, j, gamma, rew)
            out[j] = params.with_logits(params.logits + alpha * grad)
        return out

    if not batch.recorded:
        raise LearningError("on-tape inner loop needs a batch recorded on the tape")
    tape = joint_params[0].tape
    boxes = _dice_boxes(tape, batch)
    out = list(joint_params)
    for j in agents:
        nodes = joint_params[j]
        surrogate = _inner_surrogate(tape, batch, boxes, j, gamma, rew)
        grads = tape.gradient(GradRequest(output=surrogate, wrt=nodes.handles, create_graph=True))
        alpha = inner_lrs[j]
        width = nodes.n_actions
        new_rows = []
        for s, row in enumerate(nodes.logits):
            new_row = []
            for a, logit in enumerate(row):
                g = grads[s * width + a]
                if isinstance(alpha, Var):
                    new_row.append(tape.add(logit, tape.mul(alpha, g)))
                else:
                    new_row.append(tape.sum([logit, g], [1.0, float(alpha)]))
            new_rows.append(new_row)
        out[j] = PolicyNodes.from_nodes(tape, nodes.agent_id, new_rows)
    return out


def _as_float(alpha: LearningRate) -> float:
    return alpha.value if isinstance(alpha, Var) else float(alpha)


def _dice_boxes(tape: Tape, batch: TrajectoryBatch):
    """Per (k, t): magic box over cumulative and over step-t all-agent log-probs"""
    cumulative, stepwise = [], []
    for traj in batch.trajectories:
        cum_row, step_row = [], []
        running = None
        for t in range(traj.horizon):
            step_lp = tape.sum(traj.log_prob_nodes[t])
            running = step_lp if running is None else tape.add(running, step_lp)
            cum_row.append(tape.magic_box([running]))
            step_row.append(tape.magic_box([step_lp]))
        cumulative.append(cum_row)
        stepwise.append(step_row)
    return cumulative, stepwise


def _inner_surrogate(tape: Tape, batch: TrajectoryBatch, boxes, agent: int, gamma: float, rew: np.ndarray) -> Var:
    cumulative, stepwise = boxes
    r = rew[..., agent]
    baseline = cross_fitted_baseline(batch, agent, gamma, r)
    discounts = gamma ** np.arange(batch.horizon)
    reward_coef = batch.weights[:, None] * discounts[None, :] * r
    baseline_coef = -batch.weights[:, None] * discounts[None, :] * baseline
    nodes, coefs = [], []
    for k in range(batch.size):
        nodes.extend(cumulative[k])
        coefs.extend(reward_coef[k])
        nodes.extend(stepwise[k])
        coefs.extend(baseline_coef[k])
    return tape.sum(nodes, coefs)


def rollout_chain(
    game: MatrixGame,
    joint_params0: Sequence[PolicyParams],
    L: int,
    K: int,
    H: int,
    inner_lrs: Sequence,
    rng: Optional[np.random.Generator],
    on_tape: bool = False,
    gamma: float = 0.96,
    exact: bool = False,
    tape: Optional[Tape] = None,
) -> ChainRollout:
    """
    Alternate batch collection and inner-loop updates for ℓ = 0..L

    Args:
        game: Game to play
        joint_params0: Initial joint policy
        L: Number of inner-loop updates
        K: Batch size per chain step
        H: Episode length
        inner_lrs: Per agent, a step size or a per-step sequence of step sizes
        rng: Seeded generator
        on_tape: Record everything on a tape so φ_ℓ are differentiable w.r.t. φ₀
        gamma: Discount factor
        exact: Replace sampled batches with exact enumeration
        tape: Existing tape to extend (a fresh one otherwise)

    Returns:
        ChainRollout with L+1 steps
    """
    if L < 1:
        raise LearningError(f"chain length must be >= 1, got {L}")
    params = list(joint_params0)
    nodes = None
    if on_tape:
        tape = tape or Tape()
        nodes = [PolicyNodes.from_params(tape, p) for p in params]
    else:
        tape = None

    steps: List[ChainStep] = []
    for ell in range(L + 1):
        batch = collect_batch(game, params, K, H, rng, record_tape=on_tape, nodes=nodes, exact=exact)
        steps.append(ChainStep(params=params, batch=batch, nodes=nodes))
        if ell == L:
            break
        lrs = [step_lr(inner_lrs[j], ell) for j in range(game.n_agents)]
        if on_tape:
            nodes = inner_loop_update(nodes, batch, lrs, on_tape=True, gamma=gamma)
            params = [node.values() for node in nodes]
        else:
            params = inner_loop_update(params, batch, lrs, gamma=gamma)
    return ChainRollout(steps=steps, inner_lrs=list(inner_lrs), gamma=gamma, tape=tape)


def step_lr(schedule, ell: int) -> LearningRate:
    """Learning rate of one agent at chain step ell"""
    if isinstance(schedule, (list, tuple, np.ndarray)):
        return schedule[ell]
    return schedule
