"""
Opponent Modeling - Decentralized meta-training with likelihood-fitted peer models
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import OpponentModelError
from .games import MatrixGame
from .learning import ChainRollout, ChainStep, GaeConfig, TrajectoryBatch, attach_log_probs, inner_loop_update, step_lr
from .meta import MetaGradient, MetaParams, MethodSpec, meta_gradient, meta_train
from .policies import PolicyNodes, PolicyParams, log_softmax_rows, softmax_rows, uniform_params
from .tape import Tape
from ..utils.config import ExperimentConfig
from ..utils.console import get_logger
from ..utils.metrics import RunMetrics

logger = get_logger(__name__)

_MIN_STEP = 1e-12


@dataclass
class InferredPeer:
    params_hat: PolicyParams
    fit_log_likelihood: float
    iterations_used: int
    history: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class OpponentModelConfig:
    lr_eta: float = 1.0
    tol: float = 1e-6
    max_iters: int = 200
    inner_lr_hat: float = 1.0

    @classmethod
    def from_experiment(cls, config: ExperimentConfig) -> "OpponentModelConfig":
        return cls(lr_eta=config.om_lr, tol=config.om_tol, max_iters=config.om_max_iters, inner_lr_hat=config.inner_lr)


def action_counts(batch: TrajectoryBatch, agent: int, n_states: int, n_actions: int) -> np.ndarray:
    """Weighted visit counts N[s, a] of one agent's observed actions"""
    counts = np.zeros((n_states, n_actions))
    states = batch.states()[:, :-1]
    acts = batch.actions()[..., agent]
    w = np.broadcast_to(batch.weights[:, None], states.shape)
    np.add.at(counts, (states, acts), w)
    return counts


def _log_likelihood(counts: np.ndarray, logits: np.ndarray) -> float:
    return float(np.sum(counts * log_softmax_rows(logits)))


def fit_opponent(
    batch: TrajectoryBatch,
    agent: int,
    init_params_hat: PolicyParams,
    lr_eta: float = 1.0,
    tol: float = 1e-6,
    max_iters: int = 200,
) -> InferredPeer:
    """
    Gradient ascent on Σ_k w_k Σ_t log π̂(a_t | s_t) over the peer's logits

    Args:
        batch: Observed trajectories (only states and the peer's actions are read)
        agent: Seat of the modeled peer
        init_params_hat: Starting logits
        lr_eta: Initial step size, halved whenever the likelihood would drop
        tol: Stop once the likelihood changes by less than this
        max_iters: Ascent step limit (0 returns the init unchanged)

    Returns:
        InferredPeer with the fitted logits and the likelihood trace
    """
    if batch.size == 0 or batch.horizon == 0:
        raise OpponentModelError("cannot fit an opponent model on an empty batch")
    if not 0 <= agent < batch.n_agents:
        raise OpponentModelError(f"agent {agent} is not part of the batch")
    logits = np.array(init_params_hat.logits, dtype=float)
    counts = action_counts(batch, agent, *logits.shape)
    visits = counts.sum(axis=1, keepdims=True)
    ll = _log_likelihood(counts, logits)
    history = [ll]
    used = 0
    for used in range(1, max_iters + 1):
        grad = counts - visits * softmax_rows(logits)
        step = lr_eta
        while True:
            candidate = logits + step * grad
            cand_ll = _log_likelihood(counts, candidate)
            if cand_ll >= ll:
                break
            step *= 0.5
            if step < _MIN_STEP:
                logger.warning(f"opponent fit stalled agent={agent} iteration={used} ll={ll:.6g}")
                candidate, cand_ll = logits, ll
                break
        delta = cand_ll - ll
        logits, ll = candidate, cand_ll
        history.append(ll)
        if abs(delta) < tol:
            break
    return InferredPeer(
        params_hat=init_params_hat.with_logits(logits),
        fit_log_likelihood=ll,
        iterations_used=used,
        history=history,
    )


def om_meta_gradient(
    game: MatrixGame,
    chain: ChainRollout,
    agent_i: int,
    spec: MethodSpec,
    gae_cfg: GaeConfig,
    om: OpponentModelConfig,
    init_hat: Optional[Sequence[PolicyParams]] = None,
    log_inner_lrs: Optional[np.ndarray] = None,
    split_terms: bool = True,
) -> Tuple[MetaGradient, List[List[InferredPeer]]]:
    """
    Meta-gradient where every peer is replaced by a model fitted to its actions

    The observed chain supplies trajectories only. A fresh tape holds the
    meta-agent's φⁱ₀, the fitted φ̂₀ of each peer, and the DiCE inner updates
    of both. At each step the predicted φ̂_{ℓ+1} is moved onto the logits
    refitted from batch ℓ+1 by a constant offset, so values follow the fit
    while derivatives follow the prediction.

    Args:
        game: Game the chain was played in
        chain: Observed chain (sampled or exact, tape not required)
        agent_i: Meta-agent index
        spec: Method and estimator path
        gae_cfg: Outer-loop advantage settings
        om: Fit settings and the learning rate assumed for peers
        init_hat: Initial peer models (uniform by default)
        log_inner_lrs: Meta-agent's learned log learning rates, if any
        split_terms: Forwarded to meta_gradient

    Returns:
        (MetaGradient, fitted peer models per chain step)
    """
    n = game.n_agents
    peers = [j for j in range(n) if j != agent_i]
    if init_hat is None:
        init_hat = [uniform_params(game, j) for j in range(n)]
    tape = Tape()
    lr_params = [tape.param(v) for v in log_inner_lrs] if log_inner_lrs is not None else []
    meta_schedule = [tape.exp(p) for p in lr_params] if lr_params else chain.inner_lrs[agent_i]

    batch0 = chain.steps[0].batch
    fitted = {j: fit_opponent(batch0, j, init_hat[j].with_agent(j), om.lr_eta, om.tol, om.max_iters) for j in peers}
    fits: List[List[InferredPeer]] = [[fitted[j] for j in peers]]
    nodes: List[Optional[PolicyNodes]] = [None] * n
    nodes[agent_i] = PolicyNodes.from_params(tape, chain.steps[0].params[agent_i])
    for j in peers:
        nodes[j] = PolicyNodes.from_params(tape, fitted[j].params_hat)

    steps: List[ChainStep] = []
    for ell in range(chain.length + 1):
        batch = attach_log_probs(chain.steps[ell].batch, nodes)
        steps.append(ChainStep(params=[x.values() for x in nodes], batch=batch, nodes=list(nodes)))
        if ell == chain.length:
            break
        rewards = game.payoff[tuple(batch.actions()[..., j] for j in range(n))]
        lrs = [step_lr(meta_schedule, ell) if j == agent_i else om.inner_lr_hat for j in range(n)]
        advanced = inner_loop_update(nodes, batch, lrs, on_tape=True, gamma=chain.gamma, rewards=rewards)
        next_batch = chain.steps[ell + 1].batch
        step_fits = []
        for j in peers:
            predicted = advanced[j].values()
            fit = fit_opponent(next_batch, j, predicted, om.lr_eta, om.tol, om.max_iters)
            offset = fit.params_hat.logits - predicted.logits
            rows = [
                [tape.sum([x], bias=offset[s, a]) for a, x in enumerate(row)]
                for s, row in enumerate(advanced[j].logits)
            ]
            advanced[j] = PolicyNodes.from_nodes(tape, j, rows)
            step_fits.append(fit)
        fits.append(step_fits)
        nodes = advanced

    om_chain = ChainRollout(steps=steps, inner_lrs=list(chain.inner_lrs), gamma=chain.gamma, tape=tape)
    return meta_gradient(om_chain, agent_i, spec, gae_cfg, lr_params, split_terms), fits


def meta_train_om(config: ExperimentConfig, **kwargs) -> Tuple[MetaParams, RunMetrics]:
    """meta_train with every peer seen through a fitted model"""
    return meta_train(config.model_copy(update={"opponent_modeling": True}), **kwargs)
