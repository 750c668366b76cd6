"""
Meta - Outer loop: the meta-gradient estimator, PCGrad aggregation and the train/test loops
"""

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ConfigError, MetaTrainingError
from .games import MatrixGame, make_game
from .learning import (
    ChainRollout,
    GaeConfig,
    TrajectoryBatch,
    batch_gae,
    linear_baseline,
    rollout_chain,
)
from .policies import PolicyParams, Population, build_population, load_population
from .tape import GradRequest, Tape, Var
from ..utils.config import ExperimentConfig, presets
from ..utils.console import get_logger
from ..utils.metrics import RunMetrics
from ..utils.parallel import Job, ParallelRunner

logger = get_logger(__name__)

METHODS = ("meta_mapg", "meta_pg", "no_own_learning", "reinforce")
ESTIMATOR_PATHS = ("score_function", "dice_autodiff")
TERMS = ("current_policy", "own_learning", "peer_learning")

# job stream tags: (master_seed, phase, iteration, job index)
PHASE_STREAMS = {"train": 0, "val": 1, "test": 2}
_SAMPLING_STREAM = 7
_INIT_STREAM = 11


@dataclass(frozen=True)
class MethodSpec:
    method: str = "meta_mapg"
    estimator_path: str = "dice_autodiff"

    def __post_init__(self):
        if self.method not in METHODS:
            raise MetaTrainingError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.estimator_path not in ESTIMATOR_PATHS:
            raise MetaTrainingError(f"unknown estimator path {self.estimator_path!r}")

    @property
    def dice(self) -> bool:
        return self.estimator_path == "dice_autodiff"


@dataclass
class MetaGradient:
    """Meta-gradient on the meta-agent's logits, split into its three score terms"""

    flat: np.ndarray
    terms: Dict[str, np.ndarray]
    lr_grad: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lr_terms: Dict[str, np.ndarray] = field(default_factory=dict)

    def without_peer_learning(self) -> "MetaGradient":
        """Same gradient with the peer-learning term replaced by zeros"""
        if not self.terms:
            raise MetaTrainingError("gradient was computed without its terms")
        terms = dict(self.terms)
        terms["peer_learning"] = np.zeros_like(self.terms["peer_learning"])
        lr_terms = dict(self.lr_terms)
        if lr_terms:
            lr_terms["peer_learning"] = np.zeros_like(lr_terms["peer_learning"])
        return MetaGradient(
            flat=_assemble(terms),
            terms=terms,
            lr_grad=_assemble(lr_terms) if lr_terms else self.lr_grad.copy(),
            lr_terms=lr_terms,
        )


@dataclass(frozen=True, eq=False)
class MetaParams:
    phi0: PolicyParams
    log_inner_lrs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.log_inner_lrs is not None:
            lrs = np.array(self.log_inner_lrs, dtype=float)
            if lrs.ndim != 1 or not np.all(np.isfinite(lrs)):
                raise MetaTrainingError("log_inner_lrs must be a finite vector")
            object.__setattr__(self, "log_inner_lrs", lrs)

    @property
    def learns_lrs(self) -> bool:
        return self.log_inner_lrs is not None

    def inner_lrs(self, default: float):
        """Per-step learning rates of the meta-agent (the fixed default when not learned)"""
        if self.log_inner_lrs is None:
            return default
        return [float(v) for v in np.exp(self.log_inner_lrs)]

    def vector(self) -> np.ndarray:
        lrs = self.log_inner_lrs if self.log_inner_lrs is not None else np.zeros(0)
        return np.concatenate([self.phi0.flat(), lrs])


def _assemble(terms: Dict[str, np.ndarray]) -> np.ndarray:
    return terms["current_policy"] + terms["own_learning"] + terms["peer_learning"]


# ----------------------------------------------------------------------
# estimator


def chain_returns(chain: ChainRollout, gamma: Optional[float] = None) -> np.ndarray:
    """Weighted mean discounted return per chain step and agent, shape (L+1, n)"""
    gamma = chain.gamma if gamma is None else gamma
    out = []
    for step in chain.steps:
        batch = step.batch
        discounts = gamma ** np.arange(batch.horizon)
        returns = np.einsum("kta,t->ka", batch.rewards(), discounts)
        out.append(batch.weights @ returns)
    return np.array(out)


def meta_value_estimate(chain: ChainRollout, agent_i: int, gamma: Optional[float] = None) -> np.ndarray:
    """Mean return of agent_i over batch ℓ+1, for ℓ = 0..L-1"""
    return chain_returns(chain, gamma)[1:, agent_i]


def advantage_coefficients(batch: TrajectoryBatch, agent: int, gae_cfg: GaeConfig) -> np.ndarray:
    """w_k γ^t A_{k,t} with GAE on a linear-baseline critic"""
    rewards = batch.rewards()[..., agent]
    values = np.zeros((batch.size, batch.horizon + 1))
    values[:, :-1] = linear_baseline(batch, agent, gae_cfg.gamma)
    advantages = batch_gae(rewards, values, gae_cfg)
    discounts = gae_cfg.gamma ** np.arange(batch.horizon)
    return batch.weights[:, None] * discounts[None, :] * advantages


def meta_gradient(
    chain: ChainRollout,
    agent_i: int,
    spec: MethodSpec,
    gae_cfg: GaeConfig,
    lr_params: Optional[Sequence[Var]] = None,
    split_terms: bool = True,
) -> MetaGradient:
    """
    Meta-gradient of Σ_ℓ E[Gⁱ under φ_{ℓ+1}] w.r.t. the meta-agent's initial logits

    The coefficients of batch ℓ+1 weight the step-t log-probs of that batch
    and the whole-batch log-likelihoods of batches 0..ℓ, whose samples
    produced φ_{ℓ+1}. The whole-batch parts scale with the coefficient sum of
    batch ℓ+1. The in-batch critic keeps that sum near zero in sampled mode,
    and in exact mode the whole-batch score itself is zero, so current_policy
    is close to zero by construction.

    Args:
        chain: Chain recorded on a tape
        agent_i: Meta-agent index
        spec: Method and estimator path
        gae_cfg: Discount and λ of the outer-loop advantages
        lr_params: Log learning-rate params of the meta-agent, when learned
        split_terms: Report the three terms separately (one backward pass each);
            when off only flat is computed, in a single pass

    Returns:
        MetaGradient with terms current_policy, own_learning and peer_learning
        (empty when split_terms is off)
    """
    if not chain.on_tape or chain.steps[0].nodes is None:
        raise MetaTrainingError("meta_gradient needs a chain recorded on a tape")
    if not all(step.batch.recorded for step in chain.steps):
        raise MetaTrainingError("every chain batch must carry tape log-probs")
    n = chain.steps[0].batch.n_agents
    if not 0 <= agent_i < n:
        raise MetaTrainingError(f"agent {agent_i} is not part of a {n}-agent chain")

    tape = chain.tape
    handles = chain.steps[0].nodes[agent_i].handles
    lr_params = list(lr_params or [])
    wrt = list(handles) + lr_params
    d = len(handles)

    def backward(output: Var) -> Tuple[np.ndarray, np.ndarray]:
        g = np.array(tape.gradient(GradRequest(output=output, wrt=wrt)), dtype=float)
        return g[:d], g[d:]

    zero = (np.zeros(d), np.zeros(len(lr_params)))
    box = tape.magic_box if spec.dice else (lambda ws: ws[0])

    if spec.method == "reinforce":
        batch0 = chain.steps[0].batch
        coef = advantage_coefficients(batch0, agent_i, gae_cfg)
        nodes = [box([traj.log_prob_nodes[t][agent_i]]) for traj in batch0.trajectories for t in range(batch0.horizon)]
        parts = {"current_policy": backward(tape.sum(nodes, coef.reshape(-1))), "own_learning": zero, "peer_learning": zero}
        return _finish(parts)

    peers = [j for j in range(n) if j != agent_i]
    want_own = spec.method != "no_own_learning"
    want_peer = spec.method != "meta_pg" and bool(peers)
    single_pass = spec.dice and spec.method == "meta_mapg"

    c0 = _log_likelihood_node(tape, chain.steps[0].batch, [agent_i])
    own_ll, peer_ll = [], []  # whole-batch log-likelihoods of batches 1..ℓ
    totals = []
    own_nodes, peer_groups, weights, contexts = [], [], [], []
    for ell in range(chain.length):
        if ell:
            own_ll.append(_log_likelihood_node(tape, chain.steps[ell].batch, [agent_i]))
            if peers:
                peer_ll.append(_log_likelihood_node(tape, chain.steps[ell].batch, peers))
        batch = chain.steps[ell + 1].batch
        coef = advantage_coefficients(batch, agent_i, gae_cfg)
        totals.append(float(coef.sum()))
        context = [c0, *own_ll, *peer_ll]
        for k, traj in enumerate(batch.trajectories):
            for t in range(batch.horizon):
                lps = traj.log_prob_nodes[t]
                own_nodes.append(lps[agent_i])
                peer_groups.append([lps[j] for j in peers])
                weights.append(coef[k, t])
                contexts.append(context)
    # batch b's whole-batch terms carry the coefficient sums of batches b+1..L
    tails = [float(sum(totals[b:])) for b in range(1, chain.length)]

    def single_objective() -> Var:
        boxes = [tape.magic_box([*ctx, o, *g]) for ctx, o, g in zip(contexts, own_nodes, peer_groups)]
        return tape.sum(boxes, weights)

    if single_pass and not split_terms:
        return _finish_flat(backward(single_objective()))

    objectives = {"current_policy": tape.sum([box([c0])], [sum(totals)])}
    if want_own:
        objectives["own_learning"] = tape.sum(
            [box([o]) for o in own_nodes] + [box([x]) for x in own_ll], weights + tails
        )
    if want_peer:
        if spec.dice:
            step_nodes, step_weights = [box(g) for g in peer_groups], list(weights)
        else:
            step_nodes = [x for g in peer_groups for x in g]
            step_weights = [w for g, w in zip(peer_groups, weights) for _ in g]
        objectives["peer_learning"] = tape.sum(
            step_nodes + [box([x]) for x in peer_ll], step_weights + tails
        )

    if not split_terms:
        return _finish_flat(backward(tape.sum(list(objectives.values()))))
    parts = {name: backward(objectives[name]) if name in objectives else zero for name in TERMS}
    single = backward(single_objective()) if single_pass else None
    return _finish(parts, single)


def _log_likelihood_node(tape: Tape, batch: TrajectoryBatch, agents: Sequence[int]) -> Var:
    """Σ_k w_k Σ_j log πʲ(τ_k) over the given agents as one tape node"""
    nodes, weights = [], []
    for w, traj in zip(batch.weights, batch.trajectories):
        for t in range(traj.horizon):
            for j in agents:
                nodes.append(traj.log_prob_nodes[t][j])
                weights.append(w)
    return tape.sum(nodes, weights)


def _check_finite(flat: np.ndarray, lr_grad: np.ndarray):
    if not (np.all(np.isfinite(flat)) and np.all(np.isfinite(lr_grad))):
        raise MetaTrainingError(f"non-finite meta-gradient (max |g| = {np.nanmax(np.abs(flat))})")


def _finish(parts, single=None) -> MetaGradient:
    terms = {name: parts[name][0] for name in TERMS}
    lr_terms = {name: parts[name][1] for name in TERMS}
    flat = single[0] if single is not None else _assemble(terms)
    lr_grad = single[1] if single is not None else _assemble(lr_terms)
    _check_finite(flat, lr_grad)
    return MetaGradient(flat=flat, terms=terms, lr_grad=lr_grad, lr_terms=lr_terms)


def _finish_flat(grads) -> MetaGradient:
    flat, lr_grad = grads
    _check_finite(flat, lr_grad)
    return MetaGradient(flat=flat, terms={}, lr_grad=lr_grad)


# ----------------------------------------------------------------------
# aggregation and update


def pcgrad(grads: Sequence[np.ndarray], rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Project away pairwise conflicts, then average

    Args:
        grads: Equal-length gradient vectors
        rng: Shuffles the projection order of the other gradients

    Returns:
        Mean of the projected gradients
    """
    if len(grads) == 0:
        raise MetaTrainingError("pcgrad needs at least one gradient")
    G = np.array([np.asarray(g, dtype=float) for g in grads])
    if G.ndim != 2 or G.shape[1] == 0:
        raise MetaTrainingError(f"pcgrad needs non-empty equal-length vectors, got shape {G.shape}")
    projected = G.copy()
    for i in range(len(G)):
        order = [j for j in range(len(G)) if j != i]
        if rng is not None:
            rng.shuffle(order)
        for j in order:
            dot = projected[i] @ G[j]
            if dot < 0.0:
                projected[i] -= dot / (G[j] @ G[j]) * G[j]
    return projected.mean(axis=0)


def outer_update(
    meta_params: MetaParams,
    aggregated_grad: np.ndarray,
    beta: float,
    lr_grad: Optional[np.ndarray] = None,
) -> MetaParams:
    """Gradient ascent on φⁱ₀ (and the log learning rates when they are learned)"""
    grad = np.asarray(aggregated_grad, dtype=float)
    if grad.size != meta_params.phi0.logits.size:
        raise MetaTrainingError(f"gradient has {grad.size} entries, expected {meta_params.phi0.logits.size}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.sum(~np.isfinite(grad)))
        raise MetaTrainingError(f"aborting outer update: {bad} non-finite gradient entries")
    logits = meta_params.phi0.logits + beta * grad.reshape(meta_params.phi0.logits.shape)
    log_lrs = meta_params.log_inner_lrs
    if log_lrs is not None and lr_grad is not None and len(lr_grad):
        lr_grad = np.asarray(lr_grad, dtype=float)
        if not np.all(np.isfinite(lr_grad)):
            raise MetaTrainingError("aborting outer update: non-finite learning-rate gradient")
        log_lrs = log_lrs + beta * lr_grad
    return MetaParams(phi0=meta_params.phi0.with_logits(logits), log_inner_lrs=log_lrs)


# ----------------------------------------------------------------------
# experiment plumbing


def build_game(config: ExperimentConfig) -> MatrixGame:
    if config.game == "zero_sum":
        raise ConfigError("the zero-sum game has no matrix form; use the analytic engine")
    return make_game(config.game, config.n_agents, config.H)


def resolve_population(config: ExperimentConfig, game: MatrixGame) -> Population:
    """Build a preset population or load a dumped one"""
    name = config.population
    if name in presets.populations:
        table = presets.get_population(name)
        rng = np.random.default_rng(config.population_seed)
        return build_population(game, table["counts"], table["split"], rng)
    if os.path.exists(name):
        return load_population(game, name)
    raise ConfigError(f"population {name!r} is neither a preset nor a readable file")


def initial_meta_params(config: ExperimentConfig, game: MatrixGame, master_seed: int) -> MetaParams:
    """Uniform logits, or small normal noise when init_scale > 0"""
    shape = (game.n_states, game.n_actions)
    logits = np.zeros(shape)
    if config.init_scale:
        logits = np.random.default_rng([master_seed, _INIT_STREAM]).normal(0.0, config.init_scale, size=shape)
    log_lrs = np.full(config.L, np.log(config.inner_lr)) if config.learn_inner_lrs else None
    return MetaParams(phi0=PolicyParams(agent_id=0, logits=logits), log_inner_lrs=log_lrs)


def _joint_policy(phi0: PolicyParams, peers: Sequence[np.ndarray]) -> List[PolicyParams]:
    return [phi0.with_agent(0)] + [PolicyParams(agent_id=j + 1, logits=p) for j, p in enumerate(peers)]


def chain_gradient_job(payload: dict, rng: np.random.Generator) -> dict:
    """Roll one chain against one peer slot and return its meta-gradient and returns"""
    config: ExperimentConfig = payload["config"]
    meta: MetaParams = payload["meta"]
    game = build_game(config)
    joint0 = _joint_policy(meta.phi0, payload["peers"])
    spec = MethodSpec(config.method, config.estimator_path)
    gae_cfg = GaeConfig(gamma=config.gamma, lam=config.gae_lambda)
    peer_lrs = [config.inner_lr] * (game.n_agents - 1)

    if config.opponent_modeling:
        from .opponent_modeling import OpponentModelConfig, om_meta_gradient

        chain = rollout_chain(
            game, joint0, config.L, config.K, config.H, [meta.inner_lrs(config.inner_lr)] + peer_lrs, rng,
            gamma=config.gamma, exact=config.exact,
        )
        grad, _ = om_meta_gradient(
            game, chain, 0, spec, gae_cfg, OpponentModelConfig.from_experiment(config),
            log_inner_lrs=meta.log_inner_lrs, split_terms=False,
        )
    else:
        tape = Tape()
        lr_params = [tape.param(v) for v in meta.log_inner_lrs] if meta.learns_lrs else []
        meta_lr = [tape.exp(p) for p in lr_params] if lr_params else config.inner_lr
        chain = rollout_chain(
            game, joint0, config.L, config.K, config.H, [meta_lr] + peer_lrs, rng,
            on_tape=True, gamma=config.gamma, exact=config.exact, tape=tape,
        )
        grad = meta_gradient(chain, 0, spec, gae_cfg, lr_params, split_terms=False)

    returns = chain_returns(chain, config.gamma)
    return {
        "flat": grad.flat,
        "lr_grad": grad.lr_grad,
        "self_returns": returns[:, 0],
        "peer_returns": returns[:, 1:].mean(axis=1),
    }


def chain_evaluation_job(payload: dict, rng: np.random.Generator) -> dict:
    """Inner-loop-only adaptation from φⁱ₀ against one peer slot"""
    config: ExperimentConfig = payload["config"]
    meta: MetaParams = payload["meta"]
    game = build_game(config)
    joint0 = _joint_policy(meta.phi0, payload["peers"])
    lrs = [meta.inner_lrs(config.inner_lr)] + [config.inner_lr] * (game.n_agents - 1)
    chain = rollout_chain(game, joint0, config.L, config.K, config.H, lrs, rng, gamma=config.gamma, exact=config.exact)
    returns = chain_returns(chain, config.gamma)
    return {"self_returns": returns[:, 0], "peer_returns": returns[:, 1:].mean(axis=1)}


def _peer_slots(population: Population, indices: Sequence[int], n_peers: int, rng: np.random.Generator, pool: Sequence[int]):
    """One slot per index; extra seats in n-player games are drawn from pool"""
    slots = []
    for idx in indices:
        extra = [int(x) for x in rng.choice(pool, size=n_peers - 1, replace=True)] if n_peers > 1 else []
        members = [int(idx)] + extra
        slots.append((int(idx), [population.members[m].logits for m in members]))
    return slots


def evaluate(
    config: ExperimentConfig,
    meta_params: MetaParams,
    population: Population,
    split: str,
    master_seed: int,
    runner: ParallelRunner,
    metrics: Optional[RunMetrics] = None,
    iteration: int = 0,
) -> float:
    """Adapt against every member of a split; returns the mean AUC"""
    indices = population.split[split]
    if not indices:
        raise ConfigError(f"population split {split!r} is empty")
    rng = np.random.default_rng([master_seed, PHASE_STREAMS[split], iteration, _SAMPLING_STREAM])
    slots = _peer_slots(population, indices, config.n_agents - 1, rng, indices)
    jobs = [
        Job(fn=chain_evaluation_job, payload={"config": config, "meta": meta_params, "peers": peers})
        for _, peers in slots
    ]
    results = runner.run(jobs, master_seed, stream=(PHASE_STREAMS[split], iteration))
    aucs = []
    for (peer_id, _), res in zip(slots, results):
        aucs.append(float(np.sum(res["self_returns"][1:])))
        if metrics is not None:
            metrics.add_chain(split, iteration, peer_id, res["self_returns"], res["peer_returns"], per_step=True)
    return float(np.mean(aucs))


def meta_train(
    config: ExperimentConfig,
    master_seed: Optional[int] = None,
    population: Optional[Population] = None,
    runner: Optional[ParallelRunner] = None,
    metrics: Optional[RunMetrics] = None,
) -> Tuple[MetaParams, RunMetrics]:
    """
    Meta-train φⁱ₀ against peers sampled from the population's train split

    Args:
        config: Resolved experiment configuration
        master_seed: Seed of this run (first configured seed by default)
        population: Pre-built population (resolved from the config otherwise)
        runner: Worker pool to reuse
        metrics: Metrics sink to append to

    Returns:
        (best-on-validation or final MetaParams, RunMetrics)
    """
    seed = config.seeds[0] if master_seed is None else master_seed
    if metrics is None:
        metrics = RunMetrics(run_id=run_id_for(config, seed), method=method_label(config), seed=seed)
    if config.game == "zero_sum":
        from .zero_sum_analytic import train_analytic

        return train_analytic(config, seed, metrics)

    game = build_game(config)
    population = population or resolve_population(config, game)
    meta = initial_meta_params(config, game, seed)
    train_idx = population.split["train"]
    if not train_idx:
        raise ConfigError("population has an empty train split")

    own_runner = runner is None
    runner = runner or ParallelRunner(config.workers)
    rng = np.random.default_rng([seed, _SAMPLING_STREAM])
    best, best_score, stale = meta, -np.inf, 0
    validated = False
    try:
        for it in range(config.max_iters):
            picks = rng.choice(train_idx, size=config.peers_per_batch, replace=True)
            slots = _peer_slots(population, picks, config.n_agents - 1, rng, train_idx)
            jobs = [
                Job(fn=chain_gradient_job, payload={"config": config, "meta": meta, "peers": peers})
                for _, peers in slots
            ]
            if config.async_updates:
                meta, aucs = _async_iteration(config, meta, jobs, slots, runner, seed, it, metrics)
            else:
                results = runner.run(jobs, seed, stream=(PHASE_STREAMS["train"], it))
                aucs = []
                for (peer_id, _), res in zip(slots, results):
                    metrics.add_chain("train", it, peer_id, res["self_returns"], res["peer_returns"], per_step=False)
                    aucs.append(float(np.sum(res["self_returns"][1:])))
                grads = [np.concatenate([res["flat"], res["lr_grad"]]) for res in results]
                agg = pcgrad(grads, rng) if config.pcgrad else np.mean(grads, axis=0)
                d = meta.phi0.logits.size
                meta = outer_update(meta, agg[:d], config.outer_lr, agg[d:])
            logger.info(f"iteration={it} peers={len(jobs)} mean_auc={np.mean(aucs):.4f}")

            last = it == config.max_iters - 1
            if config.val_every and ((it + 1) % config.val_every == 0 or last):
                validated = True
                score = evaluate(config, meta, population, "val", seed, runner, metrics, iteration=it)
                logger.info(f"iteration={it} val_auc={score:.4f} best={max(score, best_score):.4f}")
                if score > best_score:
                    best, best_score, stale = meta, score, 0
                else:
                    stale += 1
                    if config.patience and stale >= config.patience:
                        logger.warning(f"early stop at iteration={it}: no validation gain for {stale} checks")
                        break
    finally:
        if own_runner:
            runner.close()
    return (best if validated else meta), metrics


def _async_iteration(config, meta, jobs, slots, runner, seed, it, metrics):
    """Apply each peer's gradient as soon as its chain finishes"""
    aucs = []
    for index, res in runner.run_unordered(jobs, seed, stream=(PHASE_STREAMS["train"], it)):
        metrics.add_chain("train", it, slots[index][0], res["self_returns"], res["peer_returns"], per_step=False)
        aucs.append(float(np.sum(res["self_returns"][1:])))
        meta = outer_update(meta, res["flat"], config.outer_lr, res["lr_grad"])
    return meta, aucs


def meta_test(
    config: ExperimentConfig,
    meta_params: MetaParams,
    master_seed: Optional[int] = None,
    population: Optional[Population] = None,
    runner: Optional[ParallelRunner] = None,
    metrics: Optional[RunMetrics] = None,
) -> RunMetrics:
    """Adapt φⁱ₀ against every test-split peer with the inner loop only"""
    if config.game == "zero_sum":
        raise ConfigError("meta_test runs on matrix games; the zero-sum game is covered by fig3")
    seed = config.seeds[0] if master_seed is None else master_seed
    if metrics is None:
        metrics = RunMetrics(run_id=run_id_for(config, seed), method=method_label(config), seed=seed)
    game = build_game(config)
    if meta_params.phi0.logits.shape != (game.n_states, game.n_actions):
        raise ConfigError(f"checkpoint logits {meta_params.phi0.logits.shape} do not fit game {game.name}")
    population = population or resolve_population(config, game)
    own_runner = runner is None
    runner = runner or ParallelRunner(config.workers)
    try:
        score = evaluate(config, meta_params, population, "test", seed, runner, metrics)
    finally:
        if own_runner:
            runner.close()
    logger.info(f"seed={seed} method={metrics.method} test_auc={score:.4f}")
    return metrics


# ----------------------------------------------------------------------
# method comparison

VARIANTS = {
    "meta_mapg": {"method": "meta_mapg", "opponent_modeling": False},
    "meta_pg": {"method": "meta_pg", "opponent_modeling": False},
    "no_own_learning": {"method": "no_own_learning", "opponent_modeling": False},
    "reinforce": {"method": "reinforce", "opponent_modeling": False},
    "meta_mapg_om": {"method": "meta_mapg", "opponent_modeling": True},
}


def variant_config(config: ExperimentConfig, variant: str) -> ExperimentConfig:
    """Copy of config running one named method variant in a single process"""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {tuple(VARIANTS)}")
    return ExperimentConfig.model_validate({**config.model_dump(), **VARIANTS[variant], "workers": 1})


def variant_run_job(payload: dict, rng: np.random.Generator) -> dict:
    """Meta-train then meta-test one (variant, seed) pair; the seed fixes every stream"""
    config: ExperimentConfig = payload["config"]
    seed: int = payload["seed"]
    meta, metrics = meta_train(config, master_seed=seed)
    meta_test(config, meta, master_seed=seed, metrics=metrics)
    return {"rows": metrics.rows, "meta": meta}


def compare_methods(
    config: ExperimentConfig,
    variants: Sequence[str],
    runner: ParallelRunner,
) -> Tuple[List[RunMetrics], Dict[Tuple[str, int], MetaParams]]:
    """
    Train and test every (variant, seed) pair as one pool job

    Args:
        config: Shared settings; method and opponent_modeling are overridden per variant
        variants: Keys of VARIANTS
        runner: Pool the pairs are spread over

    Returns:
        (RunMetrics per pair in variant-then-seed order, final MetaParams per pair)
    """
    if config.game == "zero_sum":
        raise ConfigError("compare runs on matrix games; the zero-sum game is covered by fig3")
    if not variants:
        raise ConfigError("compare needs at least one variant")
    pairs = [(variant_config(config, v), v, seed) for v in variants for seed in config.seeds]
    jobs = [Job(fn=variant_run_job, payload={"config": cfg, "seed": seed}) for cfg, _, seed in pairs]
    results = runner.run(jobs, min(config.seeds))
    collected, params = [], {}
    for (cfg, variant, seed), res in zip(pairs, results):
        metrics = RunMetrics(run_id=run_id_for(cfg, seed), method=method_label(cfg), seed=seed)
        metrics.rows.extend(res["rows"])
        collected.append(metrics)
        params[(variant, seed)] = res["meta"]
    return collected, params


def method_label(config: ExperimentConfig) -> str:
    return f"{config.method}_om" if config.opponent_modeling else config.method


def run_id_for(config: ExperimentConfig, seed: int) -> str:
    return f"{config.game}-{method_label(config)}-s{seed}"
