"""
Zero-Sum Analytic - Stateless two-player game with V^i = φⁱφʲ and V^j = −φⁱφʲ

Actions equal the policy parameters, so inner updates and meta-gradients
have closed forms. Used for the adaptation-curve experiment and as a tape
cross-check.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from . import MetaMarlError
from .policies import PolicyParams
from .tape import Tape, grad
from ..utils.console import get_logger

logger = get_logger(__name__)

FIG3_METHODS = ("meta_mapg", "meta_pg")


@dataclass(frozen=True)
class ScalarPair:
    phi_i: float
    phi_j: float

    def __post_init__(self):
        if not (math.isfinite(self.phi_i) and math.isfinite(self.phi_j)):
            raise MetaMarlError(f"non-finite parameters ({self.phi_i}, {self.phi_j})")


def inner_step(pair: ScalarPair, alpha: float) -> ScalarPair:
    """φⁱ₁ = φⁱ₀ + αφʲ₀, φʲ₁ = φʲ₀ − αφⁱ₀"""
    return ScalarPair(pair.phi_i + alpha * pair.phi_j, pair.phi_j - alpha * pair.phi_i)


def adapted_value(pair: ScalarPair, alpha: float) -> float:
    after = inner_step(pair, alpha)
    return after.phi_i * after.phi_j


def mapg_grad(pair: ScalarPair, alpha: float) -> float:
    after = inner_step(pair, alpha)
    return after.phi_j - alpha * after.phi_i


def pg_grad(pair: ScalarPair, alpha: float) -> float:
    return inner_step(pair, alpha).phi_j


def tape_meta_grad(pair: ScalarPair, alpha: float, method: str = "meta_mapg") -> float:
    """
    d V^i(φ₁) / d φⁱ₀ by differentiating through both agents' inner updates on a tape

    Args:
        pair: Initial parameters
        alpha: Inner learning rate
        method: meta_mapg, or meta_pg to cut the peer's dependence on φⁱ₀

    Returns:
        Meta-gradient for the meta-agent
    """
    if method not in FIG3_METHODS:
        raise MetaMarlError(f"unknown method {method!r}")
    tape = Tape()
    phi_i = tape.param(pair.phi_i)
    phi_j = tape.param(pair.phi_j)
    (g_i,) = grad(tape.mul(phi_i, phi_j), [phi_i], create_graph=True)
    (g_j,) = grad(tape.neg(tape.mul(phi_i, phi_j)), [phi_j], create_graph=True)
    next_i = tape.sum([phi_i, g_i], [1.0, alpha])
    next_j = tape.sum([phi_j, g_j], [1.0, alpha])
    if method == "meta_pg":
        next_j = tape.stop_gradient(next_j)
    (out,) = grad(tape.mul(next_i, next_j), [phi_i])
    return float(out)


def train_pairs(
    phi_i: np.ndarray,
    phi_j: np.ndarray,
    alpha: float,
    beta: float,
    iters: int,
    method: str,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Outer-loop training of φⁱ₀ for many independent samples at once

    Returns:
        (V history of shape (iters, n) recorded before each update, final φⁱ₀)
    """
    if method not in FIG3_METHODS:
        raise MetaMarlError(f"unknown method {method!r}")
    phi_i = np.array(phi_i, dtype=float)
    phi_j = np.asarray(phi_j, dtype=float)
    history = np.zeros((iters, phi_i.size))
    for n in range(iters):
        next_i = phi_i + alpha * phi_j
        next_j = phi_j - alpha * phi_i
        history[n] = next_i * next_j
        step = next_j - alpha * next_i if method == "meta_mapg" else next_j
        phi_i = phi_i + beta * step
    return history, phi_i


def _initial_samples(n_samples: int, seed: int, init: str):
    rng = np.random.default_rng(seed)
    phi_j = rng.uniform(-1.0, 1.0, size=n_samples)
    if init == "mirror":
        phi_i = phi_j.copy()
    elif init == "uniform":
        phi_i = rng.uniform(-1.0, 1.0, size=n_samples)
    else:
        raise MetaMarlError(f"unknown init {init!r}; expected mirror or uniform")
    return phi_i, phi_j


def run_fig3(
    n_samples: int = 200,
    alpha: float = 0.75,
    beta: float = 0.01,
    iters: int = 300,
    seed: int = 0,
    init: str = "mirror",
) -> pd.DataFrame:
    """
    Adaptation value V = φⁱ₁φʲ₁ over outer-loop training for both methods

    Args:
        n_samples: Independent (φⁱ₀, φʲ₀) samples, φʲ₀ ~ U[-1, 1]
        alpha: Inner learning rate
        beta: Outer learning rate
        iters: Outer updates per sample
        seed: Sampling seed
        init: mirror starts φⁱ₀ at φʲ₀, uniform draws it independently

    Returns:
        Frame with columns iteration, method, mean, ci95 (2 x iters rows)
    """
    phi_i, phi_j = _initial_samples(n_samples, seed, init)
    frames = []
    for method in FIG3_METHODS:
        history, _ = train_pairs(phi_i, phi_j, alpha, beta, iters, method)
        std = history.std(axis=1, ddof=1) if n_samples > 1 else np.zeros(iters)
        frames.append(
            pd.DataFrame(
                {
                    "iteration": np.arange(iters),
                    "method": method,
                    "mean": history.mean(axis=1),
                    "ci95": 1.96 * std / np.sqrt(n_samples),
                }
            )
        )
        if iters:
            logger.info(f"method={method} start={history[0].mean():.4f} end={history[-1].mean():.4f}")
    return pd.concat(frames, ignore_index=True)


def smoothed(values, window: int = 10) -> np.ndarray:
    """Trailing moving average over full windows"""
    values = np.asarray(values, dtype=float)
    if window < 1 or window > len(values):
        raise MetaMarlError(f"window {window} does not fit {len(values)} values")
    return np.convolve(values, np.ones(window) / window, mode="valid")


def train_analytic(config, seed: int, metrics):
    """
    meta_train for the zero-sum game

    Every sample occupies one peer slot, so each iteration records
    peers_per_batch rows. The returned phi0 holds one φⁱ₀ per sample.
    """
    from .meta import MetaParams

    phi_i, phi_j = _initial_samples(config.peers_per_batch, seed, config.fig3_init)
    history, final = train_pairs(phi_i, phi_j, config.inner_lr, config.outer_lr, config.max_iters, config.method)
    for it in range(config.max_iters):
        for p in range(config.peers_per_batch):
            v = history[it, p]
            metrics.add_chain("train", it, p, [0.0, v], [0.0, -v], per_step=False)
    if config.max_iters:
        logger.info(f"method={config.method} start={history[0].mean():.4f} end={history[-1].mean():.4f}")
    meta = MetaParams(phi0=PolicyParams(agent_id=0, logits=final.reshape(-1, 1)))
    return meta, metrics
