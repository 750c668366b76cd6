"""
Gradcheck - Self-checks of every estimator against exact references
"""

import time
from typing import Any, Callable, Dict, List

import numpy as np

from .games import make_ipd, make_rps
from .learning import GaeConfig, batch_gae, returns_to_go, rollout_chain
from .meta import MethodSpec, meta_gradient, pcgrad
from .oracle import bellman_residual, exact_expected_return, exact_q_table, finite_diff_meta_grad
from .policies import PolicyParams, build_population, softmax_rows
from .tape import Tape, grad
from .zero_sum_analytic import ScalarPair, mapg_grad, pg_grad, tape_meta_grad
from ..utils.config import presets
from ..utils.console import get_logger

logger = get_logger(__name__)

GAMES = ("ipd", "rps", "zero_sum", "all")


def relative_close(a: np.ndarray, b: np.ndarray, rtol: float, atol_floor: float = 1e-8) -> bool:
    """Per coordinate: relative for |b| >= atol_floor, absolute below it"""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    small = np.abs(b) < atol_floor
    ok_small = np.abs(a - b)[small] <= atol_floor
    ok_large = np.abs(a - b)[~small] <= rtol * np.abs(b)[~small]
    return bool(np.all(ok_small) and np.all(ok_large))


class GradCheckSuite:
    """Runs named checks and reports one result dict per check"""

    def __init__(self, seed: int = 0, n_oracle_inits: int = 20, n_sampled_chains: int = 10):
        self.seed = seed
        self.n_oracle_inits = n_oracle_inits
        self.n_sampled_chains = n_sampled_chains
        self.checks: Dict[str, Dict[str, Any]] = {
            "magic_box": {"games": ("ipd", "rps"), "fn": self.check_magic_box},
            "gae_identities": {"games": ("ipd", "rps"), "fn": self.check_gae_identities},
            "pcgrad": {"games": ("ipd", "rps"), "fn": self.check_pcgrad},
            "populations": {"games": ("ipd", "rps"), "fn": self.check_populations},
            "bellman": {"games": ("ipd", "rps"), "fn": self.check_bellman},
            "zero_sum_closed_form": {"games": ("zero_sum",), "fn": self.check_zero_sum_closed_form},
            "oracle_meta_gradient": {"games": ("ipd",), "fn": self.check_oracle_meta_gradient},
            "peer_term_removal": {"games": ("ipd", "rps"), "fn": self.check_peer_term_removal},
            "estimator_paths": {"games": ("ipd",), "fn": self.check_estimator_paths},
        }

    def run(self, game: str = "all") -> List[Dict[str, Any]]:
        """
        Run every check registered for game

        Args:
            game: ipd, rps, zero_sum or all

        Returns:
            List of result dicts with name, success, error, seconds and details
        """
        if game not in GAMES:
            return [{"name": "select", "success": False, "error": f"unknown game {game!r}", "seconds": 0.0}]
        results = []
        for name, entry in self.checks.items():
            if game != "all" and game not in entry["games"]:
                continue
            results.append(self._run_one(name, entry["fn"]))
        return results

    def _run_one(self, name: str, fn: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        start = time.perf_counter()
        try:
            details = fn()
            success = bool(details.pop("ok"))
            error = "" if success else details.get("reason", "mismatch")
        except Exception as e:
            details, success, error = {}, False, f"{type(e).__name__}: {e}"
        result = {
            "name": name,
            "success": success,
            "error": error,
            "seconds": time.perf_counter() - start,
            "details": details,
        }
        level = logger.info if success else logger.error
        level(f"check={name} success={success} seconds={result['seconds']:.2f} {error}".rstrip())
        return result

    # ------------------------------------------------------------------

    def check_magic_box(self) -> Dict[str, Any]:
        """First and second derivatives of r·⬛(log π(a)) on a 2-action bandit"""
        rng = np.random.default_rng(self.seed)
        worst = 0.0
        for _ in range(10):
            theta = rng.normal(size=2)
            action = int(rng.integers(2))
            reward = float(rng.normal())
            tape = Tape()
            params = [tape.param(v) for v in theta]
            lse = tape.log(tape.sum([tape.exp(p) for p in params]))
            logp = tape.sum([params[action], lse], [1.0, -1.0])
            box = tape.magic_box([logp])
            if box.value != 1.0:
                return {"ok": False, "reason": f"magic box forward value {box.value}"}
            surrogate = tape.sum([box], [reward])
            first = grad(surrogate, params, create_graph=True)
            hessian = np.array([[float(v) for v in grad(g, params)] for g in first])

            pi = softmax_rows(theta)
            score = np.eye(2)[action] - pi
            expected_first = reward * score
            expected_hessian = reward * (np.outer(score, score) - (np.diag(pi) - np.outer(pi, pi)))
            worst = max(
                worst,
                float(np.max(np.abs(np.array([g.value for g in first]) - expected_first))),
                float(np.max(np.abs(hessian - expected_hessian))),
            )
        return {"ok": worst < 1e-10, "max_abs_error": worst, "reason": f"max error {worst:.3g}"}

    def check_gae_identities(self) -> Dict[str, Any]:
        rng = np.random.default_rng(self.seed)
        rewards = rng.normal(size=(4, 7))
        values = np.concatenate([rng.normal(size=(4, 7)), np.zeros((4, 1))], axis=1)
        gamma = 0.96
        full = batch_gae(rewards, values, GaeConfig(gamma=gamma, lam=1.0))
        td = batch_gae(rewards, values, GaeConfig(gamma=gamma, lam=0.0))
        err_full = float(np.max(np.abs(full - (returns_to_go(rewards, gamma) - values[:, :-1]))))
        err_td = float(np.max(np.abs(td - (rewards + gamma * values[:, 1:] - values[:, :-1]))))
        return {"ok": max(err_full, err_td) < 1e-12, "lambda_one": err_full, "lambda_zero": err_td}

    def check_pcgrad(self) -> Dict[str, Any]:
        rng = np.random.default_rng(self.seed)
        worst = 0.0
        for _ in range(50):
            g1, g2 = rng.normal(size=(2, 6))
            if g1 @ g2 >= 0:
                continue
            shuffle = np.random.default_rng(0)
            G = np.array([g1, g2])
            projected = [
                g1 - (g1 @ g2) / (g2 @ g2) * g2,
                g2 - (g2 @ g1) / (g1 @ g1) * g1,
            ]
            out = pcgrad(G, shuffle)
            worst = max(worst, float(np.max(np.abs(out - np.mean(projected, axis=0)))))
            if projected[0] @ g2 < -1e-10 or projected[1] @ g1 < -1e-10:
                return {"ok": False, "reason": "projection left a conflict"}
        return {"ok": worst < 1e-12, "max_abs_error": worst}

    def check_populations(self) -> Dict[str, Any]:
        sizes = {}
        for name, game in (("ipd", make_ipd(2)), ("rps", make_rps(2, 2))):
            table = presets.get_population(name)
            population = build_population(game, table["counts"], table["split"], np.random.default_rng(self.seed))
            sizes[name] = population.sizes
            if population.sizes != tuple(table["split"]):
                return {"ok": False, "reason": f"{name} split sizes {population.sizes}"}
            for spec, member in zip(population.specs, population.members):
                probs = member.probs()
                if spec.kind == "cooperating" and not np.all((probs[:, 0] >= 0.5) & (probs[:, 0] < 1.0)):
                    return {"ok": False, "reason": "cooperating persona outside [0.5, 1)"}
                if spec.kind == "defecting" and not np.all(probs[:, 0] < 0.5):
                    return {"ok": False, "reason": "defecting persona outside [0, 0.5)"}
                if spec.kind in ("rock", "paper", "scissors"):
                    preferred = ("rock", "paper", "scissors").index(spec.kind)
                    others = np.delete(probs, preferred, axis=1)
                    if not np.all(probs[:, preferred] > others.max(axis=1)):
                        return {"ok": False, "reason": f"{spec.kind} persona without a dominant action"}
        return {"ok": True, "sizes": sizes}

    def check_bellman(self) -> Dict[str, Any]:
        rng = np.random.default_rng(self.seed)
        game = make_ipd(3)
        joint = [PolicyParams(j, rng.normal(size=(game.n_states, game.n_actions))) for j in range(2)]
        table = exact_q_table(game, joint, 3, 0.9)
        residual = bellman_residual(table, game, joint, 3)
        value_gap = float(np.max(np.abs(table.v[0, 0] - exact_expected_return(game, joint, 3, 0.9))))
        return {"ok": max(residual, value_gap) < 1e-12, "residual": residual, "value_gap": value_gap}

    def check_zero_sum_closed_form(self) -> Dict[str, Any]:
        rng = np.random.default_rng(self.seed)
        worst = 0.0
        for _ in range(100):
            phi_i, phi_j = rng.uniform(-1.0, 1.0, size=2)
            alpha = float(rng.uniform(0.0, 1.0))
            pair = ScalarPair(float(phi_i), float(phi_j))
            worst = max(
                worst,
                abs(mapg_grad(pair, alpha) - tape_meta_grad(pair, alpha, "meta_mapg")),
                abs(pg_grad(pair, alpha) - tape_meta_grad(pair, alpha, "meta_pg")),
            )
        return {"ok": worst < 1e-10, "max_abs_error": worst}

    def check_oracle_meta_gradient(self) -> Dict[str, Any]:
        """Exact-mode estimator on IPD (H=2, L=1) against finite differences of the exact meta-value"""
        game = make_ipd(2)
        H, L, gamma, alpha = 2, 1, 0.96, 0.5
        gae_cfg = GaeConfig(gamma=gamma, lam=1.0)
        rng = np.random.default_rng(self.seed)
        failures = 0
        for _ in range(self.n_oracle_inits):
            joint = [PolicyParams(j, rng.normal(0.0, 0.5, size=(game.n_states, game.n_actions))) for j in range(2)]
            reference = finite_diff_meta_grad(game, joint, alpha, L, H, gamma, 0)
            for path in ("score_function", "dice_autodiff"):
                chain = rollout_chain(game, joint, L, 1, H, [alpha, alpha], None, on_tape=True, gamma=gamma, exact=True)
                estimate = meta_gradient(chain, 0, MethodSpec("meta_mapg", path), gae_cfg).flat
                if not relative_close(estimate, reference, 1e-5):
                    failures += 1
        return {"ok": failures == 0, "failures": failures, "reason": f"{failures} mismatching estimates"}

    def check_peer_term_removal(self) -> Dict[str, Any]:
        game = make_ipd(4)
        rng = np.random.default_rng(self.seed)
        joint = [PolicyParams(j, rng.normal(size=(game.n_states, game.n_actions))) for j in range(2)]
        gae_cfg = GaeConfig()
        for path in ("score_function", "dice_autodiff"):
            chain = rollout_chain(game, joint, 2, 4, 4, [1.0, 1.0], np.random.default_rng(1), on_tape=True)
            full = meta_gradient(chain, 0, MethodSpec("meta_mapg", path), gae_cfg).without_peer_learning()
            pg = meta_gradient(chain, 0, MethodSpec("meta_pg", path), gae_cfg)
            if not np.array_equal(full.flat, pg.flat) or np.any(pg.terms["peer_learning"] != 0.0):
                return {"ok": False, "reason": f"{path}: meta_pg differs from meta_mapg without the peer term"}
        return {"ok": True}

    def check_estimator_paths(self) -> Dict[str, Any]:
        game = make_ipd(6)
        rng = np.random.default_rng(self.seed)
        gae_cfg = GaeConfig()
        failures = 0
        for _ in range(self.n_sampled_chains):
            joint = [PolicyParams(j, rng.normal(size=(game.n_states, game.n_actions))) for j in range(2)]
            chain = rollout_chain(game, joint, 2, 8, 6, [1.0, 1.0], rng, on_tape=True)
            score = meta_gradient(chain, 0, MethodSpec("meta_mapg", "score_function"), gae_cfg).flat
            dice = meta_gradient(chain, 0, MethodSpec("meta_mapg", "dice_autodiff"), gae_cfg).flat
            if not relative_close(dice, score, 1e-6):
                failures += 1
        return {"ok": failures == 0, "failures": failures, "reason": f"{failures} chains disagree"}


suite = GradCheckSuite()
