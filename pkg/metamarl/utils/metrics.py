"""
Metrics - Per-run metric rows and the metrics.csv contract
"""

import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

COLUMNS = [
    "run_id",
    "method",
    "seed",
    "phase",
    "iteration",
    "peer_id",
    "chain_step",
    "mean_return_self",
    "mean_return_peers",
    "auc",
]
PHASES = ("train", "val", "test")
FLOAT_FORMAT = "%.17g"


class RunMetrics:
    """Rows of one (run, method, seed)"""

    def __init__(self, run_id: str, method: str, seed: int):
        self.run_id = run_id
        self.method = method
        self.seed = seed
        self.rows: List[Dict] = []

    def __len__(self) -> int:
        return len(self.rows)

    def _row(self, phase, iteration, peer_id, chain_step, self_return, peer_return, auc) -> Dict:
        return {
            "run_id": self.run_id,
            "method": self.method,
            "seed": self.seed,
            "phase": phase,
            "iteration": int(iteration),
            "peer_id": int(peer_id),
            "chain_step": chain_step,
            "mean_return_self": float(self_return),
            "mean_return_peers": float(peer_return),
            "auc": auc,
        }

    def add_chain(
        self,
        phase: str,
        iteration: int,
        peer_id: int,
        self_returns: Sequence[float],
        peer_returns: Sequence[float],
        per_step: bool = True,
    ):
        """
        Record one chain's returns for ℓ = 0..L

        Args:
            phase: train, val or test
            iteration: Meta-iteration the chain belongs to
            peer_id: Population index of the (first) peer
            self_returns: Meta-agent mean return per chain step
            peer_returns: Peers' mean return per chain step
            per_step: Also emit one row per chain step before the summary row
        """
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        self_returns = np.asarray(self_returns, dtype=float)
        peer_returns = np.asarray(peer_returns, dtype=float)
        if per_step:
            for ell, (mine, theirs) in enumerate(zip(self_returns, peer_returns)):
                self.rows.append(self._row(phase, iteration, peer_id, ell, mine, theirs, None))
        adapted = self_returns[1:]
        auc = float(np.sum(adapted))
        self.rows.append(
            self._row(phase, iteration, peer_id, None, np.mean(adapted), np.mean(peer_returns[1:]), auc)
        )

    def extend(self, other: "RunMetrics"):
        self.rows.extend(other.rows)

    def to_frame(self) -> pd.DataFrame:
        return rows_to_frame(self.rows)


def rows_to_frame(rows: List[Dict]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=COLUMNS)
    frame["chain_step"] = frame["chain_step"].astype("Int64")
    frame["auc"] = frame["auc"].astype("float64")
    return frame


def write_metrics(path: str, frames: Sequence[pd.DataFrame], append: bool = False) -> str:
    """Write (or append) rows in the fixed column order with 17 significant digits"""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    frame = pd.concat(list(frames), ignore_index=True) if frames else rows_to_frame([])
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    frame[COLUMNS].to_csv(
        path,
        mode="a" if exists else "w",
        header=not exists,
        index=False,
        float_format=FLOAT_FORMAT,
        lineterminator="\n",
    )
    return path


def read_metrics(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"chain_step": "Int64", "run_id": str, "method": str, "phase": str})
    return frame


def summarize_auc(frame: pd.DataFrame, phase: str = "test") -> pd.DataFrame:
    """
    Mean AUC and 95% confidence interval per method across seeds

    Args:
        frame: Metrics rows (any mix of phases and runs)
        phase: Phase whose summary rows are aggregated

    Returns:
        Frame with columns method, mean, ci95, n
    """
    summary = frame[(frame["phase"] == phase) & frame["chain_step"].isna()]
    if summary.empty:
        return pd.DataFrame(columns=["method", "mean", "ci95", "n"])
    per_seed = summary.groupby(["method", "seed"], sort=True)["auc"].mean().reset_index()
    out = []
    for method, group in per_seed.groupby("method", sort=True):
        values = group["auc"].to_numpy(dtype=float)
        n = len(values)
        ci = 1.96 * values.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
        out.append({"method": method, "mean": float(values.mean()), "ci95": float(ci), "n": n})
    return pd.DataFrame(out, columns=["method", "mean", "ci95", "n"])
