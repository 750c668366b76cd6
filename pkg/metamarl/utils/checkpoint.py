"""
Checkpoint - Plain-text persistence of meta-trained parameters
"""

import os
from typing import Dict, Optional, Tuple

import numpy as np

from ..backend import CheckpointError
from ..backend.meta import MetaParams
from ..backend.policies import PolicyParams

FORMAT_VERSION = 1
HEADER = "# metamarl checkpoint"


def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(values, dtype=float).reshape(-1))


def save_checkpoint(path: str, meta_params: MetaParams, master_seed: int, config_hash: str) -> str:
    """
    Write meta_params with 17 significant digits per value

    Args:
        path: Target file
        meta_params: Parameters to persist
        master_seed: Seed of the run that produced them
        config_hash: Hash of the configuration they belong to

    Returns:
        Path written
    """
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    logits = meta_params.phi0.logits
    lines = [
        HEADER,
        f"format = {FORMAT_VERSION}",
        f"master_seed = {master_seed}",
        f"config_hash = {config_hash}",
        f"agent_id = {meta_params.phi0.agent_id}",
        f"phi0.shape = {logits.shape[0]} {logits.shape[1]}",
        f"phi0 = {_fmt(logits)}",
    ]
    if meta_params.log_inner_lrs is None:
        lines.append("log_inner_lrs = none")
    else:
        lines.append(f"log_inner_lrs = {_fmt(meta_params.log_inner_lrs)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return path


def load_checkpoint(path: str, expected_hash: Optional[str] = None) -> Tuple[MetaParams, Dict[str, str]]:
    """Read a checkpoint; refuses files written for another configuration"""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not text.strip():
        raise CheckpointError(f"checkpoint {path} is empty")

    fields: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}:{lineno}: malformed line {line[:40]!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value

    missing = {"format", "master_seed", "config_hash", "phi0.shape", "phi0"} - set(fields)
    if missing:
        raise CheckpointError(f"checkpoint {path} lacks {sorted(missing)}")
    if fields["format"] != str(FORMAT_VERSION):
        raise CheckpointError(f"unsupported checkpoint format {fields['format']}")
    if expected_hash is not None and fields["config_hash"] != expected_hash:
        raise CheckpointError(
            f"checkpoint was written for config {fields['config_hash']}, current config is {expected_hash}"
        )

    try:
        rows, cols = (int(v) for v in fields["phi0.shape"].split())
        logits = np.array([float(v) for v in fields["phi0"].split()])
        if logits.size != rows * cols:
            raise CheckpointError(f"phi0 holds {logits.size} values, shape says {rows}x{cols}")
        lrs_text = fields.get("log_inner_lrs", "none")
        log_lrs = None if lrs_text == "none" else np.array([float(v) for v in lrs_text.split()])
        phi0 = PolicyParams(agent_id=int(fields.get("agent_id", 0)), logits=logits.reshape(rows, cols))
        int(fields["master_seed"])
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} has unparsable values: {exc}") from exc
    return MetaParams(phi0=phi0, log_inner_lrs=log_lrs), fields
