"""Controller checkpoints: a JSON envelope around a base64 float64 θ blob."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, from_dict, to_dict
from .training import ren_dims

FORMAT = "boostctl-checkpoint"
VERSION = 1


class CheckpointMismatch(ValueError):
    """The checkpoint was produced for a different architecture or REN shape."""


@dataclass
class Checkpoint:
    theta: np.ndarray
    epoch: int
    config: ScenarioConfig

    def header(self) -> dict:
        d = ren_dims(self.config)
        r = self.config.ren
        return {"architecture": self.config.architecture, "scenario": self.config.scenario,
                "q1": d.q1, "q2": d.q2, "q_in": d.q_in, "q_out": d.q_out, "alpha": r.alpha,
                "beta": r.beta, "bias_mode": r.bias_mode, "bias_horizon": self.config.horizon}


def encode_theta(theta) -> str:
    return base64.b64encode(np.asarray(theta, dtype="<f8").tobytes()).decode("ascii")


def decode_theta(blob: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype="<f8").astype(np.float64)


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    doc = {"format": FORMAT, "version": VERSION, "epoch": ck.epoch, "ren": ck.header(),
           "n_params": int(ck.theta.size), "theta": encode_theta(ck.theta), "config": to_dict(ck.config)}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path, cfg: ScenarioConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``cfg`` given, its architecture and REN shape must match."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise CheckpointMismatch(f"{path} is not a controller checkpoint")
    theta = decode_theta(doc["theta"])
    if theta.size != doc["n_params"]:
        raise CheckpointMismatch("parameter blob length disagrees with its header")
    stored = from_dict(doc["config"])
    ck = Checkpoint(theta, int(doc["epoch"]), stored)
    if cfg is not None:
        want = Checkpoint(theta, 0, cfg).header()
        have = doc["ren"]
        diff = {k for k in want if want[k] != have.get(k)}
        if diff:
            raise CheckpointMismatch(f"checkpoint does not match the config in {sorted(diff)}")
        ck.config = cfg
    return ck
