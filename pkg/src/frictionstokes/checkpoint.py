"""JSON checkpoints of a windowed Coulomb run.

Floats are written with ``repr`` (shortest round-trip form), so a reloaded
checkpoint reproduces the in-memory state bit for bit.
"""
import json
import os

import numpy as np

from .errors import UsageError
from .stepping import State, StepEnergy

VERSION = 1


def _state_dict(s):
    return {
        "t": s.t,
        "v_tilde": s.v_tilde.tolist(),
        "p": s.p.tolist(),
        "multiplier": s.multiplier,
        "newton_iters": s.newton_iters,
        "residual": s.residual,
    }


def _state(data):
    return State(
        t=data["t"],
        v_tilde=np.array(data["v_tilde"], dtype=float),
        p=np.array(data["p"], dtype=float),
        multiplier=data["multiplier"],
        newton_iters=data["newton_iters"],
        residual=data["residual"],
    )


def save_checkpoint(path, scenario_hash, progress):
    """Write ``progress`` (see CoulombProgress.to_dict) atomically."""
    data = {"version": VERSION, "scenario_hash": scenario_hash}
    data.update(progress)
    data["states"] = [_state_dict(s) for s in progress["states"]]
    data["energy"] = [[e.kinetic, e.dissipation, e.lhs, e.rhs] for e in progress["energy"]]
    data["history"] = np.asarray(progress["history"]).tolist()
    data["threshold"] = np.asarray(progress["threshold"]).tolist()
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh)
    os.replace(tmp, path)


def load_checkpoint(path, scenario_hash=None):
    with open(path) as fh:
        data = json.load(fh)
    if data.get("version") != VERSION:
        raise UsageError(f"unsupported checkpoint version {data.get('version')!r}")
    if scenario_hash is not None and data["scenario_hash"] != scenario_hash:
        raise UsageError("checkpoint was written for a different scenario")
    data["states"] = [_state(s) for s in data["states"]]
    data["energy"] = [StepEnergy(*e) for e in data["energy"]]
    data["history"] = np.array(data["history"], dtype=float)
    data["threshold"] = np.array(data["threshold"], dtype=float)
    return data
