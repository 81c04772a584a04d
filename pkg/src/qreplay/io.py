"""File formats: MDP JSON, trajectory/trace/ARP CSV dumps and JSON reports.

CSV floats are written with 17 significant digits. JSON floats use Python's
shortest round-trip repr, which reproduces the same 64-bit value on reading.
All writers go through a write-then-rename so a file is never seen half-written.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from qreplay.mdp import FiniteMdp, MdpValidationError, validate_mdp


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        # json has no infinities; keep the value readable instead of emitting Infinity
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dumps_json(obj))


# -- MDP --------------------------------------------------------------------------

def mdp_to_dict(m: FiniteMdp) -> dict:
    return {
        "states": m.n_states,
        "actions": m.n_actions,
        "gamma": m.gamma,
        "rewards": m.rewards.tolist(),
        "transitions": m.transitions.tolist(),
    }


def mdp_from_dict(d: dict) -> FiniteMdp:
    try:
        n_s, n_a = int(d["states"]), int(d["actions"])
        m = FiniteMdp(np.array(d["transitions"], dtype=float), np.array(d["rewards"], dtype=float), d["gamma"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MdpValidationError(f"malformed MDP document: {exc}") from exc
    if m.shape != (n_s, n_a):
        raise MdpValidationError(f"declared shape ({n_s}, {n_a}) does not match arrays {m.shape}")
    return validate_mdp(m)


def save_mdp(path, m: FiniteMdp) -> None:
    write_json(path, mdp_to_dict(m))


def load_mdp(path) -> FiniteMdp:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MdpValidationError(f"{path}: not valid JSON ({exc})") from exc
    return mdp_from_dict(doc)


# -- CSV dumps ------------------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def trajectory_csv(log) -> str:
    rows = zip(range(len(log)), log.states.tolist(), log.actions.tolist(), log.next_states.tolist())
    return _csv_text(["t", "s", "a", "s_next"], rows)


def trace_csv(checkpoints) -> str:
    """``t,sup_error`` rows; checkpoints without an error (no reference table) are skipped."""
    return _csv_text(["t", "sup_error"], ((cp.t, cp.sup_error) for cp in checkpoints if cp.sup_error is not None))


def arp_csv(rows) -> str:
    return _csv_text(["t", "s", "a", "absorb_mass", "r_hat", "max_abs_p_gap"], rows)


def read_trajectory_csv(path, n_states: int, n_actions: int):
    from qreplay.trajectory import TrajectoryLog

    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        return TrajectoryLog.empty(n_states, n_actions)
    if not np.array_equal(data[:, 0], np.arange(len(data))):
        raise ValueError(f"{path}: time column is not 0..T-1")
    return TrajectoryLog.from_arrays(n_states, n_actions, data[:, 1], data[:, 2], data[:, 3])
