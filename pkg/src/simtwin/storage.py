"""On-disk formats: trajectory CSVs, model files, key-value configs, traces, reports.

Everything is plain text.  Floats are written with repr(), which round-trips
float64 exactly and never uses fewer significant digits than the value needs,
so a rerun with the same seed produces byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import DataError, NormSpec, Trajectory, TrajectoryMeta
from .nets import Layer, Mlp
from .trainers import TraceRow, TrainedModel
from .verification import BandSpec, VerificationReport


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_keyvalues(path: str | Path, mapping: dict) -> None:
    """One `key = value` per line, insertion order preserved."""
    lines = [f"{k} = {_fmt(v)}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalues(path: str | Path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def meta_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".meta")


def save_trajectory(path: str | Path, traj: Trajectory) -> None:
    """CSV with header tick,state,action plus a .meta sidecar."""
    path = Path(path)
    rows = ["tick,state,action"]
    for i, (s, a) in enumerate(zip(traj.states, traj.actions)):
        rows.append(f"{i},{float(s)!r},{float(a)!r}")
    path.write_text("\n".join(rows) + "\n")
    write_keyvalues(
        meta_path(path),
        {
            "controller_x": "" if traj.meta.controller_x is None else traj.meta.controller_x,
            "seed": "" if traj.meta.seed is None else traj.meta.seed,
            "tick_rate": traj.tick_rate,
            "origin": traj.meta.origin,
            "clamp_count": traj.meta.clamp_count,
        },
    )


def load_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "tick,state,action":
        raise DataError(f"{path}: missing tick,state,action header")
    states, actions = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns")
        states.append(float(parts[1]))
        actions.append(float(parts[2]))

    tick_rate = 25.0
    meta = TrajectoryMeta()
    side = meta_path(path)
    if side.exists():
        kv = read_keyvalues(side)
        tick_rate = float(kv.get("tick_rate", tick_rate))
        meta = TrajectoryMeta(
            controller_x=float(kv["controller_x"]) if kv.get("controller_x") else None,
            seed=int(kv["seed"]) if kv.get("seed") else None,
            origin=kv.get("origin", "virtual"),
            clamp_count=int(kv.get("clamp_count", 0)),
        )
    return Trajectory(states, actions, tick_rate=tick_rate, meta=meta)


def load_trajectory_dir(directory: str | Path) -> list[Trajectory]:
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise DataError(f"no trajectory CSVs in {directory}")
    return [load_trajectory(p) for p in paths]


MODEL_FORMAT = "simtwin-model-v1"


def save_model(path: str | Path, model: TrainedModel) -> None:
    """Structured text: metadata, normalization, then row-major layer arrays."""
    prov = model.provenance
    lines = [
        f"format = {MODEL_FORMAT}",
        f"algorithm = {prov.get('algorithm', 'unknown')}",
        f"l = {model.l}",
        f"epochs = {prov.get('epochs', '')}",
        f"seed = {prov.get('seed', '')}",
        "source_logs = " + ",".join(str(i) for i in prov.get("source_logs", [])),
        f"state_min = {model.norm.state_range[0]!r}",
        f"state_max = {model.norm.state_range[1]!r}",
        f"action_min = {model.norm.action_range[0]!r}",
        f"action_max = {model.norm.action_range[1]!r}",
        f"log_std = {'' if model.log_std is None else repr(model.log_std)}",
        f"dtype = {np.dtype(model.mean_net.dtype).name}",
        f"layers = {len(model.mean_net.layers)}",
    ]
    for i, layer in enumerate(model.mean_net.layers):
        lines.append(f"layer{i}_dims = {layer.w.shape[0]} {layer.w.shape[1]}")
        lines.append(f"layer{i}_activation = {layer.activation}")
        lines.append(f"layer{i}_w = " + " ".join(repr(float(v)) for v in layer.w.ravel()))
        lines.append(f"layer{i}_b = " + " ".join(repr(float(v)) for v in layer.b.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> TrainedModel:
    kv = read_keyvalues(path)
    if kv.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a {MODEL_FORMAT} file")
    l = int(kv["l"])
    norm = NormSpec(
        state_range=(float(kv["state_min"]), float(kv["state_max"])),
        action_range=(float(kv["action_min"]), float(kv["action_max"])),
    )
    dtype = np.dtype(kv.get("dtype", "float64"))
    layers = []
    for i in range(int(kv["layers"])):
        rows, cols = (int(v) for v in kv[f"layer{i}_dims"].split())
        w = np.fromstring(kv[f"layer{i}_w"], sep=" ").astype(dtype)
        b = np.fromstring(kv[f"layer{i}_b"], sep=" ").astype(dtype)
        if w.size != rows * cols or b.size != cols:
            raise DataError(f"{path}: layer {i} array size mismatch")
        layers.append(Layer(w.reshape(rows, cols), b, kv[f"layer{i}_activation"]))
    log_std = float(kv["log_std"]) if kv.get("log_std") else None
    source = [int(s) for s in kv["source_logs"].split(",") if s] if kv.get("source_logs") else []
    return TrainedModel(
        mean_net=Mlp(layers),
        log_std=log_std,
        norm=norm,
        l=l,
        provenance={
            "algorithm": kv.get("algorithm", "unknown"),
            "seed": int(kv["seed"]) if kv.get("seed") else None,
            "epochs": int(kv["epochs"]) if kv.get("epochs") else None,
            "source_logs": source,
        },
    )


def save_trace(path: str | Path, rows: list[TraceRow]) -> None:
    """Training trace CSV: epoch,loss_bc,loss_gail,loss_disc,mean_reward."""
    out = ["epoch,loss_bc,loss_gail,loss_disc,mean_reward"]
    for r in rows:
        cells = [str(r.epoch)] + [
            "" if v is None else repr(v)
            for v in (r.loss_bc, r.loss_gail, r.loss_disc, r.mean_reward)
        ]
        out.append(",".join(cells))
    Path(path).write_text("\n".join(out) + "\n")


def load_trace(path: str | Path) -> list[TraceRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "epoch,loss_bc,loss_gail,loss_disc,mean_reward":
        raise DataError(f"{path}: not a training trace CSV")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        cells = line.split(",")
        rows.append(
            TraceRow(
                epoch=int(cells[0]),
                loss_bc=float(cells[1]) if cells[1] else None,
                loss_gail=float(cells[2]) if cells[2] else None,
                loss_disc=float(cells[3]) if cells[3] else None,
                mean_reward=float(cells[4]) if cells[4] else None,
            )
        )
    return rows


def save_report(path: str | Path, report: VerificationReport, band: BandSpec) -> None:
    """Report CSV (per-requirement rows plus an acc summary row) and sidecar."""
    path = Path(path)
    lines = ["phi,psi_real,psi_virtual,abs_diff"]
    for name, pr, pv, d in zip(
        report.requirement_names, report.psi_real, report.psi_virtual, report.abs_diff
    ):
        lines.append(f"{name},{float(pr)!r},{float(pv)!r},{float(d)!r}")
    lines.append(f"acc,{report.acc!r}")
    path.write_text("\n".join(lines) + "\n")
    write_keyvalues(
        path.with_suffix(".meta"),
        {
            "band_center": band.center,
            "band_half_width": band.half_width,
            "n_real": report.n_real,
            "n_virtual": report.n_virtual,
            "requirements": ",".join(report.requirement_names),
        },
    )


def load_report_acc(path: str | Path) -> float:
    for line in Path(path).read_text().splitlines():
        if line.startswith("acc,"):
            return float(line.split(",", 1)[1])
    raise DataError(f"{path}: no acc row found")


def is_finite_model(model: TrainedModel) -> bool:
    finite = model.mean_net.is_finite()
    if model.log_std is not None:
        finite = finite and math.isfinite(model.log_std)
    return finite
