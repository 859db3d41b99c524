"""Trace persistence (CSV + JSON sidecar), run reports and SVG plots."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .engine import SimTrace
from .errors import IoError
from .laws import Obstacle

AXES = ("x", "y", "z")
META_SUFFIX = ".meta.json"


def _columns(trace: SimTrace) -> list[str]:
    ax = AXES[: trace.d]
    cols = ["t", "agent"] + [f"p{a}" for a in ax]
    if trace.estimates is not None:
        cols += [f"est_p{a}" for a in ax]
    cols += ["pos_err"]
    if trace.estimates is not None:
        cols += ["est_err"]
    cols += ["lambda1", "u_norm"]
    cols += [f"berr_{i}_{j}" for i, j in trace.edges]
    return cols


def _cell(x) -> str:
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def _parse(s: str) -> float:
    return float("nan") if s == "" else float(s)


def export_trace(trace: SimTrace, path) -> list[Path]:
    """Write the trace as long-format CSV (one row per sample and agent) plus a JSON sidecar.

    Follower-only quantities are blank on leader rows; each bearing error
    appears on the row of the edge's tail agent only.
    """
    path = Path(path)
    meta_path = path.with_name(path.stem + META_SUFFIX)
    cols = _columns(trace)
    l, n = trace.l, trace.n
    by_tail = {i: [k for k, (a, _) in enumerate(trace.edges) if a == i] for i in range(1, n + 1)}
    m = len(trace.edges)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for s, t in enumerate(trace.times):
                for i in range(1, n + 1):
                    row = [repr(float(t)), str(i)] + [_cell(x) for x in trace.positions[s, i - 1]]
                    if trace.estimates is not None:
                        row += [_cell(x) for x in trace.estimates[s, i - 1]]
                    f = i - l - 1
                    follower = f >= 0
                    row.append(_cell(trace.position_errors[s, f]) if follower else "")
                    if trace.estimates is not None:
                        row.append(_cell(trace.estimate_errors[s, f]) if follower else "")
                    row.append(_cell(trace.lambda1[s, f]) if follower else "")
                    row.append(_cell(trace.control_norms[s, f]) if follower else "")
                    errs = [""] * m
                    for k in by_tail[i]:
                        errs[k] = _cell(trace.bearing_errors[s, k])
                    w.writerow(row + errs)
        meta = {
            "n": n,
            "l": l,
            "d": trace.d,
            "edges": [list(e) for e in trace.edges],
            "step": trace.step,
            "stride": trace.stride,
            "has_estimates": trace.estimates is not None,
            "scaling_windows": [list(wd) for wd in trace.scaling_windows],
            "events": trace.events,
        }
        meta_path.write_text(json.dumps(meta, indent=1) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write trace to {path}: {exc}") from None
    return [path, meta_path]


def import_trace(path) -> SimTrace:
    """Inverse of export_trace; values round-trip exactly."""
    path = Path(path)
    meta_path = path.with_name(path.stem + META_SUFFIX)
    try:
        meta = json.loads(meta_path.read_text())
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read trace {path}: {exc}") from None
    n, l, d = meta["n"], meta["l"], meta["d"]
    edges = [tuple(e) for e in meta["edges"]]
    has_est = meta["has_estimates"]
    header, body = rows[0], rows[1:]
    if len(body) % n:
        raise IoError(f"{path}: {len(body)} data rows is not a multiple of {n} agents")
    col = {name: k for k, name in enumerate(header)}
    K, f, m = len(body) // n, n - l, len(edges)
    data = np.array([[_parse(c) for c in r] for r in body], dtype=float).reshape(K, n, len(header))
    ax = AXES[:d]

    def block(names):
        return data[:, :, [col[c] for c in names]]

    def follower(name):
        return data[:, l:, col[name]]

    berr = np.full((K, m), np.nan)
    for k, (i, j) in enumerate(edges):
        berr[:, k] = data[:, i - 1, col[f"berr_{i}_{j}"]]
    return SimTrace(
        n=n,
        l=l,
        d=d,
        edges=edges,
        step=meta["step"],
        stride=meta["stride"],
        times=data[:, 0, col["t"]].copy(),
        positions=block([f"p{a}" for a in ax]).copy(),
        estimates=block([f"est_p{a}" for a in ax]).copy() if has_est else None,
        bearing_errors=berr,
        position_errors=follower("pos_err").copy(),
        estimate_errors=follower("est_err").copy() if has_est else None,
        lambda1=follower("lambda1").copy(),
        control_norms=follower("u_norm").copy(),
        events=meta["events"],
        scaling_windows=[tuple(wd) for wd in meta["scaling_windows"]],
    )


def write_report(report, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report.to_dict(), indent=1, default=_json_default) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write report to {path}: {exc}") from None
    return path


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serialisable: {type(x).__name__}")


# --- plots ----------------------------------------------------------------

LEADER_COLOR = "tab:red"
FOLLOWER_COLOR = "tab:blue"
RUN_COLORS = ("tab:blue", "tab:green", "tab:purple", "tab:orange", "tab:brown")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "bearingsim"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoError(f"cannot write plot {path}: {exc}") from None
    return path


def _obstacle_patch(ax, obstacle: Obstacle, plt):
    ax.add_patch(plt.Circle(tuple(obstacle.position), obstacle.radius, color="0.6", alpha=0.6, lw=0))
    ax.add_patch(plt.Circle(tuple(obstacle.position), obstacle.sensing_range, fill=False, ls=":", color="0.5"))


def plot_trajectories(traces: list[SimTrace], path, obstacle: Obstacle | None = None, labels=None) -> Path:
    """x-y trajectories. A single trace is coloured by role; several traces get one colour each."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 5))
    multi = len(traces) > 1
    for r, tr in enumerate(traces):
        for i in range(tr.n):
            xy = tr.positions[:, i, :2]
            if multi:
                if i < tr.l:
                    color = LEADER_COLOR
                else:
                    color = RUN_COLORS[r % len(RUN_COLORS)]
            else:
                color = LEADER_COLOR if i < tr.l else FOLLOWER_COLOR
            label = None
            if i == tr.l and multi and labels:
                label = labels[r]
            ax.plot(xy[:, 0], xy[:, 1], color=color, lw=1.0, label=label)
            ax.plot(xy[0, 0], xy[0, 1], "o", ms=3, color=color, mfc="none")
            ax.plot(xy[-1, 0], xy[-1, 1], "o", ms=3, color=color)
    if not multi:
        ax.plot([], [], color=LEADER_COLOR, label="leaders")
        ax.plot([], [], color=FOLLOWER_COLOR, label="followers")
    if obstacle is not None:
        _obstacle_patch(ax, obstacle, plt)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=8)
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def plot_errors(trace: SimTrace, path) -> Path:
    """Bearing errors and follower position errors against time, log scale."""
    plt = _pyplot()
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    floor = 1e-12
    for k in range(trace.bearing_errors.shape[1]):
        a1.semilogy(trace.times, np.maximum(trace.bearing_errors[:, k], floor), lw=0.7)
    for k in range(trace.position_errors.shape[1]):
        a2.semilogy(trace.times, np.maximum(trace.position_errors[:, k], floor), lw=0.7)
    for a, b in trace.scaling_windows:
        for ax in (a1, a2):
            ax.axvspan(a, b, color="0.9", lw=0)
    a1.set_ylabel("bearing error")
    a2.set_ylabel("position error [m]")
    a2.set_xlabel("t [s]")
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def export_plots(trace: SimTrace, out_dir, obstacle: Obstacle | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        plot_trajectories([trace], out_dir / "trajectories.svg", obstacle),
        plot_errors(trace, out_dir / "errors.svg"),
    ]
