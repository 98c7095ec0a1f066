"""Interaction accounting, metric CSVs and plots.

Every method reports against one :class:`InteractionLedger`, which counts
environment steps only. Offline searches are put on the same axis with
:func:`fair_scale_offline`: a trial-count multiple of the best trial's curve.
"""

from __future__ import annotations

import csv
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "method", "seed", "generation", "individual", "fitness", "eval_frames", "cumulative_frames",
    "actor_lr", "critic_lr", "activation", "hidden_widths", "mutation_op",
)
LEDGER_MAX = 2**63 - 1


class InteractionLedger:
    """Monotone, thread-safe count of environment steps."""

    def __init__(self, total_frames: int = 0):
        if total_frames < 0:
            raise ValueError("total_frames must be non-negative")
        self._total = int(total_frames)
        self._lock = threading.Lock()

    @property
    def total_frames(self) -> int:
        return self._total

    def record(self, frames: int) -> None:
        if isinstance(frames, bool) or int(frames) != frames or frames <= 0:
            raise ValueError(f"frames must be a positive integer, got {frames!r}")
        with self._lock:
            new = self._total + int(frames)
            if new > LEDGER_MAX:
                log.error("interaction ledger saturated at %d", LEDGER_MAX)
                new = LEDGER_MAX
            self._total = new

    def __repr__(self):
        return f"InteractionLedger({self._total})"


@dataclass
class Curve:
    """Performance against total environment frames; x strictly increasing."""

    points: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.points = [(int(x), float(y)) for x, y in self.points]
        xs = [x for x, _ in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("curve x-values must be strictly increasing")

    def __len__(self):
        return len(self.points)

    @property
    def xs(self) -> np.ndarray:
        return np.array([x for x, _ in self.points], dtype=np.int64)

    @property
    def ys(self) -> np.ndarray:
        return np.array([y for _, y in self.points], dtype=np.float64)

    def append(self, x: int, y: float) -> None:
        if self.points and x <= self.points[-1][0]:
            raise ValueError("curve x-values must be strictly increasing")
        self.points.append((int(x), float(y)))

    def truncate(self, x_max: float) -> Curve:
        return Curve([(x, y) for x, y in self.points if x <= x_max])

    def to_list(self) -> list:
        return [list(p) for p in self.points]


def fair_scale_offline(curve: Curve, n_trials: int) -> Curve:
    """Charge an offline search for all of its trials: every x times ``n_trials``."""
    if int(n_trials) != n_trials or n_trials < 1:
        raise ValueError("n_trials must be a positive integer")
    return Curve([(x * int(n_trials), y) for x, y in curve.points])


def first_sustained(curve: Curve, threshold: float, window: int = 3) -> float:
    """Frames at the first point from which the next ``window`` points
    (fewer at the end of the curve) all reach ``threshold``; ``inf`` if never."""
    ys = curve.ys
    for i, (x, _) in enumerate(curve.points):
        if np.all(ys[i:i + window] >= threshold):
            return float(x)
    return float("inf")


def aggregate_curves(curves: Sequence[Curve]):
    """Align seeds by measurement index (shared generation schedule).

    Returns ``(x, mean, std)`` over the common prefix, with ``x`` the mean
    frame count and ``std`` the sample standard deviation (0 for one seed).
    """
    curves = [c for c in curves if len(c)]
    if not curves:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    n = min(len(c) for c in curves)
    xs = np.stack([c.xs[:n] for c in curves]).astype(np.float64)
    ys = np.stack([c.ys[:n] for c in curves])
    std = ys.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros(n)
    return xs.mean(axis=0), ys.mean(axis=0), std


def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {path}: {e}") from e
    return path


def write_metrics_csv(rows: Iterable[dict], path) -> Path:
    path = Path(path)
    _prepare_dir(path.parent)
    try:
        fh = path.open("w", newline="")
    except OSError as e:
        raise OSError(f"cannot write metrics to {path}: {e}") from e
    with fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            out = dict(row)
            if not isinstance(out.get("hidden_widths"), str):
                out["hidden_widths"] = ";".join(str(w) for w in out.get("hidden_widths") or ())
            for k in ("fitness", "actor_lr", "critic_lr"):
                if isinstance(out.get(k), float):
                    out[k] = repr(out[k])
            writer.writerow({k: out.get(k, "") for k in CSV_COLUMNS})
    return path


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_curve_csv(curve: Curve, path) -> Path:
    path = Path(path)
    _prepare_dir(path.parent)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frames", "performance"])
        for x, y in curve.points:
            w.writerow([x, repr(y)])
    return path


def read_curve_csv(path) -> Curve:
    with Path(path).open(newline="") as fh:
        return Curve([(int(r["frames"]), float(r["performance"])) for r in csv.DictReader(fh)])


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_comparison(curves_by_method: dict[str, Sequence[Curve]], path, threshold: float | None = None):
    """Mean and one-std band per method against log-scaled total frames."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, curves in curves_by_method.items():
        x, mean, std = aggregate_curves(curves)
        if len(x) == 0:
            continue
        (line,) = ax.plot(x, mean, label=f"{name} (n={len(curves)})")
        ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2)
    if threshold is not None:
        ax.axhline(threshold, color="grey", ls="--", lw=1)
    ax.set_xscale("log")
    ax.set_xlabel("total environment frames")
    ax.set_ylabel("return")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    _prepare_dir(path.parent)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_schedule(rows: Sequence[dict], path):
    """Total hidden nodes and learning rates per population slot over frames."""
    plt = _pyplot()
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    by_slot: dict[int, list[dict]] = {}
    for r in rows:
        by_slot.setdefault(int(r["individual"]), []).append(r)
    for slot, rs in sorted(by_slot.items()):
        x = [int(r["cumulative_frames"]) for r in rs]
        nodes = [sum(int(w) for w in str(r["hidden_widths"]).split(";") if w) for r in rs]
        axes[0].plot(x, nodes, lw=0.8)
        axes[1].plot(x, [float(r["actor_lr"]) for r in rs], lw=0.8)
        axes[2].plot(x, [float(r["critic_lr"]) for r in rs], lw=0.8)
    axes[0].set_ylabel("hidden nodes")
    axes[1].set_ylabel("actor lr")
    axes[2].set_ylabel("critic lr")
    for ax in axes[1:]:
        ax.set_yscale("log")
    axes[2].set_xlabel("total environment frames")
    fig.tight_layout()
    path = Path(path)
    _prepare_dir(path.parent)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit(record, out_dir) -> dict[str, Path]:
    """Write ``metrics.csv``, ``curve.csv`` and, when there is data, plots.

    ``record`` needs ``rows`` (CSV dicts) and ``curve`` (:class:`Curve`).
    """
    out = _prepare_dir(Path(out_dir))
    paths = {"metrics": write_metrics_csv(record.rows, out / "metrics.csv"),
             "curve": write_curve_csv(record.curve, out / "curve.csv")}
    if record.rows:
        paths["schedule_plot"] = plot_schedule(read_metrics_csv(paths["metrics"]), out / "schedule.png")
    if len(record.curve):
        paths["curve_plot"] = plot_comparison({record.method: [record.curve]}, out / "curve.png")
    return paths


def load_config(path) -> dict:
    with Path(path).open() as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must be a key/value mapping")
    return data
