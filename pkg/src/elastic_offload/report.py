"""Figure rendering for completed runs.

Pure consumers of the in-memory result objects: nothing here recomputes
costs.  The Agg backend keeps rendering headless; every function returns the
paths it wrote so callers can report them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simulation import (
    ARM_ELASTIC,
    ARMS,
    REFERENCE_REGRET_EXPONENT,
    ExperimentResult,
    SectionResult,
)

_ARM_STYLE = {
    "elastic": {"color": "tab:blue", "lw": 1.6},
    "static_cloud": {"color": "tab:orange", "lw": 1.1},
    "static_local": {"color": "tab:green", "lw": 1.1},
    "oracle": {"color": "black", "lw": 1.0, "ls": "--"},
}

_DPI = 120


def rolling_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean with a growing window over the first `window` frames."""
    window = max(1, int(window))
    c = np.cumsum(np.insert(np.asarray(x, dtype=float), 0, 0.0))
    out = np.empty(len(x))
    head = min(window, len(x))
    out[:head] = c[1 : head + 1] / np.arange(1, head + 1)
    if len(x) > window:
        out[window:] = (c[window + 1 :] - c[: len(x) - window]) / window
    return out


def latency_figure(section: SectionResult, path) -> Path:
    """Rolling mean latency of all four arms, with phase and window shading."""
    path = Path(path)
    t = np.arange(1, section.horizon + 1)
    window = max(5, section.horizon // 100)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for arm in ARMS:
        if arm not in section.arms:
            continue
        series = section.arms[arm].frames
        ax.plot(t, rolling_mean(series.latency, window), label=arm, **_ARM_STYLE[arm])
    for frame, label in section.labels:
        if frame > 0:
            ax.axvline(frame + 1, color="gray", ls=":", lw=0.8)
            ax.text(
                frame + 1, ax.get_ylim()[1], f" {label}", va="top", fontsize=8, color="gray"
            )
    if section.update_window.any():
        ax.fill_between(
            t,
            0,
            1,
            where=section.update_window,
            transform=ax.get_xaxis_transform(),
            color="tab:red",
            alpha=0.15,
            label="update window",
        )
    ax.set_xlabel("frame")
    ax.set_ylabel(f"latency (rolling mean, w={window})")
    ax.set_title(f"section {section.name}")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def regret_figure(section: SectionResult, path) -> Path:
    """Cumulative noise-free regret on log-log axes with a t^0.75 reference."""
    path = Path(path)
    t = np.arange(1, section.horizon + 1)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for arm in ARMS:
        if arm == "oracle" or arm not in section.arms:
            continue
        cum = section.arms[arm].regret.cumulative
        mask = cum > 0
        if mask.any():
            ax.loglog(t[mask], cum[mask], label=arm, **_ARM_STYLE[arm])
    elastic = section.arms.get(ARM_ELASTIC)
    if elastic is not None and elastic.regret.cumulative[-1] > 0:
        final = elastic.regret.cumulative[-1]
        ref = final * (t / section.horizon) ** REFERENCE_REGRET_EXPONENT
        ax.loglog(
            t,
            ref,
            color="gray",
            ls="--",
            lw=0.9,
            label=f"t^{REFERENCE_REGRET_EXPONENT:g} reference",
        )
        slope = elastic.regret.loglog_slope
        if not np.isnan(slope):
            ax.set_title(f"section {section.name}: elastic slope {slope:.3f}")
    ax.set_xlabel("frame")
    ax.set_ylabel("cumulative regret")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def sweep_figure(result: ExperimentResult, path, warmup_fraction: float = 0.1) -> Path:
    """Grouped bars of steady-state mean latency per arm across sections."""
    path = Path(path)
    names = [s.name for s in result.sections]
    arms = [a for a in ARMS if all(a in s.arms for s in result.sections)]
    means = np.zeros((len(arms), len(names)))
    for j, section in enumerate(result.sections):
        warm = min(500, int(section.horizon * warmup_fraction))
        for i, arm in enumerate(arms):
            means[i, j] = section.arms[arm].frames.latency[warm:].mean()
    x = np.arange(len(names))
    width = 0.8 / len(arms)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i, arm in enumerate(arms):
        offset = (i - (len(arms) - 1) / 2) * width
        ax.bar(x + offset, means[i], width, label=arm, color=_ARM_STYLE[arm]["color"])
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mean latency (post-warmup)")
    ax.set_title(f"{result.scenario}: per-section mean latency")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_section_figures(section: SectionResult, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        latency_figure(section, out_dir / "latency.png"),
        regret_figure(section, out_dir / "regret.png"),
    ]


def render_experiment_figures(result: ExperimentResult, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for section in result.sections:
        paths.extend(render_section_figures(section, out_dir / section.name))
    if len(result.sections) > 1:
        paths.append(sweep_figure(result, out_dir / "sweep.png"))
    return paths
