"""Matplotlib figures for head-dynamics traces, losses and image grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import DiagnosticsRecord  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}


def _traces(records: list[DiagnosticsRecord], attr: str) -> dict[int, dict[int, tuple[list, list]]]:
    out: dict[int, dict[int, tuple[list, list]]] = {}
    for r in records:
        xs, ys = out.setdefault(r.layer, {}).setdefault(r.head, ([], []))
        xs.append(r.epoch)
        ys.append(getattr(r, attr))
    return out


def plot_head_traces(records: list[DiagnosticsRecord], attr: str, path, ylabel: str | None = None,
                     title: str | None = None, step: bool = False) -> Path:
    """One panel per encoder layer, one line per head; frozen epochs marked."""
    traces = _traces(records, attr)
    frozen_at = {}
    for r in records:
        if r.frozen and (r.layer, r.head) not in frozen_at:
            frozen_at[(r.layer, r.head)] = r.epoch
    layers = sorted(traces)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(layers), figsize=(3.2 * len(layers), 2.6), squeeze=False, sharey=True)
        for ax, layer in zip(axes[0], layers):
            for head, (xs, ys) in sorted(traces[layer].items()):
                draw = ax.step if step else ax.plot
                (line,) = draw(xs, ys, label=f"head {head}", lw=1.2, **({"where": "post"} if step else {}))
                if (layer, head) in frozen_at:
                    e = frozen_at[(layer, head)]
                    ax.axvline(e, color=line.get_color(), ls=":", lw=0.8)
            ax.set_title(f"layer {layer}")
            ax.set_xlabel("epoch")
        axes[0][0].set_ylabel(ylabel or attr)
        axes[0][-1].legend(fontsize=7, frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_losses(epoch_logs: list[dict], path) -> Path:
    keys = ["rec", "kl_cls", "kl_pt", "w_cls", "w_pt", "pt_disc"]
    epochs = [e["epoch"] for e in epoch_logs]
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        for k in keys:
            vals = [e["losses"].get(k, np.nan) for e in epoch_logs]
            if any(v > 0 for v in vals):
                ax1.semilogy(epochs, vals, label=k, lw=1.2)
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("loss part")
        ax1.legend(fontsize=7, frameon=False)
        ax2.plot(epochs, [e["heldout_mse"] for e in epoch_logs], lw=1.2, color="k")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("held-out MSE")
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_dynamics(records: list[DiagnosticsRecord], out_dir, prefix: str = "") -> list[Path]:
    out = Path(out_dir)
    return [
        plot_head_traces(records, "drift", out / f"{prefix}drift.png", "W1 drift", "attention evolution distance"),
        plot_head_traces(records, "kappa", out / f"{prefix}kappa.png", "consensus clusters", "consensus count", step=True),
        plot_head_traces(records, "tau", out / f"{prefix}tau.png", "tau", "head temperature"),
    ]


def image_grid(rows: list[np.ndarray], pad: int = 1) -> np.ndarray:
    """Tile rows of ``(B, C, H, W)`` images into one ``(H', W', C)`` array."""
    rows = [np.asarray(r) for r in rows]
    b = max(len(r) for r in rows)
    c, h, w = rows[0].shape[1:]
    grid = np.ones((len(rows) * (h + pad) + pad, b * (w + pad) + pad, c))
    for i, r in enumerate(rows):
        for j, img in enumerate(r):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            grid[y:y + h, x:x + w] = np.clip(img, 0.0, 1.0).transpose(1, 2, 0)
    return grid


def save_image_grid(rows: list[np.ndarray], path, scale: int = 4) -> Path:
    """Lossless PNG of an image grid, upscaled by pixel replication."""
    from PIL import Image

    grid = image_grid(rows)
    grid = np.repeat(np.repeat(grid, scale, axis=0), scale, axis=1)
    arr = np.round(grid * 255).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    elif arr.shape[2] == 2:
        arr = np.concatenate([arr, np.zeros_like(arr[:, :, :1])], axis=2)
    path = Path(path)
    Image.fromarray(arr).save(path)
    return path
