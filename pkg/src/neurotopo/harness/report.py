"""Static SVG line charts of a finished run: loss, Betti numbers and 1/K."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import RunLog  # noqa: E402


def write_report(run_dir, out_path) -> Path:
    log = RunLog.load(run_dir)
    out_path = Path(out_path)
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)

    steps, loss = log.column("loss")
    axes[0].plot(steps, loss, color="black", lw=1.2)
    axes[0].set_ylabel("train loss")
    if len(loss) and (loss > 0).all():
        axes[0].set_yscale("log")

    for name, color in (("b0", "tab:blue"), ("b1", "tab:orange"), ("b2", "tab:green")):
        s, v = log.column(name)
        axes[1].step(s, v, where="post", color=color, label=name)
    axes[1].set_ylabel("Betti number")
    axes[1].legend(loc="upper right", frameon=False)

    s, v = log.column("eta_star")
    axes[2].plot(s, v, color="tab:red", lw=1.2, label="1/K")
    axes[2].axhline(log.manifest["eta"], color="grey", ls="--", lw=1, label="eta")
    axes[2].set_ylabel("1 / sharpness")
    axes[2].set_xlabel("step")
    axes[2].legend(loc="upper right", frameon=False)

    cfg = log.manifest["config"]
    fig.suptitle(f"{log.manifest['rule']}  eta={log.manifest['eta']:g}  hidden={cfg['model']['hidden']}")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "neurotopo"}):
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path
