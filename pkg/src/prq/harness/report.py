"""Report emission: machine-readable summary plus one SVG per run."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import ValidationError  # noqa: E402
from .runner import dump_json, read_csv  # noqa: E402

# fixed metadata keeps the SVG bytes reproducible
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "prq"


def plot_run(data: dict, theta_star, path: Path, title: str = "") -> None:
    """Left: theta components against the global step.  Right: the path of
    (theta_0, theta_1) with the start marked and theta* when known."""
    theta = data["theta"]
    steps = data["global_step"]
    fig, (ax_t, ax_p) = plt.subplots(1, 2, figsize=(10, 4))
    for j in range(theta.shape[1]):
        ax_t.plot(steps, theta[:, j], lw=1, label=fr"$\theta_{j}$")
    ax_t.set_xlabel("step")
    ax_t.set_ylabel("parameter")
    ax_t.legend(loc="best", fontsize=8)
    if theta.shape[1] >= 2:
        ax_p.plot(theta[:, 0], theta[:, 1], lw=0.8, color="0.3")
        ax_p.plot(theta[0, 0], theta[0, 1], "o", color="tab:green", label="start")
        if theta_star is not None:
            ax_p.plot(theta_star[0], theta_star[1], "*", ms=12, color="tab:red", label=r"$\theta^*_\eta$")
        ax_p.set_xlabel(r"$\theta_0$")
        ax_p.set_ylabel(r"$\theta_1$")
        ax_p.legend(loc="best", fontsize=8)
    else:
        ax_p.text(0.5, 0.5, "one-dimensional parameter", ha="center", va="center")
        ax_p.set_axis_off()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def emit_report(output_dir, plots: bool = True) -> dict:
    """Write ``report.json`` (summary plus per-run final errors) and an SVG
    per trajectory CSV found in ``output_dir``."""
    out = Path(output_dir)
    summary_path = out / "summary.json"
    if not summary_path.is_file():
        raise ValidationError(f"{out} has no summary.json; run an experiment first")
    summary = json.loads(summary_path.read_text())
    theta_star = None if summary.get("theta_star") is None else np.asarray(summary["theta_star"])
    runs = {}
    for csv in sorted(out.glob("*.csv")):
        data = read_csv(csv)
        entry = {"rows": int(data["theta"].shape[0]), "final_theta": data["theta"][-1].tolist()}
        if data["inf_err_sq"] is not None:
            entry["final_inf_err_sq"] = float(data["inf_err_sq"][-1])
        if plots:
            svg = csv.with_suffix(".svg")
            plot_run(data, theta_star, svg, title=data["run_id"])
            entry["plot"] = svg.name
        runs[csv.stem] = entry
    report = {"summary": summary, "files": runs}
    dump_json(out / "report.json", report)
    return report
