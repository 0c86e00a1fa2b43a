"""Score report files: key=value text, JSON, and a per-image figure."""

from __future__ import annotations

from pathlib import Path
from typing import Union

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .metrics import ScoreReport

PathLike = Union[str, Path]

# no Software/date chunks, so identical reports give identical image bytes
_PNG_METADATA = {"Software": None}


def render_figure(report: ScoreReport, path: PathLike) -> None:
    """Bar chart of per-image L2 and LPIPS with the set means marked."""
    n = len(report.per_image)
    fig = Figure(figsize=(max(6.0, min(0.25 * n + 2, 24.0)), 5.0), dpi=100)
    FigureCanvasAgg(fig)
    ax_l2, ax_lp = fig.subplots(2, 1, sharex=True)
    xs = range(n)
    ax_l2.bar(xs, [p[1] for p in report.per_image], color="tab:blue")
    ax_l2.axhline(report.l2, color="k", lw=1, ls="--", label=f"mean {report.l2:.4g}")
    ax_l2.set_ylabel("L2 (RMS, [0,1])")
    ax_l2.legend(loc="upper right", fontsize=8)
    ax_lp.bar(xs, [p[2] for p in report.per_image], color="tab:orange")
    ax_lp.axhline(report.lpips, color="k", lw=1, ls="--", label=f"mean {report.lpips:.4g}")
    ax_lp.set_ylabel("LPIPS")
    ax_lp.legend(loc="upper right", fontsize=8)
    if n <= 40:
        ax_lp.set_xticks(list(xs))
        ax_lp.set_xticklabels([p[0] for p in report.per_image], rotation=90, fontsize=6)
    else:
        ax_lp.set_xlabel("image index")
    fig.suptitle(f"final={report.final:.4f}  fid={report.fid:.4g}  "
                 f"lpips={report.lpips:.4f}  l2={report.l2:.4f}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_METADATA)


def write_report(report: ScoreReport, path: PathLike, figure: bool = True) -> list[Path]:
    """Write ``path`` plus sibling ``.json`` and ``.png`` files; returns what was written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_text(), encoding="utf-8", newline="\n")
    written = [path]
    js = path.with_suffix(".json")
    if js == path:
        js = path.with_name(path.name + ".json")
    js.write_text(report.to_json(), encoding="utf-8", newline="\n")
    written.append(js)
    if figure:
        png = path.with_suffix(".png")
        render_figure(report, png)
        written.append(png)
    return written
