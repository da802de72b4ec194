"""Report emission: metrics CSV plus SVG line charts.

SVG output is made byte-stable by fixing matplotlib's id salt and dropping
the creation date, so two identical runs give identical files.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .consensus import quorum  # noqa: E402
from .metrics import write_csv  # noqa: E402

STYLE = {
    "svg.hashsalt": "distb",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (5.0, 3.2),
}
COLORS = {"core": "#c0392b", "distb": "#1f618d"}
LABELS = {"core": "core (centralized)", "distb": "DistB (ledger-backed)"}

SUMMARY_HEAD = ["param", "value"]
SUMMARY_PER_VARIANT = ["sent", "delivered", "delivered_verified", "mean_throughput_pps",
                       "security_rate_pct", "node_failure_pct"]
SUMMARY_TAIL = ["chain_height", "forged_attempts", "forged_admitted", "quorum_needed"]


def summary_columns(variants) -> list:
    cols = list(SUMMARY_HEAD)
    for v in variants:
        cols += [f"{v}_{c}" for c in SUMMARY_PER_VARIANT]
    return cols + SUMMARY_TAIL


class ReportError(OSError):
    pass


def _ensure_dir(out_dir) -> Path:
    p = Path(out_dir)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {p}: {exc}") from exc
    if not os.access(p, os.W_OK):
        raise ReportError(f"output directory {p} is not writable")
    return p


def _open(path: Path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def _line_chart(path, series, xlabel, ylabel, title, ylim=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for variant, (xs, ys) in series.items():
            ax.plot(xs, ys, color=COLORS.get(variant), label=LABELS.get(variant, variant),
                    marker="o", markersize=2.5, linewidth=1.2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if ylim is not None:
            ax.set_ylim(*ylim)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise ReportError(f"cannot write {path}: {exc}") from exc
        finally:
            plt.close(fig)


def plot_run(samples_by_variant: dict, out_dir, prefix="") -> list:
    """Throughput and security rate against packets sent; failure against time."""
    out = _ensure_dir(out_dir)
    thr, sec, fail = {}, {}, {}
    for v, samples in samples_by_variant.items():
        sent = [s.counters.sent for s in samples]
        thr[v] = (sent, [s.throughput_pps for s in samples])
        sec[v] = (sent, [s.security_rate_pct for s in samples])
        fail[v] = ([s.window_end / 1000.0 for s in samples], [s.node_failure_pct for s in samples])
    paths = [out / f"{prefix}throughput.svg", out / f"{prefix}security_rate.svg",
             out / f"{prefix}node_failure.svg"]
    _line_chart(paths[0], thr, "data packets sent", "throughput (packets/s)",
                "Throughput comparison")
    _line_chart(paths[1], sec, "data packets sent", "security rate (%)",
                "Security comparison", ylim=(0, 102))
    _line_chart(paths[2], fail, "time (s)", "node failure rate (%)",
                "Node failure rate", ylim=(0, 102))
    return paths


def emit(results: dict, out_dir, formats=("csv", "svg"), prefix="") -> list:
    """Write the merged report for one scenario run.

    ``results`` maps variant name to a run result. Rows are ordered by
    variant (core first) then by window.
    """
    out = _ensure_dir(out_dir)
    written = []
    order = [v for v in ("core", "distb") if v in results]
    if "csv" in formats:
        path = out / f"{prefix}metrics.csv"
        with _open(path) as fh:
            write_csv([s for v in order for s in results[v].samples], fh)
        written.append(path)
    if "svg" in formats:
        written += plot_run({v: results[v].samples for v in order}, out, prefix)
    return written


def summary_row(param, value, results: dict) -> dict:
    """End-of-run metrics for one swept value, both variants side by side."""
    row = {"param": param, "value": value}
    scn = None
    for v in ("core", "distb"):
        r = results.get(v)
        if r is None:
            continue
        scn = r.scenario
        c = r.recorder.total
        last = r.samples[-1] if r.samples else None
        dur = max(r.world.end_ms, 1) / 1000.0
        row.update({
            f"{v}_sent": c.sent,
            f"{v}_delivered": c.delivered,
            f"{v}_delivered_verified": c.delivered_verified,
            f"{v}_mean_throughput_pps": f"{c.delivered / dur:.4f}",
            f"{v}_security_rate_pct": f"{last.security_rate_pct if last else 0.0:.4f}",
            f"{v}_node_failure_pct": f"{last.node_failure_pct if last else 0.0:.4f}",
        })
    cons = results["distb"].world.consensus if "distb" in results else None
    row["chain_height"] = cons.longest().height if cons else 0
    row["forged_attempts"] = cons.stats["forged_attempts"] if cons else 0
    row["forged_admitted"] = cons.stats["forged_admitted"] if cons else 0
    row["quorum_needed"] = quorum(scn.nodes.miners, scn.ledger.tau) if scn else 0
    return row


def write_summary(rows, path, variants=("core", "distb")) -> Path:
    path = Path(path)
    _ensure_dir(path.parent)
    with _open(path) as fh:
        w = csv.DictWriter(fh, summary_columns(variants), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def plot_sweep(rows, param, out_dir, metric="node_failure_pct") -> Path:
    """One chart of an end-of-run metric against the swept value."""
    out = _ensure_dir(out_dir)
    series = {}
    for v in ("core", "distb"):
        key = f"{v}_{metric}"
        pts = [(float(r["value"]), float(r[key])) for r in rows if key in r]
        if pts:
            series[v] = ([x for x, _ in pts], [y for _, y in pts])
    xlabel = "number of nodes" if param == "nodes" else param
    path = out / f"sweep_{param.replace('.', '_')}_{metric}.svg"
    _line_chart(path, series, xlabel, metric.replace("_", " "), f"{metric} vs {xlabel}")
    return path
