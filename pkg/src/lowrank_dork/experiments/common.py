"""Shared plumbing for the experiment drivers: seeds, slopes, results, workers."""

import csv
import io
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

THREADS_ENV = "LOWRANK_DORK_THREADS"

# run variant -> (integrator scheme, forced robust mode or None)
VARIANTS = {
    "so_dork": ("so_dork", None),
    "gd_dork": ("gd_dork", None),
    "projected_rk": ("projected_rk", None),
    "projector_splitting": ("projector_splitting", None),
    "full_rank": ("full_rank", None),
    "so_dork_exact_inverse": ("so_dork", "none"),
}


def resolve_variant(name, robust_mode):
    """``(scheme, robust_mode)`` for a run variant."""
    try:
        scheme, forced = VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
    return scheme, forced or robust_mode


def child_rng(master, label):
    """Independent generator for stream ``label`` under a master seed.

    Streams are keyed by name, so adding a new stream never shifts the draws
    of existing ones.
    """
    return np.random.default_rng(np.random.SeedSequence([int(master), zlib.crc32(label.encode())]))


def child_seed(master, label):
    return int(child_rng(master, label).integers(0, 2**31 - 1))


def fit_slope(x, y, floor=0.0):
    """Least-squares slope of ``log y`` against ``log x`` over points with ``y > floor``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y) & (y > floor)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def max_workers():
    """Worker cap from ``LOWRANK_DORK_THREADS`` (default: CPU count)."""
    raw = os.environ.get(THREADS_ENV, "")
    if raw.strip():
        n = int(raw)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """``[fn(i) for i in items]`` on a thread pool; order of results follows ``items``."""
    items = list(items)
    n = min(max_workers(), len(items))
    if n <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass
class ExperimentResult:
    """Per-run error reports plus one summary table.

    ``reports`` maps a run key (e.g. ``"so_dork-nt50"``) to its
    :class:`~lowrank_dork.manifold.ErrorReport`; ``summary`` is a list of flat
    dict rows; ``status`` is ``"ok"`` unless some run did not converge.
    """

    name: str
    reports: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def status(self):
        bad = [k for k, r in self.reports.items() if r.status != "ok"]
        return "DNC" if bad else "ok"

    @property
    def failures(self):
        return {k: r.diagnostic for k, r in sorted(self.reports.items()) if r.status != "ok"}

    def summary_csv(self, header_comment=None):
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        if not self.summary:
            return buf.getvalue()
        keys = list(self.summary[0])
        for row in self.summary[1:]:
            keys += [k for k in row if k not in keys]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(keys)
        for row in self.summary:
            writer.writerow([_fmt(row.get(k)) for k in keys])
        return buf.getvalue()


def _fmt(val):
    if val is None:
        return ""
    if isinstance(val, float):
        return repr(val)
    return str(val)


def format_table(rows, keys=None):
    """Plain-text fixed-width rendering of summary rows."""
    if not rows:
        return ""
    keys = keys or list(rows[0])

    def cell(v):
        if isinstance(v, float):
            return f"{v:.3e}"
        return "" if v is None else str(v)

    cols = [[k] + [cell(r.get(k)) for r in rows] for k in keys]
    widths = [max(len(c) for c in col) for col in cols]
    lines = []
    for i in range(len(rows) + 1):
        lines.append("  ".join(col[i].rjust(w) for col, w in zip(cols, widths)))
    return "\n".join(lines)
