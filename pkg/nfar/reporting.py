# nfar/reporting.py

import math
import os
import shutil

import numpy as np
import pandas as pd

from .experiment import SweepResult, cell_name
from .utils import atomic_write_text, log_audit

SVG_WIDTH = 640
SVG_HEIGHT = 480
MARGIN = 70


def _decade_ticks(lo: float, hi: float) -> list[float]:
    ticks = list(range(math.floor(lo), math.ceil(hi) + 1))
    return [float(t) for t in ticks] if len(ticks) >= 2 else [lo, hi]


def render_loglog_svg(summary: pd.DataFrame, title: str = "Generalization error vs sample size") -> str:
    """
    Log10 T against log10 G as an SVG document, with +-1 stderr bars.

    Points with G <= 0 cannot be placed on a log axis and are left out; a
    bar whose lower end would be non-positive is clipped at the plot floor.
    """
    data = summary[(summary['G'] > 0) & summary['G'].notna()]
    if data.empty:
        raise ValueError("No positive G values to plot.")
    x = np.log10(data['T'].to_numpy(dtype=float))
    G = data['G'].to_numpy(dtype=float)
    se = np.nan_to_num(data['stderr'].to_numpy(dtype=float))
    y = np.log10(G)
    hi = np.log10(G + se)
    lo = np.where(G - se > 0, np.log10(np.maximum(G - se, 1e-300)), y.min() - 0.5)

    x_min, x_max = x.min() - 0.05, x.max() + 0.05
    y_min, y_max = min(lo.min(), y.min()) - 0.1, hi.max() + 0.1
    if x_max - x_min < 1e-9:
        x_min, x_max = x_min - 0.5, x_max + 0.5
    if y_max - y_min < 1e-9:
        y_min, y_max = y_min - 0.5, y_max + 0.5
    plot_w = SVG_WIDTH - 2 * MARGIN
    plot_h = SVG_HEIGHT - 2 * MARGIN

    def px(v):
        return MARGIN + (v - x_min) / (x_max - x_min) * plot_w

    def py(v):
        return SVG_HEIGHT - MARGIN - (v - y_min) / (y_max - y_min) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{MARGIN}" y1="{SVG_HEIGHT - MARGIN}" x2="{SVG_WIDTH - MARGIN}" y2="{SVG_HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{SVG_HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{SVG_WIDTH / 2:.1f}" y="{SVG_HEIGHT - 20}" text-anchor="middle" font-size="13">log10 T</text>',
        f'<text x="20" y="{SVG_HEIGHT / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 20 {SVG_HEIGHT / 2:.1f})">log10 G</text>',
    ]
    for t in _decade_ticks(x_min, x_max):
        if x_min <= t <= x_max:
            parts.append(f'<line x1="{px(t):.2f}" y1="{SVG_HEIGHT - MARGIN}" x2="{px(t):.2f}" '
                         f'y2="{SVG_HEIGHT - MARGIN + 5}" stroke="black"/>')
            parts.append(f'<text x="{px(t):.2f}" y="{SVG_HEIGHT - MARGIN + 20}" text-anchor="middle" '
                         f'font-size="11">{t:g}</text>')
    for t in _decade_ticks(y_min, y_max):
        if y_min <= t <= y_max:
            parts.append(f'<line x1="{MARGIN - 5}" y1="{py(t):.2f}" x2="{MARGIN}" y2="{py(t):.2f}" stroke="black"/>')
            parts.append(f'<text x="{MARGIN - 8}" y="{py(t) + 4:.2f}" text-anchor="end" font-size="11">{t:g}</text>')

    points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
    parts.append(f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="1.5"/>')
    for a, b, l, h in zip(x, y, lo, hi):
        parts.append(f'<line class="stderr" x1="{px(a):.2f}" y1="{py(l):.2f}" x2="{px(a):.2f}" y2="{py(h):.2f}" '
                     f'stroke="gray"/>')
        parts.append(f'<circle class="point" cx="{px(a):.2f}" cy="{py(b):.2f}" r="3.5" fill="steelblue">'
                     f'<title>log10 T={a:.6g}, log10 G={b:.6g}</title></circle>')
    parts.append('</svg>')
    return "\n".join(parts) + "\n"


class ArtifactReporter:
    """Writes the tables, the log-log plot and the designated surface pair for a sweep."""

    def __init__(self, result: SweepResult, out_dir: str, dfs: dict | None = None):
        self.result = result
        self.out_dir = out_dir
        self.dfs = dfs if dfs is not None else {}

    def write_tables(self) -> list[str]:
        paths = []
        for name, df in (('results', self.result.results), ('summary', self.result.summary),
                         ('timings', self.result.timings)):
            path = os.path.join(self.out_dir, f"{name}.csv")
            atomic_write_text(path, df.to_csv(index=False, lineterminator="\n"))
            print(f"  - Generated {name}.csv at {path}")
            paths.append(path)
        self.log_audit(self.result.run_dir, 'REPORT_GEN', f"Wrote {len(self.result.results)} cell rows.")
        return paths

    def write_plot(self) -> str | None:
        try:
            svg = render_loglog_svg(self.result.summary)
        except ValueError as e:
            print(f"  - WARNING: Skipping loglog.svg: {e}")
            return None
        path = os.path.join(self.out_dir, 'loglog.svg')
        atomic_write_text(path, svg)
        print(f"  - Generated log-log plot at {path} (slope {self.result.slope:.4g})")
        return path

    def write_surfaces(self) -> list[str]:
        """Copy the designated replication's true and predicted fields to true.csv / predicted.csv."""
        if self.result.designated is None:
            return []
        b, T = self.result.designated
        stem = os.path.join(self.result.run_dir, 'cells', cell_name(b, T))
        paths = []
        for suffix in ('true', 'predicted'):
            src = f"{stem}_{suffix}.csv"
            if not os.path.exists(src):
                print(f"  - WARNING: Designated replication b={b}, T={T} has no {suffix} surface.")
                return paths
            dst = os.path.join(self.out_dir, f"{suffix}.csv")
            if os.path.abspath(src) != os.path.abspath(dst):
                shutil.copyfile(src, dst)
            paths.append(dst)
        self.log_audit(f"b={b},T={T}", 'REPORT_GEN', "Wrote true/predicted surface pair.")
        return paths

    def run(self) -> list[str]:
        print("\nReporting: Writing sweep artifacts...")
        if self.result.empty:
            raise ValueError("Sweep result has no completed cells; nothing to report.")
        os.makedirs(self.out_dir, exist_ok=True)
        paths = self.write_tables()
        plot = self.write_plot()
        if plot is not None:
            paths.append(plot)
        paths.extend(self.write_surfaces())
        return paths

    def log_audit(self, ref_id, action, details):
        log_audit(self.dfs, self.__class__.__name__, ref_id, action, details)


def emit_artifacts(result: SweepResult, out_dir: str, dfs: dict | None = None) -> list[str]:
    return ArtifactReporter(result, out_dir, dfs).run()
