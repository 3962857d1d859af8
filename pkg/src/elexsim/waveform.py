"""Recorded waveforms: CSV round trip, comparison and SVG plots."""

from __future__ import annotations

import io
import math

import numpy as np


class WaveformError(ValueError):
    pass


class Waveform:
    """Time series of probe values plus configuration-change markers."""

    def __init__(self, labels, n_states=0):
        self.labels = list(labels)
        self._t = []
        self._rows = []
        self._states = []
        self.n_states = n_states
        self.events = []  # (t, bitstring)

    def append(self, t, values, state=None):
        if self._t and not t > self._t[-1]:
            raise WaveformError(f"time {t!r} not after {self._t[-1]!r}")
        self._t.append(float(t))
        self._rows.append([float(v) for v in values])
        if state is not None:
            self._states.append(np.array(state, dtype=float))

    def mark(self, t, bits):
        self.events.append((float(t), bits))

    @property
    def t(self) -> np.ndarray:
        return np.array(self._t)

    @property
    def data(self) -> np.ndarray:
        return np.array(self._rows, dtype=float).reshape(len(self._t), len(self.labels))

    @property
    def states(self) -> np.ndarray:
        return np.array(self._states).reshape(len(self._states), self.n_states)

    def __len__(self):
        return len(self._t)

    def column(self, label) -> np.ndarray:
        return self.data[:, self.labels.index(label)]

    def __getitem__(self, label):
        return self.column(label)

    @classmethod
    def from_arrays(cls, t, columns: dict, events=()):
        wf = cls(list(columns))
        data = np.column_stack([np.asarray(v, dtype=float) for v in columns.values()]) if columns else np.zeros((len(t), 0))
        wf._t = [float(x) for x in t]
        wf._rows = data.tolist()
        wf.events = list(events)
        return wf

    # -- CSV -----------------------------------------------------------------

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(["t"] + self.labels) + "\n")
        events = sorted(self.events)
        k = 0
        for t, row in zip(self._t, self._rows):
            while k < len(events) and events[k][0] <= t:
                out.write(f"# event t={events[k][0]:.17g} cfg={events[k][1]}\n")
                k += 1
            out.write(",".join(f"{v:.17g}" for v in [t] + row) + "\n")
        for ev in events[k:]:
            out.write(f"# event t={ev[0]:.17g} cfg={ev[1]}\n")
        return out.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Waveform":
        header = None
        t, rows, events = [], [], []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = dict(p.split("=", 1) for p in line[1:].split() if "=" in p)
                if "t" in parts and "cfg" in parts:
                    try:
                        events.append((float(parts["t"]), parts["cfg"]))
                    except ValueError:
                        raise WaveformError(f"line {lineno}: bad event marker")
                continue
            fields = line.split(",")
            if header is None:
                if fields[0] != "t":
                    raise WaveformError(f"line {lineno}: header must start with 't'")
                header = fields[1:]
                continue
            if len(fields) != len(header) + 1:
                raise WaveformError(f"line {lineno}: expected {len(header) + 1} fields")
            try:
                values = [float(f) for f in fields]
            except ValueError:
                raise WaveformError(f"line {lineno}: non-numeric field")
            t.append(values[0])
            rows.append(values[1:])
        if header is None:
            raise WaveformError("empty CSV")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise WaveformError("time column is not strictly increasing")
        wf = cls(header)
        wf._t, wf._rows, wf.events = t, rows, events
        return wf

    @classmethod
    def read_csv(cls, path) -> "Waveform":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def compare_waveforms(a: Waveform, b: Waveform, columns=None) -> dict:
    """Interpolate ``b`` onto ``a``'s time grid over the overlap.

    Returns ``{label: {"max_abs": ..., "rel_l2": ...}}`` with
    rel_l2 = ||a - b|| / ||a||.
    """
    ta, tb = a.t, b.t
    if not len(ta) or not len(tb):
        raise WaveformError("empty waveform")
    lo, hi = max(ta[0], tb[0]), min(ta[-1], tb[-1])
    mask = (ta >= lo) & (ta <= hi)
    if hi < lo or not mask.any():
        raise WaveformError("waveforms have no overlapping time range")
    labels = columns or [c for c in a.labels if c in b.labels]
    if not labels:
        raise WaveformError("no common columns")
    report = {}
    for label in labels:
        ya = a.column(label)[mask]
        yb = np.interp(ta[mask], tb, b.column(label))
        diff = ya - yb
        norm = float(np.linalg.norm(ya))
        dn = float(np.linalg.norm(diff))
        report[label] = {
            "max_abs": float(np.max(np.abs(diff))),
            "rel_l2": dn / norm if norm > 0 else (0.0 if dn == 0 else math.inf),
        }
    return report


def sample_at(wf: Waveform, times, label=None, state=None):
    """Linear interpolation of a probe column (or a state column) at ``times``."""
    y = wf.column(label) if label is not None else wf.states[:, state]
    return np.interp(times, wf.t, y)


def periodic_change(wf: Waveform, period: float) -> np.ndarray:
    """Per-period relative change of every state, one row per period boundary.

    Row ``k`` compares the state at ``(k+1)*period`` with ``k*period``,
    scaled by the largest magnitude that state reaches.
    """
    n = int(math.floor(wf.t[-1] / period + 1e-9))
    marks = np.arange(n + 1) * period
    st = wf.states
    out = []
    for j in range(st.shape[1]):
        s = np.interp(marks, wf.t, st[:, j])
        scale = max(float(np.max(np.abs(st[:, j]))), 1e-30)
        out.append(np.abs(np.diff(s)) / scale)
    return np.array(out).T


# -- SVG ---------------------------------------------------------------------

def to_svg(wf: Waveform, width=800, pane_height=160) -> str:
    """Stacked panes, one per probe; configuration events as vertical lines."""
    if not len(wf) and not wf.events:
        raise WaveformError("nothing to plot")
    labels = wf.labels
    margin_l, margin_r, gap = 70, 20, 30
    height = max(1, len(labels)) * (pane_height + gap) + gap
    t = wf.t
    t0 = float(t[0]) if len(t) else 0.0
    t1 = float(t[-1]) if len(t) else 0.0
    if t1 <= t0:
        t1 = t0 + 1.0
    plot_w = width - margin_l - margin_r

    def xpix(x):
        return margin_l + (x - t0) / (t1 - t0) * plot_w

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    data = wf.data
    for k, label in enumerate(labels):
        top = gap + k * (pane_height + gap)
        y = data[:, k] if len(t) else np.zeros(0)
        lo = float(np.min(y)) if len(y) else 0.0
        hi = float(np.max(y)) if len(y) else 1.0
        if hi - lo < 1e-300:
            lo, hi = lo - 0.5, hi + 0.5

        def ypix(v, top=top, lo=lo, hi=hi):
            return top + pane_height - (v - lo) / (hi - lo) * pane_height

        parts.append(
            f'<rect x="{margin_l}" y="{top}" width="{plot_w}" height="{pane_height}" '
            f'fill="none" stroke="#888"/>'
        )
        parts.append(f'<text x="5" y="{top + 12}">{_esc(label)}</text>')
        parts.append(f'<text x="5" y="{top + pane_height}">{lo:.4g}</text>')
        parts.append(f'<text x="5" y="{top + 24}">{hi:.4g}</text>')
        for te, _ in wf.events:
            if t0 <= te <= t1:
                xe = xpix(te)
                parts.append(
                    f'<line class="event" x1="{xe:.2f}" y1="{top}" x2="{xe:.2f}" '
                    f'y2="{top + pane_height}" stroke="#c33" stroke-width="0.5" stroke-dasharray="2,2"/>'
                )
        if len(y) > 1:
            pts = " ".join(f"{xpix(a):.2f},{ypix(b):.2f}" for a, b in zip(t, y))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f4e9c" stroke-width="1"/>')
        elif len(y) == 1:
            parts.append(
                f'<circle class="marker" cx="{xpix(t[0]):.2f}" cy="{ypix(y[0]):.2f}" r="3" fill="#1f4e9c"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
