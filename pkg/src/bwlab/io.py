"""File emission and parsing: CSV, standalone SVG line plots, JSON manifests,
sequence and parameter files.

Every writer is atomic (write to a temp sibling, then rename) and byte
deterministic for fixed input: floats serialize with 17 significant digits,
so doubles round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IoError, ParseError
from .models import HiddenSequence, ObservedSequence, ThetaParams


def fmt(v) -> str:
    """Serialize one number with 17 significant digits."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit_csv(path, header: list[str], columns: list) -> str:
    """RFC-4180-style CSV, one column per series; deterministic bytes."""
    if not columns or not all(len(c) == len(columns[0]) for c in columns):
        raise IoError("emit_csv needs nonempty, equal-length columns")
    if len(columns[0]) == 0:
        raise IoError("emit_csv needs at least one row")
    if len(header) != len(columns):
        raise IoError(f"{len(header)} header fields for {len(columns)} columns")
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(fmt(v) for v in row))
    _atomic_write(path, ("\r\n".join(lines) + "\r\n").encode("ascii"))
    return os.fspath(path)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """(header, data) for a numeric CSV written by emit_csv."""
    with open(path, "r", encoding="ascii") as fh:
        rows = [line.strip() for line in fh if line.strip()]
    header = rows[0].split(",")
    data = np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
    return header, data


# ---------------------------------------------------------------------------
# SVG line plots
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
_W, _H = 640, 440
_ML, _MR, _MT, _MB = 72, 16, 20, 52


@dataclass(frozen=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    color: str | None = None
    dashed: bool = False


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        lo_e, hi_e = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        step = max(1, (hi_e - lo_e) // 6)
        return [10.0**e for e in range(lo_e, hi_e + 1, step)]
    span = hi - lo or 1.0
    raw = span / 5
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((s for s in (1 * mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw), default=mag)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * span:
        out.append(0.0 if abs(v) < 1e-12 * span else v)
        v += step
    return out


def emit_svg_lineplot(
    path, series: list[Series], xlabel: str = "", ylabel: str = "",
    title: str = "", logy: bool = False,
) -> str:
    """Standalone SVG line plot with optional log-scale y axis.

    Deterministic byte output for fixed input; nonpositive values are
    dropped from log-scale series.
    """
    if not series:
        raise IoError("emit_svg_lineplot needs at least one series")
    pts = []
    for s in series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        if x.size == 0 or x.shape != y.shape:
            raise IoError(f"series {s.label!r} is empty or ragged")
        keep = np.isfinite(x) & np.isfinite(y) & ((y > 0) if logy else True)
        pts.append((x[keep], y[keep]))
    xs = np.concatenate([p[0] for p in pts])
    ys = np.concatenate([p[1] for p in pts])
    if xs.size == 0:
        raise IoError("no plottable points")
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_lo == y_hi:
        y_lo, y_hi = (y_lo / 2, y_hi * 2) if logy else (y_lo - 0.5, y_hi + 0.5)

    def sx(v):
        return _ML + (v - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def sy(v):
        t = (math.log10(v) - math.log10(y_lo)) / (math.log10(y_hi) - math.log10(y_lo)) if logy \
            else (v - y_lo) / (y_hi - y_lo)
        return _H - _MB - t * (_H - _MT - _MB)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
        'fill="none" stroke="black" stroke-width="1"/>',
    ]
    for tx in _ticks(x_lo, x_hi, log=False):
        if not x_lo <= tx <= x_hi:
            continue
        px = sx(tx)
        out.append(f'<line x1="{px:.2f}" y1="{_H - _MB}" x2="{px:.2f}" y2="{_H - _MB + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{_H - _MB + 18}" font-size="11" text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(y_lo, y_hi, log=logy):
        if not y_lo <= ty <= y_hi:
            continue
        py = sy(ty)
        out.append(f'<line x1="{_ML - 5}" y1="{py:.2f}" x2="{_ML}" y2="{py:.2f}" stroke="black"/>')
        label = f"1e{int(math.log10(ty))}" if logy else f"{ty:g}"
        out.append(f'<text x="{_ML - 8}" y="{py + 4:.2f}" font-size="11" text-anchor="end">{label}</text>')
    for i, (s, (x, y)) in enumerate(zip(series, pts)):
        color = s.color or _PALETTE[i % len(_PALETTE)]
        if x.size == 0:
            continue
        d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
    seen = []
    for i, s in enumerate(series):
        if s.label in (lbl for lbl, _ in seen):
            continue
        seen.append((s.label, s.color or _PALETTE[i % len(_PALETTE)]))
    for j, (label, color) in enumerate(seen):
        ly = _MT + 14 + 16 * j
        out.append(f'<line x1="{_W - _MR - 150}" y1="{ly - 4}" x2="{_W - _MR - 122}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR - 116}" y="{ly}" font-size="11">{label}</text>')
    if title:
        out.append(f'<text x="{_W / 2}" y="14" font-size="13" text-anchor="middle">{title}</text>')
    if xlabel:
        out.append(f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 14}" font-size="12" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{(_MT + _H - _MB) / 2}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">{ylabel}</text>')
    out.append("</svg>")
    _atomic_write(path, "\n".join(out).encode("utf-8"))
    return os.fspath(path)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    """Run manifest: config echo plus checksums and summary scalars."""

    tool_version: str
    config_text: str
    config_hash: str
    seeds: list
    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def register(self, path) -> None:
        self.files[os.path.basename(os.fspath(path))] = sha256_file(path)

    def write(self, path) -> str:
        payload = {
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "config": self.config_text,
            "seeds": list(self.seeds),
            "files": dict(sorted(self.files.items())),
            "summary": self.summary,
            "checks": self.checks,
            "wall_clock_s": self.wall_clock_s,
        }
        _atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))
        return os.fspath(path)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Sequence and parameter files
# ---------------------------------------------------------------------------


def write_sequence_csv(path, hidden: HiddenSequence, observed: ObservedSequence) -> str:
    """Header i,z,x_1..x_d; extension rows carry i < 1 or i > n."""
    if hidden.n != observed.n or hidden.k != observed.k:
        raise IoError("hidden and observed sequences disagree on (n, k)")
    d = observed.d
    header = ["i", "z"] + [f"x_{j}" for j in range(1, d + 1)]
    idx = np.arange(1 - observed.k, observed.n + observed.k + 1)
    cols = [idx, hidden.z] + [observed.x[:, j] for j in range(d)]
    return emit_csv(path, header, cols)


def read_sequence_csv(path) -> tuple[HiddenSequence, ObservedSequence]:
    header, data = read_csv(path)
    if header[:2] != ["i", "z"]:
        raise ParseError(f"{path}: expected header i,z,x_1,...; got {header[:2]}")
    idx = data[:, 0].astype(int)
    k = int(1 - idx[0])
    n = int(idx[-1] - k)
    z = data[:, 1]
    z = z.astype(int) if np.allclose(z, np.round(z)) else z
    x = data[:, 2:]
    return HiddenSequence(z=z, n=n, k=k), ObservedSequence(x=x, n=n, k=k)


def write_gamma_csv(path, gamma: np.ndarray, state_values) -> str:
    """Singleton posterior dump: rows (i, z, gamma) in long format."""
    n, s = gamma.shape
    idx, zs, gs = [], [], []
    for i in range(n):
        for j in range(s):
            idx.append(i + 1)
            zs.append(state_values[j])
            gs.append(gamma[i, j])
    return emit_csv(path, ["i", "z", "gamma"], [idx, zs, gs])


def write_xi_csv(path, xi: np.ndarray, state_values) -> str:
    """Pairwise posterior dump: rows (i, a, b, xi) for the (i, i+1) pairs."""
    m, s, _ = xi.shape
    idx, aa, bb, vv = [], [], [], []
    for i in range(m):
        for a in range(s):
            for b in range(s):
                idx.append(i + 1)
                aa.append(state_values[a])
                bb.append(state_values[b])
                vv.append(xi[i, a, b])
    return emit_csv(path, ["i", "a", "b", "xi"], [idx, aa, bb, vv])


def write_params(path, theta: ThetaParams) -> str:
    text = (
        f"beta = {fmt(theta.beta)}\n"
        f"mu = {','.join(fmt(v) for v in theta.mu)}\n"
        f"sigma = {fmt(theta.sigma)}\n"
        f"b_bound = {fmt(theta.b_bound)}\n"
    )
    _atomic_write(path, text.encode("ascii"))
    return os.fspath(path)


def read_params(path) -> ThetaParams:
    values = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in ("beta", "mu", "sigma", "b_bound"):
                raise ParseError(f"{path} line {lineno}: unknown key {key!r}")
            values[key] = raw
    try:
        return ThetaParams(
            beta=float(values["beta"]),
            mu=np.array([float(v) for v in values["mu"].split(",")]),
            sigma=float(values.get("sigma", "1")),
            b_bound=float(values.get("b_bound", "0.6")),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: missing key {exc}") from exc
