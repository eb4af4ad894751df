"""Structured run logging and the benchmark's derived metrics."""

from __future__ import annotations

import csv
import json

import numpy as np

from .errors import UsageError

SCHEMA_VERSION = 1

# Fixed record schema: every row carries every field, unused ones as null.
METRIC_FIELDS = (
    "kind", "step", "updates", "episode",
    "episode_return", "episode_length",
    "eval_return_mean", "eval_return_std", "success_rate",
    "loss_critic", "loss_primitive", "loss_routing", "loss_value", "loss_aux",
    "routing_entropy", "w_mean",
)


def _jsonable(value):
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    raise UsageError(f"cannot log value of type {type(value).__name__}")


class MetricLog:
    """Append-only metric records with flush-on-write.

    Rows are kept in memory and, when a path is given, streamed to disk as
    line-delimited JSON behind a schema-version header.  The step field must
    never decrease.  No timestamps: identical runs produce identical bytes.
    """

    def __init__(self, path=None, meta=None):
        self.rows = []
        self.path = str(path) if path else None
        self._file = None
        self._last_step = None
        if self.path:
            self._file = open(self.path, "w", encoding="utf-8")
            header = {"kind": "header", "schema_version": SCHEMA_VERSION,
                      "fields": list(METRIC_FIELDS)}
            header.update({k: _jsonable(v) for k, v in (meta or {}).items()})
            self._write(header)

    def _write(self, record):
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()

    def log(self, kind, step, **fields):
        step = int(step)
        if self._last_step is not None and step < self._last_step:
            raise UsageError(f"step went backwards: {step} < {self._last_step}")
        unknown = set(fields) - set(METRIC_FIELDS)
        if unknown:
            raise UsageError(f"unknown metric fields: {sorted(unknown)}")
        row = {name: None for name in METRIC_FIELDS}
        row["kind"] = kind
        row["step"] = step
        for name, value in fields.items():
            row[name] = _jsonable(value)
        self._last_step = step
        self.rows.append(row)
        if self._file:
            self._write(row)
        return row

    def close(self):
        if self._file:
            self._file.close()
            self._file = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Load a metrics file; returns (header, rows)."""
    header, rows = None, []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("kind") == "header":
                header = record
            else:
                rows.append(record)
    if header is None:
        raise UsageError(f"{path} has no schema header")
    return header, rows


def eval_curve(rows, field="eval_return_mean"):
    """Extract the evaluation series (steps, values) from metric rows."""
    steps, values = [], []
    for row in rows:
        if row.get("kind") == "eval" and row.get(field) is not None:
            steps.append(row["step"])
            values.append(row[field])
    return np.asarray(steps, dtype=np.float64), np.asarray(values, dtype=np.float64)


# ---------------------------------------------------------------------------
# Derived metrics
# ---------------------------------------------------------------------------


def _series(series):
    steps, values = series
    steps = np.asarray(steps, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if steps.size == 0 or values.size == 0:
        raise UsageError("empty series")
    if steps.size != values.size:
        raise UsageError("series steps and values differ in length")
    if steps.size < 2:
        raise UsageError("a series needs at least two points to integrate")
    return steps, values


def auc(curve, reference) -> float:
    """Area under `curve` as a percentage of the area under `reference`.

    Both series are aligned on the union of their step grids by linear
    interpolation, then integrated with the trapezoid rule.
    """
    cs, cv = _series(curve)
    rs, rv = _series(reference)
    if cs[0] != rs[0] or cs[-1] != rs[-1]:
        raise UsageError("curve and reference cover different step ranges")
    grid = np.union1d(cs, rs)
    trapezoid = getattr(np, "trapezoid", np.trapz)
    area_c = trapezoid(np.interp(grid, cs, cv), grid)
    area_r = trapezoid(np.interp(grid, rs, rv), grid)
    if area_r == 0.0:
        raise UsageError("reference curve has zero area")
    return 100.0 * area_c / area_r


def exploration_coverage(positions, half_extent=5.0, cells=50) -> float:
    """Fraction of occupied cells on a cells x cells grid over the playground."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size == 0:
        return 0.0
    positions = positions.reshape(-1, 2)
    idx = np.floor((positions + half_extent) / (2.0 * half_extent) * cells)
    idx = np.clip(idx, 0, cells - 1).astype(np.int64)
    flat = idx[:, 0] * cells + idx[:, 1]
    return len(np.unique(flat)) / float(cells * cells)


def primitive_separation(mu):
    """Mean over states of the minimum pairwise distance between primitive means.

    mu has shape (N, K, A); with a single primitive the quantity is undefined
    and None is returned.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 3:
        raise UsageError(f"expected (N, K, A) means, got shape {mu.shape}")
    n, k, _ = mu.shape
    if k < 2:
        return None
    dist = np.linalg.norm(mu[:, :, None, :] - mu[:, None, :, :], axis=-1)
    dist[:, np.arange(k), np.arange(k)] = np.inf
    return float(np.mean(dist.min(axis=(1, 2))))


def moving_average(values, window=10) -> np.ndarray:
    """Trailing mean over up to `window` points (shorter at the start)."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise UsageError("window must be >= 1")
    out = np.empty_like(values)
    csum = np.cumsum(values)
    for i in range(values.size):
        lo = max(0, i - window + 1)
        out[i] = (csum[i] - (csum[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


def density_dip(samples, loc_a, loc_b, bins=60, margin=0.8):
    """Histogram dip check: is there a density valley between two modes?

    Estimates the density at loc_a, loc_b, and their midpoint from a
    histogram; bimodal means the midpoint density falls below margin times
    the smaller mode density.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise UsageError("dip check needs samples")
    lo = min(samples.min(), loc_a, loc_b)
    hi = max(samples.max(), loc_a, loc_b)
    hist, edges = np.histogram(samples, bins=bins, range=(lo, hi), density=True)

    def at(x):
        i = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
        return float(hist[i])

    d_a, d_b = at(loc_a), at(loc_b)
    d_mid = at(0.5 * (loc_a + loc_b))
    return {"density_a": d_a, "density_b": d_b, "density_mid": d_mid,
            "is_bimodal": bool(d_mid < margin * min(d_a, d_b))}


def routing_probability_trace(actor, env, rng, episodes=1) -> np.ndarray:
    """Per-step routing weight rows w(s_t) from policy rollouts."""
    rows = []
    for _ in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            rows.append(actor.weights_for(obs[None, :])[0])
            step = env.step(actor.act(obs, rng) * actor.action_scale)
            obs, done = step.observation, step.done
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# File exports
# ---------------------------------------------------------------------------


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                             else v for v in row])


def plot_learning_curves(runs, out_path, window=10, ylabel="evaluation return"):
    """Render learning curves to SVG: smoothed lines over faint raw data.

    `runs` is a list of (label, steps, values).  Smoothing only affects the
    picture; the logs keep the raw series.
    """
    from matplotlib.figure import Figure

    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot(111)
    for label, steps, values in runs:
        steps = np.asarray(steps, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if steps.size == 0:
            continue
        line, = ax.plot(steps, moving_average(values, window), label=label)
        ax.plot(steps, values, alpha=0.2, color=line.get_color())
    ax.set_xlabel("environment steps")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if runs:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
