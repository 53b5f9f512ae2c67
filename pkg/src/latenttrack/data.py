"""Jena Climate ingestion, stream construction and synthetic nonstationary streams."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STREAM_SCHEMA = "latenttrack.stream/1"
TIME_COLUMN = "Date Time"
TIME_FORMAT = "%d.%m.%Y %H:%M:%S"
TARGET_COLUMN = "T (degC)"
SYNTH_KINDS = ("regime_switch", "seasonal_drift", "anomaly_spike")


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class Table:
    columns: list[str]
    values: np.ndarray  # (n_rows, n_columns)
    timestamps: list[dt.datetime] | None = None

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise DataError(f"missing column {name!r}") from None


@dataclass(frozen=True)
class StreamStep:
    x: np.ndarray
    y: float
    t: int


@dataclass
class Stream:
    """Ordered supervised pairs plus the chronological train/eval boundary."""

    x: np.ndarray  # (T, D)
    y: np.ndarray  # (T,)
    t: np.ndarray  # (T,) step indices (strictly increasing)
    split: int  # first evaluation index
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self):
        for i in range(len(self.y)):
            yield StreamStep(self.x[i], float(self.y[i]), int(self.t[i]))

    @property
    def x_dim(self) -> int:
        return self.x.shape[1]

    def slice(self, start: int, stop: int | None = None) -> "Stream":
        stop = len(self) if stop is None else stop
        split = min(max(self.split - start, 0), stop - start)
        return Stream(self.x[start:stop], self.y[start:stop], self.t[start:stop], split, dict(self.manifest))

    def train(self) -> "Stream":
        return self.slice(0, self.split)

    def evaluation(self) -> "Stream":
        return self.slice(self.split)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.x, self.y, self.t.astype(np.int64)):
            h.update(np.ascontiguousarray(arr, dtype="<f8" if arr.dtype.kind == "f" else "<i8").tobytes())
        h.update(str(self.split).encode())
        return h.hexdigest()[:16]


# -- Jena ----------------------------------------------------------------------------


def load_jena(path, delimiter: str = ",", time_column: str | None = TIME_COLUMN) -> Table:
    """Parse a delimiter-separated file with a header row.

    Every cell except the optional timestamp column must be numeric; bad rows
    raise :class:`DataError` naming their line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        has_time = time_column is not None and time_column in header
        t_idx = header.index(time_column) if has_time else None
        columns = [h for i, h in enumerate(header) if i != t_idx]
        if not columns:
            raise DataError(f"{path}: no numeric columns")
        rows, stamps = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for i, cell in enumerate(row):
                if i == t_idx:
                    try:
                        stamps.append(dt.datetime.strptime(cell.strip(), TIME_FORMAT))
                    except ValueError:
                        raise DataError(f"{path}:{lineno}: bad timestamp {cell!r}") from None
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric cell {cell!r} in column {header[i]!r}") from None
                vals.append(v)
            rows.append(vals)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
    return Table(columns, values, stamps if has_time else None)


def downsample(table: Table, factor: int = 6) -> Table:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    stamps = table.timestamps[::factor] if table.timestamps is not None else None
    return Table(list(table.columns), table.values[::factor].copy(), stamps)


def time_features(stamps: list[dt.datetime] | None, n: int, step_hours: float = 6.0) -> np.ndarray:
    """sin/cos encodings of time-of-day and day-of-week, shape (n, 4)."""
    if stamps is None:
        hours = np.arange(n) * step_hours
        tod = (hours % 24.0) / 24.0
        dow = ((hours // 24.0) % 7.0) / 7.0
    else:
        tod = np.array([(s.hour + s.minute / 60.0 + s.second / 3600.0) / 24.0 for s in stamps])
        dow = np.array([(s.weekday() + (s.hour + s.minute / 60.0) / 24.0) / 7.0 for s in stamps])
    ang_d, ang_w = 2 * np.pi * tod, 2 * np.pi * dow
    return np.column_stack([np.sin(ang_d), np.cos(ang_d), np.sin(ang_w), np.cos(ang_w)])


def build_stream(
    table: Table,
    history_len: int = 8,
    horizon: int = 6,
    target: str = TARGET_COLUMN,
    split_fraction: float = 0.7,
    normalize: bool = True,
    step_hours: float | None = None,
) -> Stream:
    """Rolling-history features with a ``horizon``-ahead raw-unit target.

    ``x_t`` flattens rows ``t-H+1 .. t`` (z-scored with statistics from the rows
    visible to the training split) followed by the time encodings of row ``t``;
    ``y_t`` is the target column at row ``t + horizon``.
    """
    n = len(table)
    H = history_len
    if n <= H + horizon:
        raise DataError(f"table has {n} rows; need more than history {H} + horizon {horizon}")
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    raw = table.values
    target_col = table.column(target)
    rows = np.arange(H - 1, n - horizon)  # raw index of the newest row in each x
    n_steps = len(rows)
    split = int(math.floor(split_fraction * n_steps))
    if split < 1 or split >= n_steps:
        raise DataError("split leaves an empty train or evaluation segment")
    if normalize:
        visible = raw[: rows[split - 1] + 1]
        mu = visible.mean(axis=0)
        sd = visible.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
    else:
        mu = np.zeros(raw.shape[1])
        sd = np.ones(raw.shape[1])
    z = (raw - mu) / sd
    hist = np.stack([z[r - H + 1 : r + 1].reshape(-1) for r in rows])
    if step_hours is None:
        step_hours = _infer_step_hours(table.timestamps)
    tf = time_features(table.timestamps, n, step_hours)[rows]
    x = np.hstack([hist, tf])
    y = target_col[rows + horizon].copy()
    manifest = {
        "source": "table",
        "history_len": H,
        "horizon": horizon,
        "target": target,
        "split_fraction": split_fraction,
        "effective_step_hours": step_hours,
        "norm_mean": mu.tolist(),
        "norm_std": sd.tolist(),
    }
    return Stream(x, y, np.arange(n_steps), split, manifest)


def _infer_step_hours(stamps) -> float:
    if stamps is None or len(stamps) < 2:
        return 6.0
    return (stamps[1] - stamps[0]).total_seconds() / 3600.0


def jena_stream(path, factor: int = 6, history_len: int = 8, horizon: int = 6, split_fraction: float = 0.7,
                delimiter: str = ",") -> Stream:
    table = downsample(load_jena(path, delimiter=delimiter), factor)
    stream = build_stream(table, history_len, horizon, split_fraction=split_fraction)
    stream.manifest.update({"source": "jena", "path": str(path), "downsample": factor})
    return stream


# -- synthetic streams ---------------------------------------------------------------


def synth_stream(
    kind: str,
    length: int,
    seed: int = 0,
    x_dim: int = 3,
    n_switches: int = 5,
    n_regimes: int = 2,
    noise: float = 0.1,
    split_fraction: float = 0.7,
    anomaly_index: int | None = None,
    anomaly_size: float = 40.0,
) -> Stream:
    """Desk-scale nonstationary streams.

    ``regime_switch``: ``y = a_r . x + noise``; ``n_switches`` evenly spaced
    change points cycle through ``n_regimes`` coefficient vectors, so
    regimes recur.
    ``seasonal_drift``: a sinusoid in the features whose phase rotates slowly.
    ``anomaly_spike``: a smooth autoregressive signal (lagged target in ``x``)
    with one extreme target value at ``anomaly_index``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic stream kind {kind!r}")
    rng = np.random.default_rng(seed)
    manifest = {"source": "synth", "kind": kind, "length": length, "seed": seed, "noise": noise}
    if kind == "regime_switch":
        x = rng.standard_normal((length, x_dim))
        seg = int(math.ceil(length / (n_switches + 1)))
        if n_regimes < 1:
            raise ValueError("n_regimes must be >= 1")
        regime = np.minimum(np.arange(length) // seg, n_switches) % n_regimes
        coefs = rng.standard_normal((n_regimes, x_dim))
        y = np.einsum("td,td->t", x, coefs[regime]) + noise * rng.standard_normal(length)
        manifest.update(x_dim=x_dim, n_switches=n_switches, n_regimes=n_regimes,
                        switch_points=[int(seg * (r + 1)) for r in range(n_switches)], coefficients=coefs.tolist())
    elif kind == "seasonal_drift":
        t = np.arange(length)
        period = 24.0
        phase = 2 * np.pi * t / period
        x = np.column_stack([np.sin(phase), np.cos(phase), rng.standard_normal((length, max(x_dim - 2, 0)))])
        drift = 2 * np.pi * t / max(length, 1)
        y = np.cos(drift) * x[:, 0] + np.sin(drift) * x[:, 1] + noise * rng.standard_normal(length)
        manifest.update(x_dim=x.shape[1], period=period)
    else:
        t = np.arange(length)
        signal = np.sin(2 * np.pi * t / 50.0) + noise * rng.standard_normal(length)
        idx = int(0.85 * length) if anomaly_index is None else int(anomaly_index)
        if not 0 < idx < length:
            raise ValueError("anomaly_index must lie inside the stream")
        y = signal.copy()
        y[idx] += anomaly_size
        lagged = np.concatenate([[0.0], y[:-1]])
        phase = 2 * np.pi * t / 50.0
        x = np.column_stack([lagged, np.sin(phase), np.cos(phase)])
        manifest.update(x_dim=3, anomaly_index=idx, anomaly_size=anomaly_size)
    split = int(math.floor(split_fraction * length))
    return Stream(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), np.arange(length), split, manifest)


# -- stream cache --------------------------------------------------------------------


def save_stream(stream: Stream, path) -> None:
    """Columnar text: schema comment, JSON manifest comment, header, one row per step."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# schema: {STREAM_SCHEMA}\n")
        fh.write("# manifest: " + json.dumps({**stream.manifest, "split": stream.split}, sort_keys=True) + "\n")
        fh.write("\t".join(["t", "y"] + [f"x{i}" for i in range(stream.x_dim)]) + "\n")
        for i in range(len(stream)):
            cells = [str(int(stream.t[i])), repr(float(stream.y[i]))] + [repr(float(v)) for v in stream.x[i]]
            fh.write("\t".join(cells) + "\n")


def load_stream(path) -> Stream:
    path = Path(path)
    with path.open() as fh:
        schema = fh.readline().strip()
        if schema != f"# schema: {STREAM_SCHEMA}":
            raise DataError(f"{path}: unexpected schema line {schema!r}")
        manifest = json.loads(fh.readline().split(":", 1)[1])
        fh.readline()
        data = np.loadtxt(fh, delimiter="\t", ndmin=2)
    split = int(manifest.pop("split"))
    return Stream(data[:, 2:].copy(), data[:, 1].copy(), data[:, 0].astype(np.int64), split, manifest)
