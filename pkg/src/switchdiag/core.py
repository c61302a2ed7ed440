"""Shared containers and small numeric utilities.

Uniformly sampled multichannel time series, bounded parameter vectors,
dataset bundles, and the handful of helpers (MSE, resampling, noise,
lossless CSV/JSON round trips) every other module leans on.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = "1"


class SchemaError(ValueError):
    """Channel set or file layout does not match what was asked for."""


class AlignmentError(ValueError):
    """Two series do not share t0/dt/length."""


class ResampleError(ValueError):
    """Requested sample step is not an integer multiple of the current one."""


class ParameterError(ValueError):
    """A numeric argument is out of its documented range."""


class ScenarioError(ValueError):
    """Fault scenario is malformed or out of bounds."""


class FitError(RuntimeError):
    """A fitting run failed in a way that invalidates its output."""


class SimulationError(RuntimeError):
    """Integration step failure. Carries the simulation time of the failure."""

    def __init__(self, msg: str, time: float | None = None):
        super().__init__(msg)
        self.time = time


# ---------------------------------------------------------------------------
# TimeSeries


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled multichannel signal.

    values has shape (n_samples, n_channels); channels is a tuple of
    (name, unit) pairs; sample k lives at t0 + k*dt. The value array is
    frozen after construction.
    """

    t0: float
    dt: float
    channels: tuple[tuple[str, str], ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise SchemaError(f"values must be 2-D, got shape {vals.shape}")
        if vals.shape[1] != len(self.channels):
            raise SchemaError(
                f"{vals.shape[1]} columns but {len(self.channels)} channels")
        if vals.shape[0] < 1:
            raise SchemaError("series needs at least one sample")
        if not np.all(np.isfinite(vals)):
            raise SchemaError("values contain NaN or Inf")
        if not (self.dt > 0 and np.isfinite(self.dt) and np.isfinite(self.t0)):
            raise ParameterError(f"bad grid: t0={self.t0} dt={self.dt}")
        names = [c[0] for c in self.channels]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate channel names in {names}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "channels", tuple((str(n), str(u)) for n, u in self.channels))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c[0] for c in self.channels)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            j = self.names.index(name)
        except ValueError:
            raise SchemaError(f"no channel {name!r}; have {self.names}") from None
        return self.values[:, j]

    def unit(self, name: str) -> str:
        for n, u in self.channels:
            if n == name:
                return u
        raise SchemaError(f"no channel {name!r}")


def _check_aligned(a: TimeSeries, b: TimeSeries):
    ok = (a.n_samples == b.n_samples
          and abs(a.t0 - b.t0) <= 1e-9 * max(1.0, abs(a.t0))
          and abs(a.dt - b.dt) <= 1e-12 * max(1.0, a.dt))
    if not ok:
        raise AlignmentError(
            f"grids differ: (t0={a.t0}, dt={a.dt}, n={a.n_samples}) vs "
            f"(t0={b.t0}, dt={b.dt}, n={b.n_samples})")


def mse(a: TimeSeries, b: TimeSeries, channel_names: list[str] | tuple[str, ...]) -> float:
    """Mean squared difference over the named channels, averaged over
    samples and channels. Channels are matched by name, so column order
    in either series does not matter."""
    if len(channel_names) == 0:
        raise SchemaError("need at least one channel")
    _check_aligned(a, b)
    acc = 0.0
    for name in channel_names:
        d = a[name] - b[name]
        acc += float(np.dot(d, d))
    return acc / (a.n_samples * len(channel_names))


def resample(ts: TimeSeries, dt_new: float) -> TimeSeries:
    """Decimate to a coarser grid. dt_new must be an integer multiple of
    ts.dt; row 0 is always kept and a trailing partial window is dropped."""
    ratio = dt_new / ts.dt
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-6:
        raise ResampleError(f"dt_new={dt_new} is not an integer multiple of dt={ts.dt}")
    if m == 1:
        return ts
    return TimeSeries(ts.t0, ts.dt * m, ts.channels, ts.values[::m])


def add_noise(ts: TimeSeries, sigma, seed: int) -> TimeSeries:
    """Additive iid Gaussian noise, one sigma per channel. Deterministic
    for a given seed; the time grid is never touched."""
    sig = np.asarray(sigma, dtype=float)
    if sig.ndim == 0:
        sig = np.full(len(ts.channels), float(sig))
    if sig.shape != (len(ts.channels),):
        raise ParameterError(f"sigma must have {len(ts.channels)} entries, got shape {sig.shape}")
    if np.any(sig < 0) or not np.all(np.isfinite(sig)):
        raise ParameterError(f"sigma entries must be finite and >= 0, got {sig}")
    rng = np.random.default_rng(seed)
    noisy = ts.values + rng.standard_normal(ts.values.shape) * sig
    return TimeSeries(ts.t0, ts.dt, ts.channels, noisy)


# ---------------------------------------------------------------------------
# CSV round trip
#
# Header is t,<name:unit>,... and every number is written with %.17g, which
# round-trips float64 exactly. dt is recovered on load as t[1]-t[0]; with
# t0 = 0 (every series this package writes) that is exact, otherwise it can
# be off by one ulp.


def timeseries_to_csv(ts: TimeSeries, path: str):
    cols = ["t"] + [f"{n}:{u}" for n, u in ts.channels]
    t = ts.times
    lines = [",".join(cols)]
    for k in range(ts.n_samples):
        row = [f"{t[k]:.17g}"] + [f"{v:.17g}" for v in ts.values[k]]
        lines.append(",".join(row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def timeseries_from_csv(path: str) -> TimeSeries:
    with open(path, "r") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if not cols or cols[0] != "t":
            raise SchemaError(f"first column must be t, got header {header!r}")
        channels = []
        for c in cols[1:]:
            if ":" not in c:
                raise SchemaError(f"channel column {c!r} is not name:unit")
            name, unit = c.split(":", 1)
            channels.append((name, unit))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] < 2:
        raise SchemaError("need at least two rows to recover dt")
    if data.shape[1] != len(channels) + 1:
        raise SchemaError("row width does not match header")
    t = data[:, 0]
    t0, dt = t[0], t[1] - t[0]
    if dt <= 0:
        raise SchemaError(f"non-increasing time column (dt={dt})")
    k = np.arange(len(t))
    if np.max(np.abs(t - (t0 + k * dt))) > 1e-9 * max(1.0, np.max(np.abs(t))):
        raise SchemaError("time column is not a uniform grid")
    return TimeSeries(t0, dt, tuple(channels), data[:, 1:])


# ---------------------------------------------------------------------------
# Dataset


@dataclass
class Dataset:
    """Bundle of series sharing one channel schema, plus provenance meta."""

    series: list[TimeSeries]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.series) == 0:
            raise SchemaError("dataset needs at least one series")
        ch0 = self.series[0].channels
        for k, s in enumerate(self.series):
            if s.channels != ch0:
                raise SchemaError(f"series {k} channel schema differs from series 0")

    @property
    def channels(self):
        return self.series[0].channels


def dataset_to_dir(ds: Dataset, path: str):
    os.makedirs(path, exist_ok=True)
    meta = dict(ds.meta)
    meta["schema_version"] = SCHEMA_VERSION
    meta["n_series"] = len(ds.series)
    meta["channels"] = [[n, u] for n, u in ds.channels]
    write_json_atomic(os.path.join(path, "meta.json"), meta)
    for k, s in enumerate(ds.series):
        timeseries_to_csv(s, os.path.join(path, f"series_{k:03d}.csv"))


def dataset_from_dir(path: str) -> Dataset:
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    n = meta.pop("n_series")
    meta.pop("channels", None)
    meta.pop("schema_version", None)
    series = [timeseries_from_csv(os.path.join(path, f"series_{k:03d}.csv"))
              for k in range(n)]
    return Dataset(series, meta)


# ---------------------------------------------------------------------------
# ParamVector


@dataclass(frozen=True)
class ParamVector:
    """Named parameter vector with box bounds, used for fault parameters
    and optimizer state. Values must sit inside their bounds."""

    names: tuple[str, ...]
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        vals = np.asarray(self.values, dtype=float).copy()
        lo = np.asarray(self.lower, dtype=float).copy()
        hi = np.asarray(self.upper, dtype=float).copy()
        if not (vals.shape == lo.shape == hi.shape == (len(names),)):
            raise ParameterError("names/values/lower/upper lengths differ")
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate parameter names {names}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("parameter values must be finite")
        if np.any(lo > hi):
            raise ParameterError("lower bound above upper bound")
        if np.any(vals < lo) or np.any(vals > hi):
            raise ParameterError(
                f"values outside bounds: {list(zip(names, vals, lo, hi))}")
        for a in (vals, lo, hi):
            a.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_entries(cls, entries) -> "ParamVector":
        """entries: iterable of (name, value, lower, upper)."""
        names, vals, lo, hi = zip(*entries) if entries else ((), (), (), ())
        return cls(tuple(names), np.array(vals, float), np.array(lo, float),
                   np.array(hi, float))

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise ParameterError(f"no parameter {name!r}; have {self.names}") from None

    def with_values(self, values) -> "ParamVector":
        return ParamVector(self.names, np.asarray(values, float), self.lower, self.upper)

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}


# ---------------------------------------------------------------------------
# Atomic writes, canonical JSON, seeding


def write_text_atomic(path: str, text: str):
    """Write via a sibling temp file + rename so readers never see a torn file."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json_atomic(path: str, obj):
    write_text_atomic(path, canonical_json(obj))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def derived_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, keys...), stable across runs.
    Keys may be ints or strings; strings hash to fixed ints so the
    stream never depends on interpreter state."""
    norm = []
    for k in keys:
        if isinstance(k, str):
            norm.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:4], "big"))
        else:
            norm.append(int(k))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(norm))
    return np.random.default_rng(ss)
