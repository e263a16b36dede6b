"""Datasets of time-varying graph signals: loading, synthesis, corruption."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidInputError,
    InvalidParameterError,
    MissingFileError,
    NonNumericCellError,
)
from .filters import SamplingMask
from .graph import NodeCoordinates, SpectralBasis, read_coords_csv

STRATEGIES = ("full", "fixed-random", "per-step-random")


@dataclass(frozen=True)
class SamplingSchedule:
    """Observed-node sets per timestep, stored as a ``T x n`` 0/1 array."""

    masks: np.ndarray
    strategy: str

    def __post_init__(self):
        m = np.asarray(self.masks, dtype=np.float64)
        if m.ndim != 2:
            raise InvalidInputError("schedule masks must be a T x n array")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise InvalidInputError("schedule masks must be 0/1")
        if m.shape[0] and np.any(m.sum(axis=1) == 0):
            raise InvalidInputError("every sampling set must be nonempty")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "masks", m)

    def __len__(self):
        return self.masks.shape[0]

    def mask(self, t: int) -> SamplingMask:
        return SamplingMask(self.masks[t])

    def sample_set(self, t: int) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.masks[t]))


def _sample_size(rho, n):
    if not (0.0 < rho <= 1.0):
        raise InvalidParameterError(f"sampling ratio must lie in (0, 1], got {rho!r}")
    # guard against 0.7 * 60 -> 42.000000000000004
    return min(n, max(1, math.ceil(round(rho * n, 9))))


def make_schedule(strategy: str, n: int, T: int, rho: float = 0.7, seed=0) -> SamplingSchedule:
    """Build a sampling schedule.

    ``full`` observes every node; ``fixed-random`` draws one subset of
    ``ceil(rho * n)`` nodes and reuses it at every step; ``per-step-random``
    draws a fresh subset of that size at each step.
    """
    if strategy == "full":
        return SamplingSchedule(np.ones((T, n)), strategy)
    size = _sample_size(rho, n)
    rng = np.random.default_rng(seed)
    masks = np.zeros((T, n))
    if strategy == "fixed-random":
        masks[:, rng.choice(n, size=size, replace=False)] = 1.0
    elif strategy == "per-step-random":
        for t in range(T):
            masks[t, rng.choice(n, size=size, replace=False)] = 1.0
    else:
        raise InvalidParameterError(f"unknown sampling strategy {strategy!r}; expected one of {STRATEGIES}")
    return SamplingSchedule(masks, strategy)


@dataclass(frozen=True)
class TvgsDataset:
    """Ground truth ``x_g[t]`` plus (after :func:`corrupt`) noisy masked ``y[t]``.

    Row ``t`` of each array is timestep ``t``; columns are nodes.
    """

    ground_truth: np.ndarray
    observations: np.ndarray | None = None
    schedule: SamplingSchedule | None = None
    noise: np.ndarray | None = None
    noise_var: float | None = None
    seed: int | None = None

    def __post_init__(self):
        x = np.asarray(self.ground_truth, dtype=np.float64)
        if x.ndim != 2:
            raise InvalidInputError("ground truth must be a T x n array")
        for name in ("ground_truth", "observations", "noise"):
            a = x if name == "ground_truth" else getattr(self, name)
            if a is None:
                continue
            a = np.array(a, dtype=np.float64, copy=True)
            if a.shape != x.shape:
                raise DimensionMismatchError(f"{name} has shape {a.shape}, expected {x.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def T(self) -> int:
        return self.ground_truth.shape[0]

    @property
    def n(self) -> int:
        return self.ground_truth.shape[1]

    @property
    def has_observations(self) -> bool:
        return self.observations is not None

    def mask(self, t: int) -> SamplingMask:
        return self.schedule.mask(t)

    def prefix(self, length: int) -> "TvgsDataset":
        """First ``length`` timesteps only (used for causality replays)."""
        sched = None if self.schedule is None else SamplingSchedule(self.schedule.masks[:length], self.schedule.strategy)
        return TvgsDataset(
            self.ground_truth[:length],
            None if self.observations is None else self.observations[:length],
            sched,
            None if self.noise is None else self.noise[:length],
            self.noise_var,
            self.seed,
        )


def _parse_row(cells, row_no, path):
    out = []
    for col, cell in enumerate(cells):
        try:
            out.append(float(cell))
        except ValueError:
            raise NonNumericCellError(f"{path}:{row_no}: column {col} is not numeric: {cell!r}",
                                      row=row_no, column=col) from None
    return out


def read_signal_csv(path) -> np.ndarray:
    """Read a ``T x n`` signal CSV; a non-numeric first row is treated as a header."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"signal file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DimensionMismatchError(f"{path}: no data rows")
    first = rows[0]
    try:
        [float(c) for c in first]
    except ValueError:
        rows = rows[1:]
        if not rows:
            raise DimensionMismatchError(f"{path}: header but no data rows")
    width = len(rows[0])
    data = []
    for row_no, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DimensionMismatchError(f"{path}: row {row_no} has {len(row)} columns, expected {width}")
        data.append(_parse_row(row, row_no, path))
    return np.array(data, dtype=np.float64)


def write_signal_csv(path, x, header=True) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"node{i}" for i in range(x.shape[1])])
        for row in x:
            w.writerow([repr(float(v)) for v in row])


def load_csv_dataset(signal_path, coords_path=None):
    """Load ground truth (and coordinates, when given) from CSV files.

    Returns ``(dataset, coords)``; ``coords`` is None without ``coords_path``.
    """
    x = read_signal_csv(signal_path)
    coords = None
    if coords_path is not None:
        coords = read_coords_csv(coords_path)
        if len(coords) != x.shape[1]:
            raise DimensionMismatchError(
                f"signal has {x.shape[1]} columns but coordinates list {len(coords)} nodes"
            )
    return TvgsDataset(x), coords


def synth_bandlimited_tv(basis: SpectralBasis, f_count: int, T: int, drift_rate: float, seed=0,
                         freq_set=None, offset: float = 0.0) -> TvgsDataset:
    """Spectral random walk restricted to a frequency set.

    ``s_F[0] ~ N(0, I)`` and ``s_F[t+1] = s_F[t] + drift_rate * eta[t]``.  The
    default frequency set is the ``f_count`` lowest frequencies.  ``offset``
    adds a constant level to every node through the zero-frequency
    coefficient, which requires index 0 in the set.
    """
    if f_count < 0 or f_count > basis.n:
        raise InvalidParameterError(f"f_count must lie in [0, {basis.n}], got {f_count}")
    if T < 0:
        raise InvalidParameterError("T must be nonnegative")
    idx = list(range(f_count)) if freq_set is None else sorted(int(i) for i in freq_set)
    if len(idx) != f_count:
        raise InvalidParameterError("freq_set size must equal f_count")
    if offset and 0 not in idx:
        raise InvalidParameterError("a constant offset needs frequency 0 in the set")
    rng = np.random.default_rng(seed)
    s = np.zeros((T, basis.n))
    if T and f_count:
        walk = rng.standard_normal(f_count)
        steps = rng.standard_normal((max(T - 1, 0), f_count))
        coeffs = np.vstack([walk, walk + drift_rate * np.cumsum(steps, axis=0)])
        s[:, idx] = coeffs
    if offset and T:
        # the zero-frequency eigenvector is +1/sqrt(n) under the sign convention
        s[:, 0] += offset * math.sqrt(basis.n) * np.sign(basis.eigenvectors[0, 0])
    x = s @ basis.eigenvectors.T
    return TvgsDataset(x, seed=seed)


def corrupt(dataset: TvgsDataset, noise_var: float, schedule: SamplingSchedule, seed=0) -> TvgsDataset:
    """Add white Gaussian noise of variance ``noise_var`` and apply the masks."""
    if not noise_var >= 0:
        raise InvalidParameterError(f"noise variance must be nonnegative, got {noise_var!r}")
    if schedule.masks.shape != dataset.ground_truth.shape:
        raise DimensionMismatchError(
            f"schedule shape {schedule.masks.shape} does not match data {dataset.ground_truth.shape}"
        )
    rng = np.random.default_rng(seed)
    w = math.sqrt(noise_var) * rng.standard_normal(dataset.ground_truth.shape)
    y = np.where(schedule.masks == 1.0, dataset.ground_truth + w, 0.0)
    return replace(dataset, observations=y, schedule=schedule, noise=w, noise_var=float(noise_var), seed=seed)


def random_coordinates(n: int, seed=0, lat_range=(25.0, 49.0), lon_range=(-124.0, -67.0)) -> NodeCoordinates:
    """Uniform random station positions inside a lat/lon box (default: contiguous US)."""
    rng = np.random.default_rng(seed)
    lat = rng.uniform(*lat_range, size=n)
    lon = rng.uniform(*lon_range, size=n)
    return NodeCoordinates(lat, lon, tuple(f"S{i:04d}" for i in range(n)))


@dataclass(frozen=True)
class BundleManifest:
    """Replay record for a dataset bundle: files plus corruption settings."""

    signal: str
    coords: str
    noise_var: float | None = None
    strategy: str = "fixed-random"
    rho: float = 0.7
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BundleManifest":
        return cls(**json.loads(text))

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path) -> "BundleManifest":
        path = Path(path)
        if not path.is_file():
            raise MissingFileError(f"manifest not found: {path}")
        return cls.from_json(path.read_text())
