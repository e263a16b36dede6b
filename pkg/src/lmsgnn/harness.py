"""Experiment orchestration: run every estimator over one dataset and report.

A run walks a time-varying graph signal one observation at a time.  For each
noise level the observations are regenerated, a frequency band is picked from
the training rows, the neural estimators are fitted on those rows, and every
estimator then streams the whole record.  ``MSE[t]`` / ``MAE[t]`` compare the
estimate of ``x[t]`` -- made after seeing ``y[0..t-1]`` -- with the ground
truth, for ``t = 1 .. T-1``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .data import (
    STRATEGIES,
    SamplingSchedule,
    TvgsDataset,
    corrupt,
    load_csv_dataset,
    make_schedule,
    random_coordinates,
    synth_bandlimited_tv,
)
from .errors import ConfigError, InvalidInputError, LmsGnnError
from .filters import AdaptiveFilterState, BandlimitedFilter, glms_step, gnlms_step, select_band_greedy
from .graph import NodeCoordinates, SpectralBasis, build_knn_graph, eigendecompose, gft, laplacian
from .model import (
    DEFAULT_LAYER_STEPS,
    AdamState,
    GcnModel,
    LmsGnnModel,
    predict_gcn,
    predict_online,
    train_gcn_offline,
    train_offline,
)

ESTIMATORS = ("glms", "gnlms", "lmsgnn", "gcn")
REPORT_FILES = ("mse_per_t.csv", "mae_per_t.csv", "summary.csv", "run_manifest.json")

_SYNTH_DEFAULTS = {
    "source": "synth",
    "n": 60,
    "T": 95,
    "signal_f_count": 15,
    "drift_rate": 2.0,
    "offset": 0.0,
}
_ESTIMATOR_DEFAULTS = {
    "glms": {"mu": 0.3},
    "gnlms": {"mu": 0.3},
    "lmsgnn": {
        "layer_steps": list(DEFAULT_LAYER_STEPS),
        "epochs": 100,
        "lr": 1e-3,
        "online_lr": 1e-3,
        "online_updates": True,
        "init": "zero",
        "theta_range": [0.9, 1.1],
        "prelu_slope": 0.25,
    },
    "gcn": {"layers": 2, "epochs": 100, "lr": 1e-3, "theta_range": [0.9, 1.1], "prelu_slope": 0.25},
}


# -- metrics ------------------------------------------------------------------


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def spatial_mse(x_hat, x_g) -> float:
    """Mean squared error over all nodes (unsampled ones included)."""
    a, b = _pair(x_hat, x_g)
    return float(np.mean((a - b) ** 2))


def spectral_mae(basis: SpectralBasis, x_hat, x_g) -> float:
    """``(1/N) * || gft(x_g) - gft(x_hat) ||_1``; N is the node count."""
    a, b = _pair(x_hat, x_g)
    return float(np.sum(np.abs(gft(basis, b) - gft(basis, a))) / basis.n)


@dataclass(frozen=True)
class MetricSeries:
    """Per-timestep spatial MSE and spectral MAE of one estimator at one noise level."""

    estimator: str
    noise_var: float
    t: np.ndarray
    mse: np.ndarray
    mae: np.ndarray

    def __post_init__(self):
        for name in ("t", "mse", "mae"):
            a = np.array(getattr(self, name), dtype=np.int64 if name == "t" else np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (self.t.shape == self.mse.shape == self.mae.shape):
            raise InvalidInputError("t, mse and mae must have equal length")
        if np.any(self.mse < 0) or np.any(self.mae < 0):
            raise InvalidInputError("metric values must be nonnegative")

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse)) if self.mse.size else math.nan

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.mae)) if self.mae.size else math.nan


# -- configuration --------------------------------------------------------------


def _merge(defaults, given, where):
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return {**defaults, **given}


@dataclass
class ExperimentConfig:
    """Everything needed to replay a run; round-trips through JSON.

    ``dataset`` is either a synthetic recipe (``source = "synth"``) or a pair
    of CSV paths (``source = "csv"``, keys ``signal`` and ``coords``).
    ``band_source`` picks which training rows define the frequency band:
    the noisy, masked ``observations`` (default) or the ``ground_truth``.
    """

    dataset: dict = field(default_factory=lambda: dict(_SYNTH_DEFAULTS))
    k_neighbors: int = 8
    f_count: int = 120
    noise_vars: list = field(default_factory=lambda: [0.1, 0.5, 1.0])
    train_split: int = 24
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    sampling: dict = field(default_factory=lambda: {"strategy": "per-step-random", "rho": 0.7})
    band_source: str = "observations"
    full_obs_for_gcn: bool = False
    hyper: dict = field(default_factory=lambda: json.loads(json.dumps(_ESTIMATOR_DEFAULTS)))
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        src = self.dataset.get("source") if isinstance(self.dataset, dict) else None
        if src == "synth":
            self.dataset = _merge(_SYNTH_DEFAULTS, self.dataset, "dataset")
            for key in ("n", "T", "signal_f_count"):
                if not isinstance(self.dataset[key], int) or self.dataset[key] < 0:
                    raise ConfigError(f"dataset.{key} must be a nonnegative integer")
            if self.dataset["n"] < 2:
                raise ConfigError("dataset.n must be at least 2")
            if self.dataset["signal_f_count"] > self.dataset["n"]:
                raise ConfigError("dataset.signal_f_count exceeds dataset.n")
            if not self.dataset["drift_rate"] >= 0:
                raise ConfigError("dataset.drift_rate must be nonnegative")
        elif src == "csv":
            self.dataset = _merge({"source": "csv", "signal": None, "coords": None}, self.dataset, "dataset")
            if not self.dataset["signal"] or not self.dataset["coords"]:
                raise ConfigError("csv datasets need both 'signal' and 'coords' paths")
        else:
            raise ConfigError("dataset.source must be 'synth' or 'csv'")
        if not isinstance(self.k_neighbors, int) or self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be a positive integer")
        if not isinstance(self.f_count, int) or self.f_count < 0:
            raise ConfigError("f_count must be a nonnegative integer")
        if not isinstance(self.train_split, int) or self.train_split < 2:
            raise ConfigError("train_split must be an integer >= 2")
        if src == "synth" and self.train_split >= self.dataset["T"]:
            raise ConfigError("train_split must be smaller than T")
        if not isinstance(self.noise_vars, (list, tuple)) or not self.noise_vars:
            raise ConfigError("noise_vars must be a nonempty list")
        if not all(isinstance(v, (int, float)) and v > 0 and math.isfinite(v) for v in self.noise_vars):
            raise ConfigError("noise variances must be positive and finite")
        self.noise_vars = [float(v) for v in self.noise_vars]
        if not self.estimators or any(e not in ESTIMATORS for e in self.estimators):
            raise ConfigError(f"estimators must be a nonempty subset of {list(ESTIMATORS)}")
        self.estimators = [e for e in ESTIMATORS if e in self.estimators]
        self.sampling = _merge({"strategy": "per-step-random", "rho": 0.7}, self.sampling, "sampling")
        if self.sampling["strategy"] not in STRATEGIES:
            raise ConfigError(f"sampling.strategy must be one of {list(STRATEGIES)}")
        if not (isinstance(self.sampling["rho"], (int, float)) and 0 < self.sampling["rho"] <= 1):
            raise ConfigError("sampling.rho must lie in (0, 1]")
        if self.band_source not in ("observations", "ground_truth"):
            raise ConfigError("band_source must be 'observations' or 'ground_truth'")
        if not isinstance(self.hyper, dict):
            raise ConfigError("hyper must be a JSON object")
        unknown = set(self.hyper) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators in hyper: {sorted(unknown)}")
        self.hyper = {e: _merge(_ESTIMATOR_DEFAULTS[e], self.hyper.get(e), f"hyper.{e}") for e in ESTIMATORS}
        for e in ("glms", "gnlms"):
            if not self.hyper[e]["mu"] > 0:
                raise ConfigError(f"hyper.{e}.mu must be positive")
        for e in ("lmsgnn", "gcn"):
            h = self.hyper[e]
            if not isinstance(h["epochs"], int) or h["epochs"] < 0:
                raise ConfigError(f"hyper.{e}.epochs must be a nonnegative integer")
            if not h["lr"] > 0:
                raise ConfigError(f"hyper.{e}.lr must be positive")
        if not self.hyper["lmsgnn"]["layer_steps"]:
            raise ConfigError("hyper.lmsgnn.layer_steps must list at least one step size")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = json.loads(json.dumps(doc))
        ds = doc.get("dataset")
        if base_dir is not None and isinstance(ds, dict) and ds.get("source") == "csv":
            for key in ("signal", "coords"):
                if ds.get(key) and not Path(ds[key]).is_absolute():
                    ds[key] = str(Path(base_dir) / ds[key])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, base_dir=path.parent)


# -- seeds ------------------------------------------------------------------------


def derive_seed(master: int, *path: int) -> int:
    """Independent 32-bit seed for the stream addressed by ``path``.

    Seeds depend only on the master seed and the address, never on the order
    in which cells happen to run.
    """
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1)[0])


def _cell_seeds(config, noise_idx):
    out = {"noise": derive_seed(config.seed, 3, noise_idx)}
    for e in config.estimators:
        out[e] = derive_seed(config.seed, 4, noise_idx, ESTIMATORS.index(e))
    return out


# -- data preparation -------------------------------------------------------------


@dataclass(frozen=True)
class PreparedData:
    """Noise-independent inputs: ground truth, coordinates, graph basis, masks."""

    ground_truth: TvgsDataset
    coords: NodeCoordinates
    basis: SpectralBasis
    schedule: SamplingSchedule


def prepare_data(config: ExperimentConfig) -> PreparedData:
    ds = config.dataset
    if ds["source"] == "synth":
        coords = random_coordinates(ds["n"], seed=derive_seed(config.seed, 1))
        basis = eigendecompose(laplacian(build_knn_graph(coords, min(config.k_neighbors, ds["n"] - 1))))
        truth = synth_bandlimited_tv(basis, ds["signal_f_count"], ds["T"], ds["drift_rate"],
                                     seed=derive_seed(config.seed, 0), offset=ds["offset"])
    else:
        truth, coords = load_csv_dataset(ds["signal"], ds["coords"])
        if config.train_split >= truth.T:
            raise ConfigError(f"train_split={config.train_split} must be smaller than T={truth.T}")
        basis = eigendecompose(laplacian(build_knn_graph(coords, min(config.k_neighbors, truth.n - 1))))
    schedule = make_schedule(config.sampling["strategy"], truth.n, truth.T, config.sampling["rho"],
                             seed=derive_seed(config.seed, 2))
    return PreparedData(truth, coords, basis, schedule)


def select_band(config: ExperimentConfig, basis: SpectralBasis, dataset: TvgsDataset) -> BandlimitedFilter:
    rows = dataset.observations if config.band_source == "observations" else dataset.ground_truth
    return select_band_greedy(basis, rows[: config.train_split], min(config.f_count, basis.n))


# -- estimators -------------------------------------------------------------------


def _run_adaptive(mode, config, filt, dataset):
    step = glms_step if mode == "glms" else gnlms_step
    state = AdaptiveFilterState.initial(filt, config.hyper[mode]["mu"], mode, dataset.mask(0))
    preds = np.zeros((dataset.T, dataset.n))
    for t in range(dataset.T):
        state = step(state, dataset.observations[t], dataset.mask(t))
        preds[t] = state.estimate
    return preds


def _run_lmsgnn(config, basis, dataset, seed):
    h = config.hyper["lmsgnn"]
    model = LmsGnnModel.init(basis, tuple(h["layer_steps"]), seed=seed, theta_range=tuple(h["theta_range"]),
                             prelu_slope=h["prelu_slope"])
    split = config.train_split
    model, adam, _ = train_offline(model, dataset, (0, split), h["epochs"], AdamState(h["lr"]), init=h["init"])
    # replay the final weights over the training window, then keep streaming
    warm = predict_online(model, dataset, (0, split - 1), init=h["init"])
    adam.learning_rate = h["online_lr"]
    test = predict_online(model, dataset, (split - 1, dataset.T), adam, update_weights=h["online_updates"],
                          x_init=warm.final_estimate)
    return np.vstack([warm.predictions, test.predictions])


def _run_gcn(config, basis, dataset, seed):
    h = config.hyper["gcn"]
    model = GcnModel.init(basis, h["layers"], seed=seed, theta_range=tuple(h["theta_range"]),
                          prelu_slope=h["prelu_slope"])
    model, _, _ = train_gcn_offline(model, dataset, (0, config.train_split), h["epochs"], AdamState(h["lr"]))
    return predict_gcn(model, dataset, (0, dataset.T)).predictions


def run_estimator(name: str, config: ExperimentConfig, basis: SpectralBasis, filt: BandlimitedFilter,
                  dataset: TvgsDataset, seed: int) -> np.ndarray:
    """Stream ``dataset`` through one estimator.

    Returns a ``T x n`` array whose row ``t`` is the estimate of ``x[t+1]``
    produced right after ``y[t]`` was consumed.
    """
    if name in ("glms", "gnlms"):
        return _run_adaptive(name, config, filt, dataset)
    if name == "lmsgnn":
        return _run_lmsgnn(config, basis, dataset, seed)
    if name == "gcn":
        return _run_gcn(config, basis, dataset, seed)
    raise ConfigError(f"unknown estimator {name!r}")


def _series(name, noise_var, basis, preds, truth):
    t = np.arange(1, truth.shape[0])
    est = preds[: truth.shape[0] - 1]
    mse = np.array([spatial_mse(p, x) for p, x in zip(est, truth[1:])])
    mae = np.array([spectral_mae(basis, p, x) for p, x in zip(est, truth[1:])])
    return MetricSeries(name, noise_var, t, mse, mae)


@dataclass(frozen=True)
class CellError:
    estimator: str
    noise_var: float
    kind: str
    message: str


@dataclass
class ExperimentReport:
    """In-memory result of :func:`run_experiment`."""

    config: ExperimentConfig
    series: list
    errors: list
    bands: dict
    seeds: dict
    input_hash: str
    backend: str = field(default_factory=lambda: backend.BACKEND)

    def get(self, estimator, noise_var) -> MetricSeries | None:
        for s in self.series:
            if s.estimator == estimator and s.noise_var == noise_var:
                return s
        return None


@dataclass(frozen=True)
class NoiseCell:
    """Everything an estimator sees at one noise level."""

    noise_var: float
    dataset: TvgsDataset
    gcn_dataset: TvgsDataset
    filter: BandlimitedFilter
    seeds: dict


def build_cell(config: ExperimentConfig, prepared: PreparedData, noise_idx: int) -> NoiseCell:
    var = config.noise_vars[noise_idx]
    seeds = _cell_seeds(config, noise_idx)
    ds = corrupt(prepared.ground_truth, var, prepared.schedule, seed=seeds["noise"])
    gcn_ds = ds
    if config.full_obs_for_gcn:
        full = make_schedule("full", ds.n, ds.T)
        gcn_ds = corrupt(prepared.ground_truth, var, full, seed=seeds["noise"])
    return NoiseCell(var, ds, gcn_ds, select_band(config, prepared.basis, ds), seeds)


def _cell_predictions(config, prepared, cell, name):
    ds = cell.gcn_dataset if name == "gcn" else cell.dataset
    return run_estimator(name, config, prepared.basis, cell.filter, ds, cell.seeds[name])


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``data`` framed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _input_hash(config, prepared):
    h = hashlib.sha1()
    h.update(git_blob_hash(json.dumps(config.dataset, sort_keys=True).encode()).encode())
    for arr in (prepared.ground_truth.ground_truth, prepared.coords.latitude, prepared.coords.longitude):
        h.update(git_blob_hash(np.ascontiguousarray(arr, dtype="<f8").tobytes()).encode())
    return h.hexdigest()


def run_experiment(config: ExperimentConfig, prepared: PreparedData | None = None) -> ExperimentReport:
    """Run every (estimator, noise level) cell.

    A library error inside a cell is recorded in the report and the remaining
    cells still run.  Errors while loading the data propagate.
    """
    prepared = prepare_data(config) if prepared is None else prepared
    series, errors, bands, seeds = [], [], {}, {}
    for i, var in enumerate(config.noise_vars):
        cell = build_cell(config, prepared, i)
        bands[repr(var)] = list(cell.filter.freq_set)
        seeds[repr(var)] = cell.seeds
        for name in config.estimators:
            try:
                preds = _cell_predictions(config, prepared, cell, name)
                series.append(_series(name, var, prepared.basis, preds, prepared.ground_truth.ground_truth))
            except LmsGnnError as exc:
                errors.append(CellError(name, var, type(exc).__name__, str(exc)))
    return ExperimentReport(config, series, errors, bands, seeds, _input_hash(config, prepared))


# -- causality audit -------------------------------------------------------------


def audit_causality(config: ExperimentConfig, n_steps: int = 10, noise_idx: int = 0,
                    prepared: PreparedData | None = None) -> dict:
    """Recompute sampled test-step predictions from observation prefixes.

    For each estimator, ``n_steps`` test steps ``t`` are drawn; the whole
    pipeline (band selection, training, streaming) is rerun on ``y[0..t]``
    only and its final prediction must equal the full run's bit for bit.
    Returns ``{estimator: [(t, ok), ...]}``.
    """
    prepared = prepare_data(config) if prepared is None else prepared
    cell = build_cell(config, prepared, noise_idx)
    T = cell.dataset.T
    candidates = np.arange(config.train_split - 1, T - 1)
    rng = np.random.default_rng(derive_seed(config.seed, 5, noise_idx))
    picks = np.sort(rng.choice(candidates, size=min(n_steps, candidates.size), replace=False))
    out = {}
    for name in config.estimators:
        full = _cell_predictions(config, prepared, cell, name)
        results = []
        for t in picks:
            short = NoiseCell(cell.noise_var, cell.dataset.prefix(t + 1), cell.gcn_dataset.prefix(t + 1),
                              select_band(config, prepared.basis, cell.dataset.prefix(t + 1)), cell.seeds)
            prefix_preds = _cell_predictions(config, prepared, short, name)
            results.append((int(t), bool(np.array_equal(prefix_preds[-1], full[t]))))
        out[name] = results
    return out


# -- report files ----------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def _per_t_rows(series, metric, estimators, noise_vars):
    rows = []
    for var in noise_vars:
        cells = {s.estimator: s for s in series if s.noise_var == var}
        ts = sorted({int(t) for s in cells.values() for t in s.t})
        for t in ts:
            row = [str(t), _fmt(var)]
            for e in estimators:
                s = cells.get(e)
                if s is None:
                    row.append("nan")
                else:
                    row.append(_fmt(getattr(s, metric)[int(np.searchsorted(s.t, t))]))
            rows.append(row)
    return rows


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(report: ExperimentReport, out_dir) -> list:
    """Write the four report files and return their paths.

    Per-timestep files have columns ``t, noise_var`` and one column per
    estimator; ``summary.csv`` has one row per noise level and ``mse_<est>``
    then ``mae_<est>`` columns.  Failed cells appear as ``nan``.  Nothing
    time- or host-dependent is written, so equal runs give equal bytes.
    """
    if not report.series and not report.errors:
        raise InvalidInputError("nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInputError(f"cannot create output directory {out}: {exc}") from None
    ests = report.config.estimators
    vars_ = report.config.noise_vars
    header = ["t", "noise_var", *ests]
    _write_csv(out / "mse_per_t.csv", header, _per_t_rows(report.series, "mse", ests, vars_))
    _write_csv(out / "mae_per_t.csv", header, _per_t_rows(report.series, "mae", ests, vars_))
    summary = []
    for var in vars_:
        row = [_fmt(var)]
        for metric in ("mean_mse", "mean_mae"):
            for e in ests:
                s = report.get(e, var)
                row.append("nan" if s is None else _fmt(getattr(s, metric)))
        summary.append(row)
    _write_csv(out / "summary.csv", ["noise_var", *(f"mse_{e}" for e in ests), *(f"mae_{e}" for e in ests)],
               summary)
    manifest = {
        "config": report.config.to_dict(),
        "seeds": report.seeds,
        "bands": report.bands,
        "input_hash": report.input_hash,
        "backend": report.backend,
        "errors": [asdict(e) for e in report.errors],
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return [out / f for f in REPORT_FILES]


def read_report(out_dir) -> dict:
    """Parse the per-t and summary CSVs back into arrays.

    Returns ``{"mse": {(est, var): (t, values)}, "mae": ..., "summary": {(est, var): (mse, mae)}}``.
    """
    out = Path(out_dir)
    parsed = {}
    for metric in ("mse", "mae"):
        with (out / f"{metric}_per_t.csv").open(newline="") as fh:
            rows = list(csv.reader(fh))
        ests = rows[0][2:]
        acc = {}
        for row in rows[1:]:
            t, var = int(row[0]), float(row[1])
            for e, v in zip(ests, row[2:]):
                acc.setdefault((e, var), ([], []))
                acc[(e, var)][0].append(t)
                acc[(e, var)][1].append(float(v))
        parsed[metric] = {k: (np.array(ts), np.array(vs)) for k, (ts, vs) in acc.items()}
    with (out / "summary.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    ests = [c[4:] for c in cols if c.startswith("mse_")]
    summary = {}
    for row in rows[1:]:
        var = float(row[0])
        vals = dict(zip(cols, (float(v) for v in row[1:])))
        for e in ests:
            summary[(e, var)] = (vals[f"mse_{e}"], vals[f"mae_{e}"])
    parsed["summary"] = summary
    return parsed
