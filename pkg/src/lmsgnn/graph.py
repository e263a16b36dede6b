"""Graphs, Laplacians, eigenbases and the graph Fourier transform pair."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .errors import (
    DataError,
    DimensionMismatchError,
    InvalidInputError,
    InvalidParameterError,
    MissingFileError,
    NonNumericCellError,
    NumericalFailure,
)


def _frozen(a):
    # C order so every consumer of a basis hits the same BLAS code path
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph held as a dense adjacency matrix.

    The adjacency must be exactly symmetric, nonnegative and have a zero
    diagonal; this is checked on construction rather than repaired.
    """

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidInputError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("adjacency has non-finite entries")
        if not np.array_equal(a, a.T):
            raise InvalidInputError("adjacency is not symmetric")
        if np.any(a < 0):
            raise InvalidInputError("adjacency has negative weights")
        if np.any(np.diag(a) != 0):
            raise InvalidInputError("adjacency has self loops")
        object.__setattr__(self, "adjacency", _frozen(a))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency)))


@dataclass(frozen=True)
class NodeCoordinates:
    """Per-node latitude/longitude in degrees, in node order."""

    latitude: np.ndarray
    longitude: np.ndarray
    station_ids: tuple = field(default=())

    def __post_init__(self):
        lat = np.asarray(self.latitude, dtype=np.float64).ravel()
        lon = np.asarray(self.longitude, dtype=np.float64).ravel()
        if lat.shape != lon.shape:
            raise InvalidInputError("latitude and longitude lengths differ")
        if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
            raise InvalidInputError("coordinates must be finite")
        if np.any(np.abs(lat) > 90.0):
            raise InvalidInputError("latitude outside [-90, 90]")
        if np.any(np.abs(lon) > 180.0):
            raise InvalidInputError("longitude outside [-180, 180]")
        ids = tuple(self.station_ids) or tuple(str(i) for i in range(lat.size))
        if len(ids) != lat.size:
            raise InvalidInputError("station_ids length does not match coordinates")
        object.__setattr__(self, "latitude", _frozen(lat))
        object.__setattr__(self, "longitude", _frozen(lon))
        object.__setattr__(self, "station_ids", ids)

    def __len__(self):
        return self.latitude.size


def read_coords_csv(path) -> NodeCoordinates:
    """Read a ``station_id,latitude,longitude`` CSV; row order is node order."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"coordinates file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if header[:3] != ["station_id", "latitude", "longitude"]:
            raise DataError(f"{path}: expected header station_id,latitude,longitude, got {header}")
        ids, lat, lon = [], [], []
        for row_no, row in enumerate(reader, start=2):
            ids.append(row["station_id"].strip())
            for col, dest in (("latitude", lat), ("longitude", lon)):
                try:
                    dest.append(float(row[col]))
                except (TypeError, ValueError):
                    raise NonNumericCellError(
                        f"{path}:{row_no}: non-numeric {col} {row[col]!r}", row=row_no, column=col
                    ) from None
    if not ids:
        raise DimensionMismatchError(f"{path}: no coordinate rows")
    return NodeCoordinates(np.array(lat), np.array(lon), tuple(ids))


def write_coords_csv(path, coords: NodeCoordinates) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "latitude", "longitude"])
        for sid, la, lo in zip(coords.station_ids, coords.latitude, coords.longitude):
            w.writerow([sid, repr(float(la)), repr(float(lo))])


def pairwise_distances(coords: NodeCoordinates, metric: str = "haversine") -> np.ndarray:
    """Great-circle distances in km, or planar distances treating (lat, lon) as (y, x)."""
    if metric == "haversine":
        return backend.kernels.haversine_matrix(np.radians(coords.latitude), np.radians(coords.longitude))
    if metric == "euclidean":
        pts = np.column_stack([coords.latitude, coords.longitude])
        diff = pts[:, None, :] - pts[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))
    raise InvalidParameterError(f"unknown distance metric {metric!r}")


def build_knn_graph(coords: NodeCoordinates, k: int = 8, kernel_scale="auto",
                    metric: str = "haversine") -> Graph:
    """Gaussian-weighted k-nearest-neighbour graph.

    Each node selects its ``k`` closest other nodes (distance ties go to the
    lower index) and an edge exists when either endpoint selected the other.
    Weights are ``exp(-d**2 / kernel_scale)``; with ``kernel_scale="auto"``
    the scale is the mean squared distance over the resulting edges.
    """
    n = len(coords)
    if n < 2:
        raise InvalidInputError("need at least two nodes to build a graph")
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidParameterError(f"k must be a positive integer, got {k!r}")
    if k >= n:
        raise InvalidParameterError(f"k={k} must be smaller than the number of nodes ({n})")
    d = pairwise_distances(coords, metric)
    selected = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        # lexsort: last key is primary, so distance first then index
        order = others[np.lexsort((others, d[i, others]))]
        selected[i, order[:k]] = True
    edges = selected | selected.T
    if kernel_scale == "auto":
        iu = np.triu(edges, 1)
        sigma2 = float(np.mean(d[iu] ** 2))
    else:
        sigma2 = float(kernel_scale)
        if not sigma2 > 0:
            raise InvalidParameterError(f"kernel_scale must be positive, got {kernel_scale!r}")
    if sigma2 == 0.0:
        raise InvalidInputError("all selected neighbours coincide; cannot scale kernel")
    w = np.where(edges, np.exp(-(d * d) / sigma2), 0.0)
    w = np.maximum(w, w.T)  # exact symmetry regardless of distance rounding
    np.fill_diagonal(w, 0.0)
    return Graph(w)


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian ``D - A``."""
    lap = -np.array(g.adjacency)
    np.fill_diagonal(lap, g.degrees)
    return lap


@dataclass(frozen=True)
class SpectralBasis:
    """Laplacian eigenpairs with ascending eigenvalues.

    Columns of ``eigenvectors`` are the graph Fourier modes; column ``j``
    belongs to ``eigenvalues[j]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    def gft(self, x):
        return gft(self, x)

    def igft(self, s):
        return igft(self, s)


def _sign_fix(u):
    """Make each column's largest-magnitude entry positive (first index on ties)."""
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivots, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs


def eigendecompose(lap, method: str = "lapack", tol: float = 1e-14, max_sweeps: int = 100) -> SpectralBasis:
    """Symmetric eigendecomposition with ascending eigenvalues and fixed signs.

    ``method="lapack"`` calls :func:`numpy.linalg.eigh`; ``method="jacobi"``
    uses the cyclic Jacobi kernel and raises :class:`NumericalFailure` when
    the off-diagonal norm is still above ``tol * ||L||_F`` after
    ``max_sweeps`` sweeps.
    """
    a = np.asarray(lap, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    if a.size and np.max(np.abs(a - a.T)) > 1e-10:
        raise InvalidInputError("matrix is not symmetric within 1e-10")
    a = 0.5 * (a + a.T)
    if method == "lapack":
        w, u = np.linalg.eigh(a)
    elif method == "jacobi":
        w, u, sweeps, off = backend.kernels.jacobi_eigh(a, tol, max_sweeps)
        scale = float(np.sqrt(np.sum(a * a)))
        if off > tol * scale:
            raise NumericalFailure(
                f"Jacobi did not converge in {sweeps} sweeps (off-diagonal norm {off:.3e})",
                residual=float(off),
            )
    else:
        raise InvalidParameterError(f"unknown eigensolver {method!r}")
    order = np.argsort(w, kind="stable")
    return SpectralBasis(w[order], _sign_fix(u[:, order]))


def _check_len(basis, v, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != basis.n:
        raise InvalidInputError(f"{what} has length {v.shape[-1]}, basis has {basis.n} nodes")
    return v


def gft(basis: SpectralBasis, x):
    """Graph Fourier transform ``U^T x``; a 2-D input is treated as rows of signals."""
    x = _check_len(basis, x, "signal")
    return x @ basis.eigenvectors


def igft(basis: SpectralBasis, s):
    """Inverse transform ``U s``; a 2-D input is treated as rows of spectra."""
    s = _check_len(basis, s, "spectrum")
    return s @ basis.eigenvectors.T
