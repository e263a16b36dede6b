"""Bandlimiting projectors, sampling masks and the GLMS / GNLMS estimators."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import backend
from .errors import DegenerateMaskError, InvalidInputError, InvalidParameterError, NumericalFailure
from .graph import SpectralBasis, gft

NORMALIZER_EPS = 1e-8


@dataclass(frozen=True)
class BandlimitedFilter:
    """Projector ``B = U_F U_F^T`` onto the frequencies in ``freq_set``.

    ``response`` is the gain applied to each selected frequency; it is all
    ones for a plain bandlimiting filter.
    """

    basis: SpectralBasis
    freq_set: tuple
    response: np.ndarray = None

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.freq_set))
        if len(set(idx)) != len(idx) or any(i < 0 or i >= self.basis.n for i in idx):
            raise InvalidParameterError("freq_set must hold distinct indices in [0, n)")
        object.__setattr__(self, "freq_set", idx)
        resp = np.ones(len(idx)) if self.response is None else np.asarray(self.response, dtype=np.float64)
        if resp.shape != (len(idx),):
            raise InvalidParameterError("response must have one entry per selected frequency")
        resp = resp.copy()
        resp.setflags(write=False)
        object.__setattr__(self, "response", resp)
        u_f = np.ascontiguousarray(self.basis.eigenvectors[:, list(idx)])
        u_f.setflags(write=False)
        object.__setattr__(self, "_u_f", u_f)
        proj = (u_f * resp) @ u_f.T
        proj.setflags(write=False)
        object.__setattr__(self, "_projector", proj)

    @classmethod
    def spectral(cls, basis: SpectralBasis, response) -> "BandlimitedFilter":
        """Full-band filter ``U diag(response) U^T`` (used to express B_N)."""
        return cls(basis, tuple(range(basis.n)), response)

    @property
    def u_f(self) -> np.ndarray:
        return self._u_f

    @property
    def projector(self) -> np.ndarray:
        return self._projector

    @property
    def selector(self) -> np.ndarray:
        """Diagonal of the 0/1 frequency selector."""
        sel = np.zeros(self.basis.n)
        sel[list(self.freq_set)] = 1.0
        return sel

    def apply(self, x):
        return backend.kernels.spectral_apply(self._u_f, self.response, np.asarray(x, dtype=np.float64))


def select_band_greedy(basis: SpectralBasis, training_signals, f_count: int) -> BandlimitedFilter:
    """Pick the ``f_count`` frequencies carrying the most training energy.

    Energy at frequency ``i`` is the sum over training rows of the squared
    GFT coefficient.  Because that objective is additive over frequencies,
    greedy selection reduces to a top-k with ties going to the lower index.
    """
    x = np.atleast_2d(np.asarray(training_signals, dtype=np.float64))
    if x.shape[0] < 1:
        raise InvalidInputError("need at least one training signal")
    if not isinstance(f_count, (int, np.integer)) or f_count < 0:
        raise InvalidParameterError(f"f_count must be a nonnegative integer, got {f_count!r}")
    if f_count > basis.n:
        raise InvalidParameterError(f"f_count={f_count} exceeds the number of nodes ({basis.n})")
    energy = np.sum(gft(basis, x) ** 2, axis=0)
    order = np.lexsort((np.arange(basis.n), -energy))
    return BandlimitedFilter(basis, tuple(order[:f_count]))


def write_freq_set(path, filt: BandlimitedFilter) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in filt.freq_set))


def read_freq_set(path) -> tuple:
    return tuple(int(line) for line in Path(path).read_text().split())


@dataclass(frozen=True)
class SamplingMask:
    """Observed-node set, held as the 0/1 diagonal of ``D_S``."""

    diagonal: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diagonal, dtype=np.float64).ravel()
        if not np.all((d == 0.0) | (d == 1.0)):
            raise InvalidInputError("sampling mask entries must be 0 or 1")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "diagonal", d)

    @classmethod
    def from_indices(cls, n: int, sample_set) -> "SamplingMask":
        d = np.zeros(n)
        d[list(sample_set)] = 1.0
        return cls(d)

    @classmethod
    def full(cls, n: int) -> "SamplingMask":
        return cls(np.ones(n))

    @property
    def n(self) -> int:
        return self.diagonal.size

    @property
    def sample_set(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.diagonal))

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.diagonal))

    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)


def apply_sampling(mask: SamplingMask, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mask.n:
        raise InvalidInputError(f"signal length {x.shape[-1]} does not match mask ({mask.n})")
    return np.where(mask.diagonal == 1.0, x, 0.0)


def gnlms_normalizer(filt: BandlimitedFilter, mask: SamplingMask, eps: float = NORMALIZER_EPS) -> np.ndarray:
    """Per-frequency gains ``1 / c_jj`` with ``c_jj = sum_{i in S} U_ij^2``.

    ``c_jj`` is evaluated as ``1 - sum_{i not in S} U_ij^2`` (equal for an
    orthonormal basis) so that full sampling gives gains of exactly 1.
    """
    if mask.size == 0:
        raise DegenerateMaskError("GNLMS normalizer is undefined for an empty sampling set")
    u_f = filt.u_f
    missing = mask.diagonal == 0.0
    c = 1.0 - np.sum(u_f[missing] ** 2, axis=0)
    return 1.0 / np.maximum(c, eps)


@dataclass
class AdaptiveFilterState:
    """Running estimate of a GLMS or GNLMS filter.

    Single-owner and mutable through :func:`glms_step` / :func:`gnlms_step`,
    which return a new state and leave the argument untouched.
    """

    estimate: np.ndarray
    step_size: float
    filter: BandlimitedFilter
    mode: str = "glms"
    normalizer: np.ndarray | None = field(default=None, repr=False)
    normalizer_mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.estimate = np.asarray(self.estimate, dtype=np.float64)
        if self.mode not in ("glms", "gnlms"):
            raise InvalidParameterError(f"mode must be 'glms' or 'gnlms', got {self.mode!r}")
        if not self.step_size > 0:
            raise InvalidParameterError("step_size must be positive")
        if self.estimate.shape != (self.filter.basis.n,):
            raise InvalidInputError("estimate length does not match the graph")
        if not np.all(np.isfinite(self.estimate)):
            raise NumericalFailure("estimate is not finite")

    @classmethod
    def initial(cls, filt: BandlimitedFilter, step_size: float, mode: str = "glms",
                mask: SamplingMask | None = None, estimate=None) -> "AdaptiveFilterState":
        x0 = np.zeros(filt.basis.n) if estimate is None else estimate
        if mode != "gnlms":
            return cls(x0, step_size, filt, mode)
        if mask is None:
            raise InvalidInputError("GNLMS needs the sampling mask to precompute its normalizer")
        return cls(x0, step_size, filt, mode, gnlms_normalizer(filt, mask), mask.diagonal)


def _residual(state, y_t, mask):
    y = np.asarray(y_t, dtype=np.float64)
    if y.shape != state.estimate.shape or mask.n != y.size:
        raise InvalidInputError("observation, mask and estimate lengths differ")
    if not np.all(np.isfinite(y)):
        raise NumericalFailure("observation is not finite")
    return mask.diagonal * (y - state.estimate)


def _finish(state, x_next, **changes):
    if not np.all(np.isfinite(x_next)):
        raise NumericalFailure("adaptive filter estimate diverged")
    return replace(state, estimate=x_next, **changes)


def glms_step(state: AdaptiveFilterState, y_t, mask: SamplingMask) -> AdaptiveFilterState:
    """One GLMS update ``x + mu * B D_S (y - x)``."""
    e = _residual(state, y_t, mask)
    filt = state.filter
    x_next = backend.kernels.lms_update(filt.u_f, filt.response, state.estimate, e, float(state.step_size))
    return _finish(state, x_next)


def gnlms_step(state: AdaptiveFilterState, y_t, mask: SamplingMask) -> AdaptiveFilterState:
    """One GNLMS update: the GLMS step with per-frequency gains ``1 / c_jj``.

    Frequencies outside the band keep their current coefficients.  The
    gains are recomputed from ``mask`` only when it differs from the mask the
    cached normalizer was built for.
    """
    norm = state.normalizer
    if norm is None or state.normalizer_mask is None or not np.array_equal(state.normalizer_mask, mask.diagonal):
        norm = gnlms_normalizer(state.filter, mask)
    e = _residual(state, y_t, mask)
    filt = state.filter
    gains = filt.response * norm
    x_next = backend.kernels.lms_update(filt.u_f, gains, state.estimate, e, float(state.step_size))
    return _finish(state, x_next, normalizer=norm, normalizer_mask=mask.diagonal)
