"""LMS-GNN: adaptive graph filter layers with a learned spectral response.

Each layer computes

    e_l = D_S (y - x_l)
    z_l = x_l + mu_l * U diag(theta) U^T e_l + b
    x_{l+1} = PReLU(z_l)        (identity on the last layer)

with ``theta``, ``b`` and the PReLU slope shared by all layers.  The final
output is the one-step-ahead prediction.  Gradients are derived by hand
for this architecture (see ``_pykernels.lmsgnn_backward``) and parameters
are trained with Adam on an L1 loss over the observed nodes of the next
observation.

A two-layer spectral GCN without the adaptive-filter recursion is provided
as a baseline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import backend
from .errors import DegenerateMaskError, InvalidInputError, InvalidParameterError, NumericalFailure
from .filters import SamplingMask
from .graph import SpectralBasis

DEFAULT_LAYER_STEPS = (0.001, 0.001, 0.6)
MIN_PRELU_SLOPE = 1e-6


def _vec(a):
    return np.array(a, dtype=np.float64, copy=True)


@dataclass
class LmsGnnModel:
    basis: SpectralBasis
    theta: np.ndarray
    bias: np.ndarray
    prelu_slope: float = 0.25
    layer_steps: tuple = DEFAULT_LAYER_STEPS
    frozen_residual: bool = False

    def __post_init__(self):
        self.theta = _vec(self.theta)
        self.bias = _vec(self.bias)
        self.layer_steps = tuple(float(m) for m in self.layer_steps)
        n = self.basis.n
        if self.theta.shape != (n,) or self.bias.shape != (n,):
            raise InvalidInputError(f"theta and bias must have length {n}")
        if not self.layer_steps:
            raise InvalidParameterError("need at least one layer")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.bias))):
            raise NumericalFailure("model parameters are not finite")
        if not self.prelu_slope > 0:
            raise InvalidParameterError("prelu_slope must be positive")

    @classmethod
    def init(cls, basis: SpectralBasis, layer_steps=DEFAULT_LAYER_STEPS, seed=0,
             theta_range=(0.9, 1.1), prelu_slope=0.25, frozen_residual=False) -> "LmsGnnModel":
        """Near-identity filter ``theta ~ U(theta_range)``, zero bias."""
        rng = np.random.default_rng(seed)
        theta = rng.uniform(theta_range[0], theta_range[1], size=basis.n)
        return cls(basis, theta, np.zeros(basis.n), prelu_slope, tuple(layer_steps), frozen_residual)

    @property
    def n_layers(self) -> int:
        return len(self.layer_steps)

    def params(self) -> dict:
        return {"theta": self.theta, "bias": self.bias, "prelu_slope": np.array([self.prelu_slope])}

    def with_params(self, params: dict) -> "LmsGnnModel":
        slope = max(float(params["prelu_slope"][0]), MIN_PRELU_SLOPE)
        return replace(self, theta=params["theta"], bias=params["bias"], prelu_slope=slope)

    def filter_matrix(self) -> np.ndarray:
        """Dense ``U diag(theta) U^T``."""
        u = self.basis.eigenvectors
        return (u * self.theta) @ u.T


@dataclass(frozen=True)
class LayerRecord:
    x_in: np.ndarray
    residual: np.ndarray
    pre_activation: np.ndarray
    active: np.ndarray  # True where the activation passed z through unchanged


@dataclass(frozen=True)
class ForwardTrace:
    """Everything the backward pass needs from one forward evaluation."""

    xs: np.ndarray  # (L + 1, n); row 0 is the input estimate
    residuals: np.ndarray  # (L, n)
    pre_activations: np.ndarray  # (L, n)
    y: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return self.residuals.shape[0]

    @property
    def prediction(self) -> np.ndarray:
        return self.xs[-1]

    def layer(self, l: int) -> LayerRecord:
        z = self.pre_activations[l]
        last = l == len(self) - 1
        return LayerRecord(self.xs[l], self.residuals[l], z, np.ones_like(z, bool) if last else z >= 0)


@dataclass(frozen=True)
class Gradients:
    theta: np.ndarray
    bias: np.ndarray
    prelu_slope: float

    def as_params(self) -> dict:
        return {"theta": self.theta, "bias": self.bias, "prelu_slope": np.array([self.prelu_slope])}


def _as_mask(mask, n):
    d = mask.diagonal if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=np.float64)
    if d.shape != (n,):
        raise InvalidInputError(f"mask length {d.shape} does not match {n} nodes")
    return d


def _prelu(z, slope):
    return np.where(z >= 0.0, z, slope * z)


def lmsgnn_layer_forward(model: LmsGnnModel, layer: int, x_hat, y_t, mask, residual=None):
    """Evaluate one layer; returns ``(x_next, LayerRecord)``.

    ``residual`` overrides the per-layer residual (frozen-residual mode
    passes layer 0's residual here).
    """
    if not 0 <= layer < model.n_layers:
        raise InvalidParameterError(f"layer {layer} out of range for {model.n_layers} layers")
    n = model.basis.n
    x = np.asarray(x_hat, dtype=np.float64)
    m = _as_mask(mask, n)
    e = m * (np.asarray(y_t, dtype=np.float64) - x) if residual is None else np.asarray(residual, np.float64)
    h = backend.kernels.spectral_apply(model.basis.eigenvectors, model.theta, e)
    z = x + model.layer_steps[layer] * h + model.bias
    last = layer == model.n_layers - 1
    x_next = z if last else _prelu(z, model.prelu_slope)
    if not np.all(np.isfinite(x_next)):
        raise NumericalFailure(f"non-finite output in layer {layer}", layer=layer)
    return x_next, LayerRecord(x, e, z, np.ones_like(z, bool) if last else z >= 0)


def lmsgnn_forward(model: LmsGnnModel, x_hat_0, y_t, mask):
    """Chain all layers; returns ``(prediction, ForwardTrace)``."""
    n = model.basis.n
    x0 = np.asarray(x_hat_0, dtype=np.float64)
    y = np.asarray(y_t, dtype=np.float64)
    if x0.shape != (n,) or y.shape != (n,):
        raise InvalidInputError(f"estimate and observation must have length {n}")
    m = _as_mask(mask, n)
    xs, es, zs = backend.kernels.lmsgnn_forward(
        model.basis.eigenvectors, model.theta, model.bias, float(model.prelu_slope),
        np.asarray(model.layer_steps), x0, y, m, bool(model.frozen_residual),
    )
    bad = ~np.all(np.isfinite(xs[1:]), axis=1)
    if np.any(bad):
        layer = int(np.argmax(bad))
        raise NumericalFailure(f"non-finite output in layer {layer}", layer=layer)
    trace = ForwardTrace(xs, es, zs, y, m)
    return xs[-1].copy(), trace


def l1_loss(prediction, y_next, mask_next) -> float:
    """Mean absolute error over the observed nodes of the next observation."""
    p = np.asarray(prediction, dtype=np.float64)
    m = _as_mask(mask_next, p.size)
    count = np.count_nonzero(m)
    if count == 0:
        raise DegenerateMaskError("L1 loss needs at least one observed node")
    return float(np.sum(m * np.abs(np.asarray(y_next, dtype=np.float64) - p)) / count)


def l1_loss_grad(prediction, y_next, mask_next) -> np.ndarray:
    """Gradient of :func:`l1_loss` w.r.t. the prediction (0 at the kink)."""
    p = np.asarray(prediction, dtype=np.float64)
    m = _as_mask(mask_next, p.size)
    count = np.count_nonzero(m)
    if count == 0:
        raise DegenerateMaskError("L1 loss needs at least one observed node")
    return -m * np.sign(np.asarray(y_next, dtype=np.float64) - p) / count


def lmsgnn_backward(model: LmsGnnModel, trace: ForwardTrace, loss_grad) -> Gradients:
    """Reverse-mode gradients of a scalar loss through every layer.

    ``loss_grad`` is the loss gradient w.r.t. the prediction.  Shared
    parameters accumulate their contribution from each layer.
    """
    n = model.basis.n
    if len(trace) != model.n_layers or trace.xs.shape[1] != n:
        raise InvalidInputError("trace does not come from a forward pass of this model")
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != (n,):
        raise InvalidInputError(f"loss gradient must have length {n}")
    d_theta, d_bias, d_slope = backend.kernels.lmsgnn_backward(
        model.basis.eigenvectors, model.theta, float(model.prelu_slope), np.asarray(model.layer_steps),
        trace.mask, trace.residuals, trace.pre_activations, g, bool(model.frozen_residual),
    )
    return Gradients(np.asarray(d_theta), np.asarray(d_bias), float(d_slope))


@dataclass
class AdamState:
    """Adam moments keyed by parameter name."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return replace(
            self,
            first_moment={k: v.copy() for k, v in self.first_moment.items()},
            second_moment={k: v.copy() for k, v in self.second_moment.items()},
        )


def adam_step(params: dict, grads: dict, adam: AdamState):
    """Bias-corrected Adam on a dict of arrays; returns ``(new_params, new_adam)``."""
    new = adam.copy()
    new.step_count += 1
    t = new.step_count
    bc1 = 1.0 - adam.beta1 ** t
    bc2 = 1.0 - adam.beta2 ** t
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = new.first_moment.get(k, np.zeros_like(p))
        v = new.second_moment.get(k, np.zeros_like(p))
        m = adam.beta1 * m + (1.0 - adam.beta1) * g
        v = adam.beta2 * v + (1.0 - adam.beta2) * (g * g)
        new.first_moment[k] = m
        new.second_moment[k] = v
        out[k] = p - adam.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + adam.epsilon)
    return out, new


def adam_update(model: LmsGnnModel, adam: AdamState, grads: Gradients):
    """One Adam step on ``(theta, bias, prelu_slope)``.

    The slope is clamped to stay positive after the step.
    """
    params, adam = adam_step(model.params(), grads.as_params(), adam)
    return model.with_params(params), adam


def _initial_estimate(dataset, start, init):
    if init == "zero":
        return np.zeros(dataset.n)
    if init == "first_obs":
        return np.array(dataset.observations[start], dtype=np.float64)
    raise InvalidParameterError(f"unknown initial estimate {init!r}; use 'zero' or 'first_obs'")


def _require_obs(dataset):
    if not dataset.has_observations:
        raise InvalidInputError("dataset has no observations; call corrupt() first")


def train_offline(model: LmsGnnModel, dataset, train_range, epochs: int, adam: AdamState, init="zero"):
    """Fit on ``dataset`` rows ``[start, stop)`` by one-step-ahead L1 loss.

    Within an epoch the estimate is carried from step to step (no gradient
    flows through that carry) and Adam steps after every timestep.  Returns
    ``(model, adam, per_epoch_mean_loss)``.
    """
    _require_obs(dataset)
    start, stop = train_range
    if stop - start < 2:
        raise InvalidParameterError("training range needs at least two timesteps")
    history = []
    for _ in range(epochs):
        x_hat = _initial_estimate(dataset, start, init)
        losses = []
        for t in range(start, stop - 1):
            pred, trace = lmsgnn_forward(model, x_hat, dataset.observations[t], dataset.mask(t))
            mask_next = dataset.mask(t + 1)
            y_next = dataset.observations[t + 1]
            losses.append(l1_loss(pred, y_next, mask_next))
            grads = lmsgnn_backward(model, trace, l1_loss_grad(pred, y_next, mask_next))
            model, adam = adam_update(model, adam, grads)
            x_hat = pred
        history.append(float(np.mean(losses)))
    return model, adam, history


@dataclass
class OnlineResult:
    """Output of a streaming run.

    ``predictions[k]`` is the estimate of ``x[t+1]`` made at ``t = steps[k]``.
    ``losses[k]`` is its L1 loss once ``y[t+1]`` arrived (NaN if it never did)
    and ``mse[k]`` its spatial MSE against the ground truth (NaN likewise).
    """

    steps: np.ndarray
    predictions: np.ndarray
    losses: np.ndarray
    mse: np.ndarray
    model: object
    adam: AdamState | None
    final_estimate: np.ndarray


def predict_online(model: LmsGnnModel, dataset, test_range, adam: AdamState | None = None,
                   update_weights: bool = False, x_init=None, init="zero") -> OnlineResult:
    """Stream observations ``y[t]`` for ``t`` in ``test_range`` one at a time.

    At each step the prediction of ``x[t+1]`` is emitted first; only then is
    ``y[t+1]`` used for the loss and, with ``update_weights``, one backward
    pass and Adam step.  The estimate is carried across steps.
    """
    _require_obs(dataset)
    start, stop = test_range
    if update_weights and adam is None:
        raise InvalidInputError("online updates need an AdamState")
    steps = np.arange(start, max(start, stop))
    x_hat = _initial_estimate(dataset, start, init) if x_init is None else np.asarray(x_init, np.float64)
    preds = np.zeros((steps.size, dataset.n))
    losses = np.full(steps.size, np.nan)
    mse = np.full(steps.size, np.nan)
    for k, t in enumerate(steps):
        pred, trace = lmsgnn_forward(model, x_hat, dataset.observations[t], dataset.mask(t))
        preds[k] = pred
        if t + 1 < dataset.T:
            mask_next = dataset.mask(t + 1)
            y_next = dataset.observations[t + 1]
            losses[k] = l1_loss(pred, y_next, mask_next)
            mse[k] = float(np.mean((dataset.ground_truth[t + 1] - pred) ** 2))
            if update_weights:
                grads = lmsgnn_backward(model, trace, l1_loss_grad(pred, y_next, mask_next))
                model, adam = adam_update(model, adam, grads)
        x_hat = pred
    return OnlineResult(steps, preds, losses, mse, model, adam, x_hat)


# -- spectral GCN baseline ---------------------------------------------------


@dataclass
class GcnModel:
    """Two-layer spectral GCN: PReLU on the hidden layer, identity on the output."""

    basis: SpectralBasis
    thetas: np.ndarray  # (n_layers, n)
    biases: np.ndarray  # (n_layers, n)
    prelu_slope: float = 0.25

    def __post_init__(self):
        self.thetas = np.atleast_2d(_vec(self.thetas))
        self.biases = np.atleast_2d(_vec(self.biases))
        if self.thetas.shape != self.biases.shape or self.thetas.shape[1] != self.basis.n:
            raise InvalidInputError("thetas and biases must both be (n_layers, n)")
        if not self.prelu_slope > 0:
            raise InvalidParameterError("prelu_slope must be positive")

    @classmethod
    def init(cls, basis: SpectralBasis, n_layers=2, seed=0, theta_range=(0.9, 1.1), prelu_slope=0.25):
        rng = np.random.default_rng(seed)
        thetas = rng.uniform(theta_range[0], theta_range[1], size=(n_layers, basis.n))
        return cls(basis, thetas, np.zeros((n_layers, basis.n)), prelu_slope)

    @property
    def n_layers(self) -> int:
        return self.thetas.shape[0]

    def params(self) -> dict:
        return {"thetas": self.thetas, "biases": self.biases, "prelu_slope": np.array([self.prelu_slope])}

    def with_params(self, params: dict) -> "GcnModel":
        slope = max(float(params["prelu_slope"][0]), MIN_PRELU_SLOPE)
        return replace(self, thetas=params["thetas"], biases=params["biases"], prelu_slope=slope)


def gcn_baseline_forward(thetas, biases, x, basis: SpectralBasis, prelu_slope=0.25, return_cache=False):
    """``x_{l+1} = act(U diag(theta_l) U^T x_l + b_l)``; PReLU then identity."""
    u = basis.eigenvectors
    thetas = np.atleast_2d(thetas)
    biases = np.atleast_2d(biases)
    n_layers = thetas.shape[0]
    xs = [np.asarray(x, dtype=np.float64)]
    zs = []
    for l in range(n_layers):
        z = backend.kernels.spectral_apply(u, thetas[l], xs[-1]) + biases[l]
        zs.append(z)
        xs.append(z if l == n_layers - 1 else _prelu(z, prelu_slope))
    out = xs[-1]
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("GCN output is not finite")
    return (out, (xs, zs)) if return_cache else out


def gcn_backward(model: GcnModel, cache, loss_grad) -> dict:
    xs, zs = cache
    u = model.basis.eigenvectors
    g = np.asarray(loss_grad, dtype=np.float64)
    d_thetas = np.zeros_like(model.thetas)
    d_biases = np.zeros_like(model.biases)
    d_slope = 0.0
    for l in range(model.n_layers - 1, -1, -1):
        z = zs[l]
        if l < model.n_layers - 1:
            neg = z < 0.0
            d_slope += float(np.sum(g[neg] * z[neg]))
            g = np.where(neg, model.prelu_slope * g, g)
        d_biases[l] = g
        ug = u.T @ g
        d_thetas[l] = ug * (u.T @ xs[l])
        g = u @ (model.thetas[l] * ug)
    return {"thetas": d_thetas, "biases": d_biases, "prelu_slope": np.array([d_slope])}


def train_gcn_offline(model: GcnModel, dataset, train_range, epochs: int, adam: AdamState):
    """Fit the GCN to map ``y[t]`` to ``y[t+1]`` on the observed nodes."""
    _require_obs(dataset)
    start, stop = train_range
    if stop - start < 2:
        raise InvalidParameterError("training range needs at least two timesteps")
    history = []
    for _ in range(epochs):
        losses = []
        for t in range(start, stop - 1):
            pred, cache = gcn_baseline_forward(model.thetas, model.biases, dataset.observations[t],
                                               model.basis, model.prelu_slope, return_cache=True)
            mask_next = dataset.mask(t + 1)
            y_next = dataset.observations[t + 1]
            losses.append(l1_loss(pred, y_next, mask_next))
            grads = gcn_backward(model, cache, l1_loss_grad(pred, y_next, mask_next))
            params, adam = adam_step(model.params(), grads, adam)
            model = model.with_params(params)
        history.append(float(np.mean(losses)))
    return model, adam, history


def predict_gcn(model: GcnModel, dataset, test_range) -> OnlineResult:
    """Memoryless GCN predictions of ``x[t+1]`` from ``y[t]``."""
    _require_obs(dataset)
    start, stop = test_range
    steps = np.arange(start, max(start, stop))
    preds = np.zeros((steps.size, dataset.n))
    losses = np.full(steps.size, np.nan)
    mse = np.full(steps.size, np.nan)
    for k, t in enumerate(steps):
        pred = gcn_baseline_forward(model.thetas, model.biases, dataset.observations[t], model.basis,
                                    model.prelu_slope)
        preds[k] = pred
        if t + 1 < dataset.T:
            losses[k] = l1_loss(pred, dataset.observations[t + 1], dataset.mask(t + 1))
            mse[k] = float(np.mean((dataset.ground_truth[t + 1] - pred) ** 2))
    return OnlineResult(steps, preds, losses, mse, model, None, preds[-1] if steps.size else None)


# -- checkpoints --------------------------------------------------------------


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def save_checkpoint(path, model: LmsGnnModel, adam: AdamState | None = None, seed=None) -> None:
    """Write model + optimizer state as JSON (floats round-trip exactly)."""
    doc = {
        "format": "lmsgnn-checkpoint/1",
        "n": model.basis.n,
        "theta": _floats(model.theta),
        "bias": _floats(model.bias),
        "prelu_slope": float(model.prelu_slope),
        "layer_steps": list(model.layer_steps),
        "frozen_residual": bool(model.frozen_residual),
        "seed": seed,
    }
    if adam is not None:
        doc["adam"] = {
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "step_count": adam.step_count,
            "first_moment": {k: _floats(v) for k, v in adam.first_moment.items()},
            "second_moment": {k: _floats(v) for k, v in adam.second_moment.items()},
        }
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_checkpoint(path, basis: SpectralBasis):
    """Inverse of :func:`save_checkpoint`; returns ``(model, adam_or_None, seed)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "lmsgnn-checkpoint/1":
        raise InvalidInputError(f"{path}: not an LMS-GNN checkpoint")
    if doc["n"] != basis.n:
        raise InvalidInputError(f"checkpoint is for {doc['n']} nodes, basis has {basis.n}")
    model = LmsGnnModel(basis, np.array(doc["theta"]), np.array(doc["bias"]), doc["prelu_slope"],
                        tuple(doc["layer_steps"]), doc["frozen_residual"])
    adam = None
    if "adam" in doc:
        a = doc["adam"]
        adam = AdamState(a["learning_rate"], a["beta1"], a["beta2"], a["epsilon"], a["step_count"],
                         {k: np.array(v) for k, v in a["first_moment"].items()},
                         {k: np.array(v) for k, v in a["second_moment"].items()})
    return model, adam, doc.get("seed")
