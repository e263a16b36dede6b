"""Self-checks used by ``lmsgnn check``: small instances, fast, deterministic."""
from __future__ import annotations

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backend
from .filters import AdaptiveFilterState, BandlimitedFilter, SamplingMask, glms_step
from .graph import Graph, eigendecompose, gft, laplacian
from .model import LmsGnnModel, l1_loss, l1_loss_grad, lmsgnn_backward, lmsgnn_forward


def random_connected_graph(n, rng, density=0.4) -> Graph:
    """Random weighted graph kept connected by a spanning path."""
    w = np.triu(rng.uniform(0.1, 2.0, size=(n, n)) * (rng.random((n, n)) < density), 1)
    idx = np.arange(n - 1)
    w[idx, idx + 1] = np.maximum(w[idx, idx + 1], 0.5)
    return Graph(w + w.T)


def spectral_errors(graph: Graph, rng) -> dict:
    """Parseval, reconstruction and projector-idempotence errors for one graph."""
    lap = laplacian(graph)
    basis = eigendecompose(lap)
    u, lam = basis.eigenvectors, basis.eigenvalues
    x = rng.standard_normal(graph.n_nodes)
    s = gft(basis, x)
    k = int(rng.integers(1, graph.n_nodes + 1))
    b = BandlimitedFilter(basis, tuple(rng.choice(graph.n_nodes, size=k, replace=False))).projector
    return {
        "parseval_rel": abs(s @ s - x @ x) / (x @ x),
        "reconstruction": float(np.max(np.abs((u * lam) @ u.T - lap))),
        "idempotence": float(np.max(np.abs(b @ b - b))),
    }


def _sign_pattern(model, x0, y, mask, y_next, mask_next):
    pred, trace = lmsgnn_forward(model, x0, y, mask)
    hidden = trace.pre_activations[:-1] >= 0
    resid = np.sign(pred - y_next)[mask_next == 1.0]
    return hidden.tobytes() + resid.tobytes()


def gradient_check(model: LmsGnnModel, x0, y, mask, y_next, mask_next, h=1e-5):
    """Compare analytic L1-loss gradients with central differences.

    Partials whose ``+-h`` perturbation changes any activation or loss sign
    are skipped (the loss is not differentiable there).  Returns
    ``(worst_excess, n_checked, n_skipped)`` where ``worst_excess`` is the
    largest ``|analytic - numeric| - max(1e-5, 1e-4 * |numeric|)``.
    """
    pred, trace = lmsgnn_forward(model, x0, y, mask)
    grads = lmsgnn_backward(model, trace, l1_loss_grad(pred, y_next, mask_next)).as_params()
    params = model.params()
    base = _sign_pattern(model, x0, y, mask, y_next, mask_next)
    worst, checked, skipped = -np.inf, 0, 0
    for name, value in params.items():
        for i in range(value.size):
            losses = []
            same = True
            for sign in (1.0, -1.0):
                p = {k: v.copy() for k, v in params.items()}
                p[name].flat[i] += sign * h
                m = replace(model, theta=p["theta"], bias=p["bias"], prelu_slope=float(p["prelu_slope"][0]))
                same &= _sign_pattern(m, x0, y, mask, y_next, mask_next) == base
                losses.append(l1_loss(lmsgnn_forward(m, x0, y, mask)[0], y_next, mask_next))
            if not same:
                skipped += 1
                continue
            numeric = (losses[0] - losses[1]) / (2 * h)
            analytic = float(grads[name].flat[i])
            worst = max(worst, abs(analytic - numeric) - max(1e-5, 1e-4 * abs(numeric)))
            checked += 1
    return worst, checked, skipped


def random_gradient_case(rng, n_range=(4, 16), layer_range=(1, 3)):
    """Random small LMS-GNN plus one training pair."""
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    n_layers = int(rng.integers(layer_range[0], layer_range[1] + 1))
    basis = eigendecompose(laplacian(random_connected_graph(n, rng)))
    model = LmsGnnModel(basis, rng.uniform(0.5, 1.5, n), 0.1 * rng.standard_normal(n),
                        float(rng.uniform(0.05, 0.5)), tuple(rng.uniform(0.05, 0.9, n_layers)))

    def draw_mask():
        m = (rng.random(n) < 0.7).astype(float)
        m[rng.integers(n)] = 1.0
        return m

    mask, mask_next = draw_mask(), draw_mask()
    y = mask * rng.standard_normal(n)
    y_next = mask_next * rng.standard_normal(n)
    return model, rng.standard_normal(n), y, mask, y_next, mask_next


def equivalence_case(rng, n=None):
    """One LMS-GNN layer (zero bias, identity activation) vs one GLMS step.

    Returns the two outputs, which should agree bit for bit.
    """
    n = int(rng.integers(3, 33)) if n is None else n
    basis = eigendecompose(laplacian(random_connected_graph(n, rng)))
    theta = rng.uniform(-1.0, 2.0, n)
    mu = float(rng.uniform(0.01, 1.5))
    model = LmsGnnModel(basis, theta, np.zeros(n), 1.0, (mu,))
    mask = SamplingMask((rng.random(n) < 0.6).astype(float))
    x = rng.standard_normal(n)
    y = mask.diagonal * rng.standard_normal(n)
    gnn_out, _ = lmsgnn_forward(model, x, y, mask)
    filt = BandlimitedFilter.spectral(basis, theta)
    state = AdaptiveFilterState(x, mu, filt)
    return gnn_out, glms_step(state, y, mask).estimate


def backend_agreement(rng, n=12) -> float:
    """Largest difference between the compiled and NumPy kernels (0 if only one)."""
    if "compiled" not in backend.BACKENDS:
        return 0.0
    py, cc = backend.BACKENDS["python"], backend.BACKENDS["compiled"]
    u = eigendecompose(laplacian(random_connected_graph(n, rng))).eigenvectors
    g, v = rng.standard_normal(n), rng.standard_normal(n)
    return float(np.max(np.abs(py.spectral_apply(u, g, v) - cc.spectral_apply(u, g, v))))


def run_checks(seed=0, log=print) -> bool:
    """Run the invariant suite on a small instance; print one line per check."""
    from .harness import ExperimentConfig, audit_causality, emit_report, run_experiment

    rng = np.random.default_rng(seed)
    results = []

    def record(name, ok, detail):
        results.append(ok)
        log(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    errs = [spectral_errors(random_connected_graph(int(rng.integers(3, 25)), rng), rng) for _ in range(5)]
    worst = {k: max(e[k] for e in errs) for k in errs[0]}
    record("spectral", worst["parseval_rel"] <= 1e-9 and worst["reconstruction"] <= 1e-6
           and worst["idempotence"] <= 1e-8, ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))

    excess = max(gradient_check(*random_gradient_case(rng))[0] for _ in range(5))
    record("gradient", excess <= 0, f"worst excess over tolerance {excess:.2e}")

    same = all(np.array_equal(*equivalence_case(rng)) for _ in range(10))
    record("lms-layer equivalence", same, "bit-exact" if same else "outputs differ")

    diff = backend_agreement(rng)
    record("backend agreement", diff <= 1e-12, f"max diff {diff:.2e}")

    cfg = ExperimentConfig(
        dataset={"source": "synth", "n": 16, "T": 20, "signal_f_count": 4, "drift_rate": 0.5},
        f_count=4, noise_vars=[0.1], train_split=8, seed=seed,
        hyper={"lmsgnn": {"epochs": 3}, "gcn": {"epochs": 3}},
    )
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp, "a"), Path(tmp, "b")
        emit_report(run_experiment(cfg), a)
        emit_report(run_experiment(cfg), b)
        identical = all((a / f.name).read_bytes() == (b / f.name).read_bytes() for f in a.iterdir())
    record("determinism", identical, "byte-identical reports" if identical else "reports differ")

    audit = audit_causality(cfg, n_steps=3)
    bad = [(e, t) for e, rows in audit.items() for t, ok in rows if not ok]
    record("causality", not bad, "prefix replays match" if not bad else f"mismatch at {bad}")
    return all(results)
