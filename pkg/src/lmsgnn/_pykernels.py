"""NumPy implementations of the numerical kernels.

These mirror ``_ckernels.pyx`` function for function and are what
:mod:`lmsgnn.backend` hands out when the compiled extension is unavailable
or ``LMSGNN_BACKEND=python`` is set.
"""
import numpy as np

EARTH_RADIUS_KM = 6371.0088


def haversine_matrix(lat, lon, radius=EARTH_RADIUS_KM):
    """All-pairs great-circle distances; ``lat``/``lon`` in radians."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2.0) ** 2
    d = 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


def _off_norm(a):
    off = a - np.diag(np.diag(a))
    return np.sqrt(np.sum(off * off))


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigenvalue iteration for a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors, sweeps, off_norm)`` where the
    eigenvalues are unsorted and ``off_norm`` is the Frobenius norm of the
    remaining off-diagonal part.  Convergence means
    ``off_norm <= tol * ||a||_F``; the caller decides what to do otherwise.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.sqrt(np.sum(a * a))
    target = tol * scale
    off = _off_norm(a)
    sweeps = 0
    while off > target and sweeps < max_sweeps:
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        off = _off_norm(a)
    return np.diag(a).copy(), v, sweeps, off


def spectral_apply(u, g, v):
    """``u @ diag(g) @ u.T @ v`` without forming the n x n operator."""
    return u @ (g * (u.T @ v))


def lms_update(u, g, x, e, mu):
    """``x + mu * u diag(g) u^T e`` -- the adaptive graph filter step."""
    return x + mu * spectral_apply(u, g, e)


def lmsgnn_forward(u, theta, bias, slope, steps, x0, y, mask, frozen_residual):
    """Run all LMS-GNN layers, returning estimates, residuals, pre-activations.

    ``xs`` has one more row than there are layers (row 0 is the input
    estimate).  The last layer has identity activation, the others PReLU.
    """
    n_layers = len(steps)
    n = x0.shape[0]
    xs = np.empty((n_layers + 1, n))
    es = np.empty((n_layers, n))
    zs = np.empty((n_layers, n))
    xs[0] = x0
    for layer in range(n_layers):
        x = xs[layer]
        if frozen_residual and layer > 0:
            e = es[0]
        else:
            e = mask * (y - x)
        es[layer] = e
        h = spectral_apply(u, theta, e)
        z = x + steps[layer] * h + bias
        zs[layer] = z
        if layer < n_layers - 1:
            xs[layer + 1] = np.where(z >= 0.0, z, slope * z)
        else:
            xs[layer + 1] = z
    return xs, es, zs


def lmsgnn_backward(u, theta, slope, steps, mask, es, zs, grad_out, frozen_residual):
    """Reverse pass for :func:`lmsgnn_forward` with tied parameters.

    Returns ``(d_theta, d_bias, d_slope)`` for the scalar whose gradient
    with respect to the final output is ``grad_out``.
    """
    n_layers = len(steps)
    g = np.array(grad_out, dtype=np.float64, copy=True)
    d_theta = np.zeros_like(theta)
    d_bias = np.zeros_like(g)
    d_slope = 0.0
    for layer in range(n_layers - 1, -1, -1):
        z = zs[layer]
        if layer < n_layers - 1:
            neg = z < 0.0
            d_slope += float(np.sum(g[neg] * z[neg]))
            gz = np.where(neg, slope * g, g)
        else:
            gz = g
        d_bias += gz
        ug = u.T @ gz
        ue = u.T @ es[layer]
        d_theta += steps[layer] * ug * ue
        if frozen_residual:
            g = gz
        else:
            # the residual mask(y - x) feeds x back in with a minus sign
            g = gz - steps[layer] * mask * (u @ (theta * ug))
    return d_theta, d_bias, d_slope
