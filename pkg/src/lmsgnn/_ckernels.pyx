# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Signatures and return values match the NumPy fallback exactly; only the
floating-point summation order may differ.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport asin, cos, sin, sqrt

cnp.import_array()

EARTH_RADIUS_KM = 6371.0088


def haversine_matrix(lat, lon, double radius=EARTH_RADIUS_KM):
    cdef double[::1] la = np.ascontiguousarray(lat, dtype=np.float64)
    cdef double[::1] lo = np.ascontiguousarray(lon, dtype=np.float64)
    cdef Py_ssize_t n = la.shape[0], i, j
    out = np.zeros((n, n))
    cdef double[:, ::1] d = out
    cdef double sa, sb, a
    for i in range(n):
        for j in range(i + 1, n):
            sa = sin((la[i] - la[j]) * 0.5)
            sb = sin((lo[i] - lo[j]) * 0.5)
            a = sa * sa + cos(la[i]) * cos(la[j]) * sb * sb
            if a > 1.0:
                a = 1.0
            d[i, j] = 2.0 * radius * asin(sqrt(a))
            d[j, i] = d[i, j]
    return out


cdef double _off_norm(double[:, ::1] a) nogil:
    cdef Py_ssize_t n = a.shape[0], i, j
    cdef double acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += a[i, j] * a[i, j]
    return sqrt(acc)


def jacobi_eigh(a_in, double tol=1e-14, int max_sweeps=100):
    a_arr = np.array(a_in, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t n = a.shape[0], p, q, k
    v_arr = np.eye(n)
    cdef double[:, ::1] v = v_arr
    cdef double scale = 0.0, target, off, apq, tau, t, c, s, xp, xq
    cdef int sweeps = 0
    for p in range(n):
        for q in range(n):
            scale += a[p, q] * a[p, q]
    target = tol * sqrt(scale)
    with nogil:
        off = _off_norm(a)
        while off > target and sweeps < max_sweeps:
            sweeps += 1
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if tau >= 0.0:
                        t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = t * c
                    for k in range(n):
                        xp = a[k, p]
                        xq = a[k, q]
                        a[k, p] = c * xp - s * xq
                        a[k, q] = s * xp + c * xq
                    for k in range(n):
                        xp = a[p, k]
                        xq = a[q, k]
                        a[p, k] = c * xp - s * xq
                        a[q, k] = s * xp + c * xq
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for k in range(n):
                        xp = v[k, p]
                        xq = v[k, q]
                        v[k, p] = c * xp - s * xq
                        v[k, q] = s * xp + c * xq
            off = _off_norm(a)
    return np.diag(a_arr).copy(), v_arr, sweeps, off


cdef void _spectral_apply(const double[:, ::1] u, const double[::1] g,
                          const double[::1] vin, double[::1] tmp,
                          double[::1] out) noexcept nogil:
    cdef Py_ssize_t n = u.shape[0], m = u.shape[1], i, j
    cdef double acc
    for j in range(m):
        tmp[j] = 0.0
    for i in range(n):
        for j in range(m):
            tmp[j] += u[i, j] * vin[i]
    for j in range(m):
        tmp[j] = g[j] * tmp[j]
    for i in range(n):
        acc = 0.0
        for j in range(m):
            acc += u[i, j] * tmp[j]
        out[i] = acc


cdef void _transpose_apply(const double[:, ::1] u, const double[::1] vin,
                           double[::1] out) noexcept nogil:
    cdef Py_ssize_t n = u.shape[0], m = u.shape[1], i, j
    for j in range(m):
        out[j] = 0.0
    for i in range(n):
        for j in range(m):
            out[j] += u[i, j] * vin[i]


def spectral_apply(u, g, v):
    cdef const double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty(uu.shape[0])
    tmp = np.empty(uu.shape[1])
    _spectral_apply(uu, gg, vv, tmp, out)
    return out


def lms_update(u, g, x, e, double mu):
    cdef const double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] ee = np.ascontiguousarray(e, dtype=np.float64)
    cdef Py_ssize_t n = uu.shape[0], i
    h_arr = np.empty(n)
    cdef double[::1] h = h_arr
    tmp = np.empty(uu.shape[1])
    _spectral_apply(uu, gg, ee, tmp, h)
    for i in range(n):
        h[i] = xx[i] + mu * h[i]
    return h_arr


def lmsgnn_forward(u, theta, bias, double slope, steps, x0, y, mask, bint frozen_residual):
    cdef const double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(bias, dtype=np.float64)
    cdef const double[::1] mu = np.ascontiguousarray(steps, dtype=np.float64)
    cdef const double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] m = np.ascontiguousarray(mask, dtype=np.float64)
    cdef Py_ssize_t n_layers = mu.shape[0], n = uu.shape[0], l, i
    xs_arr = np.empty((n_layers + 1, n))
    es_arr = np.empty((n_layers, n))
    zs_arr = np.empty((n_layers, n))
    cdef double[:, ::1] xs = xs_arr
    cdef double[:, ::1] es = es_arr
    cdef double[:, ::1] zs = zs_arr
    h_arr = np.empty(n)
    tmp_arr = np.empty(uu.shape[1])
    cdef double[::1] h = h_arr
    cdef double[::1] tmp = tmp_arr
    cdef double z
    xs_arr[0] = x0
    with nogil:
        for l in range(n_layers):
            if frozen_residual and l > 0:
                for i in range(n):
                    es[l, i] = es[0, i]
            else:
                for i in range(n):
                    es[l, i] = m[i] * (yy[i] - xs[l, i])
            _spectral_apply(uu, th, es[l], tmp, h)
            for i in range(n):
                z = xs[l, i] + mu[l] * h[i] + b[i]
                zs[l, i] = z
                if l < n_layers - 1 and not (z >= 0.0):
                    xs[l + 1, i] = slope * z
                else:
                    xs[l + 1, i] = z
    return xs_arr, es_arr, zs_arr


def lmsgnn_backward(u, theta, double slope, steps, mask, es_in, zs_in, grad_out,
                    bint frozen_residual):
    cdef const double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] mu = np.ascontiguousarray(steps, dtype=np.float64)
    cdef const double[::1] m = np.ascontiguousarray(mask, dtype=np.float64)
    cdef const double[:, ::1] es = np.ascontiguousarray(es_in, dtype=np.float64)
    cdef const double[:, ::1] zs = np.ascontiguousarray(zs_in, dtype=np.float64)
    cdef Py_ssize_t n_layers = mu.shape[0], n = uu.shape[0], k = uu.shape[1], l, i
    g_arr = np.array(grad_out, dtype=np.float64, copy=True)
    cdef double[::1] g = g_arr
    dth_arr = np.zeros(k)
    db_arr = np.zeros(n)
    cdef double[::1] dth = dth_arr
    cdef double[::1] db = db_arr
    ug_arr = np.empty(k)
    ue_arr = np.empty(k)
    back_arr = np.empty(n)
    tmp_arr = np.empty(k)
    cdef double[::1] ug = ug_arr
    cdef double[::1] ue = ue_arr
    cdef double[::1] back = back_arr
    cdef double[::1] tmp = tmp_arr
    cdef double ds = 0.0
    with nogil:
        for l in range(n_layers - 1, -1, -1):
            if l < n_layers - 1:
                for i in range(n):
                    if zs[l, i] < 0.0:
                        ds += g[i] * zs[l, i]
                        g[i] = slope * g[i]
            for i in range(n):
                db[i] += g[i]
            _transpose_apply(uu, g, ug)
            _transpose_apply(uu, es[l], ue)
            for i in range(k):
                dth[i] += mu[l] * ug[i] * ue[i]
            if not frozen_residual:
                _spectral_apply(uu, th, g, tmp, back)
                for i in range(n):
                    g[i] = g[i] - mu[l] * m[i] * back[i]
    return dth_arr, db_arr, ds
