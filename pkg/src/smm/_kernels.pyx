# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the forward pass, backward pass and fused SGD step.

Mirrors ``smm._kernels_py`` function for function.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, log
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double PROB_FLOOR = 1e-12


cdef void _forward(const double[:, ::1] ne, const double[:, ::1] oe,
                   const double[:, ::1] gw, const double[::1] gb,
                   const double[:, ::1] w1, const double[::1] b1,
                   const double[:, ::1] w2, const double[::1] b2,
                   Py_ssize_t ia, Py_ssize_t ib, Py_ssize_t iop,
                   double* gate, double* x, double* z, double* h,
                   double* logits, double* p) noexcept nogil:
    cdef Py_ssize_t d = ne.shape[1]
    cdef Py_ssize_t H = w1.shape[0]
    cdef Py_ssize_t V = w2.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc, m, s
    for i in range(2 * d):
        acc = gb[i]
        for j in range(d):
            acc = acc + gw[i, j] * oe[iop, j]
        gate[i] = 1.0 / (1.0 + exp(-acc))
    for j in range(d):
        x[j] = gate[j] * ne[ia, j]
        x[d + j] = gate[d + j] * ne[ib, j]
        x[2 * d + j] = oe[iop, j]
    for i in range(H):
        acc = b1[i]
        for j in range(3 * d):
            acc = acc + w1[i, j] * x[j]
        z[i] = acc
        h[i] = tanh(acc)
    m = -1e308
    for i in range(V):
        acc = b2[i]
        for j in range(H):
            acc = acc + w2[i, j] * h[j]
        logits[i] = acc
        if acc > m:
            m = acc
    s = 0.0
    for i in range(V):
        p[i] = exp(logits[i] - m)
        s = s + p[i]
    for i in range(V):
        p[i] = p[i] / s


def forward(const double[:, ::1] ne, const double[:, ::1] oe,
            const double[:, ::1] gw, const double[::1] gb,
            const double[:, ::1] w1, const double[::1] b1,
            const double[:, ::1] w2, const double[::1] b2,
            Py_ssize_t ia, Py_ssize_t ib, Py_ssize_t iop):
    cdef Py_ssize_t d = ne.shape[1]
    cdef Py_ssize_t H = w1.shape[0]
    cdef Py_ssize_t V = w2.shape[0]
    gate = np.empty(2 * d)
    x = np.empty(3 * d)
    z = np.empty(H)
    h = np.empty(H)
    logits = np.empty(V)
    p = np.empty(V)
    cdef double[::1] vg = gate, vx = x, vz = z, vh = h, vl = logits, vp = p
    _forward(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop,
             &vg[0], &vx[0], &vz[0], &vh[0], &vl[0], &vp[0])
    return gate, x, z, h, logits, p


def probs(const double[:, ::1] ne, const double[:, ::1] oe,
          const double[:, ::1] gw, const double[::1] gb,
          const double[:, ::1] w1, const double[::1] b1,
          const double[:, ::1] w2, const double[::1] b2,
          Py_ssize_t ia, Py_ssize_t ib, Py_ssize_t iop):
    cdef Py_ssize_t d = ne.shape[1]
    cdef Py_ssize_t H = w1.shape[0]
    cdef Py_ssize_t V = w2.shape[0]
    p = np.empty(V)
    cdef double[::1] vp = p
    cdef double* buf = <double*> malloc((5 * d + 2 * H + V) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        _forward(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop,
                 buf, buf + 2 * d, buf + 5 * d, buf + 5 * d + H,
                 buf + 5 * d + 2 * H, &vp[0])
    finally:
        free(buf)
    return p


cdef void _backward(const double[:, ::1] ne, const double[:, ::1] oe,
                    const double[:, ::1] gw, const double[:, ::1] w1,
                    const double[:, ::1] w2,
                    Py_ssize_t ia, Py_ssize_t ib, Py_ssize_t iop,
                    const double* gate, const double* x, const double* h,
                    const double* p, Py_ssize_t target,
                    double* d_ea, double* d_eb, double* d_eop,
                    double* d_gw, double* du, double* d_w1, double* dz,
                    double* d_w2, double* dl, double* dx) noexcept nogil:
    # d_gw, d_w1, d_w2 are row-major flat buffers; dx is scratch of length 3d
    cdef Py_ssize_t d = ne.shape[1]
    cdef Py_ssize_t H = w1.shape[0]
    cdef Py_ssize_t V = w2.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc, g
    for i in range(V):
        dl[i] = p[i]
    dl[target] = dl[target] - 1.0
    for i in range(V):
        for j in range(H):
            d_w2[i * H + j] = dl[i] * h[j]
    for j in range(H):
        acc = 0.0
        for i in range(V):
            acc = acc + w2[i, j] * dl[i]
        dz[j] = acc * (1.0 - h[j] * h[j])
    for i in range(H):
        for j in range(3 * d):
            d_w1[i * 3 * d + j] = dz[i] * x[j]
    for j in range(3 * d):
        acc = 0.0
        for i in range(H):
            acc = acc + w1[i, j] * dz[i]
        dx[j] = acc
    for j in range(d):
        d_ea[j] = dx[j] * gate[j]
        d_eb[j] = dx[d + j] * gate[d + j]
        g = gate[j]
        du[j] = dx[j] * ne[ia, j] * g * (1.0 - g)
        g = gate[d + j]
        du[d + j] = dx[d + j] * ne[ib, j] * g * (1.0 - g)
    for i in range(2 * d):
        for j in range(d):
            d_gw[i * d + j] = du[i] * oe[iop, j]
    for j in range(d):
        acc = dx[2 * d + j]
        for i in range(2 * d):
            acc = acc + gw[i, j] * du[i]
        d_eop[j] = acc


def backward(const double[:, ::1] ne, const double[:, ::1] oe,
             const double[:, ::1] gw, const double[:, ::1] w1,
             const double[:, ::1] w2,
             Py_ssize_t ia, Py_ssize_t ib, Py_ssize_t iop,
             const double[::1] gate, const double[::1] x, const double[::1] h,
             const double[::1] p, Py_ssize_t target):
    cdef Py_ssize_t d = ne.shape[1]
    cdef Py_ssize_t H = w1.shape[0]
    cdef Py_ssize_t V = w2.shape[0]
    d_ea = np.empty(d)
    d_eb = np.empty(d)
    d_eop = np.empty(d)
    d_gw = np.empty((2 * d, d))
    du = np.empty(2 * d)
    d_w1 = np.empty((H, 3 * d))
    dz = np.empty(H)
    d_w2 = np.empty((V, H))
    dl = np.empty(V)
    dx = np.empty(3 * d)
    cdef double[::1] a1 = d_ea, a2 = d_eb, a3 = d_eop, a5 = du, a7 = dz, a9 = dl, a10 = dx
    cdef double[:, ::1] a4 = d_gw, a6 = d_w1, a8 = d_w2
    _backward(ne, oe, gw, w1, w2, ia, ib, iop, &gate[0], &x[0], &h[0], &p[0],
              target, &a1[0], &a2[0], &a3[0], &a4[0, 0], &a5[0], &a6[0, 0],
              &a7[0], &a8[0, 0], &a9[0], &a10[0])
    return d_ea, d_eb, d_eop, d_gw, du, d_w1, dz, d_w2, dl


def train_step(double[:, ::1] ne, double[:, ::1] oe,
               double[:, ::1] gw, double[::1] gb,
               double[:, ::1] w1, double[::1] b1,
               double[:, ::1] w2, double[::1] b2,
               Py_ssize_t ia, Py_ssize_t ib, Py_ssize_t iop,
               Py_ssize_t target, double lr):
    cdef Py_ssize_t d = ne.shape[1]
    cdef Py_ssize_t H = w1.shape[0]
    cdef Py_ssize_t V = w2.shape[0]
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = (5 * d + 2 * H + 2 * V          # forward
                         + 3 * d + 2 * d * d + 2 * d    # d_ea d_eb d_eop, d_gw, du
                         + H * 3 * d + H + V * H + V    # d_w1, dz, d_w2, dl
                         + 3 * d)                       # dx
    cdef double* buf = <double*> malloc(n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* gate = buf
    cdef double* x = gate + 2 * d
    cdef double* z = x + 3 * d
    cdef double* h = z + H
    cdef double* logits = h + H
    cdef double* p = logits + V
    cdef double* d_ea = p + V
    cdef double* d_eb = d_ea + d
    cdef double* d_eop = d_eb + d
    cdef double* d_gw = d_eop + d
    cdef double* du = d_gw + 2 * d * d
    cdef double* d_w1 = du + 2 * d
    cdef double* dz = d_w1 + H * 3 * d
    cdef double* d_w2 = dz + H
    cdef double* dl = d_w2 + V * H
    cdef double* dx = dl + V
    cdef double loss, pt
    with nogil:
        _forward(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop,
                 gate, x, z, h, logits, p)
        pt = p[target]
        if pt < PROB_FLOOR:
            pt = PROB_FLOOR
        loss = -log(pt)
        _backward(ne, oe, gw, w1, w2, ia, ib, iop, gate, x, h, p, target,
                  d_ea, d_eb, d_eop, d_gw, du, d_w1, dz, d_w2, dl, dx)
        for j in range(d):
            ne[ia, j] -= lr * d_ea[j]
            ne[ib, j] -= lr * d_eb[j]
            oe[iop, j] -= lr * d_eop[j]
        for i in range(2 * d):
            gb[i] -= lr * du[i]
            for j in range(d):
                gw[i, j] -= lr * d_gw[i * d + j]
        for i in range(H):
            b1[i] -= lr * dz[i]
            for j in range(3 * d):
                w1[i, j] -= lr * d_w1[i * 3 * d + j]
        for i in range(V):
            b2[i] -= lr * dl[i]
            for j in range(H):
                w2[i, j] -= lr * d_w2[i * H + j]
    free(buf)
    return loss
