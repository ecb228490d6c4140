# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled symplectic-flow kernels; same contract as ``_flow_py``."""

from cython.view cimport array as cvarray
from libc.math cimport cos, sin, exp, tanh, cosh, fabs

cdef double SINC_EPS = 1e-4
cdef double SERIES_EPS = 0.1


cdef inline void _band(double al, double be, double ga,
                       double* a, double* b, double* c, double* w, double* rho, double* root) nogil:
    a[0] = exp(al)
    b[0] = exp(be)
    rho[0] = tanh(ga)
    root[0] = exp(0.5 * (al + be))
    c[0] = rho[0] * root[0]
    w[0] = root[0] / cosh(ga)


cdef inline double _sinc(double t, double w, double theta, double s) nogil:
    cdef double th2
    if fabs(theta) < SINC_EPS:
        th2 = theta * theta
        return t * (1.0 - th2 / 6.0 + th2 * th2 / 120.0)
    return s / w


cdef class _Bands:
    cdef double[:, ::1] a, b, c, w, rho, root

    def __init__(self, double[:, ::1] alpha, double[:, ::1] beta, double[:, ::1] gamma):
        cdef Py_ssize_t H = alpha.shape[0], P = alpha.shape[1], h, p
        self.a = cvarray_like(H, P)
        self.b = cvarray_like(H, P)
        self.c = cvarray_like(H, P)
        self.w = cvarray_like(H, P)
        self.rho = cvarray_like(H, P)
        self.root = cvarray_like(H, P)
        for h in range(H):
            for p in range(P):
                _band(alpha[h, p], beta[h, p], gamma[h, p], &self.a[h, p], &self.b[h, p],
                      &self.c[h, p], &self.w[h, p], &self.rho[h, p], &self.root[h, p])


cdef double[:, ::1] cvarray_like(Py_ssize_t H, Py_ssize_t P):
    return cvarray(shape=(H, P), itemsize=sizeof(double), format="d")


def flow_forward(double[:, :, :, ::1] x, double[:, ::1] tau,
                 double[:, ::1] alpha, double[:, ::1] beta, double[:, ::1] gamma,
                 bint conjugate, double[:, :, :, ::1] out):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], N = x.shape[2], P = x.shape[3] // 2
    cdef Py_ssize_t bi, h, n, p
    cdef _Bands bands = _Bands(alpha, beta, gamma)
    cdef double[:, ::1] A = bands.a, Bm = bands.b, C = bands.c, W = bands.w
    cdef double t, w, theta, ct, f, x0, x1, y0, y1
    with nogil:
        for bi in range(B):
            for h in range(H):
                for n in range(N):
                    t = tau[bi, n]
                    for p in range(P):
                        w = W[h, p]
                        theta = w * t
                        ct = cos(theta)
                        f = _sinc(t, w, theta, sin(theta))
                        x0 = x[bi, h, n, 2 * p]
                        x1 = x[bi, h, n, 2 * p + 1]
                        y0 = (ct + f * C[h, p]) * x0 + (f * Bm[h, p]) * x1
                        y1 = (-f * A[h, p]) * x0 + (ct - f * C[h, p]) * x1
                        if conjugate:
                            out[bi, h, n, 2 * p] = y1
                            out[bi, h, n, 2 * p + 1] = -y0
                        else:
                            out[bi, h, n, 2 * p] = y0
                            out[bi, h, n, 2 * p + 1] = y1


def flow_backward(double[:, :, :, ::1] x, double[:, ::1] tau,
                  double[:, ::1] alpha, double[:, ::1] beta, double[:, ::1] gamma,
                  bint conjugate, double[:, :, :, ::1] gout,
                  double[:, :, :, ::1] gx, double[:, ::1] gtau,
                  double[:, ::1] galpha, double[:, ::1] gbeta, double[:, ::1] ggamma,
                  bint need_tau, bint need_params):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], N = x.shape[2], P = x.shape[3] // 2
    cdef Py_ssize_t bi, h, n, p
    cdef _Bands bands = _Bands(alpha, beta, gamma)
    cdef double[:, ::1] A = bands.a, Bm = bands.b, C = bands.c, W = bands.w
    cdef double[:, ::1] R = bands.rho, RT = bands.root
    cdef double[:, ::1] acc_w = cvarray_like(H, P), acc_c = cvarray_like(H, P)
    cdef double[:, ::1] acc_a = cvarray_like(H, P), acc_b = cvarray_like(H, P)
    cdef double a, b, c, w, t, theta, th2, ct, st, f, gt
    cdef double x0, x1, g0, g1, gs00, gs01, gs10, gs11, diag, d_cos, d_sinc
    cdef double dsinc_dw, dsinc_dt
    acc_w[:, :] = 0.0
    acc_c[:, :] = 0.0
    acc_a[:, :] = 0.0
    acc_b[:, :] = 0.0
    with nogil:
        for bi in range(B):
            for h in range(H):
                for n in range(N):
                    t = tau[bi, n]
                    gt = 0.0
                    for p in range(P):
                        a = A[h, p]
                        b = Bm[h, p]
                        c = C[h, p]
                        w = W[h, p]
                        theta = w * t
                        th2 = theta * theta
                        ct = cos(theta)
                        st = sin(theta)
                        f = _sinc(t, w, theta, st)
                        x0 = x[bi, h, n, 2 * p]
                        x1 = x[bi, h, n, 2 * p + 1]
                        if conjugate:
                            g0 = -gout[bi, h, n, 2 * p + 1]
                            g1 = gout[bi, h, n, 2 * p]
                        else:
                            g0 = gout[bi, h, n, 2 * p]
                            g1 = gout[bi, h, n, 2 * p + 1]
                        gx[bi, h, n, 2 * p] = (ct + f * c) * g0 - (f * a) * g1
                        gx[bi, h, n, 2 * p + 1] = (f * b) * g0 + (ct - f * c) * g1
                        if not (need_tau or need_params):
                            continue
                        gs00 = g0 * x0
                        gs01 = g0 * x1
                        gs10 = g1 * x0
                        gs11 = g1 * x1
                        diag = gs00 - gs11
                        d_cos = gs00 + gs11
                        d_sinc = c * diag + b * gs01 - a * gs10
                        if fabs(theta) < SINC_EPS:
                            dsinc_dw = t * t * (-theta / 3.0 + theta * th2 / 30.0)
                            dsinc_dt = 1.0 - th2 / 2.0 + th2 * th2 / 24.0
                        elif fabs(theta) < SERIES_EPS:
                            dsinc_dw = t * t * theta * (-1.0 / 3.0 + th2 * (1.0 / 30.0 + th2 * (-1.0 / 840.0 + th2 / 45360.0)))
                            dsinc_dt = ct
                        else:
                            dsinc_dw = (t * ct - f) / w
                            dsinc_dt = ct
                        if need_tau:
                            gt += d_cos * (-w * st) + d_sinc * dsinc_dt
                        if need_params:
                            acc_w[h, p] += d_cos * (-t * st) + d_sinc * dsinc_dw
                            acc_c[h, p] += f * diag
                            acc_b[h, p] += f * gs01
                            acc_a[h, p] -= f * gs10
                    if need_tau:
                        gtau[bi, n] += gt
        if need_params:
            for h in range(H):
                for p in range(P):
                    w = W[h, p]
                    c = C[h, p]
                    galpha[h, p] += acc_a[h, p] * A[h, p] + 0.5 * (acc_c[h, p] * c + acc_w[h, p] * w)
                    gbeta[h, p] += acc_b[h, p] * Bm[h, p] + 0.5 * (acc_c[h, p] * c + acc_w[h, p] * w)
                    ggamma[h, p] += (acc_c[h, p] * (1.0 - R[h, p] * R[h, p]) * RT[h, p]
                                     - acc_w[h, p] * w * R[h, p])
