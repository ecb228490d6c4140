"""numpy implementation of the fused symplectic-flow kernels.

Shapes: ``x (B, H, N, 2P)``, ``tau (B, N)``, band parameters ``(H, P)``.
Per band: ``a = e^alpha``, ``b = e^beta``, ``c = tanh(gamma) e^((alpha+beta)/2)``,
``omega = e^((alpha+beta)/2) / cosh(gamma)`` and
``S(t) = cos(omega t) I + sin(omega t)/omega [[c, b], [-a, -c]]``.
"""

import numpy as np

SINC_EPS = 1e-4
SERIES_EPS = 0.1


def band_coefficients(alpha, beta, gamma):
    a = np.exp(alpha)
    b = np.exp(beta)
    rho = np.tanh(gamma)
    root = np.exp(0.5 * (alpha + beta))
    c = rho * root
    omega = root / np.cosh(gamma)
    return a, b, c, omega, rho, root


def _trig(tau, omega):
    t = tau[:, None, :, None]
    w = omega[None, :, None, :]
    theta = t * w
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    small = np.abs(theta) < SINC_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        sinc = np.where(small, t * (1.0 - theta ** 2 / 6.0 + theta ** 4 / 120.0), sin_t / w)
    return t, w, theta, cos_t, sin_t, sinc, small


def _expand(*arrays):
    return [arr[None, :, None, :] for arr in arrays]


def flow_forward(x, tau, alpha, beta, gamma, conjugate, out):
    a, b, c, omega, _, _ = band_coefficients(alpha, beta, gamma)
    _, _, _, cos_t, _, f, _ = _trig(tau, omega)
    a, b, c = _expand(a, b, c)
    x0 = x[..., 0::2]
    x1 = x[..., 1::2]
    y0 = (cos_t + f * c) * x0 + (f * b) * x1
    y1 = (-f * a) * x0 + (cos_t - f * c) * x1
    if conjugate:
        out[..., 0::2] = y1
        out[..., 1::2] = -y0
    else:
        out[..., 0::2] = y0
        out[..., 1::2] = y1


def flow_backward(x, tau, alpha, beta, gamma, conjugate, gout, gx, gtau, galpha, gbeta, ggamma,
                  need_tau, need_params):
    a, b, c, omega, rho, root = band_coefficients(alpha, beta, gamma)
    t, w, theta, cos_t, sin_t, f, small = _trig(tau, omega)
    ea, eb, ec = _expand(a, b, c)
    x0 = x[..., 0::2]
    x1 = x[..., 1::2]
    if conjugate:
        g0 = -gout[..., 1::2]
        g1 = gout[..., 0::2]
    else:
        g0 = gout[..., 0::2]
        g1 = gout[..., 1::2]
    s00 = cos_t + f * ec
    s11 = cos_t - f * ec
    gx[..., 0::2] = s00 * g0 - (f * ea) * g1
    gx[..., 1::2] = (f * eb) * g0 + s11 * g1
    if not (need_tau or need_params):
        return
    gs00 = g0 * x0
    gs01 = g0 * x1
    gs10 = g1 * x0
    gs11 = g1 * x1
    diag = gs00 - gs11
    d_cos = gs00 + gs11
    d_sinc = ec * diag + eb * gs01 - ea * gs10
    series = small | (np.abs(theta) < SERIES_EPS)
    th2 = theta * theta
    with np.errstate(divide="ignore", invalid="ignore"):
        dsinc_dw_big = (t * cos_t - f) / w
    dsinc_dw = np.where(
        small,
        t * t * (-theta / 3.0 + theta * th2 / 30.0),
        np.where(series,
                 t * t * theta * (-1.0 / 3.0 + th2 * (1.0 / 30.0 + th2 * (-1.0 / 840.0 + th2 / 45360.0))),
                 dsinc_dw_big))
    if need_tau:
        dsinc_dt = np.where(small, 1.0 - th2 / 2.0 + th2 * th2 / 24.0, cos_t)
        gt = d_cos * (-w * sin_t) + d_sinc * dsinc_dt
        gtau += gt.sum(axis=(1, 3))
    if need_params:
        g_omega = (d_cos * (-t * sin_t) + d_sinc * dsinc_dw).sum(axis=(0, 2))
        g_c = (f * diag).sum(axis=(0, 2))
        g_b = (f * gs01).sum(axis=(0, 2))
        g_a = -(f * gs10).sum(axis=(0, 2))
        galpha += g_a * a + 0.5 * (g_c * c + g_omega * omega)
        gbeta += g_b * b + 0.5 * (g_c * c + g_omega * omega)
        ggamma += g_c * (1.0 - rho * rho) * root - g_omega * omega * rho
