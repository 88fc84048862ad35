"""Gamma and Whittaker functions for first index 1.

The imaginary-index function W_{1,iβ}(z) is the workhorse of the spectral
density, so it gets three evaluation routes:

* ``kummer``: twice the real part of one conjugate term of the connection
  formula, with M from its Kummer series.  Used in the oscillatory zone
  z < 2|β| when |β| is not small.
* ``contour``: the Macdonald-function form
  W_{1,b}(2s) = sqrt(2s/π) [(s - 1/2) K_b(s) - s K_b'(s)], with K_{iβ}
  integrated by the trapezoid rule on a horizontal line through the saddle
  point of e^{-s cosh t + iβt}.  Used everywhere else.
* real index: the same Macdonald form with ``scipy.special.kve``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special as sp

ComplexValue = complex

EPS = np.finfo(float).eps
LOG_MAX = math.log(np.finfo(float).max)
# z beyond which e^{z/2} in the regularized M is not representable
M_OVERFLOW_Z = 2.0 * LOG_MAX

# route switch for imaginary index: the contour is used for |β| <= this
# value or for z >= KUMMER_RATIO*|β|
SMALL_BETA = 4.0
KUMMER_RATIO = 2.0
# cap on the saddle angle so the strip of analyticity stays wide enough
_THETA_CAP = math.pi / 2 - 0.6
_TAIL_LOG = 45.0
# points per vectorized evaluation; the contour route allocates points x nodes
_CHUNK = 8192


class PoleError(ValueError):
    """Gamma function evaluated at a nonpositive integer."""


class WhittakerOverflowError(OverflowError):
    """The regularized M function exceeds the double range."""

    def __init__(self, z: float):
        super().__init__(
            f"M_reg overflows for z={z:g}; largest representable argument is about {M_OVERFLOW_Z:.1f}"
        )
        self.threshold = M_OVERFLOW_Z


class CancellationError(ArithmeticError):
    """Estimated rounding error of a Whittaker value exceeds the tolerance."""


@dataclass(frozen=True)
class WhittakerIndex:
    """Index pair (a, b); b must be real or purely imaginary."""

    a: float
    b: complex

    def __post_init__(self):
        b = complex(self.b)
        object.__setattr__(self, "b", b)
        real_part = abs(b.real) <= 1e-13 * max(1.0, abs(b))
        imag_part = abs(b.imag) <= 1e-13 * max(1.0, abs(b))
        if not (real_part or imag_part):
            raise ValueError(f"second index must be real or purely imaginary, got {b}")

    @property
    def is_imaginary(self) -> bool:
        return self.b.imag != 0.0 and abs(self.b.real) <= 1e-13 * abs(self.b)

    @classmethod
    def imaginary(cls, beta: float, a: float = 1.0) -> "WhittakerIndex":
        return cls(a, 1j * beta)

    @classmethod
    def real(cls, alpha: float, a: float = 1.0) -> "WhittakerIndex":
        return cls(a, complex(alpha))


class WhittakerValue(NamedTuple):
    value: float
    imag_residual: float
    err_estimate: float
    route: str


def log_gamma(z):
    """Principal-branch log Γ(z); raises :class:`PoleError` at 0, -1, -2, ..."""
    z = np.asarray(z, dtype=complex)
    pole = (z.imag == 0) & (z.real <= 0) & (z.real == np.round(z.real))
    if np.any(pole):
        raise PoleError(f"Gamma has a pole at {z[pole].ravel()[0].real:g}")
    out = sp.loggamma(z)
    return out[()] if out.ndim == 0 else out


def gamma_abs_sq_shifted(beta):
    """|Γ(iβ - 1/2)|² = 4π / ((1 + 4β²) cosh πβ)."""
    beta = np.asarray(beta, dtype=float)
    # 1/cosh written as 2e^{-πβ}/(1+e^{-2πβ}) so large β underflows cleanly
    ab = np.abs(beta)
    sech = 2.0 * np.exp(-np.pi * ab) / (1.0 + np.exp(-2.0 * np.pi * ab))
    out = 4.0 * np.pi * sech / (1.0 + 4.0 * beta**2)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# regularized M via the Kummer series


def _kummer_sum(a, c, z, max_terms=20000):
    """Sum 1F1(a; c; z) term by term for arrays of positive z.

    Returns (sum, sum of |terms|).  ``a`` and ``c`` may be arrays broadcast
    against ``z``.
    """
    a, c, z = np.broadcast_arrays(np.asarray(a, complex), np.asarray(c, complex), np.asarray(z, float))
    shape = z.shape
    a, c, z = (np.atleast_1d(v).ravel() for v in (a, c, z))
    term = np.ones(z.shape, complex)
    total = term.copy()
    absum = np.ones(z.shape)
    live = np.ones(z.shape, bool)
    n = 0
    while np.any(live):
        if n >= max_terms:
            raise ArithmeticError("Kummer series did not converge")
        idx = np.nonzero(live)
        term[idx] = term[idx] * (a[idx] + n) / (c[idx] + n) * z[idx] / (n + 1)
        total[idx] += term[idx]
        mag = np.abs(term[idx])
        absum[idx] += mag
        n += 1
        # stop once past the peak and the tail is below rounding
        done = (mag <= EPS * 1e-2 * np.abs(total[idx])) & (n > z[idx])
        done |= mag == 0
        live[idx[0][done]] = False
    return total.reshape(shape), absum.reshape(shape)


def _m_reg_log_prefactor(a, b, z):
    return -z / 2 + (b + 0.5) * np.log(z) - log_gamma(1 + 2 * b)


def whittaker_M_reg(idx: WhittakerIndex, z):
    """Regularized Whittaker 𝓜_{a,b}(z) = M_{a,b}(z)/Γ(1+2b) for z > 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be positive")
    if np.any(z > M_OVERFLOW_Z):
        raise WhittakerOverflowError(float(np.max(z)))
    a, b = idx.a, idx.b
    total, _ = _kummer_sum(0.5 + b - a, 1 + 2 * b, z)
    out = np.exp(_m_reg_log_prefactor(a, b, z)) * total
    return out[()] if out.ndim == 0 else out


def whittaker_m1_reg(b, z):
    """Vectorized 𝓜_{1,b}(z) for complex b with Re b >= 0 (resolvent use)."""
    b, z = np.broadcast_arrays(np.asarray(b, complex), np.asarray(z, float))
    if np.any(z <= 0):
        raise ValueError("z must be positive")
    if np.any(z > M_OVERFLOW_Z):
        raise WhittakerOverflowError(float(np.max(z)))
    total, _ = _kummer_sum(b - 0.5, 1 + 2 * b, z)
    out = np.exp(-z / 2 + (b + 0.5) * np.log(z) - sp.loggamma(1 + 2 * b)) * total
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# W for imaginary index


def _w_imag_kummer(beta, z, log_scale):
    """2 Re[C M_{1,iβ}(z)] times exp(log_scale); also returns error data."""
    b = 1j * beta
    total, absum = _kummer_sum(-0.5 + b, 1 + 2 * b, z)
    logc = sp.loggamma(-2 * b) - sp.loggamma(-b - 0.5)
    logp = logc - z / 2 + (0.5 + b) * np.log(z) + log_scale
    pref = np.exp(logp)
    half = pref * total
    value = 2 * half.real
    err = 2 * np.abs(pref) * absum * EPS * 8
    amplitude = 2 * np.abs(half)
    return value, err, amplitude


def _w_imag_kummer_residual(beta, z):
    """Imaginary part left over when both conjugate terms are summed independently."""
    out = np.zeros(np.shape(z), complex)
    for sgn in (1.0, -1.0):
        b = 1j * sgn * beta
        total, _ = _kummer_sum(-0.5 + b, 1 + 2 * b, z)
        logc = sp.loggamma(-2 * b) - sp.loggamma(-b - 0.5)
        out = out + np.exp(logc - z / 2 + (0.5 + b) * np.log(z)) * total
    return out


def _w_imag_contour(beta, z, log_scale, full_line=False):
    """Trapezoid rule for the Macdonald form on a line through the saddle."""
    beta = np.asarray(beta, float)
    z = np.asarray(z, float)
    s = z / 2
    ab = np.abs(beta)
    theta = np.arcsin(np.minimum(ab / s, math.sin(_THETA_CAP))) * np.sign(beta)
    ct = np.cos(theta)
    sig_max = np.arccosh(1 + _TAIL_LOG / (s * ct))
    h = np.minimum(0.06, 0.5 / np.sqrt(s * ct))
    nk = np.ceil(sig_max / h).astype(int) + 1
    kmax = int(nk.max())
    k = np.arange(kmax)
    if full_line:
        k = np.arange(-kmax + 1, kmax)
    sig = h[:, None] * k[None, :]
    t = sig + 1j * theta[:, None]
    # cosh t - 1 = 2 sinh^2(t/2) keeps the e^{s} scaling exact for large s
    cm1 = 2 * np.sinh(t / 2) ** 2
    g = (s[:, None] * (cm1 + 2) - 0.5) * np.exp(-s[:, None] * cm1 + 1j * beta[:, None] * t)
    g[np.abs(k)[None, :] >= nk[:, None]] = 0.0
    if full_line:
        # symmetric sum over the whole line counts each half once
        integral = h * g.sum(axis=1) / 2
        mag = h * np.abs(g).sum(axis=1) / 2
    else:
        integral = h * (g[:, 0] / 2 + g[:, 1:].sum(axis=1))
        mag = h * (np.abs(g[:, 0]) / 2 + np.abs(g[:, 1:]).sum(axis=1))
    # e^{-s} undoes the scaling inside the integrand
    fac = np.sqrt(2 * s / np.pi) * np.exp(log_scale - s)
    if not full_line:
        integral = integral.real
    value = fac * integral
    err = fac * mag * EPS * 8
    return value, err, fac * mag


def _w_imag(beta, z, scale_beta=False, scale_z=False):
    """Vectorized W_{1,iβ}(z) with optional scaling.

    ``scale_beta`` multiplies by e^{π|β|/2}; ``scale_z`` by e^{z/2}/z.
    Returns (value, abs error estimate, oscillation amplitude).
    """
    beta, z = np.broadcast_arrays(np.asarray(beta, float), np.asarray(z, float))
    shape = beta.shape
    beta = beta.ravel()
    z = z.ravel()
    log_scale = np.zeros(z.shape)
    if scale_beta:
        log_scale = log_scale + np.pi * np.abs(beta) / 2
    if scale_z:
        log_scale = log_scale + z / 2 - np.log(z)
    value = np.empty(z.shape)
    err = np.empty(z.shape)
    amp = np.empty(z.shape)
    use_k = (np.abs(beta) > SMALL_BETA) & (z < KUMMER_RATIO * np.abs(beta))
    for mask, fn in ((use_k, _w_imag_kummer), (~use_k, _w_imag_contour)):
        idx = np.nonzero(mask)[0]
        for lo in range(0, idx.size, _CHUNK):
            sel = idx[lo:lo + _CHUNK]
            value[sel], err[sel], amp[sel] = fn(beta[sel], z[sel], log_scale[sel])
    return value.reshape(shape), err.reshape(shape), amp.reshape(shape)


def whittaker_w1_imag(beta, z, scale_beta=False, scale_z=False):
    """Vectorized W_{1,iβ}(z) for real β and z > 0 (no diagnostics)."""
    value, _, _ = _w_imag(beta, z, scale_beta, scale_z)
    return value


# ---------------------------------------------------------------------------
# W for real and complex index


def whittaker_w1_real(alpha, z, scale_z=False):
    """W_{1,α}(z) for real α, vectorized; ``scale_z`` multiplies by e^{z/2}/z."""
    alpha, z = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(z, float))
    s = z / 2
    # kve = K e^{s}; K' = -(K_{α-1} + K_{α+1})/2
    bracket = (s - 0.5) * sp.kve(alpha, s) + s / 2 * (sp.kve(alpha - 1, s) + sp.kve(alpha + 1, s))
    out = np.sqrt(2 * s / np.pi) * bracket
    if scale_z:
        return out / z
    return out * np.exp(-s)


def whittaker_w1_complex(alpha, z, scale_z=False):
    """W_{1,α}(z) for complex α with Re α ≥ 0 (Green's function off the real axis).

    Uses ∫_0^∞ e^{-s cosh t}(s - 1/2 + s cosh t) cosh(αt) dt on the real line.
    """
    alpha, z = np.broadcast_arrays(np.asarray(alpha, complex), np.asarray(z, float))
    shape = z.shape
    alpha = alpha.ravel()
    z = z.ravel()
    s = z / 2
    ar = np.abs(alpha.real)
    ai = np.abs(alpha.imag)
    # tail: s(cosh t - 1) - Re α t >= 45 + log-terms
    t_hi = np.arccosh(1 + (_TAIL_LOG + 10) / s)
    for _ in range(60):
        grow = s * (np.cosh(t_hi) - 1) - ar * t_hi
        short = grow < _TAIL_LOG
        if not np.any(short):
            break
        t_hi = np.where(short, t_hi * 1.25, t_hi)
    h = np.minimum(0.08, 2 * np.pi * 1.2 / (40 + 1.2 * (ai + 1)))
    nk = np.ceil(t_hi / h).astype(int) + 1
    k = np.arange(int(nk.max()))
    t = h[:, None] * k[None, :]
    cm1 = np.cosh(t) - 1
    g = np.exp(-s[:, None] * cm1) * (s[:, None] * (cm1 + 2) - 0.5) * np.cosh(alpha[:, None] * t)
    g[k[None, :] >= nk[:, None]] = 0.0
    integral = h * (g[:, 0] / 2 + g[:, 1:].sum(axis=1))
    out = np.sqrt(2 * s / np.pi) * integral
    if scale_z:
        out = out / z
    else:
        out = out * np.exp(-s)
    return out.reshape(shape)


def whittaker_W_diag(idx: WhittakerIndex, z: float, rtol: float = 1e-8) -> WhittakerValue:
    """Scalar W_{a,b}(z) with diagnostics; a must be 1.

    Raises :class:`CancellationError` if the rounding estimate exceeds
    ``rtol`` relative to the local oscillation amplitude.
    """
    if idx.a != 1:
        raise NotImplementedError("only first index 1 is supported")
    z = float(z)
    if z <= 0:
        raise ValueError("z must be positive")
    if not idx.is_imaginary:
        alpha = idx.b.real
        value = float(whittaker_w1_real(abs(alpha), z))
        return WhittakerValue(value, 0.0, 4 * EPS * abs(value), "real_index")
    beta = idx.b.imag
    v, e, amp = _w_imag(np.array([beta]), np.array([z]))
    value, err, amp = float(v[0]), float(e[0]), float(amp[0])
    route = "kummer" if (abs(beta) > SMALL_BETA and z < KUMMER_RATIO * abs(beta)) else "contour"
    if route == "kummer":
        both = _w_imag_kummer_residual(np.array([beta]), np.array([z]))[0]
        resid = abs(both.imag)
    else:
        full = _w_imag_contour(np.array([beta]), np.array([z]), np.zeros(1), full_line=True)[0][0]
        resid = abs(complex(full).imag)
    if err > rtol * max(amp, abs(value)) or not math.isfinite(value):
        raise CancellationError(
            f"W_(1,{beta:g}i)({z:g}): rounding estimate {err:.2e} vs amplitude {amp:.2e}"
        )
    return WhittakerValue(value, resid, err, route)


def whittaker_W(idx: WhittakerIndex, z):
    """Whittaker W_{a,b}(z) (real) for a = 1 and real or imaginary b."""
    if idx.a != 1:
        raise NotImplementedError("only first index 1 is supported")
    z = np.asarray(z, float)
    if np.any(z <= 0):
        raise ValueError("z must be positive")
    if idx.is_imaginary:
        out = whittaker_w1_imag(np.full(z.shape, idx.b.imag), z)
    else:
        out = whittaker_w1_real(abs(idx.b.real), z)
    return out[()] if out.ndim == 0 else out


def wronskian_check(idx: WhittakerIndex, z: float, h: float) -> float:
    """|W·𝓜' - W'·𝓜 - 1/Γ(b - a + 1/2)| with central differences of step h."""
    if not z > h > 0:
        raise ValueError("need z > h > 0")

    def w(x):
        return float(whittaker_W(idx, x))

    def m(x):
        return complex(whittaker_M_reg(idx, x))

    dw = (w(z + h) - w(z - h)) / (2 * h)
    dm = (m(z + h) - m(z - h)) / (2 * h)
    numeric = w(z) * dm - dw * m(z)
    arg = idx.b - idx.a + 0.5
    if arg.imag == 0 and arg.real <= 0 and arg.real == round(arg.real):
        rhs = 0.0
    else:
        rhs = np.exp(-log_gamma(arg))
    return float(abs(numeric - rhs))


def bessel_i_half_closed(z):
    """I_{1/2}(z) = sqrt(2/(πz)) sinh z."""
    z = np.asarray(z, float)
    return np.sqrt(2 / (np.pi * z)) * np.sinh(z)
