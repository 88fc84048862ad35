"""Closed-form transition density of the generalized Shiryaev-Roberts diffusion.

The process solves dR = dt + μ R dB with R_0 = r >= 0.  Everything here is
expressed through u = 2/(μ² x), the argument of the Whittaker functions.

Numerical conventions used throughout:

* W_{1,iβ} is always evaluated in the scaled form
  ws(β, u) = e^{π|β|/2} (e^{u/2}/u) W_{1,iβ}(u), which is O(1) where the
  unscaled value under- or overflows.  The spectral weight sinh(πβ) is
  paired with the matching e^{-πβ}.
* Spectral integrands are premultiplied by ρ(x) e^{-μ²t/8}, so quadrature
  tolerances apply to the density itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from . import special_fns as sf
from .quadrature import (
    CANCELLATION_WARNING,
    CONVERGED,
    TRUNCATED_EARLY,
    Decay,
    EvalResult,
    QuadratureSpec,
    adaptive_gk,
    check_small_time,
    integrate_finite,
    integrate_semi_infinite,
)

# standard-normal quantile used for the upper truncation of x-integrals;
# P(R_t > (r+t) e^{|μ| Z √t}) <= 2 Φ̄(Z)
_TAIL_Z = 6.5
# ρ-mass below the lower truncation point is at most e^{-_LOW_U}
_LOW_U = 60.0


class SpectrumError(ValueError):
    """λ lies on the spectrum (-∞, 0] of the generator."""


@dataclass(frozen=True)
class ModelParams:
    mu: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu != 0):
            raise ValueError("mu must be finite and nonzero")

    @property
    def mu2(self) -> float:
        return self.mu * self.mu

    @property
    def spectral_gap(self) -> float:
        return self.mu2 / 8


@dataclass(frozen=True)
class DensityQuery:
    x: float
    t: float
    r: float = 0.0

    def __post_init__(self):
        if not self.x >= 0:
            raise ValueError("x must be >= 0")
        if not self.t > 0:
            raise ValueError("t must be > 0")
        if not self.r >= 0:
            raise ValueError("r must be >= 0")


@dataclass(frozen=True)
class SpectralPoint:
    lam: complex
    alpha: complex
    beta: float | None = None

    @classmethod
    def from_lambda(cls, lam: complex, params: ModelParams) -> "SpectralPoint":
        lam = complex(lam)
        return cls(lam, complex(alpha_of_lambda(lam, params)))

    @classmethod
    def on_cut(cls, beta: float, params: ModelParams) -> "SpectralPoint":
        beta = abs(float(beta))
        return cls(complex(lambda_of_beta(beta, params)), 1j * beta, beta)


def alpha_of_lambda(lam, params: ModelParams):
    """α(λ) = sqrt(1/4 + 2λ/μ²), principal branch (cut along λ <= -μ²/8)."""
    return np.sqrt(0.25 + 2 * np.asarray(lam, complex) / params.mu2)


def lambda_of_beta(beta, params: ModelParams):
    """Point λ_β = -μ²(1 + 4β²)/8 on the branch cut."""
    beta = np.asarray(beta, float)
    return -params.mu2 * (1 + 4 * beta**2) / 8


def _u(x, params):
    return 2.0 / (params.mu2 * x)


def _out(v):
    v = np.asarray(v)
    return v[()] if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# stationary law and measures


def log_stationary_pdf(x, params: ModelParams):
    """log ρ(x); -inf at x = 0."""
    x = np.asarray(x, float)
    out = np.full(x.shape, -np.inf)
    pos = x > 0
    u = _u(x[pos], params)
    out[pos] = math.log(params.mu2 / 2) + 2 * np.log(u) - u
    return _out(out)


def stationary_pdf(x, params: ModelParams):
    """ρ(x) = e^{-2/(μ²x)} 2/(μ²x²), with the limit 0 at x = 0."""
    if np.any(np.asarray(x) < 0):
        raise ValueError("x must be >= 0")
    return _out(np.exp(log_stationary_pdf(x, params)))


def stationary_cdf(x, params: ModelParams):
    x = np.asarray(x, float)
    with np.errstate(divide="ignore"):
        return _out(np.where(x > 0, np.exp(-_u(np.where(x > 0, x, 1.0), params)), 0.0))


def speed_measure(x, params: ModelParams):
    """𝔪(x) = 2/(μ²x² 𝔰(x)); equals ρ(x)."""
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ValueError("x must be > 0")
    u = _u(x, params)
    return _out(2.0 / (params.mu2 * x**2) * np.exp(-u))


def scale_measure(x, params: ModelParams):
    """𝔰(x) = e^{2/(μ²x)}."""
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ValueError("x must be > 0")
    return _out(np.exp(_u(x, params)))


# ---------------------------------------------------------------------------
# eigenfunctions and the spectral kernel


def _ws(beta, u):
    """Scaled W on an outer grid: rows β, columns u."""
    beta = np.asarray(beta, float)
    u = np.asarray(u, float)
    return sf.whittaker_w1_imag(beta[:, None], u[None, :], scale_beta=True, scale_z=True)


def _weight_lightened(beta):
    """(8/π) β sinh(πβ)/(1+4β²) times e^{-πβ}."""
    b = np.abs(beta)
    return (8 / np.pi) * b * (-np.expm1(-2 * np.pi * b)) / (2 * (1 + 4 * b * b))


def _weight_gamma(beta):
    """(1/π²)|Γ(iβ-1/2)|² β sinh(2πβ) times e^{-πβ}, through log Γ."""
    b = np.abs(np.asarray(beta, float))
    log_g2 = 2 * sp.loggamma(1j * b - 0.5).real
    # sinh(2πb) e^{-πb} = e^{πb}(1 - e^{-4πb})/2
    return np.exp(log_g2 + np.pi * b) * b * (-np.expm1(-4 * np.pi * b)) / (2 * np.pi**2)


_WEIGHTS = {"lightened": _weight_lightened, "gamma": _weight_gamma}


def eigenfunction(x, beta, params: ModelParams, form: str = "lightened"):
    """Unit-norm continuous-spectrum eigenfunction ψ(x, λ_β), even in β.

    ``form="gamma"`` uses |Γ(iβ-1/2)| sqrt(β sinh 2πβ)/π in place of the
    simplified weight; the two agree identically.
    """
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ValueError("x must be > 0")
    b = np.abs(np.asarray(beta, float))
    bb, xx = np.broadcast_arrays(b, x)
    ws = sf.whittaker_w1_imag(bb, _u(xx, params), scale_beta=True, scale_z=True)
    return _out(np.sqrt(_WEIGHTS[form](bb)) * ws)


def spectral_integrand(beta, x, y, t, params: ModelParams, form: str = "lightened"):
    """Integrand in β of the transient part of p(x, t | y); y = 0 allowed.

    p = ρ(x) + ∫_0^∞ (returned value) dβ.  Rows are β, columns are the
    (x, y) pairs.
    """
    beta = np.atleast_1d(np.asarray(beta, float))
    x, y = np.broadcast_arrays(np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float)))
    a = params.mu2 * t / 2
    pref = np.exp(log_stationary_pdf(x, params) - params.mu2 * t / 8)
    ux = _u(x, params)
    zero = y == 0
    uy = np.where(zero, 1.0, _u(np.where(zero, 1.0, y), params))
    uniq, inv = np.unique(np.concatenate([ux, uy[~zero]]), return_inverse=True)
    ws = _ws(beta, uniq)
    wsx = ws[:, inv[: x.size]]
    wsy = np.empty((beta.size, x.size))
    wsy[:, ~zero] = ws[:, inv[x.size:]]
    # W(u) e^{u/2}/u -> 1 as u -> ∞, so the y-factor of a zero headstart is e^{π|β|/2}
    wsy[:, zero] = np.exp(np.pi * np.abs(beta) / 2)[:, None]
    g = np.exp(-a * beta**2) * _WEIGHTS[form](beta)
    return g[:, None] * wsx * wsy * pref[None, :]


def _beta_decay(ux_max: float, uy_max: float, t: float, params: ModelParams, spec: QuadratureSpec) -> Decay:
    """Gaussian envelope e^{-μ²tβ²/2 + gβ}.

    Each scaled W factor grows like e^{πβ/2} while β is below about u/2 and
    decays after that, so the growth term counts factors whose u is large.
    """
    rate = params.mu2 * t / 2
    t0 = Decay.gaussian(rate).cutoff(spec.abs_tol) * spec.truncation_slack
    growth = (np.pi / 2) * ((ux_max / 2 > t0) + (uy_max / 2 > t0))
    return Decay.gaussian(rate, growth)


def _pdf_pairs(x, y, t: float, params: ModelParams, spec: QuadratureSpec, form: str = "lightened") -> EvalResult:
    """Transition density at paired points (x_i, y_i), sharing one set of β panels."""
    flags = set(check_small_time(t))
    x, y = np.broadcast_arrays(np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float)))
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("x and r must be >= 0")
    value = np.zeros(x.shape)
    err = np.zeros(x.shape)
    pos = x > 0
    if not np.any(pos):
        return EvalResult(value, err, 0, 0.0, frozenset(flags | {CONVERGED}))
    xp, yp = x[pos], y[pos]
    rho = stationary_pdf(xp, params)
    ux_max = float(_u(xp.min(), params))
    uy_max = math.inf if np.any(yp == 0) else float(_u(yp.min(), params))
    decay = _beta_decay(ux_max, uy_max, t, params, spec)

    def f(beta):
        return spectral_integrand(beta, xp, yp, t, params, form)

    res = integrate_semi_infinite(f, spec, decay, n_panels=16)
    value[pos] = rho + np.atleast_1d(res.value)
    err[pos] = np.atleast_1d(res.err_estimate)
    flags |= set(res.flags)
    if TRUNCATED_EARLY in flags:
        flags.discard(CONVERGED)
    return EvalResult(value, err, res.nodes_used, res.truncation_point, frozenset(flags))


# width in ln x of the groups that share one β quadrature; W_{1,iβ}(u)
# oscillates in β with frequency ~ |ln u|, so far-apart points are split up
_BAND = 1.0


def _pdf_banded(x, y, t: float, params: ModelParams, spec: QuadratureSpec, form: str = "lightened") -> EvalResult:
    """_pdf_pairs on groups of nearby (x, y), merged back in input order."""
    x, y = np.broadcast_arrays(np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float)))
    with np.errstate(divide="ignore"):
        key = np.floor(np.log(np.where(x > 0, x, 1.0)) / _BAND) * 100 + np.floor(np.log(np.where(y > 0, y, 1e-300)) / _BAND)
    groups = np.unique(key)
    if groups.size == 1:
        return _pdf_pairs(x, y, t, params, spec, form)
    value = np.empty(x.shape)
    err = np.empty(x.shape)
    flags = set()
    nodes = 0
    trunc = 0.0
    converged = True
    for g in groups:
        sel = key == g
        res = _pdf_pairs(x[sel], y[sel], t, params, spec, form)
        value[sel] = res.value
        err[sel] = res.err_estimate
        flags |= set(res.flags)
        converged &= res.converged
        nodes += res.nodes_used
        trunc = max(trunc, res.truncation_point)
    if not converged:
        flags.discard(CONVERGED)
    return EvalResult(value, err, nodes, trunc, frozenset(flags))


def _squeeze_result(res: EvalResult) -> EvalResult:
    v = np.asarray(res.value)
    if v.size == 1:
        return EvalResult(float(v.ravel()[0]), float(np.asarray(res.err_estimate).ravel()[0]),
                          res.nodes_used, res.truncation_point, res.flags)
    return res


def transition_pdf(q: DensityQuery, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(),
                   form: str = "lightened") -> EvalResult:
    """p(x, t | r) from the spectral integral.

    ``form`` selects the β-weight: ``"lightened"`` uses the simplified
    β sinh(πβ)/(1+4β²) weight, ``"gamma"`` the |Γ(iβ-1/2)|² β sinh(2πβ) one.
    """
    return _squeeze_result(_pdf_pairs(q.x, q.r, q.t, params, spec, form))


def transition_pdf_grid(x, t: float, r: float, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(),
                        form: str = "lightened") -> EvalResult:
    """p(x, t | r) on an array of x; all points share the β quadrature."""
    return _pdf_banded(np.asarray(x, float), float(r), t, params, spec, form)


def transition_pdf_zero_headstart(x, t: float, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(),
                                  form: str = "lightened") -> EvalResult:
    """p(x, t | 0): the y-factor of the spectral kernel is replaced by its limit."""
    return _squeeze_result(_pdf_banded(np.asarray(x, float), 0.0, t, params, spec, form))


# ---------------------------------------------------------------------------
# integrals over x


def x_truncation(t: float, r: float, params: ModelParams):
    """[x_lo, x_hi] carrying all but a negligible part of the mass of p(., t | r)."""
    x_lo = 2.0 / (params.mu2 * (_LOW_U + np.pi**2 / (2 * params.mu2 * t)))
    x_hi = (r + t) * math.exp(_TAIL_Z * abs(params.mu) * math.sqrt(t))
    return x_lo, x_hi


def _log_x_integral(g, lo: float, hi: float, spec: QuadratureSpec, n_panels: int = 16) -> EvalResult:
    """∫_lo^hi g(x) dx computed in w = ln x; g takes and returns arrays."""

    def f(w):
        xs = np.exp(w)
        return g(xs) * xs

    return integrate_finite(f, math.log(lo), math.log(hi), spec, n_panels=n_panels)


# the W evaluations carry noise near 1e-12 relative; nested integrals never ask for less
_INNER_REL_FLOOR = 1e-11
_INNER_ABS_FLOOR = 1e-13


def _inner_spec(spec: QuadratureSpec) -> QuadratureSpec:
    """Tolerances for an integral nested inside another one."""
    return QuadratureSpec(max(spec.rel_tol * 1e-2, _INNER_REL_FLOOR), max(spec.abs_tol * 1e-2, _INNER_ABS_FLOOR),
                          spec.max_subdivisions, spec.truncation_slack)


def normalization(t: float, r: float, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(1e-8, 1e-10),
                  form: str = "lightened") -> EvalResult:
    """∫_0^∞ p(x, t | r) dx; should equal 1."""
    inner = _inner_spec(spec)
    flags = set()

    def g(xs):
        res = _pdf_banded(xs, r, t, params, inner, form)
        flags.update(res.flags)
        return res.value

    lo, hi = x_truncation(t, r, params)
    res = _log_x_integral(g, lo, hi, spec)
    return res.with_flags(*(flags - {CONVERGED}))


def cdf_on_grid(x_nodes, t: float, r: float, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(1e-9, 1e-11),
                max_width: float = 0.1):
    """P(x_k, t | r) and p(x_k, t | r) at increasing nodes x_k > 0.

    Each gap is covered by fixed 21-point panels in ln x no wider than
    ``max_width``, all evaluated in one vectorized density call.  Returns
    (cdf, err, pdf); err sums the Kronrod-Gauss differences.
    """
    from .quadrature import GAUSS_W, KRONROD_W, NODES

    xk = np.asarray(x_nodes, float)
    if xk.ndim != 1 or xk[0] <= 0 or np.any(np.diff(xk) <= 0):
        raise ValueError("nodes must be positive and increasing")
    x_lo, _ = x_truncation(t, r, params)
    edges = np.log(np.concatenate([[min(x_lo, xk[0] / 2)], xk]))
    parts = np.maximum(1, np.ceil(np.diff(edges) / max_width).astype(int))
    sub = np.concatenate([np.linspace(edges[i], edges[i + 1], parts[i] + 1)[:-1] for i in range(parts.size)] + [edges[-1:]])
    owner = np.repeat(np.arange(parts.size), parts)
    c = 0.5 * (sub[:-1] + sub[1:])
    h = 0.5 * (sub[1:] - sub[:-1])
    w = np.concatenate([(c[:, None] + h[:, None] * NODES[None, :]).ravel(), np.log(xk)])
    xs = np.exp(w)
    res = _pdf_banded(xs, r, t, params, _inner_spec(spec))
    dens = res.value
    vals = (dens[: c.size * NODES.size] * xs[: c.size * NODES.size]).reshape(c.size, NODES.size)
    kron = vals @ KRONROD_W * h
    gauss = vals @ GAUSS_W * h
    panel = np.bincount(owner, kron, minlength=parts.size)
    perr = np.bincount(owner, np.abs(kron - gauss), minlength=parts.size)
    return np.cumsum(panel), np.cumsum(perr), dens[c.size * NODES.size:]


# ---------------------------------------------------------------------------
# Green's function


def _log_gamma_c(z):
    return sp.loggamma(np.asarray(z, complex))


def _w1_scaled(alpha, z):
    """W_{1,α}(z) e^{z/2}/z for complex α, Re α >= 0."""
    alpha = np.asarray(alpha, complex)
    if np.all(alpha.imag == 0):
        return sf.whittaker_w1_real(alpha.real, z, scale_z=True).astype(complex)
    return sf.whittaker_w1_complex(alpha, z, scale_z=True)


# above this u the zero-headstart kernel is summed from its large-u series
_G0_ASYMPTOTIC_U = 600.0


def _greens_zero_asymptotic(alpha, u):
    """G_λ(x, 0) = Σ_k (3/2+α)_k (3/2-α)_k/(k! u^k), from the large-argument form of M."""
    alpha = np.asarray(alpha, complex)
    term = np.ones(alpha.shape, complex)
    total = term.copy()
    for k in range(200):
        term = term * (1.5 + alpha + k) * (1.5 - alpha + k) / ((k + 1) * u)
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def greens_function(x: float, y: float, lam, params: ModelParams):
    """Resolvent kernel G_λ(x, y) = ∫_0^∞ e^{-λt} p(x, t | y) dt for λ off (-∞, 0].

    Vectorized over λ.  y = 0 gives the zero-headstart kernel.
    """
    lam = np.asarray(lam, complex)
    if np.any((lam.imag == 0) & (lam.real <= 0)):
        raise SpectrumError("λ must lie off the spectrum (-∞, 0]")
    if x < 0 or y < 0:
        raise ValueError("x and y must be >= 0")
    if x == 0:
        return _out(np.zeros(lam.shape, complex))
    alpha = alpha_of_lambda(lam, params)
    lg = _log_gamma_c(alpha - 0.5)
    ux = float(_u(x, params))
    if y == 0:
        if ux > _G0_ASYMPTOTIC_U:
            return _out(_greens_zero_asymptotic(alpha, ux))
        m = sf.whittaker_m1_reg(alpha, ux)
        return _out(np.exp(-ux / 2 + math.log(ux) + lg) * m)
    uy = float(_u(y, params))
    u_w = max(ux, uy)
    u_m = min(ux, uy)
    ws = _w1_scaled(alpha, u_w)
    m = sf.whittaker_m1_reg(alpha, u_m)
    log_pref = -ux / 2 + math.log(ux) + uy / 2 - math.log(uy) - u_w / 2 + math.log(u_w)
    return _out(np.exp(log_pref + lg) * ws * m)


def greens_symmetry_residual(x: float, y: float, lam, params: ModelParams) -> float:
    """|G(x,y)/𝔪(x) - G(y,x)/𝔪(y)| relative to the first term."""
    a = greens_function(x, y, lam, params) / speed_measure(x, params)
    b = greens_function(y, x, lam, params) / speed_measure(y, params)
    return float(np.max(np.abs(a - b) / np.abs(a)))


def greens_final_value(x: float, y: float, params: ModelParams, lam: float = 1e-6) -> float:
    """lim_{λ→0} λ G_λ(x, y) by one Richardson step between λ and 2λ."""
    g1 = lam * greens_function(x, y, lam, params).real
    g2 = 2 * lam * greens_function(x, y, 2 * lam, params).real
    return float(2 * g1 - g2)


def greens_mass(y: float, lam: float, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(1e-12, 1e-14)) -> EvalResult:
    """∫_0^∞ G_λ(x, y) dx; equals 1/λ."""
    if not lam > 0:
        raise SpectrumError("use real λ > 0")
    alpha = float(alpha_of_lambda(lam, params).real)
    # G(x, y) vanishes like e^{-u} as x -> 0 for y > 0 but tends to 1 for y = 0
    lo = 2.0 / (params.mu2 * 700) if y > 0 else 1e-16
    # G ~ x^{-(α+3/2)} for large x; choose hi so the tail is below 1e-16 of 1/λ
    hi = max(y, 1.0) * 10 ** (16 / (alpha + 0.5) + 1)

    def g(xs):
        return np.array([greens_function(float(v), y, lam, params).real for v in xs])

    def f(w):
        xs = np.exp(w)
        return g(xs) * xs

    edges = np.geomspace(lo, hi, 32)
    if y > 0:
        edges = np.unique(np.concatenate([edges, [y]]))
    val, err, nodes, ok = adaptive_gk(f, np.log(edges), spec)
    flags = frozenset({CONVERGED}) if ok else frozenset()
    return EvalResult(float(val[0]), float(err[0]), nodes, hi, flags)


# ---------------------------------------------------------------------------
# oscillatory kernel shared by the Bessel-type representations

_THETA_GRID = np.linspace(0.0, np.pi / 2, 17)
_ENV_DROP = 45.0
# attainable absolute accuracy relative to the integrand peak
_ROUNDING_FLOOR = 1e-13


def _inner_setup(z, a_g, a_s):
    """Contour height θ and cutoff V for the kernel integral (see _oscillatory_inner)."""
    # cosh stays finite below v = 700, far past where the kernel is negligible
    vmax = np.minimum((1 + np.sqrt(1 + 4 * a_g * 70)) / (2 * a_g), 700.0)
    tau = np.linspace(0.0, 1.0, 401) ** 2
    v = vmax[:, None] * tau[None, :]
    with np.errstate(divide="ignore"):
        log_sinh2 = 2 * (v + np.log(-np.expm1(-2 * v)) - math.log(2))
    best_th = np.zeros(z.shape)
    best_m = np.full(z.shape, np.inf)
    best_le = None
    for th in _THETA_GRID:
        le = (a_s[:, None] * np.pi**2 - a_g[:, None] * v**2 + a_g[:, None] * th**2 - 2 * np.pi * a_s[:, None] * th
              - z[:, None] * np.cosh(v) * np.cos(th) + 0.5 * np.logaddexp(log_sinh2, 2 * math.log(math.sin(th) + 1e-300)))
        m = le.max(axis=1)
        sel = m < best_m
        best_th = np.where(sel, th, best_th)
        best_m = np.where(sel, m, best_m)
        best_le = le if best_le is None else np.where(sel[:, None], le, best_le)
    live = best_le > best_m[:, None] - _ENV_DROP
    last = tau.size - 1 - np.argmax(live[:, ::-1], axis=1)
    V = vmax * tau[np.minimum(last + 2, tau.size - 1)]
    return best_th, best_m, np.maximum(V, 1e-3)


def _oscillatory_inner(z, a_g, a_s, log_w, spec: QuadratureSpec):
    """e^{log_w} e^{a_s π²} ∫_0^∞ e^{-a_g u² - z cosh u} sinh u sin(2π a_s u) du, vectorized.

    The integral is taken along u = v + iθ, with θ chosen per component to
    minimise the peak of the integrand and so the cancellation against the
    e^{a_s π²} prefactor.  Returns (value, err, log peak).
    """
    z, a_g, a_s, log_w = (np.asarray(v, float) for v in np.broadcast_arrays(z, a_g, a_s, log_w))
    shape = z.shape
    z, a_g, a_s, log_w = (v.ravel() for v in (z, a_g, a_s, log_w))
    th, m, V = _inner_setup(z, a_g, a_s)
    peak = m + log_w
    # components whose peak is large cannot beat rounding of that peak; scale
    # them so the shared absolute tolerance maps onto their reachable floor
    floor = _ROUNDING_FLOOR * np.maximum(V, 1.0)
    log_c = np.minimum(0.0, math.log(spec.abs_tol) - peak - np.log(floor))

    def f(tau):
        w = tau[:, None] * V[None, :] + 1j * th[None, :]
        expo = a_s * np.pi**2 - a_g * w**2 + 2j * np.pi * a_s * w - z * np.cosh(w) + log_w + log_c
        return (np.exp(expo) * np.sinh(w)).imag * V

    val, err, _, ok = adaptive_gk(f, np.linspace(0.0, 1.0, 9), spec)
    c = np.exp(-log_c)
    return (val * c).reshape(shape), (err * c).reshape(shape), peak.reshape(shape), ok


def oscillatory_kernel(z, a, spec: QuadratureSpec = QuadratureSpec(1e-12, 1e-15)):
    """e^{aπ²} ∫_0^∞ e^{-a u² - z cosh u} sinh u sin(2πau) du."""
    val, err, _, _ = _oscillatory_inner(z, a, a, 0.0, spec)
    return _out(val), _out(err)


# ---------------------------------------------------------------------------
# double-integral (Bessel-type) representation

BESSEL_VARIANTS = ("corrected", "printed", "mu_denominator")


def transition_pdf_bessel_form(q: DensityQuery, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(1e-10, 1e-13),
                               variant: str = "corrected") -> EvalResult:
    """p(x, t | r) from the (u, ω) double integral.

    With c = 2ω/μ² the integrand in ω is
    exp{-(1/μ²)[(1/x + 1/y) coth c - 4ω]} csch²(c) K(z(ω)),
    z = 2/(μ² sinh(c) sqrt(xy)), and K the oscillatory kernel in u.
    The csch² factor comes from the Jacobian of the v -> ω substitution
    together with the factor z of the Bessel-function inversion.
    ``variant="printed"`` drops it and ``"mu_denominator"`` divides the
    second exponent by μ instead of μ²; both exist for regression tests.
    """
    if variant not in BESSEL_VARIANTS:
        raise ValueError(f"variant must be one of {BESSEL_VARIANTS}")
    flags = set(check_small_time(q.t))
    x, y, t, mu2 = q.x, q.r, q.t, params.mu2
    if x == 0:
        return EvalResult(0.0, 0.0, 0, 0.0, frozenset(flags | {CONVERGED}))
    if y == 0:
        if variant != "corrected":
            raise ValueError("the r = 0 limit exists only for the corrected form")
        return _bessel_form_zero_headstart(x, t, params, spec, flags)
    a = 2.0 / (mu2 * t)
    den = abs(params.mu) if variant == "mu_denominator" else mu2
    a_g = 2.0 / (den * t)
    S = (1 / x + 1 / y) / mu2
    log_k = (math.log(2 * math.sqrt(2) / (math.pi * math.sqrt(math.pi))) - 5 * math.log(abs(params.mu))
             - 2 * math.log(x) - 0.5 * math.log(t) - mu2 * t / 8 - (1 / x - 1 / y) / mu2)
    # lower end: S (coth c - 1) reaches 80; upper end: kernel ~ exp(-a ln²(2/z))
    c_lo = 0.5 * math.log1p(S / 40)
    c_hi = math.sqrt(80 / a) + max(0.0, -math.log(mu2 * math.sqrt(x * y) / 2)) + 3
    inner = _inner_spec(spec)

    def f(c):
        log_sinh = c + np.log(-np.expm1(-2 * c) / 2)
        coth = 1 / np.tanh(c)
        expo = log_k - S * coth + 2 * c
        if variant != "printed":
            expo = expo - 2 * log_sinh
        z = 2.0 / (den * np.exp(log_sinh) * math.sqrt(x * y))
        # dω = (μ²/2) dc
        val, _, _, ok = _oscillatory_inner(z, a_g, a, expo + math.log(mu2 / 2), inner)
        if not ok:
            flags.add("inner_unconverged")
        return val

    res = integrate_finite(f, c_lo, c_hi, spec, n_panels=12)
    out = res.with_flags(*flags)
    if "inner_unconverged" in flags:
        out = EvalResult(out.value, out.err_estimate, out.nodes_used, out.truncation_point,
                         frozenset(out.flags - {CONVERGED}))
    return out


def _bessel_form_zero_headstart(x: float, t: float, params: ModelParams, spec: QuadratureSpec, flags: set) -> EvalResult:
    """r -> 0 limit of the double integral.

    The ω-mass moves to c -> ∞; in τ = 2 S e^{-2c} the integrand tends to
    e^{-τ} K(2 sqrt(2τ)/(|μ| sqrt(x))) dτ/(2τ).  K vanishes like τ at τ = 0, so
    the lower cut at τ = e^{-30} drops O(1e-13).
    """
    mu2 = params.mu2
    a = 2.0 / (mu2 * t)
    log_k = (math.log(2 * math.sqrt(2) / (math.pi * math.sqrt(math.pi))) - 5 * math.log(abs(params.mu))
             - 2 * math.log(x) - 0.5 * math.log(t) - mu2 * t / 8 - 2 / (mu2 * x))
    # e^{2c} csch²c -> 4, dω = (μ²/2) dc, dc = dτ/(2τ)
    base = log_k + math.log(4) + math.log(mu2 / 2) - math.log(2)
    inner = _inner_spec(spec)

    def f(w):
        z = 2 * math.sqrt(2) * np.exp(w / 2) / (abs(params.mu) * math.sqrt(x))
        val, _, _, ok = _oscillatory_inner(z, a, a, base - np.exp(w), inner)
        if not ok:
            flags.add("inner_unconverged")
        return val

    res = integrate_finite(f, -30.0, math.log(80.0), spec, n_panels=12)
    out = res.with_flags(*flags)
    if "inner_unconverged" in flags:
        out = EvalResult(out.value, out.err_estimate, out.nodes_used, out.truncation_point,
                         frozenset(out.flags - {CONVERGED}))
    return out


# ---------------------------------------------------------------------------
# distribution function


def transition_cdf(q: DensityQuery, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(1e-10, 1e-12),
                   method: str = "quadrature") -> EvalResult:
    """P(x, t | r) = ∫_0^x p(u, t | r) du.

    ``method="closed_form"`` uses the stationary-plus-transient double
    integral available for μ = 1, r = 0 only.
    """
    if method == "closed_form":
        if params.mu2 != 1.0 or q.r != 0:
            raise ValueError("the closed form holds for mu = +-1 and r = 0 only")
        return cdf_zero_headstart_closed_form(q.x, q.t, spec)
    if method != "quadrature":
        raise ValueError("method must be 'quadrature' or 'closed_form'")
    flags = set(check_small_time(q.t))
    if q.x == 0:
        return EvalResult(0.0, 0.0, 0, 0.0, frozenset(flags | {CONVERGED}))
    x_lo, x_hi = x_truncation(q.t, q.r, params)
    if q.x <= x_lo:
        x_lo = q.x / 2
    inner = _inner_spec(spec)

    def g(xs):
        res = _pdf_banded(xs, q.r, q.t, params, inner)
        flags.update(res.flags - {CONVERGED})
        return res.value

    res = _log_x_integral(g, x_lo, q.x, spec, n_panels=12)
    return res.with_flags(*flags)


CDF_VARIANTS = ("corrected", "printed")


def cdf_zero_headstart_closed_form(x: float, t: float, spec: QuadratureSpec = QuadratureSpec(1e-10, 1e-12),
                                   variant: str = "corrected") -> EvalResult:
    """P(x, t | 0) at μ = 1 as e^{-2/x} plus a transient that vanishes as t grows.

    The transient is (π x^{3/2})^{-1} e^{-1/x} ∫_t^∞ s^{-1/2} e^{-s/8} K(1/x; a = 1/(2s)) ds
    with K the oscillatory kernel; its integrand is the probability current
    through x.  The s^{-1/2} e^{-s/8} weight follows from mapping the β-integral
    of the density onto K with β = 2b.  ``variant="printed"`` uses the
    weight e^{-s/4} instead, kept only for regression tests.
    """
    if variant not in CDF_VARIANTS:
        raise ValueError(f"variant must be one of {CDF_VARIANTS}")
    flags = set(check_small_time(t))
    if x <= 0:
        return EvalResult(0.0, 0.0, 0, 0.0, frozenset(flags | {CONVERGED}))
    z = 1.0 / x
    log_c = -math.log(math.pi) - 1.5 * math.log(x) - z
    inner = _inner_spec(spec)

    def f(s):
        a = 1.0 / (2 * s)
        log_w = log_c - s / 8 - 0.5 * np.log(s) if variant == "corrected" else log_c - s / 4
        val, _, _, ok = _oscillatory_inner(z, a, a, log_w, inner)
        if not ok:
            flags.add("inner_unconverged")
        return val

    rate = 1 / 8 if variant == "corrected" else 1 / 4
    res = integrate_semi_infinite(f, spec, Decay.exponential(rate), lower=t, n_panels=16)
    out = EvalResult(math.exp(-2 / x) + float(res.value), res.err_estimate, res.nodes_used,
                     res.truncation_point, frozenset(set(res.flags) | flags))
    if "inner_unconverged" in flags:
        out = EvalResult(out.value, out.err_estimate, out.nodes_used, out.truncation_point,
                         frozenset(out.flags - {CONVERGED}))
    return out


def probability_current_zero_headstart(x: float, s, spec: QuadratureSpec = QuadratureSpec(1e-12, 1e-15)):
    """-∂_t P(x, s | 0) at μ = 1, vectorized in s."""
    s = np.asarray(s, float)
    z = 1.0 / x
    a = 1.0 / (2 * s)
    log_w = -math.log(math.pi) - 1.5 * math.log(x) - z - s / 8 - 0.5 * np.log(s)
    val, _, _, _ = _oscillatory_inner(z, a, a, log_w, spec)
    return _out(val)


def laplace_image_cdf_peskir(x: float, lam: float) -> float:
    """∫_0^∞ e^{-λt} P(x, t | 0) dt at μ = 1:
    (1/λ)[1 - sqrt(2π/x) e^{-1/x} I_{α(λ)}(1/x)]."""
    if not (lam > 0 and x > 0):
        raise ValueError("need lam > 0 and x > 0")
    alpha = math.sqrt(0.25 + 2 * lam)
    return (1.0 - math.sqrt(2 * math.pi / x) * sp.ive(alpha, 1.0 / x)) / lam


def cdf_laplace_transform_numeric(x: float, lam: float, t_split: float = 0.1,
                                  spec: QuadratureSpec = QuadratureSpec(1e-10, 1e-13)) -> EvalResult:
    """∫_0^∞ e^{-λt} P(x, t | 0) dt at μ = 1 by time-domain quadrature.

    Below t_split the cdf is replaced by 1, which is off by at most the bound
    on P(R_t > x) returned in err_estimate.  Above it the cdf is written as
    e^{-2/x} plus the integrated current J, and Fubini turns the double
    integral into ∫ J(s) (e^{-λ t_split} - e^{-λ s})/λ ds.
    """
    if not (lam > 0 and x > 0):
        raise ValueError("need lam > 0 and x > 0")
    head = -math.expm1(-lam * t_split) / lam
    head_err = t_split * _tail_prob(x, 0.0, t_split, ModelParams(1.0))
    e0 = math.exp(-lam * t_split)

    def f(s):
        j = probability_current_zero_headstart(x, s, _inner_spec(spec))
        return j * (e0 - np.exp(-lam * s)) / lam

    res = integrate_semi_infinite(f, spec, Decay.exponential(1 / 8), lower=t_split, n_panels=16)
    value = head + math.exp(-2 / x) * e0 / lam + float(res.value)
    return EvalResult(value, float(res.err_estimate) + head_err, res.nodes_used, res.truncation_point, res.flags)


# ---------------------------------------------------------------------------
# identities certifying the spectral representation


def becker_identity_sides(x1: float, x2: float, s: float, spec: QuadratureSpec = QuadratureSpec(1e-12, 1e-13),
                          beta_max: float = 2000.0):
    """Both sides of the resolvent identity for ∫ β sinh(πβ) W W/((1+4β²)(s+β²)) dβ.

    For large β the integrand tends to sqrt(x1 x2) cos(β ln(x1/x2))/(8(s+β²))
    plus a term oscillating like cos(β ln(x1 x2) + O(β ln β)).  The
    non-oscillating model is subtracted on [0, beta_max] and its integral over
    [0, ∞) added back in closed form; what is dropped beyond beta_max is
    O(beta_max^{-2}).
    Returns (lhs, rhs, err_estimate).
    """
    if not (x1 > 0 and x2 > 0):
        raise ValueError("x1, x2 must be positive")
    if s == 0.25 or s <= 0:
        raise ValueError("s must be positive and != 1/4")
    k = math.log(x1 / x2)
    amp = math.sqrt(x1 * x2) / 8

    def model(beta):
        return amp * np.cos(k * beta) / (s + beta**2)

    def f(beta):
        w = sf.whittaker_w1_imag(np.stack([beta, beta], 1), np.array([[x1, x2]]), scale_beta=True)
        # β sinh(πβ) e^{-πβ} / ((1+4β²)(s+β²)) times the scaled pair
        wt = beta * (-np.expm1(-2 * np.pi * beta)) / (2 * (1 + 4 * beta**2) * (s + beta**2))
        return wt * w[:, 0] * w[:, 1] - model(beta)

    edges = np.concatenate([np.linspace(0, 20, 41), np.geomspace(20, beta_max, 400)[1:]])
    body, err, _, _ = adaptive_gk(f, edges, spec)
    # ∫_0^∞ cos(kβ)/(s+β²) dβ = π e^{-|k|√s}/(2√s)
    rs = math.sqrt(s)
    model_total = amp * math.pi / (2 * rs) * math.exp(-abs(k) * rs)
    lhs = float(body[0]) + model_total
    big, small = max(x1, x2), min(x1, x2)
    b = math.sqrt(s)
    ws = float(sf.whittaker_w1_real(b, big))
    m = complex(sf.whittaker_M_reg(sf.WhittakerIndex.real(b), small)).real
    rhs = (math.pi / 8) * math.exp(sp.loggamma(b - 0.5).real) * np.sign(sp.gamma(b - 0.5)) * ws * m \
        - (math.pi / 2) * math.exp(-(x1 + x2) / 2) * x1 * x2 / (4 * s - 1)
    return lhs, float(rhs), float(err[0]) + amp / beta_max**2


def becker_identity_residual(x1: float, x2: float, s: float, spec: QuadratureSpec = QuadratureSpec(1e-12, 1e-13)) -> float:
    lhs, rhs, _ = becker_identity_sides(x1, x2, s, spec)
    return abs(lhs - rhs)


def hostler_identity_sides(x1: float, x2: float, b: float, c: float = 1.0, variant: str = "sum",
                           spec: QuadratureSpec = QuadratureSpec(1e-12, 1e-15)):
    """Γ(b - 1/2) W_{1,b}(c x1) 𝓜_{1,b}(c x2) against its hyperbolic-kernel integral.

    Real b > 1/2 keeps the integral convergent at v = 0.  ``variant="product"``
    puts x1 x2 in the exponent with no factor c, the commonly tabulated
    misprint of the sum (c/2)(x1 + x2); it diverges unless sqrt(x1 x2) > 2c,
    in which case rhs is inf.  Returns (lhs, rhs).
    """
    if not x1 > x2 > 0:
        raise ValueError("need x1 > x2 > 0")
    if not b > 0.5:
        raise ValueError("need real b > 1/2")
    idx = sf.WhittakerIndex.real(b)
    lhs = math.gamma(b - 0.5) * float(sf.whittaker_W(idx, c * x1)) * complex(sf.whittaker_M_reg(idx, c * x2)).real
    g = math.sqrt(x1 * x2)
    e_coef = (c / 2) * (x1 + x2) if variant == "sum" else 0.5 * x1 * x2

    def f(v):
        arg = c * np.sinh(v) * g
        # I e^{-arg} keeps the exponentials balanced
        with np.errstate(divide="ignore", invalid="ignore"):
            coth2 = 1 / np.tanh(v / 2) ** 2
            out = np.exp(-e_coef * np.cosh(v) + arg) * sp.ive(2 * b, arg) * coth2
        return np.where(v > 0, out, 0.0)

    # for large v the integrand behaves like exp(-(e_coef - c g) e^v / 2)
    if e_coef <= c * g:
        return lhs, math.inf
    v_hi = math.acosh(1 + 80 / (e_coef - c * g)) + 1
    val, _, _, _ = adaptive_gk(f, np.concatenate([[0.0], np.geomspace(1e-6, v_hi, 24)]), spec)
    return lhs, float(c * g * val[0])


# ---------------------------------------------------------------------------
# semigroup checks


def _tail_prob(level: float, r: float, t: float, params: ModelParams) -> float:
    """Upper bound on P(R_t^r > level)."""
    if level <= r + t:
        return 1.0
    return float(2 * sp.ndtr(-math.log(level / (r + t)) / (abs(params.mu) * math.sqrt(t))))


def chapman_kolmogorov(x: float, t: float, s: float, r: float, params: ModelParams, u_max: float = 30.0,
                       spec: QuadratureSpec = QuadratureSpec(1e-9, 1e-12)):
    """(∫_0^{u_max} p(x,t|u) p(u,s|r) du, p(x,t+s|r), tail bound)."""
    inner = _inner_spec(spec)
    u_lo, _ = x_truncation(s, r, params)

    def g(us):
        a = _pdf_banded(np.full(us.shape, x), us, t, params, inner).value
        b = _pdf_banded(us, r, s, params, inner).value
        return a * b

    res = _log_x_integral(g, u_lo, u_max, spec, n_panels=16)
    direct = float(_pdf_pairs(x, r, t + s, params, inner).value[0])
    # p(x, t | u) is largest near u = u_max on the tail; sampled, not bounded
    sup = float(np.max(_pdf_pairs(np.full(8, x), np.geomspace(u_max, 50 * u_max, 8), t, params, inner).value))
    tail = sup * _tail_prob(u_max, r, s, params)
    return float(res.value), direct, tail


def stationarity_residual(x: float, t: float, params: ModelParams, spec: QuadratureSpec = QuadratureSpec(1e-9, 1e-12)) -> float:
    """|∫_0^∞ p(x,t|y) ρ(y) dy - ρ(x)|."""
    inner = _inner_spec(spec)
    y_lo = 2.0 / (params.mu2 * 700)
    y_hi = (x + t) * math.exp(7 * abs(params.mu) * math.sqrt(t))

    def g(ys):
        return _pdf_banded(np.full(ys.shape, x), ys, t, params, inner).value * stationary_pdf(ys, params)

    res = _log_x_integral(g, y_lo, y_hi, spec, n_panels=16)
    return abs(float(res.value) - float(stationary_pdf(x, params)))
