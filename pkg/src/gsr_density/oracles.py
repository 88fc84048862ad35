"""Independent numerical references for the closed-form density.

Three routes that share no code path with the spectral integral:

* Monte Carlo simulation of the SDE dR = dt + μ R dB,
* a finite-volume solver for the forward equation,
* fixed-Talbot inversion of the resolvent kernel.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, linalg, stats

from .gsr_core import (DensityQuery, ModelParams, cdf_on_grid, greens_function, transition_pdf_bessel_form,
                       transition_pdf_grid, x_truncation)

# ---------------------------------------------------------------------------
# Monte Carlo

SCHEMES = ("euler_maruyama", "log_exact_gbm_composite")
# paths per RNG stream; fixed so output does not depend on the worker count
BLOCK_PATHS = 1 << 16


@dataclass(frozen=True)
class SimSpec:
    n_paths: int
    n_steps: int
    scheme: str = "log_exact_gbm_composite"
    seed: int = 20240611
    zero_noise: bool = False
    bias_paths: int = 20000

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SimResult:
    samples: np.ndarray
    clamp_count: int
    bias_estimate: float
    spec: SimSpec
    diagnostics: dict = field(default_factory=dict)


def default_threads() -> int:
    env = os.environ.get("GSR_DENSITY_THREADS")
    if env:
        return max(1, int(env))
    return 1


def _step(R, z, dt, mu, scheme, zero_noise):
    """One step of either scheme; returns (R, clamps)."""
    if scheme == "log_exact_gbm_composite":
        if zero_noise:
            lam = 1.0
        else:
            # exact one-step likelihood-ratio factor; trapezoid for ∫ Λ_t/Λ_s ds
            lam = np.exp(mu * math.sqrt(dt) * z - 0.5 * mu * mu * dt)
        return lam * R + 0.5 * dt * (lam + 1.0), 0
    R = R + dt + mu * R * math.sqrt(dt) * z
    neg = R < 0
    return np.where(neg, 0.0, R), int(neg.sum())


def _run_block(ss: np.random.SeedSequence, n: int, r: float, t: float, mu: float, n_steps: int,
               scheme: str, zero_noise: bool, coupled: bool):
    """Simulate n paths; with ``coupled`` also return the endpoint at half the steps
    driven by the same Brownian path."""
    rng = np.random.Generator(np.random.Philox(ss))
    dt = t / n_steps
    R = np.full(n, float(r))
    Rc = np.full(n, float(r)) if coupled else None
    clamps = 0
    pending = None
    for k in range(n_steps):
        z = np.zeros(n) if zero_noise else rng.standard_normal(n)
        R, c = _step(R, z, dt, mu, scheme, zero_noise)
        clamps += c
        if coupled:
            if pending is None:
                pending = z
            else:
                zc = (pending + z) / math.sqrt(2.0)
                Rc, _ = _step(Rc, zc, 2 * dt, mu, scheme, zero_noise)
                pending = None
    return R, Rc, clamps


def simulate_endpoints(params: ModelParams, r: float, t: float, spec: SimSpec, threads: int | None = None) -> SimResult:
    """Draw n_paths approximate samples of R_t started at r.

    The step-bias diagnostic is a Richardson estimate of the weak error of the
    second moment, from a coupled run with n_steps and 2 n_steps on a
    separate stream of bias_paths paths.
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    if r < 0:
        raise ValueError("r must be >= 0")
    threads = threads or default_threads()
    root = np.random.SeedSequence(spec.seed)
    main_ss, bias_ss = root.spawn(2)
    n_blocks = -(-spec.n_paths // BLOCK_PATHS)
    sizes = [min(BLOCK_PATHS, spec.n_paths - i * BLOCK_PATHS) for i in range(n_blocks)]
    streams = main_ss.spawn(n_blocks)
    mu = params.mu

    def work(i):
        return _run_block(streams[i], sizes[i], r, t, mu, spec.n_steps, spec.scheme, spec.zero_noise, False)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    else:
        parts = [work(i) for i in range(n_blocks)]
    samples = np.concatenate([p[0] for p in parts])
    clamps = sum(p[2] for p in parts)

    bias = bias_se = 0.0
    if not spec.zero_noise and spec.bias_paths > 0:
        nb = min(spec.bias_paths, spec.n_paths)
        fine, coarse, _ = _run_block(bias_ss, nb, r, t, mu, 2 * spec.n_steps, spec.scheme, False, True)
        # first-order weak error: bias(n) ≈ 2 (m(n) - m(2n))
        diff = 2 * (coarse**2 - fine**2)
        bias = float(diff.mean())
        bias_se = float(diff.std(ddof=1) / math.sqrt(nb)) if nb > 1 else math.inf
    diag = {
        "mean": float(samples.mean()),
        "sd": float(samples.std(ddof=1)) if samples.size > 1 else 0.0,
        "clamp_count": clamps,
        "second_moment_bias": bias,
        "second_moment_bias_se": bias_se,
        "blocks": n_blocks,
    }
    return SimResult(samples, clamps, bias, spec, diag)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    pvalue: float
    critical_1pct: float

    @property
    def passed(self) -> bool:
        return self.pvalue > 0.01


def cdf_interpolant(params: ModelParams, r: float, t: float, n_nodes: int = 120):
    """P(x, t | r) as a cubic Hermite interpolant in ln x.

    Node values come from panel quadrature of the density and node slopes
    are x p(x), so the interpolant is fourth-order accurate.
    """
    x_lo, x_hi = x_truncation(t, r, params)
    nodes = np.geomspace(x_lo, x_hi, n_nodes)
    cdf, _, dens = cdf_on_grid(nodes, t, r, params)
    w = np.log(nodes)
    spline = interpolate.CubicHermiteSpline(w, cdf, dens * nodes)

    def P(x):
        x = np.asarray(x, float)
        out = np.ones(x.shape)
        out[x <= nodes[0]] = 0.0
        mid = (x > nodes[0]) & (x < nodes[-1])
        out[mid] = np.clip(spline(np.log(x[mid])), 0.0, 1.0)
        return out

    return P


def ks_test(samples: np.ndarray, cdf) -> KsResult:
    """One-sample Kolmogorov-Smirnov test with the exact finite-n distribution."""
    x = np.sort(np.asarray(samples, float))
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    return KsResult(d, float(stats.kstwo.sf(d, n)), float(stats.kstwo.isf(0.01, n)))


# ---------------------------------------------------------------------------
# forward equation


class PdeInstabilityError(RuntimeError):
    """Mass drift or negativity beyond tolerance during time stepping."""


@dataclass(frozen=True)
class PdeSpec:
    n_x: int = 4800
    n_t: int = 1000
    theta: float = 0.5
    x_max: float | None = None
    x_min: float | None = None
    rannacher_steps: int = 2
    # graded implicit-Euler phase used for r = 0, where the drift 1/x is stiff
    startup_time: float = 0.1
    startup_steps: int = 2000
    init: str = "delta"
    init_width: float = 0.02

    def __post_init__(self):
        if self.n_x < 3 or self.n_t < 1:
            raise ValueError("need n_x >= 3 and n_t >= 1")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must be in [0, 1]")
        if self.x_max is not None and not self.x_max > 0:
            raise ValueError("x_max must be > 0")
        if self.init not in ("delta", "gaussian"):
            raise ValueError("init must be 'delta' or 'gaussian'")


@dataclass
class PdeResult:
    x: np.ndarray
    p: np.ndarray
    mass_history: np.ndarray
    max_mass_drift: float
    boundary_mass: float
    h: float

    def __call__(self, x):
        """Density at arbitrary points by cubic interpolation in ln x."""
        spline = interpolate.CubicSpline(np.log(self.x), self.p)
        return spline(np.log(np.asarray(x, float)))


def _bernoulli(z):
    """B(z) = z/(e^z - 1) with the removable singularity filled in."""
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    with np.errstate(over="ignore"):
        return np.where(small, 1 - z / 2, zs / np.expm1(zs))


def _pde_operator(xi_faces: np.ndarray, h: float, mu2: float):
    """Banded (3, n) form of dq/dt = A q in ξ = ln x with zero-flux ends.

    q = x p is the density in ξ and the flux is
    J = (e^{-ξ} - μ²/2) q - (μ²/2) ∂_ξ q, discretized with Scharfetter-Gummel
    weights so the scheme stays positive when drift dominates.
    """
    n = xi_faces.size - 1
    D = mu2 / 2
    inner = xi_faces[1:-1]
    v = np.exp(-inner) - D
    pe = v * h / D
    # J_{i+1/2} = (D/h) [B(-Pe) q_i - B(Pe) q_{i+1}]
    a_lo = D / h * _bernoulli(-pe)  # coefficient on q_i
    a_hi = D / h * _bernoulli(pe)   # coefficient on q_{i+1}
    ab = np.zeros((3, n))
    # dq_i/dt = -(J_{i+1/2} - J_{i-1/2})/h
    diag = np.zeros(n)
    diag[:-1] -= a_lo / h
    diag[1:] -= a_hi / h
    ab[1] = diag
    ab[0, 1:] = a_hi / h        # q_{i+1} in row i
    ab[2, :-1] = a_lo / h       # q_i in row i+1
    return ab


def _banded_matvec(ab, q):
    out = ab[1] * q
    out[:-1] += ab[0, 1:] * q[1:]
    out[1:] += ab[2, :-1] * q[:-1]
    return out


def solve_forward_pde(params: ModelParams, r: float, t: float, spec: PdeSpec = PdeSpec()) -> PdeResult:
    """θ-scheme solution of ∂_t p = -∂_x p + (μ²/2) ∂_x²(x² p) with J = 0 at both ends.

    Cells are uniform in ξ = ln x and the start point r sits at a cell center.
    The first ``rannacher_steps`` steps are each replaced by two implicit
    Euler half steps to damp the oscillations a delta start excites in
    Crank-Nicolson.  For r = 0 the delta sits in the lowest cell and a graded
    implicit-Euler phase over ``startup_time`` comes first.
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    mu2 = params.mu2
    x_max = spec.x_max if spec.x_max is not None else 2e4 / mu2
    x_min = spec.x_min if spec.x_min is not None else min(1e-5, r / 100 if r > 0 else 1e-5)
    if r > 0 and not x_min < r < x_max:
        raise ValueError("r must lie strictly inside the grid")
    lo, hi = math.log(x_min), math.log(x_max)
    h = (hi - lo) / spec.n_x
    if r > 0:
        # shift the grid so ln r is a cell center
        j = int(round((math.log(r) - lo) / h - 0.5))
        lo = math.log(r) - (j + 0.5) * h
    faces = lo + h * np.arange(spec.n_x + 1)
    centers = 0.5 * (faces[:-1] + faces[1:])
    q = np.zeros(spec.n_x)
    if spec.init == "delta":
        j = 0 if r == 0 else int(round((math.log(r) - lo) / h - 0.5))
        q[j] = 1.0 / h
    else:
        mid = math.log(r) if r > 0 else centers[0]
        q = np.exp(-0.5 * ((centers - mid) / spec.init_width) ** 2)
        q /= q.sum() * h
    A = _pde_operator(faces, h, mu2)

    def factor(theta, dt):
        lhs = -theta * dt * A
        lhs[1] += 1.0
        return lhs

    def step(q, theta, dt, lhs):
        rhs = q + (1 - theta) * dt * _banded_matvec(A, q) if theta < 1 else q.copy()
        return linalg.solve_banded((1, 1), lhs, rhs, check_finite=False)

    masses = [q.sum() * h]
    worst = 0.0
    plan = []
    t_start = 0.0
    if r == 0 and spec.startup_steps > 0:
        # the mass sits near x ~ elapsed time, where stability of a smooth
        # solution needs dt below x h; quadratic grading tracks that
        t_start = min(spec.startup_time, t / 2)
        grid = t_start * (np.arange(spec.startup_steps + 1) / spec.startup_steps) ** 2
        plan += [(1.0, dt) for dt in np.diff(grid)]
    k = (t - t_start) / spec.n_t
    plan += [(1.0, k / 2)] * (2 * spec.rannacher_steps)
    plan += [(spec.theta, k)] * (spec.n_t - spec.rannacher_steps)
    cache = {}
    for n, (theta, dt) in enumerate(plan):
        key = (theta, dt)
        if key not in cache:
            cache = {key: factor(theta, dt)}
        q = step(q, theta, dt, cache[key])
        m = q.sum() * h
        drift = abs(m - masses[-1])
        worst = max(worst, drift)
        masses.append(m)
        if drift > 1e-10:
            raise PdeInstabilityError(f"mass changed by {drift:.2e} in step {n}")
        if q.min() < -1e-8 * np.abs(q).max():
            raise PdeInstabilityError(f"density went negative ({q.min():.2e}) in step {n}")
    x = np.exp(centers)
    return PdeResult(x, q / x, np.array(masses), worst, float(q[-5:].sum() * h), h)


# ---------------------------------------------------------------------------
# Laplace inversion


class ContourError(ValueError):
    """Talbot contour would not enclose all singularities of the transform."""


@dataclass(frozen=True)
class TalbotSpec:
    n_nodes: int = 24
    contour_scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.n_nodes < 8:
            raise ValueError("n_nodes must be >= 8")
        if not self.contour_scale > 0:
            raise ValueError("contour_scale must be > 0")


def invert_laplace(gl, t: float, spec: TalbotSpec = TalbotSpec()) -> float:
    """f(t) from its transform F by the fixed Talbot rule.

    The contour s(θ) = shift + ρ θ (cot θ + i), θ ∈ (-π, π), ρ = 2M/(5t),
    crosses the real axis only at shift + ρ and opens to the left, so it
    encloses the pole at 0 and the whole cut along the negative axis as long
    as it crosses to the right of 0.  ``gl`` must accept a complex array.
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    M = spec.n_nodes
    rho = spec.contour_scale * 2 * M / (5 * t)
    if spec.shift + rho <= 0:
        raise ContourError("contour crosses the real axis left of the pole at 0")
    theta = np.arange(1, M) * math.pi / M
    cot = 1 / np.tan(theta)
    s = spec.shift + rho * theta * (cot + 1j)
    sigma = theta + (theta * cot - 1) * cot
    vals = np.asarray(gl(s), complex)
    head = 0.5 * math.exp((spec.shift + rho) * t) * complex(np.asarray(gl(np.array([spec.shift + rho + 0j])))[0]).real
    body = np.sum((np.exp(t * s) * vals * (1 + 1j * sigma)).real)
    return float(rho / M * (head + body))


# ---------------------------------------------------------------------------
# cross-method comparison

TRIANGULATION_METHODS = ("spectral", "pde", "talbot", "bessel")


def triangulate(params: ModelParams, t: float, r: float, xs, pde_spec: PdeSpec = PdeSpec(),
                talbot_spec: TalbotSpec = TalbotSpec()) -> dict:
    """p(x, t | r) at each x from the spectral integral and the three independent routes."""
    xs = np.asarray(xs, float)
    pde = solve_forward_pde(params, r, t, pde_spec)
    out = {
        "spectral": np.asarray(transition_pdf_grid(xs, t, r, params).value, float),
        "pde": np.asarray(pde(xs), float),
        "talbot": np.array([invert_laplace(lambda s, x=x: greens_function(x, r, s, params), t, talbot_spec)
                            for x in xs]),
        "bessel": np.array([transition_pdf_bessel_form(DensityQuery(x, t, r), params).value for x in xs]),
    }
    return out
