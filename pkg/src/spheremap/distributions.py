"""Densities and samplers on the unit sphere S^{d-1}.

Two isotropic families, each depending on a point z only through the
cosine t = z . mu of the angle to a mean direction mu:

* von Mises-Fisher: log-kernel kappa * t (conditioning an isotropic
  Gaussian on the sphere);
* angular Gaussian: the law of an isotropic Gaussian with mean at
  distance kappa (in noise units) radially projected onto the sphere.

plus the general projected normal: u = x / ||x|| for x ~ N(mu, Sigma),
whose log-density is provided in three algebraically equivalent forms
(recursive half-line moments, a direct power series, and a parabolic
cylinder closed form).  The three forms take different numerical routes
on purpose, so agreement between them is a real cross-check.

Normalization constants of the isotropic kernels are exposed separately
(`vmf_log_norm`, `agd_log_norm`): the classification losses only ever
need kernels (constants cancel in the posterior), while density tests
need full pdfs.

Convention notes (resolved numerically, see `spheremap.cli` density-check
and the README): with lam^2 = mu' Sigma^-1 mu and
gamma = u' Sigma^-1 mu / sqrt(u' Sigma^-1 u), the three forms are

  recursive: (u'S^-1 u)^(-d/2) (2 pi)^(-(d-1)/2) |S|^(-1/2)
             * exp(-(lam^2 - gamma^2)/2) * I_d(gamma)
  series:    1/omega_{d-1} * (u'S^-1 u)^(-d/2) |S|^(-1/2) * exp(-lam^2/2)
             * sum_k (sqrt(2) gamma)^k Gamma((d+k)/2) / (k! Gamma(d/2))
  closed:    (u'S^-1 u)^(-d/2) (2 pi)^(-d/2) |S|^(-1/2)
             * exp(-lam^2/2 + gamma^2/4) * Gamma(d) * D_{-d}(-gamma)

each of which integrates to 1 over the sphere (omega_{d-1} is the surface
area).  All evaluation is done in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .special import (
    _DIGIT_LOSS_MAX,
    _SERIES_TERM_CAP,
    _log_kummer_m,
    gammaln,
    log_halfline_moment,
    log_halfline_moment_pair,
    log_parabolic_cylinder_neg,
)

__all__ = [
    "log_unit_sphere_area",
    "log_uniform_density",
    "vmf_log_kernel",
    "vmf_log_norm",
    "agd_log_kernel",
    "agd_log_kernel_ratio",
    "agd_log_norm",
    "IsotropicParams",
    "vmf_logpdf",
    "agd_logpdf",
    "ProjectedNormalParams",
    "projected_normal_logpdf_recursive",
    "projected_normal_logpdf_series",
    "projected_normal_logpdf_closed",
    "sample_projected_normal",
    "unit_vector",
]

_T_SLACK = 1e-9
_KAPPA_MAX = 50.0


def log_unit_sphere_area(d: int) -> float:
    """log of the surface area of S^{d-1}: omega_{d-1} = 2 pi^{d/2} / Gamma(d/2)."""
    if d < 2:
        raise ValueError(f"sphere dimension d must be >= 2, got {d}")
    return math.log(2.0) + 0.5 * d * math.log(math.pi) - gammaln(0.5 * d)


def log_uniform_density(d: int) -> float:
    """log-density of the uniform distribution on S^{d-1}."""
    return -log_unit_sphere_area(d)


def unit_vector(coords, tol: float = 1e-9) -> np.ndarray:
    """Validate and return a unit vector (or matrix of unit rows)."""
    u = np.asarray(coords, dtype=float)
    if u.shape[-1] < 2:
        raise ValueError("unit vectors must live in dimension >= 2")
    norms = np.linalg.norm(u, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"vector norm deviates from 1 by {worst:.3e} (tol {tol:.0e})")
    return u


def _check_cosine(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + _T_SLACK):
        raise ValueError("cosine similarity outside [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if kappa < 0.0:
        raise ValueError(f"concentration must be >= 0, got {kappa}")
    if kappa > _KAPPA_MAX:
        raise ValueError(f"concentration {kappa} above supported bound {_KAPPA_MAX}")
    return kappa


def vmf_log_kernel(t, kappa: float):
    """log of the vMF kernel exp(kappa * t); the constant is omitted."""
    tc = _check_cosine(t)
    kappa = _check_kappa(kappa)
    out = kappa * tc
    return out if out.ndim else float(out)


def vmf_log_norm(kappa: float, d: int) -> float:
    """log a_kappa with vMF pdf a_kappa * exp(kappa t) wrt surface measure.

    a_kappa = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa)), evaluated
    through the positive-term Bessel-I series in log space.
    """
    kappa = _check_kappa(kappa)
    if d < 2:
        raise ValueError(f"sphere dimension d must be >= 2, got {d}")
    if kappa == 0.0:
        return log_uniform_density(d)
    nu = 0.5 * d - 1.0
    # log I_nu(kappa) = logsumexp_m [(2m+nu) log(kappa/2) - ln m! - ln Gamma(m+nu+1)]
    log_half = math.log(0.5 * kappa)
    log_term = nu * log_half - gammaln(nu + 1.0)
    log_sum = log_term
    for m in range(1, _SERIES_TERM_CAP):
        log_term += 2.0 * log_half - math.log(m) - math.log(m + nu)
        log_sum = np.logaddexp(log_sum, log_term)
        if log_term - log_sum < math.log(1e-18):
            break
    else:
        raise ConvergenceError("Bessel-I series did not converge")
    return nu * math.log(kappa) - 0.5 * d * math.log(2.0 * math.pi) - float(log_sum)


def _log_tilted_sum(d: int, x, tol: float):
    """log S(d, x) with S = sum_k x^k Gamma((d+k)/2) / k!, vectorised over x.

    Even/odd split: S = Gamma(d/2) M(d/2, 1/2, x^2/4)
                        + x Gamma((d+1)/2) M((d+1)/2, 3/2, x^2/4),
    both M series positive-term, so x < 0 costs exactly one subtraction,
    monitored and escalated to adaptive precision when it bites.
    """
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    y = 0.25 * xv * xv
    log_even = gammaln(0.5 * d) + _log_kummer_m(0.5 * d, 0.5, y, tol=min(tol, 1e-16))
    with np.errstate(divide="ignore"):
        log_abs_x = np.where(xv != 0.0, np.log(np.abs(np.where(xv != 0.0, xv, 1.0))), -np.inf)
    log_odd = gammaln(0.5 * (d + 1)) + log_abs_x + _log_kummer_m(0.5 * (d + 1), 1.5, y, tol=min(tol, 1e-16))

    out = np.empty_like(xv)
    nonneg = xv >= 0.0
    out[nonneg] = np.logaddexp(log_even[nonneg], log_odd[nonneg])
    neg = ~nonneg
    if np.any(neg):
        delta = log_odd[neg] - log_even[neg]
        with np.errstate(invalid="ignore"):
            remainder = -np.expm1(np.minimum(delta, 0.0))
        ok = (delta < 0.0) & (remainder > 10.0 ** (-_DIGIT_LOSS_MAX))
        vals = np.where(ok, log_even[neg] + np.log(np.where(ok, remainder, 1.0)), np.nan)
        if not np.all(ok):
            xneg = xv[neg]
            for i in np.nonzero(~ok)[0]:
                vals[i] = _log_tilted_sum_mp(d, float(xneg[i]))
        out[neg] = vals
    return out if np.asarray(x).ndim else float(out[0])


def _log_tilted_sum_mp(d: int, x: float) -> float:
    """Direct high-precision summation of the alternating series."""
    import mpmath as mp

    digits = 0.5 * x * x / math.log(10.0) + 20.0
    with mp.workdps(int(26 + digits)):
        xm = mp.mpf(x)
        total = mp.mpf(0)
        term_count = 0
        k = 0
        power = mp.mpf(1)
        while True:
            term = power * mp.gamma((d + k) / mp.mpf(2))
            total += term
            k += 1
            term_count += 1
            power *= xm / k
            if abs(term) < abs(total) * mp.eps and k > abs(x):
                break
            if term_count > _SERIES_TERM_CAP:
                raise ConvergenceError("tilted power series did not converge")
        if total <= 0:
            raise ConvergenceError("tilted power series lost all precision")
        return float(mp.log(total))


def agd_log_kernel(t, kappa: float, d: int, tol: float = 1e-12):
    """log of the angular-Gaussian kernel g_kappa(t) on S^{d-1}.

    g_kappa(t) = exp(-kappa^2/2) * sum_n (sqrt(2) kappa t)^n
                 * Gamma((d+n)/2) / (n! Gamma(d/2)),

    the radial marginalisation of an isotropic Gaussian at distance kappa
    (in noise units) from the origin.  kappa = 0 gives the constant kernel.

    Evaluated through the half-line moment identity

        log g = -kappa^2/2 + (kappa t)^2/2 + log I_d(kappa t) - log I_d(0),

    which is cancellation-free for every t and vectorises; the series
    itself is summed directly only by the general density's series route
    (and by test oracles), keeping the two paths independent.  `tol` is
    the truncation tolerance those series routes use; it is validated
    here for interface parity but the moment path needs no truncation.
    """
    tc = _check_cosine(t)
    kappa = _check_kappa(kappa)
    if d < 2:
        raise ValueError(f"sphere dimension d must be >= 2, got {d}")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if kappa == 0.0:
        out = np.zeros_like(tc)
        return out if out.ndim else 0.0
    alpha = kappa * tc
    # log I_d(0) = (d/2 - 1) log 2 + lgamma(d/2) - log sqrt(2 pi)
    log_i0 = (0.5 * d - 1.0) * math.log(2.0) + gammaln(0.5 * d) - 0.5 * math.log(2.0 * math.pi)
    out = (-0.5 * kappa * kappa + 0.5 * alpha * alpha
           + log_halfline_moment(d, alpha) - log_i0)
    return out if np.asarray(t).ndim else float(out)


def agd_log_kernel_ratio(t, kappa: float, d: int, tol: float = 1e-12):
    """d/dt log g_kappa(t): the term-wise derivative over the kernel.

    Equals kappa * I_{d+1}(kappa t) / I_d(kappa t); strictly positive for
    kappa > 0 (the kernel is increasing).
    """
    tc = _check_cosine(t)
    kappa = _check_kappa(kappa)
    if d < 2:
        raise ValueError(f"sphere dimension d must be >= 2, got {d}")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if kappa == 0.0:
        out = np.zeros_like(tc)
        return out if out.ndim else 0.0
    alpha = kappa * tc
    lo, hi = log_halfline_moment_pair(d, alpha)
    out = kappa * np.exp(np.asarray(hi) - np.asarray(lo))
    return out if np.asarray(t).ndim else float(out)


def agd_log_norm(d: int) -> float:
    """log-normalization of the angular-Gaussian kernel: 1/omega_{d-1}."""
    return log_uniform_density(d)


@dataclass(frozen=True)
class IsotropicParams:
    """Mean direction and concentration of an isotropic sphere density."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "mu", unit_vector(self.mu))
        object.__setattr__(self, "kappa", _check_kappa(self.kappa))


def vmf_logpdf(u, params: IsotropicParams):
    """Full vMF log-density (kernel plus normalization)."""
    t = unit_vector(u) @ params.mu
    d = params.mu.shape[0]
    return vmf_log_norm(params.kappa, d) + vmf_log_kernel(t, params.kappa)


def agd_logpdf(u, params: IsotropicParams, tol: float = 1e-12):
    """Full angular-Gaussian log-density (kernel plus normalization)."""
    t = unit_vector(u) @ params.mu
    d = params.mu.shape[0]
    return agd_log_norm(d) + agd_log_kernel(t, params.kappa, d, tol)


@dataclass
class ProjectedNormalParams:
    """Gaussian source parameters (mu, Sigma) for the projected normal."""

    mu: np.ndarray
    sigma: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)
    _sigma_inv: np.ndarray = field(init=False, repr=False)
    _logdet: float = field(init=False, repr=False)
    _lam2: float = field(init=False, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        d = self.mu.shape[0]
        if self.mu.ndim != 1 or d < 2:
            raise ValueError("mu must be a vector of dimension >= 2")
        if self.sigma.shape != (d, d):
            raise ValueError(f"sigma must be {d}x{d}, got {self.sigma.shape}")
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-10, rtol=0.0):
            raise ValueError("sigma must be symmetric (within 1e-10)")
        try:
            self._chol = np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("sigma is singular or not positive definite") from exc
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        ident = np.eye(d)
        w = np.linalg.solve(self._chol, ident)
        self._sigma_inv = w.T @ w
        self._lam2 = float(self.mu @ self._sigma_inv @ self.mu)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def _angular_stats(u, p: ProjectedNormalParams):
    """Per-row (u'S^-1 u, gamma) for unit rows u."""
    uv = unit_vector(u)
    rows = np.atleast_2d(uv)
    if rows.shape[1] != p.dim:
        raise ValueError(f"points have dimension {rows.shape[1]}, params {p.dim}")
    su = rows @ p._sigma_inv
    usu = np.einsum("ij,ij->i", su, rows)
    usm = su @ p.mu
    gamma = usm / np.sqrt(usu)
    return rows, usu, gamma


def projected_normal_logpdf_recursive(u, p: ProjectedNormalParams):
    """Projected-normal log-density via the half-line moment recursion."""
    rows, usu, gamma = _angular_stats(u, p)
    d = p.dim
    out = (-0.5 * d * np.log(usu)
           - 0.5 * (d - 1) * math.log(2.0 * math.pi)
           - 0.5 * p._logdet
           - 0.5 * (p._lam2 - gamma * gamma)
           + log_halfline_moment(d, gamma))
    return out if np.asarray(u).ndim > 1 else float(out[0])


def projected_normal_logpdf_series(u, p: ProjectedNormalParams, tol: float = 1e-12):
    """Projected-normal log-density via the direct power series."""
    rows, usu, gamma = _angular_stats(u, p)
    d = p.dim
    out = (log_uniform_density(d)
           - 0.5 * d * np.log(usu)
           - 0.5 * p._logdet
           - 0.5 * p._lam2
           + _log_tilted_sum(d, math.sqrt(2.0) * gamma, tol) - gammaln(0.5 * d))
    return out if np.asarray(u).ndim > 1 else float(out[0])


def projected_normal_logpdf_closed(u, p: ProjectedNormalParams):
    """Projected-normal log-density via the parabolic cylinder function."""
    rows, usu, gamma = _angular_stats(u, p)
    d = p.dim
    out = (-0.5 * d * np.log(usu)
           - 0.5 * d * math.log(2.0 * math.pi)
           - 0.5 * p._logdet
           - 0.5 * p._lam2
           + 0.25 * gamma * gamma
           + gammaln(d)
           + log_parabolic_cylinder_neg(d, -gamma))
    return out if np.asarray(u).ndim > 1 else float(out[0])


def sample_projected_normal(p: ProjectedNormalParams, n: int, seed) -> np.ndarray:
    """Draw n unit vectors u = x/||x|| with x ~ N(mu, Sigma).

    `seed` may be an int or a numpy Generator.  Deterministic given the
    seed; the measure-zero event x = 0 is resampled.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = p.mu + rng.standard_normal((n, p.dim)) @ p._chol.T
    norms = np.linalg.norm(x, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        x[bad] = p.mu + rng.standard_normal((int(bad.sum()), p.dim)) @ p._chol.T
        norms = np.linalg.norm(x, axis=1)
    return x / norms[:, None]
