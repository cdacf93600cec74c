"""Scalar special functions backing the sphere densities.

The two nontrivial objects here are the half-line Gaussian moment

    I_d(alpha) = (2*pi)**-0.5 * int_0^inf r**(d-1) * exp(-(r-alpha)**2 / 2) dr

computed by the three-term forward recursion

    I_d = alpha * I_{d-1} + (d-2) * I_{d-2},
    I_1 = Phi(alpha),  I_2 = phi(alpha) + alpha * Phi(alpha),

and the parabolic cylinder function D_{-nu}(z), evaluated from its own
even/odd split into two positive-term Kummer (confluent hypergeometric)
series.  The two routes are algorithmically independent, which is what
makes the cross-checks between the equivalent density forms meaningful.

Stability note: the forward recursion adds positive terms for alpha >= 0
and is then accurate to machine precision for any d.  For alpha < 0 the
recursion subtracts, and the wanted (all-positive) solution is dominated
by the complementary one; the number of decimal digits lost is roughly
(ln J(|alpha|) - ln J(-|alpha|)) / ln 10 with J the tilted half-line
integral, estimated cheaply from its saddle point.  Where that estimate
exceeds the double-precision budget the moments are obtained by the
backward (Miller) form of the same recursion -- subtraction-free for
alpha < 0 -- started above the target order and normalised at I_1 =
Phi(alpha), which is fully accurate in the tail.  The D_{-nu} series
keeps an adaptive-precision escape instead: its even/odd parts cancel
for z > 0 and it must stay an independent route (it cross-checks the
recursion through the density forms), so it never borrows from I_d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, log_ndtr

from .errors import ConvergenceError

__all__ = [
    "gammaln",
    "norm_pdf",
    "norm_cdf",
    "halfline_moment",
    "halfline_moment_sequence",
    "log_halfline_moment",
    "log_halfline_moment_pair",
    "MomentSequence",
    "parabolic_cylinder_neg",
    "log_parabolic_cylinder_neg",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SERIES_TERM_CAP = 10_000
# escalate to arbitrary precision when a subtraction is expected to lose
# more decimal digits than this
_DIGIT_LOSS_MAX = 4.0


def gammaln(x: float) -> float:
    """Natural log of the Gamma function for x > 0."""
    if x <= 0.0:
        raise ValueError(f"gammaln requires x > 0, got {x}")
    return math.lgamma(x)


def norm_pdf(x):
    """Standard normal density phi(x); accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x - _LOG_SQRT_2PI)
    return out if out.ndim else float(out)


def norm_cdf(x):
    """Standard normal distribution function Phi(x); scalars or arrays."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(-x / math.sqrt(2.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MomentSequence:
    """Half-line Gaussian moments I_1 .. I_d for a fixed shift alpha."""

    alpha: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("values must be a non-empty 1-d array")
        if np.isfinite(self.alpha) and not np.all(vals > 0.0):
            raise ValueError("half-line moments must be strictly positive")


_LN_RESCALE = 250.0 * math.log(10.0)


def _moment_digit_loss(d: int, alpha) -> np.ndarray:
    """Decimal digits the forward recursion loses to cancellation.

    Estimated as the saddle-point gap ln J(|alpha|) - ln J(-|alpha|) of
    the tilted integral J(b) = int_0^inf r^(d-1) exp(-r^2/2 + b r) dr.
    """
    a = np.asarray(alpha, dtype=float)
    loss = np.zeros_like(a)
    if d <= 1:
        return loss
    neg = a < 0.0
    if np.any(neg):
        b = np.abs(a[neg])
        disc = np.sqrt(b * b + 4.0 * (d - 1))
        r_up = 0.5 * (b + disc)
        r_dn = 0.5 * (-b + disc)
        up = (d - 1) * np.log(r_up) - 0.5 * r_up * r_up + b * r_up
        dn = (d - 1) * np.log(r_dn) - 0.5 * r_dn * r_dn - b * r_dn
        loss[neg] = np.maximum(0.0, (up - dn) / math.log(10.0))
    return loss


def _moment_forward(d: int, a: np.ndarray):
    """Rescaled forward recursion; returns (log I_{d-1}, log I_d).

    Valid where the cancellation estimate is small."""
    i1 = norm_cdf(a)
    log_i1 = log_ndtr(a)
    i2 = norm_pdf(a) + a * i1
    if d == 2:
        return log_i1, np.log(i2)
    logscale = np.zeros_like(a)
    p2, p1 = np.asarray(i1, dtype=float), np.asarray(i2, dtype=float)
    for k in range(3, d + 1):
        p2, p1 = p1, a * p1 + (k - 2) * p2
        big = p1 > 1e250
        if np.any(big):
            p1 = np.where(big, p1 * 1e-250, p1)
            p2 = np.where(big, p2 * 1e-250, p2)
            logscale = np.where(big, logscale + _LN_RESCALE, logscale)
    return np.log(p2) + logscale, np.log(p1) + logscale


def _miller_start_order(d: int, a: np.ndarray) -> int:
    """Start order for the backward recursion.

    Seeding error decays like exp(-2 |alpha| (sqrt(D) - sqrt(d))) on the
    way down, so sqrt(D) = sqrt(d) + 15/|alpha| buys ~ 30 nats; |alpha|
    is bounded below on the backward path by the digit-loss gate.
    """
    absl = np.maximum(np.min(np.abs(a)), 4.6 / math.sqrt(d))
    return max(int(math.ceil((math.sqrt(d) + 15.0 / absl) ** 2)) + 10, d + 10)


def _moment_backward(d: int, a: np.ndarray, capture: tuple):
    """Miller's algorithm: downward recursion I_{k-2} = (I_k - a I_{k-1})/(k-2)
    from trial seeds, normalised at I_1 = Phi(a).

    For a < 0 every downward step adds positive quantities, so the pass is
    subtraction-free; the wanted solution dominates in this direction and
    the trial-seed contamination dies off before reaching order d.
    Returns {order: log I_order} for the requested capture orders.
    """
    start = _miller_start_order(d, a)
    hi = np.zeros_like(a)
    lo = np.ones_like(a)
    logscale = np.zeros_like(a)
    want = sorted(set(capture) | {1})
    logs: dict[int, np.ndarray] = {}
    for k in range(start + 1, 2, -1):
        hi, lo = lo, (hi - a * lo) / (k - 2)
        big = lo > 1e250
        if np.any(big):
            hi = np.where(big, hi * 1e-250, hi)
            lo = np.where(big, lo * 1e-250, lo)
            logscale = np.where(big, logscale + _LN_RESCALE, logscale)
        small = lo < 1e-250
        if np.any(small):
            hi = np.where(small, hi * 1e250, hi)
            lo = np.where(small, lo * 1e250, lo)
            logscale = np.where(small, logscale - _LN_RESCALE, logscale)
        order = k - 2
        if order in want:
            logs[order] = np.log(lo) + logscale
    log_i1 = log_ndtr(a)
    return {order: vals - logs[1] + log_i1 for order, vals in logs.items()}


def halfline_moment_sequence(d: int, alpha: float) -> MomentSequence:
    """All moments I_1 .. I_d at shift alpha.

    Parameters
    ----------
    d : int
        Highest order, d >= 1.
    alpha : float
        Shift of the Gaussian factor.

    Returns
    -------
    MomentSequence
        Values may overflow the double range for very large d; use
        `log_halfline_moment` there.
    """
    if d < 1:
        raise ValueError(f"order d must be >= 1, got {d}")
    alpha = float(alpha)
    a = np.array([alpha])
    if float(_moment_digit_loss(d, a)[0]) > _DIGIT_LOSS_MAX:
        logs = _moment_backward(d, a, capture=tuple(range(1, d + 1)))
        return MomentSequence(alpha, np.exp([logs[k][0] for k in range(1, d + 1)]))
    i1 = norm_cdf(alpha)
    i2 = norm_pdf(alpha) + alpha * i1
    seq = [i1, i2]
    for k in range(3, d + 1):
        seq.append(alpha * seq[-1] + (k - 2) * seq[-2])
    return MomentSequence(alpha, np.array(seq[:d]))


def halfline_moment(d: int, alpha: float) -> float:
    """I_d(alpha); see module docstring for the definition."""
    return float(halfline_moment_sequence(d, alpha).values[-1])


def log_halfline_moment(d: int, alpha):
    """log I_d(alpha), vectorised over alpha and safe for large d.

    Forward recursion (rescaled against overflow) where it is accurate;
    backward-normalised recursion where forward cancellation would bite.
    Pure float path either way.
    """
    if d < 1:
        raise ValueError(f"order d must be >= 1, got {d}")
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if d == 1:
        out = log_ndtr(a)
        return out if np.asarray(alpha).ndim else float(out[0])
    out = np.empty_like(a)
    hard = _moment_digit_loss(d, a) > _DIGIT_LOSS_MAX
    easy = ~hard
    if np.any(easy):
        out[easy] = _moment_forward(d, a[easy])[1]
    if np.any(hard):
        out[hard] = _moment_backward(d, a[hard], capture=(d,))[d]
    return out if np.asarray(alpha).ndim else float(out[0])


def log_halfline_moment_pair(d: int, alpha):
    """(log I_d, log I_{d+1}) sharing one recursion pass; vectorised.

    The consecutive-order ratio I_{d+1}/I_d is the logarithmic derivative
    of the tilted integral, which is what kernel gradients need.
    """
    if d < 1:
        raise ValueError(f"order d must be >= 1, got {d}")
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    lo = np.empty_like(a)
    hi = np.empty_like(a)
    hard = _moment_digit_loss(d + 1, a) > _DIGIT_LOSS_MAX
    easy = ~hard
    if np.any(easy):
        if d == 1:
            lo[easy] = log_ndtr(a[easy])
            i2 = norm_pdf(a[easy]) + a[easy] * norm_cdf(a[easy])
            hi[easy] = np.log(i2)
        else:
            lo[easy], hi[easy] = _moment_forward(d + 1, a[easy])
    if np.any(hard):
        logs = _moment_backward(d + 1, a[hard], capture=(d, d + 1))
        lo[hard] = logs[d]
        hi[hard] = logs[d + 1]
    if np.asarray(alpha).ndim:
        return lo, hi
    return float(lo[0]), float(hi[0])


def _log_kummer_m(a: float, b: float, y, tol: float = 1e-18):
    """log M(a, b, y) for a, b > 0 and y >= 0 (all series terms positive).

    Accumulates in log space, so very large y cannot overflow.  Vectorised
    over y.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y < 0):
        raise ValueError("Kummer split expects y >= 0")
    log_y = np.where(y > 0, np.log(np.where(y > 0, y, 1.0)), -np.inf)
    log_term = np.zeros_like(y)
    log_sum = np.zeros_like(y)
    log_tol = math.log(tol)
    for m in range(_SERIES_TERM_CAP):
        log_term = log_term + math.log(a + m) - math.log(b + m) - math.log(m + 1) + log_y
        log_sum = np.logaddexp(log_sum, log_term)
        if np.all(log_term - log_sum < log_tol):
            return log_sum
    raise ConvergenceError(
        f"Kummer series did not converge within {_SERIES_TERM_CAP} terms"
    )


def _kummer_m_mp(a, b, y, mp):
    """M(a, b, y) summed term by term at the current mpmath precision."""
    term = mp.mpf(1)
    total = mp.mpf(1)
    m = 0
    while True:
        term *= (a + m) * y / ((b + m) * (m + 1))
        total += term
        m += 1
        if abs(term) < abs(total) * mp.eps or m > _SERIES_TERM_CAP:
            return total


def _pcf_mp(nu: float, z: float, digits: float) -> float:
    """log D_{-nu}(z) by the same even/odd Kummer split, in mpmath."""
    import mpmath as mp

    with mp.workdps(int(26 + min(digits, 10_000.0))):
        zm = mp.mpf(z)
        num = mp.mpf(nu)
        y = zm * zm / 2
        even = mp.sqrt(mp.pi) / mp.gamma((1 + num) / 2) * _kummer_m_mp(num / 2, mp.mpf(1) / 2, y, mp)
        odd = mp.sqrt(2 * mp.pi) * zm / mp.gamma(num / 2) * _kummer_m_mp((num + 1) / 2, mp.mpf(3) / 2, y, mp)
        val = even - odd
        if val <= 0:
            raise ConvergenceError(f"D_(-{nu})({z}) evaluation lost all precision")
        return float(mp.log(val) - num / 2 * mp.log(2) - zm * zm / 4)


def log_parabolic_cylinder_neg(nu: float, z):
    """log D_{-nu}(z) for nu > 0 (D itself is positive on the real line).

    Split into the even/odd Kummer series

        D_{-nu}(z) = 2**(-nu/2) * exp(-z^2/4)
                     * [ sqrt(pi)/Gamma((1+nu)/2) * M(nu/2, 1/2, z^2/2)
                         - sqrt(2 pi) z / Gamma(nu/2) * M((nu+1)/2, 3/2, z^2/2) ].

    Both M series have positive terms; the only subtraction is the final
    one, which for z > 0 loses digits and is escalated to adaptive
    precision when it matters.  For z <= 0 the two parts add and the
    evaluation is cancellation-free.  Vectorised over z.
    """
    if nu <= 0.0:
        raise ValueError(f"parabolic cylinder order must satisfy nu > 0, got {nu}")
    zv = np.atleast_1d(np.asarray(z, dtype=float))
    if not np.all(np.isfinite(zv)):
        raise ValueError("z must be finite")
    y = 0.5 * zv * zv
    base = -0.5 * nu * math.log(2.0) - 0.25 * zv * zv
    log_even = 0.5 * math.log(math.pi) - gammaln(0.5 * (1.0 + nu)) + _log_kummer_m(0.5 * nu, 0.5, y)
    with np.errstate(divide="ignore"):
        log_abs_z = np.where(zv != 0.0, np.log(np.abs(np.where(zv != 0.0, zv, 1.0))), -np.inf)
    log_odd = (0.5 * math.log(2.0 * math.pi) - gammaln(0.5 * nu)
               + log_abs_z + _log_kummer_m(0.5 * (nu + 1.0), 1.5, y))

    out = np.empty_like(zv)
    neg = zv <= 0.0
    out[neg] = base[neg] + np.logaddexp(log_even[neg], log_odd[neg])
    pos = ~neg
    if np.any(pos):
        delta = log_odd[pos] - log_even[pos]
        with np.errstate(invalid="ignore"):
            remainder = -np.expm1(np.minimum(delta, 0.0))
        ok = (delta < 0.0) & (remainder > 10.0 ** (-_DIGIT_LOSS_MAX))
        vals = np.where(ok, base[pos] + log_even[pos] + np.log(np.where(ok, remainder, 1.0)), np.nan)
        if not np.all(ok):
            zp = zv[pos]
            for i in np.nonzero(~ok)[0]:
                digits = 0.5 * zp[i] * zp[i] / math.log(10.0) + nu * math.log10(max(zp[i], 2.0)) + 10.0
                vals[i] = _pcf_mp(nu, float(zp[i]), digits)
        out[pos] = vals
    return out if np.asarray(z).ndim else float(out[0])


def parabolic_cylinder_neg(nu: float, z):
    """D_{-nu}(z) for nu > 0 and real z; vectorised over z."""
    return np.exp(log_parabolic_cylinder_neg(nu, z))
