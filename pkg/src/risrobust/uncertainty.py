"""Bounded and statistical CSI error models with samplers."""

from dataclasses import dataclass
import math

import numpy as np

from .scenario import cscg


@dataclass
class BoundedErrorModel:
    xi_H: np.ndarray      # K, Frobenius radius of dH_k
    xi_D: np.ndarray      # K, 2-norm radius of dh_k (0 for PCU)
    N: int
    M: int

    def __post_init__(self):
        self.xi_H = np.atleast_1d(np.asarray(self.xi_H, dtype=float))
        self.xi_D = np.broadcast_to(np.asarray(self.xi_D, dtype=float), self.xi_H.shape).copy()
        if np.any(self.xi_H < 0) or np.any(self.xi_D < 0):
            raise ValueError("radii must be nonnegative")

    @property
    def K(self):
        return len(self.xi_H)

    @property
    def full(self):
        return bool(np.any(self.xi_D > 0))

    def scaled(self, s):
        return BoundedErrorModel(self.xi_H * s, self.xi_D * s, self.N, self.M)


@dataclass
class StatisticalErrorModel:
    delta2_H: np.ndarray  # K, per-entry variance of vec(dH_k)
    delta2_D: np.ndarray  # K, per-entry variance of dh_k (0 for PCU)
    epsilon: np.ndarray   # K, outage budget
    N: int
    M: int

    def __post_init__(self):
        self.delta2_H = np.atleast_1d(np.asarray(self.delta2_H, dtype=float))
        K = self.delta2_H.shape
        self.delta2_D = np.broadcast_to(np.asarray(self.delta2_D, dtype=float), K).copy()
        self.epsilon = np.broadcast_to(np.asarray(self.epsilon, dtype=float), K).copy()
        if np.any(self.delta2_H < 0) or np.any(self.delta2_D < 0):
            raise ValueError("variances must be nonnegative")
        if np.any(self.epsilon <= 0) or np.any(self.epsilon > 1):
            raise ValueError("epsilon must lie in (0, 1]")

    @property
    def K(self):
        return len(self.delta2_H)

    @property
    def full(self):
        return bool(np.any(self.delta2_D > 0))

    def scaled(self, s):
        return StatisticalErrorModel(self.delta2_H * s * s, self.delta2_D * s * s,
                                     self.epsilon, self.N, self.M)

    def check_isotropic(self, cov=None):
        if cov is not None:
            cov = np.asarray(cov)
            if not np.allclose(cov, cov[0, 0] * np.eye(cov.shape[0])):
                raise NotImplementedError("only isotropic error covariances are supported")


@dataclass
class ErrorRealization:
    dH: np.ndarray   # K x N x M (or trials x N x M for one user)
    dh: np.ndarray   # K x M


def variance_from_level(omega, channel_norm2):
    if not (0.0 <= omega < 1.0):
        raise ValueError("uncertainty level must lie in [0, 1)")
    return omega * omega * channel_norm2


# chi-square quantile ------------------------------------------------------

def _gammainc_lower(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        n = a
        for _ in range(10000):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # continued fraction for Q (modified Lentz)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(-x + a * math.log(x) - lg) * h
    return 1.0 - q


def chi2_cdf(x, dof):
    return _gammainc_lower(0.5 * dof, 0.5 * x)


def chi2_inv_cdf(p, dof):
    """Quantile of the chi-square law by bracketed Newton with bisection fallback."""
    if not (0.0 < p < 1.0):
        raise ValueError("probability must lie in (0, 1)")
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if dof == 2:
        return -2.0 * math.log1p(-p)
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        lo, hi = hi, hi * 2.0
    x = 0.5 * (lo + hi)
    k = 0.5 * dof
    for _ in range(200):
        f = chi2_cdf(x, dof) - p
        if f > 0:
            hi = x
        else:
            lo = x
        # chi-square density
        logpdf = (k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k) if x > 0 else -math.inf
        pdf = math.exp(logpdf)
        step_ok = False
        if pdf > 0:
            xn = x - f / pdf
            if lo < xn < hi:
                step_ok = True
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-14 * max(1.0, abs(x)):
            x = xn
            break
        x = xn
    return x


def radius_from_statistics(delta2, dof, epsilon):
    """Ball radius containing a CN(0, delta2 I) draw of real dimension dof w.p. 1-epsilon."""
    if delta2 == 0:
        return 0.0
    return math.sqrt(0.5 * delta2 * chi2_inv_cdf(1.0 - epsilon, dof))


# model construction from uncertainty levels -----------------------------------

def statistical_from_levels(channels, omega_H, omega_D=0.0, epsilon=0.05):
    K, M, N = channels.K, channels.M, channels.N
    nH = np.array([np.linalg.norm(channels.H[k]) ** 2 for k in range(K)])
    nD = np.array([np.linalg.norm(channels.hD[k]) ** 2 for k in range(K)])
    d2H = np.array([variance_from_level(omega_H, x) for x in nH])
    d2D = np.array([variance_from_level(omega_D, x) for x in nD])
    return StatisticalErrorModel(d2H, d2D, np.full(K, epsilon), N, M)


def bounded_from_statistical(model):
    """Radii covering 1 - epsilon of the statistical error mass."""
    N, M = model.N, model.M
    xiH = np.array([radius_from_statistics(d, 2 * N * M, e)
                    for d, e in zip(model.delta2_H, model.epsilon)])
    xiD = np.array([radius_from_statistics(d, 2 * M, e)
                    for d, e in zip(model.delta2_D, model.epsilon)])
    return BoundedErrorModel(xiH, xiD, N, M)


def bounded_from_levels(channels, omega_H, omega_D=0.0, epsilon=0.05):
    return bounded_from_statistical(statistical_from_levels(channels, omega_H, omega_D, epsilon))


# samplers -----------------------------------------------------------------------

def sample_statistical(model, k, rng, size=None):
    """dH_k, dh_k with i.i.d. CSCG entries; ``size`` adds a leading trial axis."""
    lead = () if size is None else (int(size),)
    dH = cscg(rng, lead + (model.N, model.M)) * math.sqrt(model.delta2_H[k])
    dh = cscg(rng, lead + (model.M,)) * math.sqrt(model.delta2_D[k])
    return ErrorRealization(dH, dh)


def _ball(rng, lead, shape, radius, on_boundary):
    z = cscg(rng, lead + shape)
    axes = tuple(range(len(lead), len(lead) + len(shape)))
    nrm = np.sqrt(np.sum(np.abs(z) ** 2, axis=axes, keepdims=True))
    nrm = np.where(nrm > 0, nrm, 1.0)
    z = z / nrm
    if on_boundary is True:
        r = radius
    else:
        dim = 2 * int(np.prod(shape))
        u = rng.random(lead + (1,) * len(shape))
        r = radius * u ** (1.0 / dim)
        if on_boundary is not False:
            # array of flags per trial
            flag = np.asarray(on_boundary, dtype=bool).reshape(lead + (1,) * len(shape))
            r = np.where(flag, radius, r)
    out = z * r
    # enforce the ball exactly against rounding
    nrm = np.sqrt(np.sum(np.abs(out) ** 2, axis=axes, keepdims=True))
    over = nrm > radius
    if np.any(over):
        out = np.where(over, out * (radius / np.where(nrm > 0, nrm, 1.0)), out)
    return out


def sample_bounded(model, k, rng, on_boundary=False, size=None):
    """Uniform direction; norm xi on the boundary, else uniform in the ball.

    ``on_boundary`` may be a boolean array over trials when ``size`` is given.
    """
    lead = () if size is None else (int(size),)
    dH = _ball(rng, lead, (model.N, model.M), model.xi_H[k], on_boundary)
    dh = _ball(rng, lead, (model.M,), model.xi_D[k], on_boundary)
    return ErrorRealization(dH, dh)


def realization_to_text(real):
    from .scenario import arrays_to_text
    arrays = {}
    for k in range(real.dH.shape[0]):
        arrays[f"dH{k}"] = real.dH[k]
    arrays["dh"] = real.dh
    return arrays_to_text(arrays, "error realization")
