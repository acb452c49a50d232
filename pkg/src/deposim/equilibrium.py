"""Stationary product measures and their one-site statistics.

Each model carries a one-parameter family of product measures.  The single
site weight at value z is exp(theta * z) divided by the running product of
the one-site rate factor f, so raising theta tilts the marginal toward
larger site values.  The admissible theta interval is set by the growth of
log f in the two tail directions (everything is admissible when the value
interval is bounded).

Besides the marginal itself this module computes the handful of one-site
functionals the identity checks need:

* density rho(theta) and site variance;
* the hydrodynamic flux H = E[p - q] over a stationary bond and its
  density derivative, the characteristic speed;
* the centered upper-tail mass and the size-biased marginal built from it,
  which is the law of the site that carries an extra discrepancy particle;
* samplers and a bisection solver inverting rho(theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import RateSpec

DEFAULT_EPS = 1e-12
MAX_SUPPORT = 2_000_000
ESTIMATED_BOUND_MARGIN = 0.1


def f_factorial(spec: RateSpec, z: int) -> float:
    """Running product of f: product of f(1..z) for z > 0, reciprocal product
    of f(z+1..0) for z < 0, and 1 at z = 0."""
    if z == 0:
        return 1.0
    if z > 0:
        out = 1.0
        for y in range(1, z + 1):
            v = spec.f(y)
            out *= v
        if out == 0.0:
            raise ValueError(f"f vanishes on the product range 1..{z}")
        return out
    out = 1.0
    for y in range(z + 1, 1):
        v = spec.f(y)
        if v == 0.0:
            raise ValueError(f"f vanishes on the product range {z + 1}..0")
        out *= v
    return 1.0 / out


@dataclass(frozen=True)
class ThetaBounds:
    lo: float
    hi: float
    lo_exact: bool
    hi_exact: bool


def theta_bounds(spec: RateSpec, horizon: int = 400) -> ThetaBounds:
    """Admissible tilt interval (open).  Bounded value intervals admit every
    theta.  On an unbounded side the bound is the tail limit of log f, taken
    from the model's declared tail constant when known in closed form and
    otherwise estimated by evaluating log f at the horizon."""
    if math.isfinite(spec.space.hi):
        hi, hi_exact = math.inf, True
    elif spec.theta_tail_hi is not None:
        hi, hi_exact = spec.theta_tail_hi, True
    else:
        hi, hi_exact = math.log(spec.f(horizon)), False
    if math.isfinite(spec.space.lo):
        lo, lo_exact = -math.inf, True
    elif spec.theta_tail_lo is not None:
        lo, lo_exact = spec.theta_tail_lo, True
    else:
        lo, lo_exact = math.log(spec.f(-horizon)), False
    return ThetaBounds(lo, hi, lo_exact, hi_exact)


@dataclass(frozen=True)
class Marginal:
    """Single-site stationary law on the (possibly truncated) support.

    probs is normalized over [z_lo, z_hi].  z_norm is the weight sum over
    the same support in the natural normalization (weight 1 at the value 0);
    truncation_mass estimates the relative weight excluded by the cut, zero
    for bounded models.
    """

    spec: RateSpec
    theta: float
    z_lo: int
    z_hi: int
    probs: np.ndarray
    z_norm: float
    log_z_norm: float
    truncation_mass: float

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.z_lo, self.z_hi + 1)

    def prob(self, z: int) -> float:
        if self.z_lo <= z <= self.z_hi:
            return float(self.probs[z - self.z_lo])
        return 0.0

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    @property
    def variance(self) -> float:
        mu = self.mean
        return float((self.support.astype(float) - mu) ** 2 @ self.probs)


def build_marginal(spec: RateSpec, theta: float, eps: float = DEFAULT_EPS) -> Marginal:
    """Tilted single-site measure; grows the support until the excluded tail
    mass is below eps * (included weight).

    The weight ratio moving up is exp(theta)/f(z+1) and, f being
    nondecreasing, only shrinks; once it drops below 1 the remaining tail
    is dominated by a geometric series, which is what the stopping rule
    bounds.  Same argument on the way down with ratio f(z) exp(-theta).
    """
    bounds = theta_bounds(spec)
    hi_lim = bounds.hi - (0.0 if bounds.hi_exact else ESTIMATED_BOUND_MARGIN)
    lo_lim = bounds.lo + (0.0 if bounds.lo_exact else ESTIMATED_BOUND_MARGIN)
    if not (lo_lim < theta < hi_lim):
        raise ValueError(
            f"theta={theta} outside admissible interval ({bounds.lo}, {bounds.hi})"
            + ("" if bounds.hi_exact and bounds.lo_exact else " (estimated; 0.1 margin enforced)")
        )

    space = spec.space
    # log weight at z relative to z=0, kept incrementally: moving one step up
    # multiplies the weight by exp(theta)/f(z_new)
    zs = [0]
    lws = [0.0]
    lw_max = 0.0
    tail_hi = 0.0
    tail_lo = 0.0

    lw = 0.0
    z = 0
    while True:
        if z + 1 > space.hi:
            break
        fz = spec.f(z + 1)
        if fz <= 0:
            raise ValueError(f"f({z + 1}) <= 0 inside the value interval")
        step = theta - math.log(fz)
        lw_next = lw + step
        # geometric tail bound once the ratio is below 1; -expm1 keeps
        # log(1 - exp(step)) finite for step barely below zero
        if step < 0 and lw_next - lw_max < math.log(eps / 2) + math.log(-math.expm1(step)):
            tail_hi = math.exp(lw_next - lw_max) / -math.expm1(step)
            break
        z += 1
        lw = lw_next
        lw_max = max(lw_max, lw)
        zs.append(z)
        lws.append(lw)
        if len(zs) > MAX_SUPPORT:
            raise ValueError("support cap exceeded; theta too close to a tail bound")

    lw = 0.0
    z = 0
    while True:
        if z - 1 < space.lo:
            break
        fz = spec.f(z)
        if fz <= 0:
            raise ValueError(f"f({z}) <= 0 inside the value interval")
        step = math.log(fz) - theta
        lw_prev = lw + step
        if step < 0 and lw_prev - lw_max < math.log(eps / 2) + math.log(-math.expm1(step)):
            tail_lo = math.exp(lw_prev - lw_max) / -math.expm1(step)
            break
        z -= 1
        lw = lw_prev
        lw_max = max(lw_max, lw)
        zs.append(z)
        lws.append(lw)
        if len(zs) > MAX_SUPPORT:
            raise ValueError("support cap exceeded; theta too close to a tail bound")

    order = np.argsort(zs)
    zarr = np.asarray(zs, dtype=np.int64)[order]
    lwarr = np.asarray(lws)[order]
    m = lwarr.max()
    w = np.exp(lwarr - m)
    s = w.sum()
    probs = w / s
    trunc = (tail_hi + tail_lo) / s if not space.bounded else 0.0
    return Marginal(
        spec=spec,
        theta=theta,
        z_lo=int(zarr[0]),
        z_hi=int(zarr[-1]),
        probs=probs,
        z_norm=float(math.exp(m) * s) if m < 700 else math.inf,
        log_z_norm=float(m + math.log(s)),
        truncation_mass=float(trunc),
    )


def mean_f(marginal: Marginal) -> float:
    """Stationary expectation of f(site value).  Shifting the summation
    index by one shows this equals exp(theta) for unbounded-above models and
    exp(theta) * (1 - P(top value)) when the interval is capped."""
    fv = marginal.spec.f_values(marginal.z_lo, marginal.z_hi)
    return float(fv @ marginal.probs)


@dataclass(frozen=True)
class EquilibriumStats:
    rho: float
    var_omega: float
    hydro_flux: float
    char_speed: float
    theta: float
    truncation_mass: float
    mean_activity: float  # stationary E[p + q] over a bond


def equilibrium_stats(spec: RateSpec, marginal: Marginal) -> EquilibriumStats:
    """One-site density/variance plus bond expectations under mu x mu.

    char_speed is the density derivative of the hydrodynamic flux, computed
    without differencing through the covariance representation
    Cov(p - q, w0 + w1) / Var(w0).
    """
    P, Q = spec.rate_tables(marginal.z_lo, marginal.z_hi)
    mu = marginal.probs
    vals = marginal.support.astype(float)
    rho = float(vals @ mu)
    var = float((vals - rho) ** 2 @ mu)
    R = P - Q
    H = float(mu @ R @ mu)
    S = float(mu @ (P + Q) @ mu)
    # E[r * (w0 + w1)] via the two partial expectations
    ry = float((mu * vals) @ R @ mu)
    rz = float(mu @ R @ (mu * vals))
    cov = ry + rz - H * 2 * rho
    return EquilibriumStats(
        rho=rho,
        var_omega=var,
        hydro_flux=H,
        char_speed=cov / var,
        theta=marginal.theta,
        truncation_mass=marginal.truncation_mass,
        mean_activity=S,
    )


def site_deviation(marginal: Marginal, z: int) -> float:
    """Centered site value z - rho."""
    return z - marginal.mean


def centered_tail_mass(marginal: Marginal) -> np.ndarray:
    """T(y) = sum over z > y of (z - rho) mu(z), on the support.

    Nonnegative for every y (the positive deviations all sit above the
    negative ones), zero at the top value, and summing T(y) mu-weighted
    gives the site variance.
    """
    dev = (marginal.support.astype(float) - marginal.mean) * marginal.probs
    # T[k] = sum of dev[k+1:]
    T = np.concatenate([np.cumsum(dev[::-1])[::-1][1:], [0.0]])
    return T


def tail_deviation_ratio(marginal: Marginal, y: int) -> float:
    """Centered upper-tail mass above y divided by the weight at y."""
    if not (marginal.z_lo <= y <= marginal.z_hi):
        raise ValueError(f"value {y} outside the support [{marginal.z_lo}, {marginal.z_hi}]")
    p = marginal.prob(y)
    if p <= 0:
        raise ValueError(f"zero weight at {y}")
    return float(centered_tail_mass(marginal)[y - marginal.z_lo] / p)


@dataclass(frozen=True)
class HatMarginal:
    """Law of the origin site when it carries the extra discrepancy particle.

    hat(y) is proportional to the centered upper-tail mass above y; it sums
    to one and puts no weight on the top value, so adding one particle at a
    hat-distributed site never leaves the value interval.
    """

    z_lo: int
    z_hi: int
    probs: np.ndarray
    base: Marginal

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.z_lo, self.z_hi + 1)


def size_biased_marginal(spec: RateSpec, marginal: Marginal) -> HatMarginal:
    T = centered_tail_mass(marginal)
    var = marginal.variance
    probs = T / var
    return HatMarginal(z_lo=marginal.z_lo, z_hi=marginal.z_hi, probs=probs, base=marginal)


# ---------------------------------------------------------------------------
# sampling

def sample_site(marginal: Marginal | HatMarginal, rng: np.random.Generator,
                size: Optional[int] = None) -> np.ndarray | int:
    """Inverse-CDF sample of site values."""
    cdf = np.cumsum(marginal.probs)
    cdf[-1] = 1.0
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    vals = np.arange(marginal.z_lo, marginal.z_hi + 1, dtype=np.int64)
    if size is None:
        return int(vals[idx])
    return vals[idx]


def sample_ring(marginal: Marginal, L: int, rng: np.random.Generator,
                origin: Optional[HatMarginal] = None) -> np.ndarray:
    """Independent site values on a ring; when origin is given, site 0 is
    drawn from the size-biased law instead."""
    w = sample_site(marginal, rng, size=L)
    if origin is not None:
        w[0] = sample_site(origin, rng)
    return w


def solve_theta_for_rho(spec: RateSpec, rho: float, eps: float = DEFAULT_EPS,
                        tol: float = 1e-10, max_iter: int = 200) -> float:
    """Invert the density map by bisection; rho(theta) is strictly increasing
    since its theta-derivative is the site variance."""
    bounds = theta_bounds(spec)
    hi_lim = bounds.hi - (0.0 if bounds.hi_exact else ESTIMATED_BOUND_MARGIN)
    lo_lim = bounds.lo + (0.0 if bounds.lo_exact else ESTIMATED_BOUND_MARGIN)

    def density(theta):
        return build_marginal(spec, theta, eps).mean

    # expand a bracket around 0 inside the admissible interval
    lo, hi = -1.0, 1.0
    lo = max(lo, lo_lim + 1e-9) if math.isfinite(lo_lim) else lo
    hi = min(hi, hi_lim - 1e-9) if math.isfinite(hi_lim) else hi
    for _ in range(200):
        if density(lo) <= rho or lo <= lo_lim + 1e-9:
            break
        lo = max(lo * 2 if lo < 0 else -1.0, lo_lim + 1e-9) if math.isfinite(lo_lim) else lo * 2
    for _ in range(200):
        if density(hi) >= rho or hi >= hi_lim - 1e-9:
            break
        hi = min(hi * 2 if hi > 0 else 1.0, hi_lim - 1e-9) if math.isfinite(hi_lim) else hi * 2
    d_lo, d_hi = density(lo), density(hi)
    if not (d_lo <= rho <= d_hi):
        raise ValueError(
            f"density {rho} not achievable; reachable range ~ [{d_lo:.6g}, {d_hi:.6g}] "
            f"for theta in [{lo:.6g}, {hi:.6g}]"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        d = density(mid)
        if abs(d - rho) <= tol and (hi - lo) <= 1e-12 * max(1.0, abs(mid)) + 1e-13:
            return mid
        if d < rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
