"""Rate specifications for attractive nearest-neighbor deposition models.

A model assigns two rates to every ordered pair of neighboring site values.
Across the bond (i, i+1), a deposition moves one unit from site i to site
i+1 (the column between them grows) at rate ``p_rate(w[i], w[i+1])``, and a
removal moves one unit back (the column shrinks) at rate
``q_rate(w[i], w[i+1])``.  Site values live in an integer interval that may
be unbounded on either side; the interval always contains 0 and 1.

The admissible rate functions satisfy four structural conditions, checked
numerically by :func:`validate` on a finite window:

* boundary: rates that would push a site value out of the interval vanish;
* monotonicity: deposition rates are nondecreasing in the donor value and
  nonincreasing in the receiver value, removal rates the other way around
  (this is what makes the basic coupling order-preserving);
* cyclic: the sum of all rates around any three-value cycle equals the sum
  around the reversed cycle;
* factorization: each rate splits into a symmetric two-argument factor and
  a one-site factor ``f``, so ``p_rate(y, z) = s_p(y, z+1) f(y)`` and
  ``q_rate(y, z) = s_q(y+1, z) f(z)``.

Together these guarantee a one-parameter family of stationary product
measures, built in :mod:`deposim.equilibrium`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

DEFAULT_WINDOW = (-20, 20)
DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class SiteSpace:
    """Integer interval of admissible site values (bounds may be infinite)."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= 0 and self.hi >= 1):
            raise ValueError("site interval must contain 0 and 1")
        for b in (self.lo, self.hi):
            if math.isfinite(b) and b != int(b):
                raise ValueError("finite bounds must be integers")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains(self, z: int) -> bool:
        return self.lo <= z <= self.hi

    def clip_window(self, lo: int, hi: int) -> tuple[int, int]:
        """Intersect an integer window with the interval."""
        a = int(max(lo, self.lo)) if math.isfinite(self.lo) else int(lo)
        b = int(min(hi, self.hi)) if math.isfinite(self.hi) else int(hi)
        if a > b:
            raise ValueError(f"window [{lo},{hi}] misses the site interval")
        return a, b

    def values(self, lo: int, hi: int) -> np.ndarray:
        a, b = self.clip_window(lo, hi)
        return np.arange(a, b + 1, dtype=np.int64)


@dataclass(frozen=True)
class RateSpec:
    """A deposition model: site interval, one-site factor f, and edge rates.

    ``asym_p``/``asym_q`` hold the global asymmetry constants for models of
    the form rate = constant * (f-expression); they are None for models
    without that split (symmetric K-exclusion).  ``theta_tail_hi`` and
    ``theta_tail_lo`` are the exact limits of log f in the two tail
    directions when known in closed form; None means "estimate from f".
    """

    name: str
    space: SiteSpace
    f: Callable[[int], float]
    p_rate: Callable[[int, int], float]
    q_rate: Callable[[int, int], float]
    asym_p: Optional[float] = None
    asym_q: Optional[float] = None
    params: dict = field(default_factory=dict)
    theta_tail_hi: Optional[float] = None
    theta_tail_lo: Optional[float] = None

    def rate_tables(self, z_lo: int, z_hi: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense (P, Q) rate tables over the value window [z_lo, z_hi].

        Entry [a, b] is the rate at pair values (z_lo + a, z_lo + b).  All
        hot paths (simulation, generators, validation) read these tables
        rather than calling the rate functions per event.
        """
        a, b = self.space.clip_window(z_lo, z_hi)
        vals = range(a, b + 1)
        m = b - a + 1
        P = np.empty((m, m))
        Q = np.empty((m, m))
        for iy, y in enumerate(vals):
            for iz, z in enumerate(vals):
                P[iy, iz] = self.p_rate(y, z)
                Q[iy, iz] = self.q_rate(y, z)
        if P.min() < 0 or Q.min() < 0:
            raise ValueError(f"negative rate in window [{a},{b}] of {self.name}")
        return P, Q

    def f_values(self, z_lo: int, z_hi: int) -> np.ndarray:
        a, b = self.space.clip_window(z_lo, z_hi)
        return np.array([self.f(z) for z in range(a, b + 1)])


def drift_rate(spec: RateSpec, y: int, z: int) -> float:
    """Net growth rate p - q at the pair (y, z)."""
    return spec.p_rate(y, z) - spec.q_rate(y, z)


def activity_rate(spec: RateSpec, y: int, z: int) -> float:
    """Total jump rate p + q at the pair (y, z)."""
    return spec.p_rate(y, z) + spec.q_rate(y, z)


# ---------------------------------------------------------------------------
# builders

def build_asep(p: float) -> RateSpec:
    """Asymmetric simple exclusion: values {0,1}, right hops at p, left at 1-p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("asep asymmetry p must lie in [0, 1]")
    q = 1.0 - p

    return RateSpec(
        name="asep",
        space=SiteSpace(0, 1),
        f=lambda z: 1.0 if z >= 1 else 0.0,
        p_rate=lambda y, z: p if (y, z) == (1, 0) else 0.0,
        q_rate=lambda y, z: q if (y, z) == (0, 1) else 0.0,
        asym_p=p,
        asym_q=q,
        params={"p": p},
    )


def build_particle_antiparticle(p: float, c: float, a: float) -> RateSpec:
    """Particle-antiparticle exclusion on values {-1, 0, 1}.

    Pair creation happens at rate p*c, single charges hop at p*a/2, and a
    (+,-) pair annihilates at rate p*a; the q-rates mirror these.  The
    constraint c <= a/2 keeps the rates monotone in each argument.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("asymmetry p must lie in [0, 1]")
    if c < 0 or a < 0:
        raise ValueError("rates c, a must be nonnegative")
    if c > a / 2:
        raise ValueError(f"attractivity needs c <= a/2, got c={c}, a={a}")
    q = 1.0 - p
    ptab = {(0, 0): p * c, (0, -1): p * a / 2, (1, 0): p * a / 2, (1, -1): p * a}
    qtab = {(0, 0): q * c, (-1, 0): q * a / 2, (0, 1): q * a / 2, (-1, 1): q * a}

    def fval(z):
        if z <= -1:
            return 0.0
        return c if z == 0 else a

    return RateSpec(
        name="particle-antiparticle",
        space=SiteSpace(-1, 1),
        f=fval,
        p_rate=lambda y, z: ptab.get((y, z), 0.0),
        q_rate=lambda y, z: qtab.get((y, z), 0.0),
        asym_p=p,
        asym_q=q,
        params={"p": p, "c": c, "a": a},
    )


def build_zero_range(f: Callable[[int], float], p: float,
                     check_window: int = 64,
                     theta_tail_hi: Optional[float] = None) -> RateSpec:
    """Zero-range process: departures at rate f(occupancy), split p right / 1-p left."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("asymmetry p must lie in [0, 1]")
    if f(0) != 0.0:
        raise ValueError("zero-range rate function needs f(0) = 0")
    prev = 0.0
    for z in range(1, check_window + 1):
        v = f(z)
        if v <= 0:
            raise ValueError(f"zero-range rate function must be positive at z={z}")
        if v < prev - 1e-12:
            raise ValueError(f"zero-range rate function decreases at z={z}")
        prev = v
    q = 1.0 - p

    return RateSpec(
        name="zero-range",
        space=SiteSpace(0, math.inf),
        f=f,
        p_rate=lambda y, z: p * f(y),
        q_rate=lambda y, z: q * f(z),
        asym_p=p,
        asym_q=q,
        params={"p": p},
        theta_tail_hi=theta_tail_hi,
    )


def build_bricklayers(f_pos: Callable[[int], float], p: float,
                      check_window: int = 64,
                      theta_tail_hi: Optional[float] = None,
                      theta_tail_lo: Optional[float] = None) -> RateSpec:
    """Bricklayers' model on unbounded values.

    f_pos gives the rate function on z >= 1; it extends to z <= 0 through
    f(z) = 1 / f_pos(1 - z), which forces f(z) * f(1 - z) = 1.  Each bond
    grows at rate p * (f(y) + f(-z)) and shrinks at rate (1-p) * (f(-y) + f(z)).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("asymmetry p must lie in [0, 1]")
    prev = None
    for z in range(1, check_window + 1):
        v = f_pos(z)
        if v <= 0:
            raise ValueError(f"bricklayers rate function must be positive at z={z}")
        if prev is not None and v < prev - 1e-12:
            raise ValueError(f"bricklayers rate function decreases at z={z}")
        prev = v
    if f_pos(1) < 1.0:
        # f(0) = 1/f_pos(1) would then exceed f(1): the extension is not monotone
        raise ValueError("extension breaks monotonicity: need f_pos(1) >= 1")
    q = 1.0 - p

    def fval(z):
        return f_pos(z) if z >= 1 else 1.0 / f_pos(1 - z)

    return RateSpec(
        name="bricklayers",
        space=SiteSpace(-math.inf, math.inf),
        f=fval,
        p_rate=lambda y, z: p * (fval(y) + fval(-z)),
        q_rate=lambda y, z: q * (fval(-y) + fval(z)),
        asym_p=p,
        asym_q=q,
        params={"p": p},
        theta_tail_hi=theta_tail_hi,
        theta_tail_lo=theta_tail_lo,
    )


def build_k_exclusion(K: int) -> RateSpec:
    """Symmetric K-exclusion: values {0..K}, unit hops both ways when allowed."""
    if K < 1:
        raise ValueError("K must be a positive integer")

    def prate(y, z):
        return 1.0 if (y > 0 and z < K) else 0.0

    return RateSpec(
        name="k-exclusion",
        space=SiteSpace(0, K),
        f=lambda z: 1.0 if z >= 1 else 0.0,
        p_rate=prate,
        q_rate=lambda y, z: prate(z, y),
        params={"K": K},
    )


# named one-site rate families accepted by the CLI and config files
def f_family(name: str, beta: float = 1.0) -> Callable[[int], float]:
    if name == "linear":
        return lambda z: float(z)
    if name == "indicator":
        return lambda z: 1.0 if z >= 1 else 0.0
    if name == "exponential":
        return lambda z: math.exp(beta * z)
    raise ValueError(f"unknown rate family {name!r} (linear, indicator, exponential)")


def f_family_tail(name: str, beta: float = 1.0) -> float:
    """Exact limit of log f(z) as z grows, for the named families."""
    if name == "linear" or name == "exponential":
        return math.inf
    if name == "indicator":
        return 0.0
    raise ValueError(f"unknown rate family {name!r}")


MODEL_NAMES = ("asep", "particle_antiparticle", "zero_range", "bricklayers", "k_exclusion")


def build_named(name: str, params: Optional[dict] = None) -> RateSpec:
    """Factory dispatching on the model names accepted by configs.

    zero_range and bricklayers take their one-site rate function by family
    name ("f": linear | indicator | exponential, optional "beta").
    Hyphens and case in the model name are ignored.
    """
    key = name.replace("-", "_").lower()
    opts = dict(params or {})

    def done(spec: RateSpec) -> RateSpec:
        if opts:
            raise ValueError(f"unknown parameter(s) for {key}: {sorted(opts)}")
        return spec

    try:
        if key == "asep":
            return done(build_asep(float(opts.pop("p"))))
        if key == "particle_antiparticle":
            return done(build_particle_antiparticle(
                float(opts.pop("p")), float(opts.pop("c")), float(opts.pop("a"))))
        if key in ("zero_range", "bricklayers"):
            fname = str(opts.pop("f"))
            beta = float(opts.pop("beta", 1.0))
            fv = f_family(fname, beta)
            tail = f_family_tail(fname, beta)
            p = float(opts.pop("p"))
            if key == "zero_range":
                spec = build_zero_range(fv, p, theta_tail_hi=tail)
            else:
                spec = build_bricklayers(fv, p, theta_tail_hi=tail, theta_tail_lo=-tail)
            return done(replace(spec, params={**spec.params, "f": fname, "beta": beta}))
        if key == "k_exclusion":
            kval = opts.pop("K") if "K" in opts else opts.pop("k")
            return done(build_k_exclusion(int(kval)))
    except KeyError as e:
        raise ValueError(f"model {key!r} is missing parameter {e.args[0]!r}") from None
    raise ValueError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")


# ---------------------------------------------------------------------------
# reversed process

def reversed_process(spec: RateSpec) -> RateSpec:
    """Time reversal of the stationary process, as a model of the same class.

    Under any of the stationary product measures, running the movie
    backwards is again a deposition model: its deposition rate at (y, z) is
    the original removal rate at (z, y) and vice versa.  The one-site
    factor f is unchanged, so the reversed model shares the same family of
    product measures.  Applying this twice returns the original rates.
    """
    p0, q0 = spec.p_rate, spec.q_rate
    name = spec.name[:-9] if spec.name.endswith("-reversed") else spec.name + "-reversed"
    return replace(
        spec,
        name=name,
        p_rate=lambda y, z: q0(z, y),
        q_rate=lambda y, z: p0(z, y),
        asym_p=spec.asym_q,
        asym_q=spec.asym_p,
    )


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    condition: str            # boundary | monotonicity | cyclic | factorization | s-symmetry
    passed: bool
    max_residual: float
    witnesses: list = field(default_factory=list)

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        s = f"{self.condition:13s} {status}  max residual {self.max_residual:.3e}"
        if self.witnesses:
            s += f"  e.g. {self.witnesses[0]}"
        return s


def _witnesses(residual: np.ndarray, coords: list[np.ndarray], tol: float, cap: int = 5):
    idx = np.argwhere(residual > tol)
    out = []
    for row in idx[:cap]:
        out.append(tuple(int(c[i]) for c, i in zip(coords, row)))
    return out


def validate(spec: RateSpec, window: tuple[int, int] = DEFAULT_WINDOW,
             tol: float = DEFAULT_TOL) -> list[ValidationReport]:
    """Check the structural rate conditions on a finite value window.

    Returns one report per condition.  Unbounded models are only ever
    checked on the window, which is the documented contract: a rate
    function that misbehaves far outside the window will not be caught
    here but will also never be exercised by a simulation whose table
    covers the same window.
    """
    z_lo, z_hi = spec.space.clip_window(*window)
    vals = np.arange(z_lo, z_hi + 1)
    m = len(vals)
    P, Q = spec.rate_tables(z_lo, z_hi)
    fv = spec.f_values(z_lo, z_hi)
    reports = []

    # boundary: moves out of the interval carry zero rate
    res = 0.0
    wit = []
    if math.isfinite(spec.space.lo) and vals[0] == spec.space.lo:
        bad = np.abs(P[0, :])
        res = max(res, bad.max())
        wit += [("p", int(vals[0]), int(vals[k])) for k in np.flatnonzero(bad > tol)[:3]]
        bad = np.abs(Q[:, 0])
        res = max(res, bad.max())
        wit += [("q", int(vals[k]), int(vals[0])) for k in np.flatnonzero(bad > tol)[:3]]
    if math.isfinite(spec.space.hi) and vals[-1] == spec.space.hi:
        bad = np.abs(P[:, -1])
        res = max(res, bad.max())
        wit += [("p", int(vals[k]), int(vals[-1])) for k in np.flatnonzero(bad > tol)[:3]]
        bad = np.abs(Q[-1, :])
        res = max(res, bad.max())
        wit += [("q", int(vals[-1]), int(vals[k])) for k in np.flatnonzero(bad > tol)[:3]]
    reports.append(ValidationReport("boundary", bool(res <= tol), float(res), wit[:5]))

    # monotonicity: p up in the donor, down in the receiver; q mirrored.
    # residuals are relative to the local rate scale, else roundoff on
    # exponentially large rates shows up as spurious violations
    checks = [
        (P[:-1, :], P[1:, :], "p donor"),      # p(z+1, y) >= p(z, y)
        (P[:, 1:], P[:, :-1], "p receiver"),   # p(y, z+1) <= p(y, z)
        (Q[1:, :], Q[:-1, :], "q donor"),      # q(z+1, y) <= q(z, y)
        (Q[:, :-1], Q[:, 1:], "q receiver"),   # q(y, z+1) >= q(y, z)
    ]
    res = 0.0
    wit = []
    for small, big, label in checks:
        diff = (small - big) / (1.0 + small + big)
        worst = diff.max()
        res = max(res, worst)
        if worst > tol:
            i, j = np.unravel_index(np.argmax(diff), diff.shape)
            wit.append((label, int(vals[i]), int(vals[j])))
    reports.append(ValidationReport("monotonicity", bool(res <= tol), float(res), wit[:5]))

    # cyclic: forward three-cycle rate sum equals the backward one
    T = P + Q
    # fwd[x,y,z] = T[x,y] + T[y,z] + T[z,x]; backward swaps the cycle direction
    fwd = T[:, :, None] + T[None, :, :] + T.T[:, None, :]
    bwd = fwd.transpose(0, 2, 1)
    diff = np.abs(fwd - bwd) / (1.0 + np.abs(fwd) + np.abs(bwd))
    res = float(diff.max())
    wit = []
    if res > tol:
        x, y, z = np.unravel_index(np.argmax(diff), diff.shape)
        wit.append((int(vals[x]), int(vals[y]), int(vals[z])))
    reports.append(ValidationReport("cyclic", bool(res <= tol), float(res), wit))

    # factorization support: a rate must vanish wherever its f factor does
    res = 0.0
    wit = []
    zero_f = fv <= 0
    if zero_f.any():
        bad = np.abs(P[zero_f, :])
        res = max(res, float(bad.max()))
        for k in np.flatnonzero(np.abs(P[zero_f, :]).max(axis=1) > tol)[:3]:
            wit.append(("p", int(vals[np.flatnonzero(zero_f)[k]])))
        bad = np.abs(Q[:, zero_f])
        res = max(res, float(bad.max()))
        for k in np.flatnonzero(np.abs(Q[:, zero_f]).max(axis=0) > tol)[:3]:
            wit.append(("q", int(vals[np.flatnonzero(zero_f)[k]])))
    reports.append(ValidationReport("factorization", bool(res <= tol), float(res), wit[:5]))

    # symmetry of the reconstructed two-argument factors:
    # s_p(y, w) = p(y, w-1) / f(y) and s_q(w, z) = q(w-1, z) / f(z)
    # are compared against their transposes wherever both orientations are
    # defined by in-window rate lookups with nonvanishing f.
    res = 0.0
    wit = []
    pos = np.flatnonzero(fv > 0)
    shiftable = pos[(vals[pos] - 1 >= z_lo)]  # w with w-1 still in window
    A_p = np.full((m, m), np.nan)
    A_q = np.full((m, m), np.nan)
    for iy in pos:
        for iw in shiftable:
            A_p[iy, iw] = P[iy, iw - 1] / fv[iy]
    for iz in pos:
        for iw in shiftable:
            A_q[iw, iz] = Q[iw - 1, iz] / fv[iz]
    for A, label in ((A_p, "s_p"), (A_q, "s_q")):
        both = ~np.isnan(A) & ~np.isnan(A.T)
        if both.any():
            d = np.abs(A - A.T) / (1.0 + np.abs(A) + np.abs(A.T))
            d[~both] = 0.0
            worst = float(np.nanmax(d))
            res = max(res, worst)
            if worst > tol:
                i, j = np.unravel_index(np.nanargmax(d), d.shape)
                wit.append((label, int(vals[i]), int(vals[j])))
    reports.append(ValidationReport("s-symmetry", bool(res <= tol), float(res), wit[:5]))
    return reports


def all_conditions_pass(reports: list[ValidationReport]) -> bool:
    return all(r.passed for r in reports)
