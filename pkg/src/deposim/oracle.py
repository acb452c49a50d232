"""Exact finite-ring computations by direct state enumeration.

Everything here is independent of the event-driven simulator: generators
are assembled from the rate tables state by state, expectations are sums
over the full product measure, and time evolution uses uniformized series
of sparse matrix-vector products.  These functions are the reference the
Monte Carlo side is checked against.

State spaces grow as (window size)**L, so rings here are short.  The hard
cap below protects against runaway requests; dense enumeration is already
slow well before it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import gammaln, gammainc

from .models import RateSpec
from .equilibrium import Marginal, HatMarginal, size_biased_marginal

STATE_CAP = 200_000


def signed_offsets(L: int) -> np.ndarray:
    """Site offsets 0..L-1 mapped to the centered representatives
    (-L/2, L/2]; offset L//2 keeps the positive sign on even rings."""
    n = np.arange(L)
    return np.where(n <= L // 2, n, n - L)


@dataclass
class GeneratorBundle:
    """A ring model enumerated over a value window.

    G follows the function convention: G[x, y] is the jump rate from state
    x to state y, rows sum to zero.  Distributions evolve under G.T.
    `suppressed` counts positive-rate moves dropped because they left the
    window; a nonzero count means the window truncates the dynamics."""

    spec: RateSpec
    L: int
    z_lo: int
    z_hi: int
    digits: np.ndarray     # (n_states, L) value indices
    values: np.ndarray     # (n_states, L) absolute values
    G: sparse.csr_matrix
    suppressed: int


def _state_table(m: int, L: int) -> np.ndarray:
    n = m ** L
    if n > STATE_CAP:
        raise ValueError(
            f"{n} states exceeds the enumeration cap ({STATE_CAP}); "
            "shrink the ring or the value window")
    codes = np.arange(n, dtype=np.int64)
    pows = m ** np.arange(L, dtype=np.int64)
    return (codes[:, None] // pows[None, :]) % m


def build_generator(spec: RateSpec, L: int, z_lo: int, z_hi: int) -> GeneratorBundle:
    """Enumerate the full ring chain over the value window [z_lo, z_hi]."""
    z_lo, z_hi = spec.space.clip_window(z_lo, z_hi)
    m = z_hi - z_lo + 1
    digits = _state_table(m, L)
    n = digits.shape[0]
    codes = np.arange(n, dtype=np.int64)
    pows = m ** np.arange(L, dtype=np.int64)
    P, Q = spec.rate_tables(z_lo, z_hi)
    src_all, dst_all, dat_all = [], [], []
    suppressed = 0
    for e in range(L):
        j = (e + 1) % L
        yi = digits[:, e]
        yj = digits[:, j]
        for rate, sgn in ((P[yi, yj], 1), (Q[yi, yj], -1)):
            if sgn > 0:
                can = (yi > 0) & (yj < m - 1)
            else:
                can = (yj > 0) & (yi < m - 1)
            act = rate > 0
            take = act & can
            suppressed += int((act & ~can).sum())
            src_all.append(codes[take])
            dst_all.append(codes[take] + sgn * (pows[j] - pows[e]))
            dat_all.append(rate[take])
    src = np.concatenate(src_all)
    dst = np.concatenate(dst_all)
    dat = np.concatenate(dat_all)
    G = sparse.coo_matrix((dat, (src, dst)), shape=(n, n)).tocsr()
    out = np.asarray(G.sum(axis=1)).ravel()
    G = (G - sparse.diags(out)).tocsr()
    return GeneratorBundle(
        spec=spec, L=L, z_lo=z_lo, z_hi=z_hi,
        digits=digits, values=digits + z_lo, G=G, suppressed=suppressed,
    )


def bundle_for_marginal(spec: RateSpec, marginal: Marginal, L: int) -> GeneratorBundle:
    return build_generator(spec, L, marginal.z_lo, marginal.z_hi)


def product_vector(marginal: Marginal, bundle: GeneratorBundle) -> np.ndarray:
    """Product-measure weights on the enumerated states, renormalized over
    the bundle's window."""
    if marginal.z_lo != bundle.z_lo or marginal.z_hi != bundle.z_hi:
        raise ValueError("marginal support must match the bundle window")
    probs = marginal.probs / marginal.probs.sum()
    pi = np.prod(probs[bundle.digits], axis=1)
    return pi


def stationarity_residual(spec: RateSpec, marginal: Marginal, L: int) -> float:
    """max |pi^T G|: zero iff the product measure is stationary on the ring."""
    bundle = bundle_for_marginal(spec, marginal, L)
    pi = product_vector(marginal, bundle)
    return float(np.abs(bundle.G.T.dot(pi)).max())


def adjoint_matrix_residual(spec: RateSpec, marginal: Marginal, L: int) -> float:
    """max entry of D_pi G - (D_pi G*)^T where G* is the ring generator of
    the reversed model: zero iff reversal is the pi-adjoint."""
    from .models import reversed_process

    bundle = bundle_for_marginal(spec, marginal, L)
    rev = bundle_for_marginal(reversed_process(spec), marginal, L)
    pi = product_vector(marginal, bundle)
    A = bundle.G.multiply(pi[:, None]).tocsr()
    B = rev.G.multiply(pi[:, None]).T.tocsr()
    R = (A - B).tocoo()
    return float(np.abs(R.data).max()) if R.nnz else 0.0


def _random_cylinder(bundle: GeneratorBundle, sites: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Random function of the window values at the given sites, bounded by 1."""
    m = bundle.z_hi - bundle.z_lo + 1
    table = rng.uniform(-1.0, 1.0, size=(m,) * len(sites))
    return table[tuple(bundle.digits[:, s] for s in sites)]


def adjoint_residual(spec: RateSpec, marginal: Marginal, L: int,
                     trials: int = 100, seed: int = 0) -> float:
    """Weak-form reversal check: max over random bounded cylinder pairs
    (psi, phi) of |E[psi G phi] - E[phi G* psi]| under the stationary
    product law, with G* the ring generator of the reversed model.  Each
    function depends on at most three randomly chosen sites and takes
    values in [-1, 1]."""
    from .models import reversed_process

    bundle = bundle_for_marginal(spec, marginal, L)
    rev = bundle_for_marginal(reversed_process(spec), marginal, L)
    pi = product_vector(marginal, bundle)
    rng = np.random.default_rng(seed)
    k = min(3, L)
    worst = 0.0
    for _ in range(trials):
        psi = _random_cylinder(bundle, rng.choice(L, size=k, replace=False), rng)
        phi = _random_cylinder(bundle, rng.choice(L, size=k, replace=False), rng)
        lhs = float(pi @ (psi * bundle.G.dot(phi)))
        rhs = float(pi @ (phi * rev.G.dot(psi)))
        worst = max(worst, abs(lhs - rhs))
    return worst


def flux_identity_residual(spec: RateSpec, marginal: Marginal) -> float:
    """Residual of the two-site identity tying the reversed flux to the
    activity: E[r*(w0, w1)(w0 - w1)] + E[S(w0, w1)] over the product law,
    with r*(y, z) = p(z, y) - q(z, y) and S = p + q."""
    P, Q = spec.rate_tables(marginal.z_lo, marginal.z_hi)
    mu = marginal.probs / marginal.probs.sum()
    vals = marginal.support.astype(float)
    rstar = (P - Q).T
    diff = vals[:, None] - vals[None, :]
    lhs = mu @ (rstar * diff) @ mu
    rhs = mu @ (P + Q) @ mu
    return float(abs(lhs + rhs))


# ---------------------------------------------------------------------------
# uniformized time evolution

def _term_cap(lam_t: float) -> int:
    return int(lam_t + 40.0 * np.sqrt(lam_t + 1.0) + 50.0)


def _poisson_weights(lam_t: float, kmax: int) -> np.ndarray:
    if lam_t <= 0.0:
        w = np.zeros(kmax + 1)
        w[0] = 1.0
        return w
    k = np.arange(kmax + 1)
    return np.exp(k * np.log(lam_t) - lam_t - gammaln(k + 1))


def evolve(A: sparse.csr_matrix, v0: np.ndarray, t: float) -> np.ndarray:
    """exp(t A) v0 for a generator-shaped sparse A (nonpositive diagonal,
    nonnegative off-diagonal), by the uniformized Poisson series."""
    lam = float(-A.diagonal().min())
    if lam <= 0.0 or t <= 0.0:
        return v0.copy()
    K = (A.multiply(1.0 / lam) + sparse.identity(A.shape[0], format="csr")).tocsr()
    kmax = _term_cap(lam * t)
    w = _poisson_weights(lam * t, kmax)
    acc = w[0] * v0
    cur = v0
    for k in range(1, kmax + 1):
        cur = K.dot(cur)
        if w[k] != 0.0:
            acc = acc + w[k] * cur
    return acc


def evolve_measure(bundle: GeneratorBundle, pi0: np.ndarray, t: float) -> np.ndarray:
    return evolve(bundle.G.T.tocsr(), pi0, t)


# ---------------------------------------------------------------------------
# exact identity sides

def two_point_exact(spec: RateSpec, marginal: Marginal, L: int, t: float) -> np.ndarray:
    """Cov(w_n(t), w_0(0)) for every ring offset n, started from the
    stationary product measure."""
    bundle = bundle_for_marginal(spec, marginal, L)
    pi = product_vector(marginal, bundle)
    vals = bundle.values.astype(float)
    rho = pi @ vals[:, 0]
    a0 = pi * (vals[:, 0] - rho)
    a_t = evolve_measure(bundle, a0, t)
    return a_t @ vals


def two_point_sum_residual(spec: RateSpec, marginal: Marginal, L: int, t: float) -> float:
    """The ring sum rule: the two-point function summed over all offsets
    equals the single-site variance at any time."""
    cov = two_point_exact(spec, marginal, L, t)
    return float(abs(cov.sum() - marginal.variance))


def q_distribution_exact(spec: RateSpec, marginal: Marginal, L: int, t: float) -> np.ndarray:
    """Law of the discrepancy position at time t in the coupled pair chain,
    started from the size-biased origin law and the discrepancy at site 0.

    Returns P(position = n) for n = 0..L-1."""
    z_lo, z_hi = marginal.z_lo, marginal.z_hi
    m = z_hi - z_lo + 1
    digits = _state_table(m, L)
    n = digits.shape[0]
    if n * L > STATE_CAP:
        raise ValueError(
            f"{n * L} coupled states exceeds the enumeration cap ({STATE_CAP})")
    codes = np.arange(n, dtype=np.int64)
    pows = m ** np.arange(L, dtype=np.int64)
    P, Q = spec.rate_tables(z_lo, z_hi)

    src_all, dst_all, dat_all = [], [], []

    def add(src, dst, rate, mask):
        mask = mask & (rate > 0)
        src_all.append(src[mask])
        dst_all.append(dst[mask])
        dat_all.append(rate[mask])

    top = m - 1
    for e in range(L):
        j = (e + 1) % L
        yi = digits[:, e]
        yj = digits[:, j]
        for q in range(L):
            valid = digits[:, q] <= top - 1
            diq = 1 if q == e else 0
            djq = 1 if q == j else 0
            zi = np.minimum(yi + diq, top)
            zj = np.minimum(yj + djq, top)
            sidx = codes * L + q
            pyz = P[yi, zj]
            qzy = Q[zi, yj]
            if q == e:
                # discrepancy on the donor side of a deposit, or the
                # receiver side of a removal: rows 1 and 5 move it to j
                r1 = P[zi, zj] - pyz
                add(sidx, codes * L + j, np.where(valid, r1, 0.0),
                    yj <= top - 1)
                r5 = Q[yi, yj] - qzy
                add(sidx, (codes + pows[e] - pows[j]) * L + j,
                    np.where(valid, r5, 0.0), (yj >= 1) & (yi <= top - 1))
            if q == j:
                # rows 2 and 4 move it back to e
                r2 = P[yi, yj] - pyz
                add(sidx, (codes - pows[e] + pows[j]) * L + e,
                    np.where(valid, r2, 0.0), (yi >= 1) & (yj <= top - 1))
                r4 = Q[zi, zj] - qzy
                add(sidx, codes * L + e, np.where(valid, r4, 0.0),
                    yi <= top - 1)
            # joint moves leave the discrepancy in place
            r3 = np.where(valid, pyz, 0.0)
            add(sidx, (codes - pows[e] + pows[j]) * L + q, r3,
                (yi >= 1) & (yj + djq <= top - 1))
            r6 = np.where(valid, qzy, 0.0)
            add(sidx, (codes + pows[e] - pows[j]) * L + q, r6,
                (yj >= 1) & (yi + diq <= top - 1))

    N = n * L
    src = np.concatenate(src_all)
    dst = np.concatenate(dst_all)
    dat = np.concatenate(dat_all)
    G = sparse.coo_matrix((dat, (src, dst)), shape=(N, N)).tocsr()
    out = np.asarray(G.sum(axis=1)).ravel()
    G = (G - sparse.diags(out)).tocsr()

    probs = marginal.probs / marginal.probs.sum()
    hat = size_biased_marginal(spec, marginal)
    hp = np.zeros(m)
    hp[hat.z_lo - z_lo:hat.z_hi - z_lo + 1] = hat.probs
    pi = np.prod(probs[digits], axis=1)
    pi_hat = pi / probs[digits[:, 0]] * hp[digits[:, 0]]
    v0 = np.zeros(N)
    v0[codes * L + 0] = pi_hat
    v_t = evolve(G.T.tocsr(), v0, t)
    return v_t.reshape(n, L).sum(axis=0)


def second_class_law_residual(spec: RateSpec, marginal: Marginal, L: int, t: float) -> float:
    """Largest gap between the two-point function and the single-site
    variance times the discrepancy-position law."""
    cov = two_point_exact(spec, marginal, L, t)
    qdist = q_distribution_exact(spec, marginal, L, t)
    return float(np.abs(cov - marginal.variance * qdist).max())


def flux_variance_quadrature(spec: RateSpec, marginal: Marginal, L: int, t: float) -> float:
    """Variance of the net flow through one fixed bond up to time t:
    t E[S] + 2 Int_0^t (t - v) C(v) dv, where C is the stationary
    correlation of the centered drift with the centered reversed drift.

    The correlation enters as coefficients of a Poisson series, so the
    time integral is a finite sum of regularized incomplete gammas."""
    bundle = bundle_for_marginal(spec, marginal, L)
    pi = product_vector(marginal, bundle)
    vals = bundle.values
    P, Q = spec.rate_tables(bundle.z_lo, bundle.z_hi)
    i0 = vals[:, 0] - bundle.z_lo
    i1 = vals[:, 1] - bundle.z_lo
    r_vec = P[i0, i1] - Q[i0, i1]
    rstar_vec = P[i1, i0] - Q[i1, i0]
    s_vec = P[i0, i1] + Q[i0, i1]
    mean_r = pi @ r_vec
    mean_rstar = pi @ rstar_vec
    r_t = r_vec - mean_r
    u = pi * (rstar_vec - mean_rstar)

    G = bundle.G
    lam = float(-G.diagonal().min())
    base = t * float(pi @ s_vec)
    if lam <= 0.0 or t <= 0.0:
        return base
    K = (G.multiply(1.0 / lam) + sparse.identity(G.shape[0], format="csr")).tocsr()
    kmax = _term_cap(lam * t)
    c = np.empty(kmax + 1)
    cur = r_t
    c[0] = u @ cur
    for k in range(1, kmax + 1):
        cur = K.dot(cur)
        c[k] = u @ cur
    k = np.arange(kmax + 1)
    x = lam * t
    integral = (t / lam) * gammainc(k + 1, x) - ((k + 1) / lam ** 2) * gammainc(k + 2, x)
    return base + 2.0 * float(c @ integral)


def flux_variance_weighted_sum(spec: RateSpec, marginal: Marginal, L: int,
                               t: float, v: float = 0.0) -> float:
    """The same variance through the two-point function: the covariances
    weighted by the distance from the observer bond to each site."""
    cov = two_point_exact(spec, marginal, L, t)
    m = math.trunc(v * t)
    w = np.abs(m - signed_offsets(L))
    return float(w @ cov)


def flux_variance_residual(spec: RateSpec, marginal: Marginal, L: int, t: float) -> float:
    """Gap between the quadrature form and the weighted two-point sum for
    the fixed-bond flux variance; both are exact on the ring."""
    return float(abs(flux_variance_quadrature(spec, marginal, L, t)
                     - flux_variance_weighted_sum(spec, marginal, L, t)))


def drift_sum_exact(spec: RateSpec, marginal: Marginal, L: int, t: float) -> tuple[float, float]:
    """Both sides of the first-moment identity: the offset-weighted sum of
    the two-point function against t times the drift-value covariance."""
    cov = two_point_exact(spec, marginal, L, t)
    lhs = float(signed_offsets(L) @ cov)
    bundle = bundle_for_marginal(spec, marginal, L)
    pi = product_vector(marginal, bundle)
    vals = bundle.values
    P, Q = spec.rate_tables(bundle.z_lo, bundle.z_hi)
    i0 = vals[:, 0] - bundle.z_lo
    i1 = vals[:, 1] - bundle.z_lo
    r_vec = P[i0, i1] - Q[i0, i1]
    pair = vals[:, 0] + vals[:, 1]
    rhs = t * float(pi @ (r_vec * pair) - (pi @ r_vec) * (pi @ pair))
    return lhs, rhs


def exit_rate(spec: RateSpec, omega: np.ndarray) -> float:
    """Total rate out of one ring configuration."""
    omega = np.asarray(omega, dtype=np.int64)
    z_lo = int(omega.min())
    z_hi = int(omega.max())
    P, Q = spec.rate_tables(z_lo, z_hi)
    idx = omega - z_lo
    nxt = np.roll(idx, -1)
    return float(P[idx, nxt].sum() + Q[idx, nxt].sum())
