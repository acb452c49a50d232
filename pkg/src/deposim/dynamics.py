"""Event-driven simulation of a deposition model on a ring.

The simulator owns dense rate tables over a value window and drives an
exact event-by-event chain: waiting times are exponential in the current
total rate, the firing bond and direction are drawn from a sum tree over
the 2L per-bond rates, and each event touches three bonds' leaves.  Site
values are stored in absolute units; the kernel works in table coordinates.

For unbounded models the table window starts at the marginal support plus
a pad.  If a run ever walks a site value out of the window, the kernel
hands control back, the window is extended and the pending event applied,
and the run continues; nothing is clamped.

Flux accounting: growth[k] counts net deposits over bond (k, k+1).  The
column height over bond [V t] at time t minus the height at the origin at
time 0 equals growth at that bond minus the initial site values between
the two observation points, which is what observer_flux returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .models import RateSpec
from .equilibrium import Marginal, HatMarginal, sample_ring
from .ratetree import tree_alloc, tree_build, tree_set, tree_select, tree_drift

STATUS_DONE = 0
STATUS_EXTEND = 1
STATUS_ASSERT = 2

DEFAULT_CHECK_EVERY = 10_000
WINDOW_PAD = 4


class SimulationAssertionError(RuntimeError):
    """Internal consistency check failed inside a kernel."""


def replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    """Independent stream for one replicate, derived from the master seed and
    the replicate index (entropy-list seeding; streams are reproducible and
    do not depend on how replicates are scheduled)."""
    return np.random.default_rng([master_seed, replicate])


def bracket_offset(v: float, t: float) -> int:
    """Observer bond index [v t]: truncation toward zero."""
    return math.trunc(v * t)


@dataclass
class RingState:
    omega: np.ndarray        # current site values, absolute
    omega_init: np.ndarray   # snapshot at time 0
    growth: np.ndarray       # net deposits per bond, int64
    time: float = 0.0
    events: int = 0

    @property
    def L(self) -> int:
        return self.omega.shape[0]

    def conserved_total(self) -> int:
        return int(self.omega.sum())


@njit(cache=True, nogil=True)
def _run_ring(omega_i, growth, tree, cap, P, Q, t_now, t_end, rng, check_every):
    L = omega_i.shape[0]
    m = P.shape[0]
    events = 0
    while True:
        total = tree[1]
        if total <= 0.0:
            return t_end, events, STATUS_DONE, -1, 0
        dt = rng.standard_exponential() / total
        if t_now + dt > t_end:
            return t_end, events, STATUS_DONE, -1, 0
        t_now += dt
        leaf = tree_select(tree, cap, rng.random() * total)
        edge = leaf >> 1
        i = edge
        j = edge + 1
        if j == L:
            j = 0
        if (leaf & 1) == 0:
            ni = omega_i[i] - 1
            nj = omega_i[j] + 1
            dg = 1
        else:
            ni = omega_i[i] + 1
            nj = omega_i[j] - 1
            dg = -1
        if ni < 0 or nj < 0 or ni >= m or nj >= m:
            # table window too small for this move; apply it after extension
            return t_now, events, STATUS_EXTEND, edge, dg
        omega_i[i] = ni
        omega_i[j] = nj
        growth[edge] += dg
        e = edge - 1
        if e < 0:
            e = L - 1
        for _ in range(3):
            k = e + 1
            if k == L:
                k = 0
            a = omega_i[e]
            b = omega_i[k]
            tree_set(tree, cap, 2 * e, P[a, b])
            tree_set(tree, cap, 2 * e + 1, Q[a, b])
            e = k
        events += 1
        if check_every > 0 and events % check_every == 0:
            if tree_drift(tree, cap) > 1e-9 * (1.0 + tree[1]):
                return t_now, events, STATUS_ASSERT, -1, 0


@njit(cache=True, nogil=True)
def _run_many_fixed(omega_mat, growth_mat, tree, cap, P, Q, t_end, rng):
    """Run a batch of short replicates with a fixed table window (for
    bounded alphabets, where boundary rates vanish and no move can leave
    the table).  Returns -1, or the replicate index of an invalid move."""
    R, L = omega_mat.shape
    m = P.shape[0]
    for r in range(R):
        omega_i = omega_mat[r]
        growth = growth_mat[r]
        for e in range(L):
            k = e + 1
            if k == L:
                k = 0
            tree[cap + 2 * e] = P[omega_i[e], omega_i[k]]
            tree[cap + 2 * e + 1] = Q[omega_i[e], omega_i[k]]
        tree_build(tree, cap)
        t_now = 0.0
        while True:
            total = tree[1]
            if total <= 0.0:
                break
            dt = rng.standard_exponential() / total
            if t_now + dt > t_end:
                break
            t_now += dt
            leaf = tree_select(tree, cap, rng.random() * total)
            edge = leaf >> 1
            i = edge
            j = edge + 1
            if j == L:
                j = 0
            if (leaf & 1) == 0:
                ni = omega_i[i] - 1
                nj = omega_i[j] + 1
                dg = 1
            else:
                ni = omega_i[i] + 1
                nj = omega_i[j] - 1
                dg = -1
            if ni < 0 or nj < 0 or ni >= m or nj >= m:
                return r
            omega_i[i] = ni
            omega_i[j] = nj
            growth[edge] += dg
            e = edge - 1
            if e < 0:
                e = L - 1
            for _ in range(3):
                k = e + 1
                if k == L:
                    k = 0
                tree_set(tree, cap, 2 * e, P[omega_i[e], omega_i[k]])
                tree_set(tree, cap, 2 * e + 1, Q[omega_i[e], omega_i[k]])
                e = k
    return -1


class RingSimulator:
    """Rate tables over a value window plus the event loop around them."""

    def __init__(self, spec: RateSpec, z_lo: int, z_hi: int):
        self.spec = spec
        self.z_lo, self.z_hi = spec.space.clip_window(z_lo, z_hi)
        self.P, self.Q = spec.rate_tables(self.z_lo, self.z_hi)
        self.extensions = 0

    @classmethod
    def for_marginal(cls, spec: RateSpec, marginal: Marginal, pad: int = WINDOW_PAD):
        lo = marginal.z_lo - (0 if math.isfinite(spec.space.lo) else pad)
        hi = marginal.z_hi + (0 if math.isfinite(spec.space.hi) else pad)
        return cls(spec, lo, hi)

    @property
    def c_max(self) -> float:
        """Largest total jump rate of a single bond over the table window."""
        return float((self.P + self.Q).max())

    def state_from(self, omega: np.ndarray) -> RingState:
        omega = np.asarray(omega, dtype=np.int64)
        if omega.min() < self.z_lo or omega.max() > self.z_hi:
            raise ValueError("initial values outside the table window")
        return RingState(
            omega=omega.copy(),
            omega_init=omega.copy(),
            growth=np.zeros(omega.shape[0], dtype=np.int64),
        )

    def sample_state(self, marginal: Marginal, L: int, rng: np.random.Generator,
                     origin: HatMarginal | None = None) -> RingState:
        return self.state_from(sample_ring(marginal, L, rng, origin=origin))

    def _fill_tree(self, omega_idx: np.ndarray):
        L = omega_idx.shape[0]
        tree, cap = tree_alloc(2 * L)
        nxt = np.roll(omega_idx, -1)
        tree[cap:cap + 2 * L:2] = self.P[omega_idx, nxt]
        tree[cap + 1:cap + 2 * L + 1:2] = self.Q[omega_idx, nxt]
        tree_build(tree, cap)
        return tree, cap

    def _extend_window(self, lo_needed: int, hi_needed: int):
        lo = self.z_lo
        hi = self.z_hi
        if lo_needed < lo:
            if math.isfinite(self.spec.space.lo):
                raise SimulationAssertionError("move below a finite value bound")
            lo = lo_needed - WINDOW_PAD
        if hi_needed > hi:
            if math.isfinite(self.spec.space.hi):
                raise SimulationAssertionError("move above a finite value bound")
            hi = hi_needed + WINDOW_PAD
        self.z_lo, self.z_hi = self.spec.space.clip_window(lo, hi)
        self.P, self.Q = self.spec.rate_tables(self.z_lo, self.z_hi)
        self.extensions += 1

    def run(self, state: RingState, t_end: float, rng: np.random.Generator,
            check_every: int = DEFAULT_CHECK_EVERY) -> RingState:
        """Advance the state to time t_end (in place)."""
        if t_end < state.time:
            raise ValueError("t_end is before the current state time")
        while True:
            omega_idx = state.omega - self.z_lo
            tree, cap = self._fill_tree(omega_idx)
            t_now, events, status, pend_edge, pend_dg = _run_ring(
                omega_idx, state.growth, tree, cap, self.P, self.Q,
                state.time, t_end, rng, check_every,
            )
            state.omega[:] = omega_idx + self.z_lo
            state.time = t_now
            state.events += events
            if status == STATUS_DONE:
                return state
            if status == STATUS_ASSERT:
                raise SimulationAssertionError("sum tree drifted beyond tolerance")
            # pending move at pend_edge walked out of the window
            i, j = pend_edge, (pend_edge + 1) % state.L
            ni = state.omega[i] - pend_dg
            nj = state.omega[j] + pend_dg
            self._extend_window(min(ni, nj), max(ni, nj))
            state.omega[i] = ni
            state.omega[j] = nj
            state.growth[pend_edge] += pend_dg
            state.events += 1

    def total_rate(self, state: RingState) -> float:
        idx = state.omega - self.z_lo
        nxt = np.roll(idx, -1)
        return float(self.P[idx, nxt].sum() + self.Q[idx, nxt].sum())


# ---------------------------------------------------------------------------
# observables

def observer_flux(state: RingState, v: float) -> int:
    """Height increment seen by an observer moving at speed v, from the
    origin column at time 0 to bond [v t] at the state's current time."""
    m = bracket_offset(v, state.time)
    L = state.L
    if 2 * abs(m) >= L:
        raise ValueError(f"observer bond {m} outside the safe half ring (L={L})")
    g = int(state.growth[m % L])
    if m >= 0:
        return g - int(state.omega_init[1:m + 1].sum())
    return g + int(state.omega_init[L + m + 1:].sum()) + int(state.omega_init[0])


def observer_flux_all_origins(state: RingState, v: float) -> np.ndarray:
    """The same observable started from every origin of the ring.

    Entry i is the flux seen from origin i; all entries share the one
    trajectory, so they are identically distributed but correlated.
    """
    m = bracket_offset(v, state.time)
    L = state.L
    if 2 * abs(m) >= L:
        raise ValueError(f"observer bond {m} outside the safe half ring (L={L})")
    w0 = state.omega_init
    pref = np.concatenate([[0], np.cumsum(np.concatenate([w0, w0]))])
    i = np.arange(L)
    g = state.growth[(i + m) % L]
    if m >= 0:
        # sites i+1 .. i+m
        init = pref[i + m + 1] - pref[i + 1]
        return g - init
    # sites i+m+1 .. i, indexed in the second copy to stay nonnegative
    init = pref[i + L + 1] - pref[i + L + m + 1]
    return g + init


def two_point_gather(L: int, offsets: np.ndarray) -> np.ndarray:
    """Index matrix G with G[k, i] = (i + offsets[k]) mod L, for estimating
    E[w_{i+n}(t) w_i(0)] by averaging the products over all origins i."""
    return (np.arange(L)[None, :] + np.asarray(offsets)[:, None]) % L


def two_point_products(state: RingState, offsets: np.ndarray) -> np.ndarray:
    gather = two_point_gather(state.L, offsets)
    return state.omega[gather].astype(float) @ state.omega_init / state.L


def light_cone_check(c_max: float, t: float, window: int, L: int) -> bool:
    """True when the ring is long enough that information starting anywhere
    in the observation window cannot wrap around within time t (with a
    ten-standard-deviation Poisson slack on the front position)."""
    reach = c_max * t + window + 10.0 * math.sqrt(c_max * t)
    return L >= 2.0 * reach
