"""Coupled pair of rings sharing one clock: the basic coupling.

Two configurations eta <= zeta evolve together so that each marginal runs
the original model while the pair stays ordered.  Per bond the six joint
moves and their rates are

  1. zeta-only deposit   P(zi, zj) - P(yi, zj)
  2. eta-only deposit    P(yi, yj) - P(yi, zj)
  3. joint deposit       P(yi, zj)
  4. zeta-only removal   Q(zi, zj) - Q(zi, yj)
  5. eta-only removal    Q(yi, yj) - Q(zi, yj)
  6. joint removal       Q(zi, yj)

with y = eta, z = zeta at the bond's two sites.  The differences are
nonnegative exactly when the one-model rates are monotone in the donor
and receiver values, and rows 1, 2, 4, 5 vanish identically wherever the
two configurations agree, so ordering is preserved move by move.

The state is stored as (eta, d) with d = zeta - eta >= 0.  When the total
discrepancy is a single unit, its position is tracked explicitly: rows 1
and 5 push it across the bond to the right, rows 2 and 4 pull it to the
left, and the accumulated signed displacement is the primary observable.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numba import njit

from .models import RateSpec
from .equilibrium import Marginal, HatMarginal, sample_ring
from .ratetree import tree_alloc, tree_build, tree_set, tree_select, tree_drift
from .dynamics import (
    STATUS_DONE,
    STATUS_EXTEND,
    STATUS_ASSERT,
    DEFAULT_CHECK_EVERY,
    WINDOW_PAD,
    SimulationAssertionError,
)

STATUS_QWRAP = 3

RATE_SLACK = 1e-9


@dataclass
class CoupledState:
    eta: np.ndarray          # lower configuration, absolute values
    d: np.ndarray            # zeta - eta, nonnegative
    growth_eta: np.ndarray   # net deposits per bond in the lower copy
    growth_zeta: np.ndarray  # net deposits per bond in the upper copy
    q_site: int              # ring position of the single discrepancy, or -1
    q_disp: int = 0          # signed unwrapped displacement of the discrepancy
    time: float = 0.0
    events: int = 0

    @property
    def L(self) -> int:
        return self.eta.shape[0]

    @property
    def zeta(self) -> np.ndarray:
        return self.eta + self.d


def second_class_initial(marginal: Marginal, hat: HatMarginal, L: int,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Initial (eta, d): eta from the product measure except the origin,
    which is drawn from the size-biased law, and one extra unit at the
    origin in the upper copy."""
    eta = sample_ring(marginal, L, rng, origin=hat)
    d = np.zeros(L, dtype=np.int64)
    d[0] = 1
    return eta, d


@njit(cache=True, nogil=True)
def _set_bond(tree, cap, P, Q, eta_i, d, L, e):
    """Refresh the six leaves of bond e.  Returns False on a rate that is
    negative beyond float slack, which signals broken monotonicity."""
    k = e + 1
    if k == L:
        k = 0
    yi = eta_i[e]
    yj = eta_i[k]
    zi = yi + d[e]
    zj = yj + d[k]
    pyz = P[yi, zj]
    qzy = Q[zi, yj]
    r1 = P[zi, zj] - pyz
    r2 = P[yi, yj] - pyz
    r4 = Q[zi, zj] - qzy
    r5 = Q[yi, yj] - qzy
    scale = 1.0 + P[zi, zj] + Q[zi, zj]
    ok = True
    base = 6 * e
    for off, r in ((0, r1), (1, r2), (2, pyz), (3, r4), (4, r5), (5, qzy)):
        if r < 0.0:
            if r < -RATE_SLACK * scale:
                ok = False
            r = 0.0
        tree_set(tree, cap, base + off, r)
    return ok


@njit(cache=True, nogil=True)
def _run_coupled(eta_i, d, growth_eta, growth_zeta, tree, cap, P, Q,
                 q_site, q_disp, d_total, t_now, t_end, rng, check_every):
    L = eta_i.shape[0]
    m = P.shape[0]
    half = L // 2
    events = 0
    while True:
        total = tree[1]
        if total <= 0.0:
            return t_end, events, STATUS_DONE, -1, 0, q_site, q_disp
        dt = rng.standard_exponential() / total
        if t_now + dt > t_end:
            return t_end, events, STATUS_DONE, -1, 0, q_site, q_disp
        t_now += dt
        leaf = tree_select(tree, cap, rng.random() * total)
        edge = leaf // 6
        row = leaf - 6 * edge + 1
        i = edge
        j = edge + 1
        if j == L:
            j = 0
        # candidate new values at the bond
        nei = eta_i[i]
        nej = eta_i[j]
        ndi = d[i]
        ndj = d[j]
        if row == 1:
            ndi -= 1
            ndj += 1
        elif row == 2:
            nei -= 1
            nej += 1
            ndi += 1
            ndj -= 1
        elif row == 3:
            nei -= 1
            nej += 1
        elif row == 4:
            ndi += 1
            ndj -= 1
        elif row == 5:
            nei += 1
            nej -= 1
            ndi -= 1
            ndj += 1
        else:
            nei += 1
            nej -= 1
        if ndi < 0 or ndj < 0:
            return t_now, events, STATUS_ASSERT, edge, row, q_site, q_disp
        if (nei < 0 or nej < 0 or nei + ndi >= m or nej + ndj >= m
                or nei >= m or nej >= m):
            # window too small for this move; apply it after extension
            return t_now, events, STATUS_EXTEND, edge, row, q_site, q_disp
        eta_i[i] = nei
        eta_i[j] = nej
        d[i] = ndi
        d[j] = ndj
        if row == 2 or row == 3:
            growth_eta[edge] += 1
        elif row == 5 or row == 6:
            growth_eta[edge] -= 1
        if row == 1 or row == 3:
            growth_zeta[edge] += 1
        elif row == 4 or row == 6:
            growth_zeta[edge] -= 1
        if q_site >= 0:
            if (row == 1 or row == 5) and q_site == i:
                q_site = j
                q_disp += 1
            elif (row == 2 or row == 4) and q_site == j:
                q_site = i
                q_disp -= 1
            if q_disp >= half or q_disp <= -half:
                return t_now, events, STATUS_QWRAP, -1, 0, q_site, q_disp
        e = edge - 1
        if e < 0:
            e = L - 1
        for _ in range(3):
            if not _set_bond(tree, cap, P, Q, eta_i, d, L, e):
                return t_now, events, STATUS_ASSERT, e, 0, q_site, q_disp
            e = e + 1
            if e == L:
                e = 0
        events += 1
        if check_every > 0 and events % check_every == 0:
            dsum = 0
            for s in range(L):
                dsum += d[s]
            if dsum != d_total:
                return t_now, events, STATUS_ASSERT, -1, 0, q_site, q_disp
            if tree_drift(tree, cap) > 1e-9 * (1.0 + tree[1]):
                return t_now, events, STATUS_ASSERT, -1, 0, q_site, q_disp


class CoupledSimulator:
    """Rate tables over a value window plus the coupled event loop."""

    def __init__(self, spec: RateSpec, z_lo: int, z_hi: int):
        self.spec = spec
        self.z_lo, self.z_hi = spec.space.clip_window(z_lo, z_hi)
        self.P, self.Q = spec.rate_tables(self.z_lo, self.z_hi)
        self.extensions = 0

    @classmethod
    def for_marginal(cls, spec: RateSpec, marginal: Marginal, pad: int = WINDOW_PAD):
        lo = marginal.z_lo - (0 if math.isfinite(spec.space.lo) else pad)
        # the upper copy carries one extra unit, so give it headroom even
        # when the sampled support already touches a finite ceiling
        hi = marginal.z_hi + (1 if math.isfinite(spec.space.hi) else pad)
        hi = min(hi, int(spec.space.hi)) if math.isfinite(spec.space.hi) else hi
        return cls(spec, lo, hi)

    def state_from(self, eta: np.ndarray, d: np.ndarray) -> CoupledState:
        eta = np.asarray(eta, dtype=np.int64)
        d = np.asarray(d, dtype=np.int64)
        if d.min() < 0:
            raise ValueError("upper copy must dominate the lower one")
        zeta = eta + d
        if eta.min() < self.z_lo or zeta.max() > self.z_hi:
            raise ValueError("initial values outside the table window")
        q_site = -1
        if d.sum() == 1:
            q_site = int(np.argmax(d))
        return CoupledState(
            eta=eta.copy(),
            d=d.copy(),
            growth_eta=np.zeros(eta.shape[0], dtype=np.int64),
            growth_zeta=np.zeros(eta.shape[0], dtype=np.int64),
            q_site=q_site,
        )

    def sample_state(self, marginal: Marginal, hat: HatMarginal, L: int,
                     rng: np.random.Generator) -> CoupledState:
        eta, d = second_class_initial(marginal, hat, L, rng)
        return self.state_from(eta, d)

    @property
    def c_max(self) -> float:
        return float((self.P + self.Q).max())

    def _fill_tree(self, eta_idx: np.ndarray, d: np.ndarray):
        L = eta_idx.shape[0]
        tree, cap = tree_alloc(6 * L)
        yi = eta_idx
        yj = np.roll(eta_idx, -1)
        zi = yi + d
        zj = yj + np.roll(d, -1)
        pyz = self.P[yi, zj]
        qzy = self.Q[zi, yj]
        rows = np.empty((6, L))
        rows[0] = self.P[zi, zj] - pyz
        rows[1] = self.P[yi, yj] - pyz
        rows[2] = pyz
        rows[3] = self.Q[zi, zj] - qzy
        rows[4] = self.Q[yi, yj] - qzy
        rows[5] = qzy
        scale = 1.0 + self.P[zi, zj] + self.Q[zi, zj]
        if (rows < -RATE_SLACK * scale).any():
            raise SimulationAssertionError(
                "negative coupled rate: the model is not attractive here")
        np.maximum(rows, 0.0, out=rows)
        tree[cap:cap + 6 * L] = rows.T.ravel()
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

    # per row: change to (eta_i, eta_j, d_i, d_j)
    _ROW_DELTAS = {
        1: (0, 0, -1, 1),
        2: (-1, 1, 1, -1),
        3: (-1, 1, 0, 0),
        4: (0, 0, 1, -1),
        5: (1, -1, -1, 1),
        6: (1, -1, 0, 0),
    }

    def _apply_row(self, state: CoupledState, edge: int, row: int):
        L = state.L
        i, j = edge, (edge + 1) % L
        de_i, de_j, dd_i, dd_j = self._ROW_DELTAS[row]
        state.eta[i] += de_i
        state.eta[j] += de_j
        state.d[i] += dd_i
        state.d[j] += dd_j
        if row in (2, 3):
            state.growth_eta[edge] += 1
        elif row in (5, 6):
            state.growth_eta[edge] -= 1
        if row in (1, 3):
            state.growth_zeta[edge] += 1
        elif row in (4, 6):
            state.growth_zeta[edge] -= 1
        if state.q_site >= 0:
            if row in (1, 5) and state.q_site == i:
                state.q_site = j
                state.q_disp += 1
            elif row in (2, 4) and state.q_site == j:
                state.q_site = i
                state.q_disp -= 1
        state.events += 1

    def run(self, state: CoupledState, t_end: float, rng: np.random.Generator,
            check_every: int = DEFAULT_CHECK_EVERY) -> CoupledState:
        """Advance the coupled state to time t_end (in place)."""
        if t_end < state.time:
            raise ValueError("t_end is before the current state time")
        d_total = int(state.d.sum())
        while True:
            eta_idx = state.eta - self.z_lo
            tree, cap = self._fill_tree(eta_idx, state.d)
            t_now, events, status, pend_edge, pend_row, q_site, q_disp = _run_coupled(
                eta_idx, state.d, state.growth_eta, state.growth_zeta,
                tree, cap, self.P, self.Q,
                state.q_site, state.q_disp, d_total,
                state.time, t_end, rng, check_every,
            )
            state.eta[:] = eta_idx + self.z_lo
            state.time = t_now
            state.events += events
            state.q_site = q_site
            state.q_disp = q_disp
            if status == STATUS_DONE:
                return state
            if status == STATUS_ASSERT:
                raise SimulationAssertionError(
                    "coupled kernel consistency check failed")
            if status == STATUS_QWRAP:
                raise SimulationAssertionError(
                    "discrepancy displacement reached half the ring; "
                    "the ring is too short for this horizon")
            i, j = pend_edge, (pend_edge + 1) % state.L
            de_i, de_j, dd_i, dd_j = self._ROW_DELTAS[pend_row]
            nei = state.eta[i] + de_i
            nej = state.eta[j] + de_j
            nzi = nei + state.d[i] + dd_i
            nzj = nej + state.d[j] + dd_j
            self._extend_window(min(self.z_lo, nei, nej),
                                max(self.z_hi, nzi, nzj))
            self._apply_row(state, pend_edge, pend_row)
