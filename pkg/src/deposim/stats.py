"""Streaming moments, batched jackknife errors, and check reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Any, Callable

import numpy as np


class StreamingMoments:
    """Mean and variance of a stream without storing it.  Values may be
    scalars or fixed-shape arrays; merging two accumulators gives the same
    result as one pass over the concatenated stream (up to rounding)."""

    def __init__(self):
        self.n = 0
        self._mean = 0.0
        self._m2 = 0.0

    def push(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        if self.n == 1:
            self._mean = x.copy() if x.ndim else float(x)
            self._m2 = np.zeros_like(x) if x.ndim else 0.0
            return
        delta = x - self._mean
        self._mean = self._mean + delta / self.n
        self._m2 = self._m2 + delta * (x - self._mean)

    def merge(self, other: "StreamingMoments") -> "StreamingMoments":
        out = StreamingMoments()
        if self.n == 0:
            out.n, out._mean, out._m2 = other.n, other._mean, other._m2
            return out
        if other.n == 0:
            out.n, out._mean, out._m2 = self.n, self._mean, self._m2
            return out
        n = self.n + other.n
        delta = np.asarray(other._mean) - np.asarray(self._mean)
        out.n = n
        out._mean = self._mean + delta * (other.n / n)
        out._m2 = self._m2 + other._m2 + delta ** 2 * (self.n * other.n / n)
        return out

    @property
    def mean(self):
        if self.n == 0:
            raise ValueError("empty accumulator")
        return self._mean

    @property
    def variance(self):
        if self.n < 2:
            raise ValueError("variance needs at least two values")
        return self._m2 / (self.n - 1)

    @property
    def sem(self):
        return np.sqrt(self.variance / self.n)


def batch_jackknife(batch_sums: np.ndarray, batch_counts: np.ndarray,
                    stat: Callable[[np.ndarray, float], Any]):
    """Delete-one-batch jackknife.

    batch_sums[b] holds the accumulated sums of batch b (any trailing
    shape); stat(total_sums, total_count) maps pooled sums to the
    statistic, which may be a scalar or a vector.  Returns the full-sample
    statistic and its jackknife standard error, elementwise."""
    batch_sums = np.asarray(batch_sums, dtype=float)
    batch_counts = np.asarray(batch_counts, dtype=float)
    B = batch_counts.shape[0]
    if B < 2:
        raise ValueError("jackknife needs at least two batches")
    total = batch_sums.sum(axis=0)
    N = batch_counts.sum()
    theta = np.asarray(stat(total, N), dtype=float)
    loo = np.empty((B,) + theta.shape)
    for b in range(B):
        loo[b] = np.asarray(stat(total - batch_sums[b], N - batch_counts[b]),
                            dtype=float)
    center = loo.mean(axis=0)
    se = np.sqrt((B - 1) / B * ((loo - center) ** 2).sum(axis=0))
    return theta, se


def split_batches(n_replicates: int, n_batches: int) -> list[range]:
    """Contiguous, nearly equal batches of replicate indices."""
    if n_batches < 2 or n_batches > n_replicates:
        raise ValueError("need 2 <= n_batches <= n_replicates")
    edges = np.linspace(0, n_replicates, n_batches + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _native(x):
    if isinstance(x, np.ndarray):
        return [float(v) for v in x.ravel()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (list, tuple)):
        return [_native(v) for v in x]
    return x


@dataclass
class IdentityReport:
    """Outcome of one identity check: both sides, errors, and the verdict.

    For multi-site checks lhs/rhs/z are lists and the verdict uses the
    worst site.  `z` is the comparison in units of its standard error."""

    identity: str
    model: str
    params: dict
    lhs: Any
    rhs: Any
    se_lhs: Any
    se_rhs: Any
    z: Any
    passed: bool
    replicates: int
    seed: int
    runtime_seconds: float
    extra: dict = field(default_factory=dict)

    @property
    def max_abs_z(self) -> float:
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        return float(np.abs(z).max())

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("passed")
        d["pass"] = bool(self.passed)
        return {k: _native(v) for k, v in d.items()}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "IdentityReport":
        d = dict(d)
        d["passed"] = bool(d.pop("pass"))
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "IdentityReport":
        return cls.from_dict(json.loads(text))

    def summary_line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"[{verdict}] {self.identity} on {self.model}: "
                f"max |z| = {self.max_abs_z:.2f} "
                f"({self.replicates} replicates, {self.runtime_seconds:.1f}s)")


def all_passed(reports) -> bool:
    return all(r.passed for r in reports)
