"""Sparse additive corruption of the right-hand side ``B``.

A :class:`CorruptionPlan` stores the corrupted positions explicitly so the
ground-truth sets used by the theory (uncorrupted rows, corrupted columns
per row, corruption fractions) are exact.
"""
import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, ConstructionError, DomainError, ShapeError
from .solvers import make_rng, q_quantile
from .tensor_core import tprod


@dataclass(frozen=True)
class MagnitudeLaw:
    """Distribution of corruption values: ``normal`` (signed) or ``abs_normal``."""
    kind: str = "normal"
    mean: float = 100.0
    stddev: float = 20.0

    def __post_init__(self):
        if self.kind not in ("normal", "abs_normal"):
            raise ConfigError(f"unknown magnitude law {self.kind!r}")
        if not self.stddev > 0:
            raise ConfigError(f"stddev must be positive, got {self.stddev}")

    def sample(self, rng, size):
        v = rng.normal(self.mean, self.stddev, size)
        return np.abs(v) if self.kind == "abs_normal" else v

    @classmethod
    def parse(cls, text):
        """Parse ``normal(100, 20)`` or ``abs_normal(3, 2)``."""
        text = text.strip().replace(" ", "")
        try:
            kind, rest = text.split("(", 1)
            mean, std = rest.rstrip(")").split(",")
            return cls(kind, float(mean), float(std))
        except ValueError:
            raise ConfigError(f"cannot parse magnitude law {text!r}") from None

    def __str__(self):
        return f"{self.kind}({self.mean!r}, {self.stddev!r})"


@dataclass(frozen=True)
class CorruptionPlan:
    shape: tuple
    entries: tuple
    seed: Optional[int] = None
    law: Optional[MagnitudeLaw] = None

    def __post_init__(self):
        m, p, n = self.shape
        object.__setattr__(self, "shape", (int(m), int(p), int(n)))
        clean = tuple(sorted((int(i), int(j), int(h), float(v)) for i, j, h, v in self.entries))
        object.__setattr__(self, "entries", clean)
        seen = set()
        for i, j, h, _ in clean:
            if not (0 <= i < m and 0 <= j < p and 0 <= h < n):
                raise ShapeError(f"corruption index {(i, j, h)} out of bounds for {self.shape}")
            if (i, j, h) in seen:
                raise ConfigError(f"duplicate corruption index {(i, j, h)}")
            seen.add((i, j, h))

    @cached_property
    def corrupted_set(self):
        return frozenset((i, j, h) for i, j, h, _ in self.entries)

    @cached_property
    def uncorrupted_rows(self):
        bad = {i for i, _, _, _ in self.entries}
        return tuple(i for i in range(self.shape[0]) if i not in bad)

    def corrupted_columns(self, i):
        """``V_i^c``: columns ``j`` with a corruption somewhere in row slice ``i``."""
        return frozenset(j for r, j, _, _ in self.entries if r == i)

    @property
    def beta(self):
        m, p, n = self.shape
        return len(self.entries) / (m * p * n)

    @property
    def beta_row(self):
        m = self.shape[0]
        return (m - len(self.uncorrupted_rows)) / m

    def dense(self):
        out = np.zeros(self.shape)
        for i, j, h, v in self.entries:
            out[i, j, h] += v
        return out

    def to_dict(self):
        law = None if self.law is None else {"kind": self.law.kind, "mean": self.law.mean, "stddev": self.law.stddev}
        return {
            "shape": list(self.shape),
            "seed": self.seed,
            "law": law,
            "entries": [list(e) for e in self.entries],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        law = None if d.get("law") is None else MagnitudeLaw(**d["law"])
        return cls(tuple(d["shape"]), tuple(tuple(e) for e in d["entries"]), d.get("seed"), law)

    def digest(self):
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _as_count(value, name):
    count = round(value)
    if abs(value - count) > 1e-9:
        raise ConfigError(f"{name} = {value!r} is not an integer")
    return int(count)


def generate_plan(shape, beta_tilde, beta_row_tilde, law, seed):
    """Sample a plan the way the synthetic experiments do.

    ``m * beta_row_tilde`` rows are chosen without replacement, then
    ``beta_tilde * m * p * n`` positions are drawn with replacement from the
    chosen rows and collapsed to a set, so the realized fractions never exceed
    the nominal ones.
    """
    m, p, n = shape
    for name, v in (("beta_tilde", beta_tilde), ("beta_row_tilde", beta_row_tilde)):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {v}")
    n_rows = _as_count(m * beta_row_tilde, "m * beta_row_tilde")
    n_draws = _as_count(beta_tilde * m * p * n, "beta_tilde * m * p * n")
    if n_draws and not n_rows:
        raise ConfigError("corruptions requested but no corrupted rows allowed")
    return plan_from_counts(shape, n_rows, n_draws, law, seed)


def plan_from_counts(shape, n_rows, n_draws, law, seed):
    m, p, n = shape
    rng = make_rng(seed)
    if n_draws == 0:
        return CorruptionPlan(shape, (), seed, law)
    rows = np.sort(rng.choice(m, size=n_rows, replace=False))
    flat = rng.integers(0, n_rows * p * n, size=n_draws)
    flat = np.unique(flat)
    r_idx, j_idx, h_idx = np.unravel_index(flat, (n_rows, p, n))
    values = law.sample(rng, flat.size)
    entries = tuple(
        (int(rows[r]), int(j), int(h), float(v)) for r, j, h, v in zip(r_idx, j_idx, h_idx, values)
    )
    return CorruptionPlan(shape, entries, seed, law)


def apply(Bstar, plan):
    """``B = Bstar + B_corr``; untouched entries are copied bitwise."""
    if Bstar.shape != plan.shape:
        raise ShapeError(f"plan shape {plan.shape} does not match B {Bstar.shape}")
    B = np.array(Bstar, dtype=np.float64, copy=True)
    for i, j, h, v in plan.entries:
        B[i, j, h] += v
    return B


class AdversarialInstance(NamedTuple):
    B: np.ndarray
    X0: np.ndarray
    q_suggested: float
    plan: CorruptionPlan


def adversarial_mqtrk(A, Xstar, magnitude=1e3, max_doublings=40):
    """Instance on which masked QTRK never updates the one wrong entry of ``X0``.

    Every row slice gets one corruption in tube fiber ``B[i, 0, :]`` (at
    depth 0) and ``X0`` equals ``Xstar`` except at ``(0, 0, 0)``.  With ``q``
    just below ``1 - beta`` the corrupted entries dominate the residual, so
    column 0 is masked in every row.
    """
    m, l, n = A.shape
    p = Xstar.shape[1]
    if magnitude <= 0:
        raise DomainError("magnitude must be positive")
    Bstar = tprod(A, Xstar)
    X0 = np.array(Xstar, copy=True)
    X0[0, 0, 0] += 1.0
    mpn = m * p * n
    q = 1.0 - 1.0 / (p * n) - 1.0 / (2 * mpn)
    for _ in range(max_doublings + 1):
        plan = CorruptionPlan((m, p, n), tuple((i, 0, 0, magnitude) for i in range(m)))
        B = apply(Bstar, plan)
        E = tprod(A, X0) - B
        Q = q_quantile(E, q)
        if np.all(np.any(np.abs(E[:, 0, :]) > Q, axis=1)):
            return AdversarialInstance(B, X0, q, plan)
        magnitude *= 2.0
    raise ConstructionError("corruptions never dominate the residual quantile")
