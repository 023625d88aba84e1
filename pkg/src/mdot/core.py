"""Domain types and the entropic dual objective shared by every solver.

A transport plan is kept in the log domain as ``log_base + u 1^T + 1 v^T``;
it is only exponentiated when row/column sums are needed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Exponents above this abort the solve (exp(709.78) overflows float64).
MAX_EXPONENT = 700.0


class NumericalInstability(ArithmeticError):
    """Raised when a plan cannot be materialized in float64.

    ``gamma`` carries the MD step size in force when the failure happened so
    callers can report which step of the schedule was too aggressive.
    """

    def __init__(self, message, gamma=None, step=None):
        self.gamma = gamma
        self.step = step
        if gamma is not None:
            message = f"{message} (gamma_t={gamma:g})"
        super().__init__(message)


class Projector(str, enum.Enum):
    SINKHORN = "sinkhorn"
    NCG = "ncg"
    PNCG = "pncg"


def _check_simplex(x, name, atol=1e-12):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {x.shape}")
    if not np.all(x > 0):
        raise ValueError(f"{name} must be strictly positive")
    if abs(x.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (sum={x.sum()!r})")
    return x


@dataclass(frozen=True)
class Marginals:
    """Target row marginal ``r`` and column marginal ``c``."""

    r: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        r = _check_simplex(self.r, "r")
        c = _check_simplex(self.c, "c")
        if r.shape != c.shape:
            raise ValueError("r and c must have the same length")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "c", c)

    @property
    def n(self):
        return self.r.shape[0]

    @classmethod
    def uniform(cls, n):
        w = np.full(n, 1.0 / n)
        return cls(w, w.copy())


def cost_matrix(entries):
    """Validate a square cost matrix with entries in [0, 1]."""
    C = np.asarray(entries, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)) or C.min() < 0.0 or C.max() > 1.0:
        raise ValueError("cost matrix entries must lie in [0, 1]")
    return C


@dataclass
class ScaledPlan:
    """Positive matrix ``P_ij = exp(log_base_ij + u_i + v_j)``.

    ``gamma`` is bookkeeping only: the MD step size that produced the
    current ``log_base``, echoed in instability errors.
    """

    log_base: np.ndarray
    u: np.ndarray
    v: np.ndarray
    gamma: float | None = None

    @classmethod
    def from_base(cls, log_base, u=None, v=None, gamma=None):
        log_base = np.asarray(log_base, dtype=np.float64)
        n = log_base.shape[0]
        u = np.zeros(n) if u is None else np.array(u, dtype=np.float64)
        v = np.zeros(n) if v is None else np.array(v, dtype=np.float64)
        return cls(log_base, u, v, gamma)

    def with_potentials(self, u, v):
        return ScaledPlan(self.log_base, u, v, self.gamma)

    def copy(self):
        return ScaledPlan(self.log_base.copy(), self.u.copy(), self.v.copy(), self.gamma)


def log_plan(log_base, u, v):
    return log_base + u[:, None] + v[None, :]


def exp_checked(logp, gamma=None):
    """Exponentiate a log-matrix, refusing exponents beyond ``MAX_EXPONENT``."""
    top = logp.max()
    if not top <= MAX_EXPONENT:  # also catches NaN
        raise NumericalInstability(f"plan exponent {top:.4g} exceeds {MAX_EXPONENT:g}", gamma)
    return np.exp(logp)


def materialize(plan):
    return exp_checked(log_plan(plan.log_base, plan.u, plan.v), plan.gamma)


def marginals_of(P, gamma=None):
    """Row and column sums of ``P``; an all-underflowed row or column is an instability."""
    a = P.sum(axis=1)
    b = P.sum(axis=0)
    if not (a.min() > 0.0 and b.min() > 0.0):
        raise NumericalInstability("a row or column of the plan underflowed to zero", gamma)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericalInstability("plan marginals are not finite", gamma)
    return a, b


def gen_kl(y, x):
    """Generalized KL divergence of ``y`` from ``x``.

    ``sum_i x_i - y_i + y_i log(y_i / x_i)``, evaluated as
    ``y log1p((y - x)/x) - (y - x)`` so near-equal arguments keep precision.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not (np.all(x > 0) and np.all(y > 0)):
        raise ValueError("generalized KL requires strictly positive arguments")
    d = y - x
    ratio = d / x
    near = np.abs(ratio) < 0.5
    log_ratio = np.where(near, np.log1p(np.where(near, ratio, 0.0)), np.log(y) - np.log(x))
    return float(np.sum(y * log_ratio - d))


def infeasibility(P, m):
    """rho = D(r(P) | r) + D(c(P) | c)."""
    return gen_kl(P.sum(axis=1), m.r) + gen_kl(P.sum(axis=0), m.c)


def infeasibility_from_sums(a, b, m):
    return gen_kl(a, m.r) + gen_kl(b, m.c)


def dual_objective(plan, m):
    """g(u, v) = sum P(u, v) - <u, r> - <v, c> - 1."""
    P = materialize(plan)
    return float(P.sum() - plan.u @ m.r - plan.v @ m.c - 1.0)


def dual_gradient(plan, m):
    P = materialize(plan)
    a, b = P.sum(axis=1), P.sum(axis=0)
    return a - m.r, b - m.c


def sinkhorn_direction_from_sums(a, b, m):
    return np.log(a) - np.log(m.r), np.log(b) - np.log(m.c)


def sinkhorn_direction(plan, m):
    """Log-ratio of current to target marginals; its negative is a descent direction."""
    a, b = marginals_of(materialize(plan), plan.gamma)
    return sinkhorn_direction_from_sums(a, b, m)


def entropy(x):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    x = np.asarray(x, dtype=np.float64)
    nz = x[x > 0]
    return float(-np.sum(nz * np.log(nz)))


def h_min(m):
    return min(entropy(m.r), entropy(m.c))


def nats_to_bits(h):
    return h / np.log(2.0)


@dataclass
class MDConfig:
    """Outer-loop parameters for mirror descent.

    ``schedule`` lists the per-step sizes and must sum to ``gamma_bar``.
    """

    gamma_bar: float
    schedule: list
    epsilon: float
    projector: Projector = Projector.PNCG
    max_proj_iters: int = 100_000
    init: str = "independent"  # or "ones" for the classic Sinkhorn start
    warm_start: str = "previous"  # or "zero"

    def __post_init__(self):
        self.projector = Projector(self.projector)
        self.schedule = [float(g) for g in self.schedule]
        if not self.gamma_bar > 0:
            raise ValueError("gamma_bar must be positive")
        if not self.schedule or min(self.schedule) <= 0:
            raise ValueError("schedule must be a non-empty list of positive step sizes")
        if abs(sum(self.schedule) - self.gamma_bar) > 1e-12 * max(1.0, self.gamma_bar):
            raise ValueError("schedule must sum to gamma_bar")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_proj_iters < 1:
            raise ValueError("max_proj_iters must be positive")
        if self.init not in ("independent", "ones"):
            raise ValueError("init must be 'independent' or 'ones'")
        if self.warm_start not in ("previous", "zero"):
            raise ValueError("warm_start must be 'previous' or 'zero'")

    @property
    def T(self):
        return len(self.schedule)

    def to_dict(self):
        return {
            "gamma_bar": self.gamma_bar,
            "T": self.T,
            "schedule": list(self.schedule),
            "epsilon": self.epsilon,
            "projector": self.projector.value,
            "max_proj_iters": self.max_proj_iters,
            "init": self.init,
            "warm_start": self.warm_start,
        }


@dataclass
class TraceRow:
    t: int
    k: int
    rho: float
    g: float
    phi_evals: int
    elapsed_s: float


@dataclass
class SolveTrace:
    """Per-iteration record of a solve; ``k = 0`` rows hold the initial state of a projection."""

    rows: list = field(default_factory=list)

    def append(self, t, k, rho, g, phi_evals=0, elapsed_s=0.0):
        if rho < 0:
            raise ValueError("rho must be non-negative")
        self.rows.append(TraceRow(t, k, rho, g, phi_evals, elapsed_s))

    def extend(self, other):
        self.rows.extend(other.rows)

    def initial_rho(self, t):
        for row in self.rows:
            if row.t == t and row.k == 0:
                return row.rho
        raise KeyError(t)

    def iterations(self, t=None):
        return sum(1 for row in self.rows if row.k > 0 and (t is None or row.t == t))

    def phi_evals(self):
        return sum(row.phi_evals for row in self.rows)

    def totals(self):
        steps = sorted({row.t for row in self.rows})
        return {
            "iterations": self.iterations(),
            "phi_prime_evals": self.phi_evals(),
            "iterations_per_step": {str(t): self.iterations(t) for t in steps},
        }
