"""Derivative-only line search: bracket by doubling, then secant/bisection hybrid.

Steps are accepted under the approximate Wolfe conditions

    (2 c1 - 1) phi'(0) >= phi'(alpha) >= c2 phi'(0),

which only need phi', never phi itself.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import NumericalInstability

C1 = 0.1
C2 = 0.5
MAX_EXPANSIONS = 60
MAX_REFINEMENTS = 200
# Relative gap between the last good step and the overflow ceiling at which
# the search gives up on bracketing and takes the last good step.
CEILING_GAP = 1e-3


@dataclass
class LineSearchState:
    alpha_lo: float
    alpha_hi: float | None
    phi_prime_lo: float
    phi_prime_hi: float | None
    evals: int = 0


class LineSearchError(RuntimeError):
    def __init__(self, message, state):
        self.state = state
        super().__init__(f"{message}: {state}")


@dataclass
class LineSearchResult:
    alpha: float
    phi_prime: float
    evals: int
    payload: object = None
    wolfe: bool = True


def approximate_wolfe(dphi, dphi0, c1=C1, c2=C2):
    return (2.0 * c1 - 1.0) * dphi0 >= dphi >= c2 * dphi0


def secant_step(alpha_lo, alpha_hi, dphi_lo, dphi_hi):
    """Minimizer of the quadratic whose slope matches phi' at both bracket ends."""
    return (alpha_lo * dphi_hi - alpha_hi * dphi_lo) / (dphi_hi - dphi_lo)


def hybrid_step(alpha_lo, alpha_hi, dphi_lo, dphi_hi):
    sec = secant_step(alpha_lo, alpha_hi, dphi_lo, dphi_hi)
    return 0.5 * sec + 0.5 * (alpha_hi + alpha_lo) / 2.0


def line_search(phi_prime, dphi0, alpha0=1.0, c1=C1, c2=C2,
                max_expansions=MAX_EXPANSIONS, max_refinements=MAX_REFINEMENTS):
    """Find a step satisfying the approximate Wolfe conditions.

    Parameters
    ----------
    phi_prime : callable
        ``phi_prime(alpha) -> (value, payload)``; may raise
        :class:`NumericalInstability` when the trial point overflows, which is
        treated as overshooting.
    dphi0 : float
        Directional derivative at ``alpha = 0``; must be negative.

    Returns
    -------
    LineSearchResult
        The accepted step with the payload from its ``phi_prime`` call.
    """
    state = LineSearchState(0.0, None, dphi0, None)
    if not dphi0 < 0:
        raise LineSearchError("not a descent direction", state)
    if not 0 < c1 < 0.5 or not c1 < c2 < 1:
        raise ValueError("need 0 < c1 < 1/2 and c1 < c2 < 1")

    ceiling = None  # smallest step known to overflow
    lo_payload = None
    alpha = alpha0
    for _ in range(max_expansions):
        if ceiling is not None and lo_payload is not None \
                and ceiling - state.alpha_lo <= CEILING_GAP * ceiling:
            # phi' < 0 on all of [0, alpha_lo]: a descent step, just not a Wolfe one.
            return LineSearchResult(state.alpha_lo, state.phi_prime_lo, state.evals,
                                    lo_payload, wolfe=False)
        state.evals += 1
        try:
            dphi, payload = phi_prime(alpha)
        except NumericalInstability:
            ceiling = alpha
            alpha = 0.5 * (state.alpha_lo + alpha)
            continue
        if approximate_wolfe(dphi, dphi0, c1, c2):
            return LineSearchResult(alpha, dphi, state.evals, payload)
        if dphi < 0:
            state.alpha_lo, state.phi_prime_lo = alpha, dphi
            lo_payload = payload
            alpha = 2.0 * alpha if ceiling is None else 0.5 * (alpha + ceiling)
        else:
            state.alpha_hi, state.phi_prime_hi = alpha, dphi
            break
    else:
        raise LineSearchError("failed to bracket a minimizer", state)

    for _ in range(max_refinements):
        alpha = hybrid_step(state.alpha_lo, state.alpha_hi,
                            state.phi_prime_lo, state.phi_prime_hi)
        state.evals += 1
        dphi, payload = phi_prime(alpha)
        if approximate_wolfe(dphi, dphi0, c1, c2):
            return LineSearchResult(alpha, dphi, state.evals, payload)
        if dphi < 0:
            state.alpha_lo, state.phi_prime_lo = alpha, dphi
        else:
            state.alpha_hi, state.phi_prime_hi = alpha, dphi
    raise LineSearchError("bracket refinement did not terminate", state)
