"""Closed-form tail bounds and the threshold-repetition planner.

All exponentials are formed from natural-log exponents so that bounds far
below the double-precision range stay representable through the ``log_*``
helpers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.special import betainc, gammaln, logsumexp, rel_entr

from .errors import BoundVacuousError, ThresholdRepError


class PlanningError(ThresholdRepError, ValueError):
    """No repetition count in the search range certifies the target error."""


def _check_unit(name: str, v: float) -> float:
    v = float(v)
    if not (0.0 <= v <= 1.0) or math.isnan(v):
        raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
    return v


def binary_kl(gamma: float, delta: float) -> float:
    """Relative entropy D(gamma || delta) between Bernoulli laws, in nats.

    Uses 0 ln 0 = 0 and returns +inf when delta sits on the boundary below
    or above gamma.
    """
    gamma = _check_unit("gamma", gamma)
    delta = _check_unit("delta", delta)
    return float(rel_entr(gamma, delta) + rel_entr(1.0 - gamma, 1.0 - delta))


def ik_log_bound(n: int, gamma: float, delta: float) -> tuple[float, float]:
    """Natural-log exponents of :func:`ik_bound`."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    gamma = _check_unit("gamma", gamma)
    delta = _check_unit("delta", delta)
    if gamma < delta:
        raise ValueError(f"need delta <= gamma, got gamma={gamma} < delta={delta}")
    return -n * binary_kl(gamma, delta), -2.0 * n * (gamma - delta) ** 2


def ik_bound(n: int, gamma: float, delta: float) -> tuple[float, float]:
    """``(exp(-n D(gamma||delta)), exp(-2 n (gamma - delta)^2))``.

    Both bound Pr[sum X_i >= gamma n] for Boolean X_i whose every
    sub-conjunction succeeds with probability at most delta^|S|.
    """
    kl_exp, hoeff_exp = ik_log_bound(n, gamma, delta)
    return math.exp(kl_exp), math.exp(hoeff_exp)


def hedging_bound(n: int, p: float, k: int) -> float:
    """Upper bound exp(-2 n (k/n - p)^2) on winning at least k of n copies.

    ``p`` is the single-instance optimal value.  For k/n not of the form
    p + delta exactly, delta is taken as k/n - p, which can only help.
    """
    return math.exp(log_hedging_bound(n, p, k))


def log_hedging_bound(n: int, p: float, k: int) -> float:
    if n < 1 or not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    p = _check_unit("p", p)
    delta = k / n - p
    if delta <= 0:
        raise BoundVacuousError(f"bound vacuous: k/n = {k / n:.6g} does not exceed p = {p:.6g}")
    return -2.0 * n * delta * delta


def _check_tail_args(n: int, k: int, p: float) -> float:
    if n < 0 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got n={n}, k={k}")
    return _check_unit("p", p)


def _log_tail_sum(n: int, k: int, p: float) -> float:
    i = np.arange(k, n + 1)
    terms = gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1) + i * math.log(p) + (n - i) * math.log1p(-p)
    return float(logsumexp(terms))


def binomial_tail(n: int, k: int, p: float) -> float:
    """Pr[Bin(n, p) >= k].

    Evaluated as the regularized incomplete beta I_p(k, n-k+1), which keeps
    relative error near machine precision.
    """
    p = _check_tail_args(n, k, p)
    if k == 0 or p == 1.0:
        return 1.0
    if p == 0.0:
        return 0.0
    return float(betainc(k, n - k + 1, p))


def log_binomial_tail(n: int, k: int, p: float) -> float:
    """ln Pr[Bin(n, p) >= k], falling back to log-space summation on underflow."""
    p = _check_tail_args(n, k, p)
    if k == 0 or p == 1.0:
        return 0.0
    if p == 0.0:
        return -math.inf
    v = float(betainc(k, n - k + 1, p))
    if v > 1e-280:
        return math.log(v)
    return _log_tail_sum(n, k, p)


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorParams:
    a: float
    b: float
    eps: float

    def __post_init__(self):
        if not (0.0 <= self.a < self.b <= 1.0):
            raise ValueError(f"need 0 <= a < b <= 1, got a={self.a}, b={self.b}")
        if self.a >= 1.0:
            raise ValueError("a must be below 1")
        if not (0.0 < self.eps < 1.0):
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")

    @property
    def delta(self) -> float:
        return (self.b - self.a) / 2


@dataclass(frozen=True)
class RepetitionPlan:
    n: int
    k: int
    soundness_bound: float
    completeness_bound: float
    delta_eff: float
    a: float
    b: float
    eps: float
    tight: bool = False
    nominal_bound: float = 1.0

    def recertify(self) -> tuple[float, float]:
        """Recompute both bounds from (n, k, a, b) alone."""
        return certify(self.n, self.k, self.a, self.b, self.tight)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "a": self.a,
            "b": self.b,
            "eps": self.eps,
            "tight": self.tight,
            "delta_eff": self.delta_eff,
            "soundness_bound": self.soundness_bound,
            "completeness_bound": self.completeness_bound,
            "nominal_bound": self.nominal_bound,
        }


def midpoint_threshold(n: int, a: float, b: float) -> int:
    """ceil(n (a + b) / 2), exact in the binary values of a and b."""
    return math.ceil(n * (Fraction(a) + Fraction(b)) / 2)


def soundness_bound(n: int, k: int, a: float, tight: bool = False) -> float:
    """Cheating prover: bound on winning >= k of n when one copy is worth at most a."""
    if k / n <= a:
        return 1.0
    if tight:
        return min(1.0, math.exp(-n * binary_kl(k / n, a)))
    return hedging_bound(n, a, k)


def completeness_bound(n: int, k: int, b: float, tight: bool = False) -> float:
    """Honest prover playing each copy independently: Pr[fewer than k wins].

    The Hoeffding form bounds Pr[wins <= k - 1] by exp(-2 n (b - (k-1)/n)^2).
    """
    if k == 0:
        return 0.0
    if tight:
        return 1.0 - binomial_tail(n, k, b)
    gap = b - (k - 1) / n
    if gap <= 0:
        return 1.0
    return math.exp(-2.0 * n * gap * gap)


def certify(n: int, k: int, a: float, b: float, tight: bool = False) -> tuple[float, float]:
    return soundness_bound(n, k, a, tight), completeness_bound(n, k, b, tight)


def _plan_at(n: int, a: float, b: float, eps: float, tight: bool) -> RepetitionPlan:
    k = midpoint_threshold(n, a, b)
    s, c = certify(n, k, a, b, tight)
    delta = (b - a) / 2
    return RepetitionPlan(n, k, s, c, k / n - a, a, b, eps, tight, math.exp(-2.0 * n * delta * delta))


def _certifies(plan: RepetitionPlan) -> bool:
    ok = plan.soundness_bound <= plan.eps and plan.completeness_bound <= plan.eps
    if plan.tight:
        return ok
    # Hoeffding at the nominal gap delta = (b - a)/2 dominates both integer-threshold bounds
    return ok and plan.nominal_bound <= plan.eps


def plan_repetition(e: ErrorParams, tight: bool = False, n_max: int = 10**8) -> RepetitionPlan:
    """Fewest parallel copies, voting at the midpoint threshold, certifying both errors <= eps.

    The default mode takes n = ceil(ln(1/eps) / (2 delta^2)) with
    delta = (b - a)/2 and certifies with the Hoeffding form on both sides.
    ``tight`` searches from n = 1 and certifies with the relative-entropy
    form (soundness) and the exact binomial tail (completeness).
    """
    delta = e.delta
    if tight:
        n = 1
    else:
        n = max(1, math.ceil(math.log(1.0 / e.eps) / (2.0 * delta * delta)))
    while n <= n_max:
        plan = _plan_at(n, e.a, e.b, e.eps, tight)
        if _certifies(plan):
            return plan
        n += 1
    raise PlanningError(f"no n <= {n_max} certifies eps={e.eps} for a={e.a}, b={e.b}")


def plan_with_shrinking_gap(rows: Iterable[Sequence[float]], eps: float, tight: bool = False) -> RepetitionPlan:
    """First ``(n, a, b)`` row of a tabulated gap schedule whose plan certifies ``eps``."""
    rows = [(int(r[0]), float(r[1]), float(r[2])) for r in rows]
    if not rows:
        raise ValueError("empty schedule")
    ns = [r[0] for r in rows]
    if any(n2 <= n1 for n1, n2 in zip(ns, ns[1:])):
        raise ValueError("schedule rows must be strictly increasing in n")
    for n, a, b in rows:
        if n < 1:
            raise ValueError(f"schedule row has n={n} < 1")
        ErrorParams(a, b, eps)
    for n, a, b in rows:
        plan = _plan_at(n, a, b, eps, tight)
        if _certifies(plan):
            return plan
    raise PlanningError(f"no row of the schedule (n up to {ns[-1]}) certifies eps={eps}")


def read_schedule(path) -> list[tuple[int, float, float]]:
    """CSV schedule with header ``n,a,b``."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["n", "a", "b"]:
            raise ValueError(f"{path}: schedule header must be exactly n,a,b")
        rows = []
        for line in reader:
            rows.append((int(line["n"]), float(line["a"]), float(line["b"])))
    return rows


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def monte_carlo_tail(n: int, k: int, p: float, trials: int, seed: int) -> tuple[float, float]:
    """Empirical Pr[X_1 + ... + X_n >= k] for i.i.d. Bernoulli(p) and its 95% half-width."""
    p = _check_tail_args(n, k, p)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    counts = rng.binomial(n, p, size=trials)
    est = float(np.mean(counts >= k))
    half = 1.959963984540054 * math.sqrt(est * (1.0 - est) / trials)
    return est, half
