"""Block-diagonal complex semidefinite programs.

Problems have the form::

    maximize   sum_b <C_b, X_b>
    subject to sum_b <A_jb, X_b> = b_j   for j = 1..m
               X_b >= 0

with Hermitian data and ``<A, X> = Re Tr(A X)``.  The dual is::

    minimize   b.y   subject to   sum_j y_j A_jb - C_b = S_b >= 0.

Complex blocks are mapped to real symmetric blocks of twice the size
(``H -> [[Re H, -Im H], [Im H, Re H]]``); the map preserves the optimum.
The real problem is solved with a primal-dual interior-point method (HKM
search direction, Mehrotra predictor-corrector).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, InstanceTooLarge

log = logging.getLogger(__name__)

MAX_DEFAULT_PROFILE_DIM = 256


@dataclass(frozen=True, eq=False)
class SdpProblem:
    """Hermitian SDP data, one entry per block.

    ``a_ops[b]`` has shape ``(m, blocks[b], blocks[b])``; constraint ``j``
    is ``sum_b <a_ops[b][j], X_b> = rhs[j]``.
    """

    blocks: tuple[int, ...]
    objective: tuple[np.ndarray, ...]
    a_ops: tuple[np.ndarray, ...]
    rhs: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(d) for d in self.blocks))
        object.__setattr__(self, "objective", tuple(np.asarray(c, dtype=complex) for c in self.objective))
        object.__setattr__(self, "a_ops", tuple(np.asarray(a, dtype=complex) for a in self.a_ops))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=float).reshape(-1))
        m = self.rhs.size
        if not (len(self.blocks) == len(self.objective) == len(self.a_ops)):
            raise DimensionError("blocks, objective and a_ops must have one entry per block")
        for d, c, a in zip(self.blocks, self.objective, self.a_ops):
            if c.shape != (d, d) or a.shape != (m, d, d):
                raise DimensionError(f"block of size {d}: objective {c.shape}, constraints {a.shape}, m={m}")
            if np.max(np.abs(c - c.conj().T), initial=0.0) > 1e-10:
                raise DimensionError("objective must be Hermitian")
            if np.max(np.abs(a - a.conj().transpose(0, 2, 1)), initial=0.0) > 1e-10:
                raise DimensionError("constraint operators must be Hermitian")

    @property
    def dimension(self) -> int:
        return sum(self.blocks)

    @property
    def n_constraints(self) -> int:
        return self.rhs.size

    @property
    def constraints(self):
        """``(A_j blocks, b_j)`` pairs."""
        return [(tuple(a[j] for a in self.a_ops), float(self.rhs[j])) for j in range(self.n_constraints)]


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-5
    feas_tol: float = 1e-7
    max_iter: int = 100
    # the iteration keeps going past the certificate thresholds down to this
    target_tol: float = 1e-10
    max_dim: int = MAX_DEFAULT_PROFILE_DIM


@dataclass(frozen=True, eq=False)
class SdpSolution:
    primal_value: float
    dual_value: float
    x: tuple[np.ndarray, ...]
    y: np.ndarray
    s: tuple[np.ndarray, ...]
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    status: str
    history: list = field(default_factory=list, repr=False)

    @property
    def residuals(self) -> dict[str, float]:
        return {"primal": self.primal_residual, "dual": self.dual_residual}

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def embed(h: np.ndarray) -> np.ndarray:
    """Real symmetric embedding of a complex Hermitian matrix (acts on the last two axes)."""
    re, im = h.real, h.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def unembed(x: np.ndarray) -> np.ndarray:
    n = x.shape[0] // 2
    re = (x[:n, :n] + x[n:, n:]) / 2
    im = (x[n:, :n] - x[:n, n:]) / 2
    h = re + 1j * im
    return (h + h.conj().T) / 2


def _sym(m):
    return (m + m.T) / 2


def _chol_inv(m):
    c = sla.cho_factor(m, lower=True)
    return sla.cho_solve(c, np.eye(m.shape[0]))


def _max_step(x, dx):
    """Largest alpha in (0, inf] with x + alpha dx still PSD (x PD)."""
    l = np.linalg.cholesky(x)
    li = sla.solve_triangular(l, np.eye(x.shape[0]), lower=True)
    w = np.linalg.eigvalsh(_sym(li @ dx @ li.T))
    lam = w[0]
    return np.inf if lam >= 0 else -1.0 / lam


class _RealSdp:
    """min <C, X> s.t. A(X) = b, X >= 0 over real symmetric blocks."""

    def __init__(self, prob: SdpProblem):
        # maximize <C, X>  ->  minimize <-C, X>
        self.c = [-embed(c) / 2 for c in prob.objective]
        self.a = [embed(a) / 2 for a in prob.a_ops]
        self.a_flat = [a.reshape(a.shape[0], -1) for a in self.a]
        self.b = prob.rhs.copy()
        self.m = self.b.size
        self.sizes = [c.shape[0] for c in self.c]

    def op(self, xs):
        return sum(af @ x.reshape(-1) for af, x in zip(self.a_flat, xs))

    def adj(self, y):
        return [np.tensordot(y, a, axes=1) for a in self.a]

    def inner(self, us, vs):
        return float(sum(np.vdot(u, v).real for u, v in zip(us, vs)))


def solve_sdp(prob: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve ``prob`` and return primal/dual values with their certificates.

    Deterministic for identical inputs.  ``status`` is ``"optimal"`` when the
    gap and both residuals are inside ``opts``; ``"max_iter"`` returns the
    best iterate found; ``"infeasible"`` is reported when the iterates
    diverge.
    """
    opts = SolverOptions() if opts is None else opts
    if prob.dimension > opts.max_dim:
        raise InstanceTooLarge(f"SDP dimension {prob.dimension} exceeds solver profile limit {opts.max_dim}")
    P = _RealSdp(prob)
    m = P.m
    n_tot = sum(P.sizes)

    norm_a = max((np.linalg.norm(af[j]) for af in P.a_flat for j in range(m)), default=1.0)
    norm_c = max(np.linalg.norm(c) for c in P.c)
    alpha0 = n_tot * max(1.0, np.max(np.abs(P.b), initial=1.0)) / (1.0 + norm_a)
    beta0 = (1.0 + max(norm_a, norm_c)) / np.sqrt(n_tot)
    xs = [alpha0 * np.eye(d) for d in P.sizes]
    ss = [beta0 * np.eye(d) for d in P.sizes]
    y = np.zeros(m)

    norm_b = 1.0 + np.linalg.norm(P.b)
    norm_cc = 1.0 + np.sqrt(sum(np.linalg.norm(c) ** 2 for c in P.c))

    def measures(xs, y, ss):
        rp = P.b - P.op(xs)
        rd = [c - s - a for c, s, a in zip(P.c, ss, P.adj(y))]
        pobj = P.inner(P.c, xs)
        dobj = float(P.b @ y)
        return rp, rd, pobj, dobj

    history = []
    best = None
    status = "max_iter"
    it = 0
    for it in range(1, opts.max_iter + 1):
        rp, rd, pobj, dobj = measures(xs, y, ss)
        mu = P.inner(xs, ss) / n_tot
        pinf = np.linalg.norm(rp) / norm_b
        dinf = np.sqrt(sum(np.linalg.norm(r) ** 2 for r in rd)) / norm_cc
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append((pobj, dobj, pinf, dinf, mu))
        score = max(pinf, dinf, relgap)
        if best is None or score < best[0]:
            best = (score, [x.copy() for x in xs], y.copy(), [s.copy() for s in ss], it)
        if max(pinf, dinf, relgap, mu) <= opts.target_tol:
            status = "converged"
            break
        if not np.isfinite(score) or np.linalg.norm(y) > 1e14 or max(np.linalg.norm(x) for x in xs) > 1e14:
            status = "infeasible"
            break

        try:
            sinv = [_chol_inv(s) for s in ss]
        except np.linalg.LinAlgError:
            status = "numerical"
            break
        # Schur complement M_ij = sum_b Tr(A_i X A_j S^-1)
        M = np.zeros((m, m))
        for a, af, x, si in zip(P.a, P.a_flat, xs, sinv):
            g = x @ a @ si
            M += af @ g.transpose(0, 2, 1).reshape(m, -1).T
        M = (M + M.T) / 2
        try:
            cf = sla.cho_factor(M, lower=True)
            solve_m = lambda v: sla.cho_solve(cf, v)  # noqa: E731
        except np.linalg.LinAlgError:
            lu = sla.lu_factor(M + 1e-14 * np.trace(M) / m * np.eye(m))
            solve_m = lambda v: sla.lu_solve(lu, v)  # noqa: E731

        def direction(sigma, corr):
            # complementarity target X S = sigma mu I - corr
            base = [x - sigma * mu * si + x @ r @ si for x, si, r in zip(xs, sinv, rd)]
            if corr is not None:
                base = [bb + cc @ si for bb, cc, si in zip(base, corr, sinv)]
            h = rp + P.op(base)
            dy = solve_m(h)
            ds = [r - a for r, a in zip(rd, P.adj(dy))]
            dx = []
            for x, si, d in zip(xs, sinv, ds):
                v = -x + sigma * mu * si - x @ d @ si
                dx.append(v)
            if corr is not None:
                dx = [v - cc @ si for v, cc, si in zip(dx, corr, sinv)]
            return [_sym(v) for v in dx], dy, [_sym(v) for v in ds]

        def steps(dx, ds):
            ap = min(min(_max_step(x, d) for x, d in zip(xs, dx)), 1.0 / 0.98)
            ad = min(min(_max_step(s, d) for s, d in zip(ss, ds)), 1.0 / 0.98)
            return ap, ad

        try:
            dx, dy, ds = direction(0.0, None)
            ap, ad = steps(dx, ds)
            ap_, ad_ = min(1.0, ap), min(1.0, ad)
            mu_aff = P.inner([x + ap_ * d for x, d in zip(xs, dx)], [s + ad_ * d for s, d in zip(ss, ds)]) / n_tot
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
            corr = [d1 @ d2 for d1, d2 in zip(dx, ds)]
            dx, dy, ds = direction(sigma, corr)
            ap, ad = steps(dx, ds)
        except np.linalg.LinAlgError:
            status = "numerical"
            break
        tau = 0.98
        ap, ad = min(1.0, tau * ap), min(1.0, tau * ad)
        xs = [x + ap * d for x, d in zip(xs, dx)]
        y = y + ad * dy
        ss = [s + ad * d for s, d in zip(ss, ds)]
        log.debug("it %d pobj %.12g dobj %.12g pinf %.2e dinf %.2e mu %.2e", it, pobj, dobj, pinf, dinf, mu)

    _, xs, y, ss, it_best = best
    rp, rd, pobj, dobj = measures(xs, y, ss)
    primal_value = -pobj
    dual_value = -dobj
    # report residuals in the original complex scale
    pres = float(np.max(np.abs(rp), initial=0.0))
    dres = float(max(np.max(np.abs(r), initial=0.0) for r in rd)) * 2.0
    gap = abs(dual_value - primal_value)
    if status == "infeasible":
        final = "infeasible"
    elif gap <= opts.gap_tol and pres <= opts.feas_tol and dres <= opts.feas_tol:
        final = "optimal"
    else:
        final = "max_iter"
    return SdpSolution(
        primal_value=float(primal_value),
        dual_value=float(dual_value),
        x=tuple(unembed(x) for x in xs),
        y=-y,
        s=tuple(unembed(s) * 2.0 for s in ss),
        gap=float(gap),
        primal_residual=pres,
        dual_residual=dres,
        iterations=it,
        status=final,
        history=history,
    )
