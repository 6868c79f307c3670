"""Prover strategies as operators, the optimal-value SDP and a see-saw oracle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, SolverError
from .protocol import (
    X,
    Y,
    W,
    ProtocolSpec,
    ProverProgram,
    ThresholdTask,
    WinningOperator,
    check_program,
    compile_threshold,
    compile_winning_operator,
    strategy_spaces,
)
from .quantum import (
    TOL_PSD,
    Check,
    Operator,
    SpaceDims,
    ValidationReport,
    check_dim,
    hermitian_residual,
    min_eigenvalue,
    partial_trace,
    permute,
    random_isometry,
)
from .sdp import SdpProblem, SdpSolution, SolverOptions, solve_sdp

log = logging.getLogger(__name__)

TOL_CAUSAL = 1e-7
CLAMP_SLACK = 1e-4


@dataclass(frozen=True, eq=False)
class StrategyOperator:
    """``x`` on Y1 X1 ... Yr Xr and the marginals X^(1)..X^(r-1)."""

    x: np.ndarray
    marginals: tuple[np.ndarray, ...]
    dims: SpaceDims

    @property
    def r(self) -> int:
        return len(self.dims) // 2

    def level(self, k: int) -> np.ndarray:
        """X^(k); X^(r) is ``x`` itself."""
        return self.x if k == self.r else self.marginals[k - 1]

    def level_spaces(self, k: int) -> SpaceDims:
        return SpaceDims(self.dims.labels[: 2 * k])


def strategy_from_program(b: ProverProgram, p: ProtocolSpec) -> StrategyOperator:
    """Contract the prover's channels over their memory spaces."""
    check_program(p, b)
    spaces = strategy_spaces(p.x_dims, p.y_dims)
    check_dim(spaces.total, "strategy")
    acc = None
    levels = []
    for k, c in enumerate(b.phi, start=1):
        op = c.as_operator()
        acc = op if acc is None else acc.link(op)
        order = spaces.names[: 2 * k]
        marg = acc.ptrace([W(k)]) if k < p.r else acc
        levels.append(marg.reorder(order).matrix)
    return StrategyOperator(levels[-1], tuple(levels[:-1]), spaces)


def causality_residuals(s: StrategyOperator) -> list[tuple[int, float]]:
    out = []
    for k in range(s.r, 0, -1):
        sp = s.level_spaces(k)
        red = partial_trace(s.level(k), sp, [Y(k)])
        if k == 1:
            target = np.eye(sp.dim(X(1)))
        else:
            target = np.kron(s.level(k - 1), np.eye(sp.dim(X(k))))
        out.append((k, float(np.max(np.abs(red - target)))))
    return out


def validate_strategy(s: StrategyOperator, tol_psd: float = TOL_PSD, tol_causal: float = TOL_CAUSAL) -> ValidationReport:
    checks = [
        Check("hermitian", hermitian_residual(s.x), tol_psd),
        Check("psd", max(0.0, -min_eigenvalue(s.x)), tol_psd),
    ]
    for k, res in causality_residuals(s):
        checks.append(Check(f"causality_{k}", res, tol_causal))
    return ValidationReport("strategy", tuple(checks))


def hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal basis (under Re Tr) of d x d Hermitian matrices, shape (d*d, d, d)."""
    out = np.zeros((d * d, d, d), dtype=complex)
    j = 0
    for a in range(d):
        out[j, a, a] = 1.0
        j += 1
    s = 1 / math.sqrt(2)
    for a in range(d):
        for b in range(a + 1, d):
            out[j, a, b] = out[j, b, a] = s
            j += 1
            out[j, a, b], out[j, b, a] = 1j * s, -1j * s
            j += 1
    return out


def build_value_sdp(q: WinningOperator) -> SdpProblem:
    """Maximize <q1, X> over strategies; blocks are X^(1), ..., X^(r) = x."""
    spaces = q.spaces
    r = q.r
    check_dim(spaces.total, "strategy")
    level_spaces = [SpaceDims(spaces.labels[: 2 * k]) for k in range(1, r + 1)]
    sizes = [sp.total for sp in level_spaces]
    a_rows: list[list[np.ndarray | None]] = []
    rhs: list[float] = []
    labels: list[str] = []

    # Tr_{Y1} X^(1) = I_{X1}
    dy1, dx1 = level_spaces[0].dims
    for h in hermitian_basis(dx1):
        row: list[np.ndarray | None] = [None] * r
        row[0] = np.kron(np.eye(dy1), h)
        a_rows.append(row)
        rhs.append(float(np.trace(h).real))
        labels.append("causality_1")

    # Tr_{Yk} X^(k) = X^(k-1) (x) I_{Xk}
    for k in range(2, r + 1):
        prev = level_spaces[k - 2]
        dyk, dxk = spaces.dim(Y(k)), spaces.dim(X(k))
        red = prev + SpaceDims.of((X(k), dxk))
        lifted_order = level_spaces[k - 1].names
        for h in hermitian_basis(red.total):
            row = [None] * r
            lifted = np.kron(h, np.eye(dyk))
            row[k - 1] = permute(lifted, red + SpaceDims.of((Y(k), dyk)), lifted_order)
            row[k - 2] = -partial_trace(h, red, [X(k)])
            a_rows.append(row)
            rhs.append(0.0)
            labels.append(f"causality_{k}")

    m = len(rhs)
    a_ops = []
    for b, d in enumerate(sizes):
        arr = np.zeros((m, d, d), dtype=complex)
        for j, row in enumerate(a_rows):
            if row[b] is not None:
                arr[j] = row[b]
        a_ops.append(arr)
    q1 = (q.q1 + q.q1.conj().T) / 2
    objective = [np.zeros((d, d), dtype=complex) for d in sizes[:-1]] + [q1]
    return SdpProblem(tuple(sizes), tuple(objective), tuple(a_ops), np.array(rhs), tuple(labels))


@dataclass(frozen=True, eq=False)
class ValueResult:
    value: float
    solution: SdpSolution
    strategy: StrategyOperator

    @property
    def upper(self) -> float:
        return self.solution.dual_value

    @property
    def gap(self) -> float:
        return self.solution.gap


def clamp_probability(v: float, what: str = "value") -> float:
    if v < -CLAMP_SLACK or v > 1 + CLAMP_SLACK:
        raise SolverError(f"{what} {v!r} is outside [0, 1] by more than {CLAMP_SLACK}")
    return min(1.0, max(0.0, v))


def solve_value(q: WinningOperator, opts: SolverOptions | None = None) -> ValueResult:
    sol = solve_sdp(build_value_sdp(q), opts)
    if sol.status == "infeasible":
        raise SolverError("strategy SDP reported infeasible")
    if sol.status != "optimal":
        log.warning("SDP stopped with status %s (gap %.3g)", sol.status, sol.gap)
    strat = StrategyOperator(sol.x[-1], tuple(sol.x[:-1]), q.spaces)
    return ValueResult(clamp_probability(sol.primal_value), sol, strat)


def optimal_value(p: ProtocolSpec, opts: SolverOptions | None = None) -> float:
    """Prover's optimal winning probability for a single instance."""
    return solve_value(compile_winning_operator(p), opts).value


def solve_threshold_value(t: ThresholdTask, opts: SolverOptions | None = None) -> ValueResult:
    _, q = compile_threshold(t)
    return solve_value(q, opts)


def optimal_threshold_value(t: ThresholdTask, opts: SolverOptions | None = None) -> float:
    """Optimal probability of winning at least ``t.k`` of ``t.n`` instances."""
    return solve_threshold_value(t, opts).value


# ---------------------------------------------------------------------------
# See-saw lower bound
# ---------------------------------------------------------------------------


@dataclass
class _Round:
    in_labels: tuple[tuple[str, int], ...]
    out_labels: tuple[tuple[str, int], ...]
    env: int

    @property
    def d_in(self) -> int:
        return math.prod(d for _, d in self.in_labels)

    @property
    def d_out(self) -> int:
        return math.prod(d for _, d in self.out_labels)

    def choi(self, v: np.ndarray) -> Operator:
        # v has shape (d_out * env, d_in); rows indexed (out, env)
        t = v.reshape(self.d_out, self.env, self.d_in)
        j = np.einsum("oea,pec->aocp", t, t.conj()).reshape(self.d_in * self.d_out, -1)
        return Operator(j, SpaceDims(self.in_labels + self.out_labels))


def _rounds(x_dims: Sequence[int], y_dims: Sequence[int]) -> list[_Round]:
    r = len(x_dims)
    rounds = []
    w_prev = 1
    for i in range(1, r + 1):
        dx, dy = x_dims[i - 1], y_dims[i - 1]
        ins = ((X(i), dx),) + (((W(i - 1), w_prev),) if i > 1 else ())
        if i < r:
            w = w_prev * dx * dy
            rounds.append(_Round(ins, ((Y(i), dy), (W(i), w)), 1))
            w_prev = w
        else:
            rounds.append(_Round(ins, ((Y(i), dy),), dx * w_prev * dy))
    return rounds


def _objective(q_op: Operator, chois: list[Operator]) -> float:
    acc = q_op
    for j in chois:
        acc = acc.link(j)
    return float(acc.scalar().real)


def _polar(g: np.ndarray) -> np.ndarray:
    u, _, vh = np.linalg.svd(g, full_matrices=False)
    return u @ vh


def _round_operator(q_op: Operator, chois: list[Operator], i: int, rd: _Round) -> np.ndarray:
    """R with f = Tr(R J_i), all rounds other than ``i`` held fixed."""
    k = q_op
    for j, c in enumerate(chois):
        if j != i:
            k = k.link(c)
    names = tuple(n for n, _ in rd.in_labels + rd.out_labels)
    return k.reorder(names).matrix.T


def _ascend(rmat: np.ndarray, v: np.ndarray, rd: _Round, max_steps: int, tol: float) -> tuple[np.ndarray, float]:
    # f(V) = sum_e v_e^* R v_e with columns v_e[(a, o)] = V[(o, e), a]
    def cols(v):
        return v.reshape(rd.d_out, rd.env, rd.d_in).transpose(2, 0, 1).reshape(rd.d_in * rd.d_out, rd.env)

    c = cols(v)
    g = rmat @ c
    val = float(np.vdot(c, g).real)
    for _ in range(max_steps):
        gm = g.reshape(rd.d_in, rd.d_out, rd.env).transpose(1, 2, 0).reshape(rd.d_out * rd.env, rd.d_in)
        v = _polar(gm)
        c = cols(v)
        g = rmat @ c
        new = float(np.vdot(c, g).real)
        done = new - val <= tol
        val = max(val, new)
        if done:
            break
    return v, val


def see_saw(q: WinningOperator, restarts: int = 10, seed: int = 0, max_sweeps: int = 200,
            max_steps: int = 3000, tol: float = 1e-14) -> tuple[float, list[np.ndarray]]:
    """Best value reached by alternating polar-decomposition ascent over isometries.

    Each step fixes all rounds but one; the objective is then a PSD
    quadratic form in that round's isometry, and the polar factor of its
    gradient never decreases it.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    rng = np.random.default_rng(seed)
    rounds = _rounds(q.x_dims, q.y_dims)
    q_op = Operator(q.q1.T, q.spaces)
    best_val, best_v = -np.inf, None
    for _ in range(restarts):
        vs = [random_isometry(rd.d_out * rd.env, rd.d_in, rng) for rd in rounds]
        chois = [rd.choi(v) for rd, v in zip(rounds, vs)]
        val = _objective(q_op, chois)
        for _sweep in range(max_sweeps):
            prev = val
            for i, rd in enumerate(rounds):
                rmat = _round_operator(q_op, chois, i, rd)
                vs[i], _ = _ascend(rmat, vs[i], rd, max_steps, tol)
                chois[i] = rd.choi(vs[i])
            val = _objective(q_op, chois)
            if len(rounds) == 1 or val - prev <= tol:
                break
        if val > best_val:
            best_val, best_v = val, [v.copy() for v in vs]
    return float(best_val), best_v


def see_saw_lower_bound(t: ThresholdTask, restarts: int = 10, seed: int = 0, **kw) -> float:
    """Value achieved by an explicit prover found by see-saw (a lower bound)."""
    _, q = compile_threshold(t)
    val, _ = see_saw(q, restarts=restarts, seed=seed, **kw)
    return clamp_probability(val, "see-saw value")
