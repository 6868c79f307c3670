"""Single-prover interactive protocols and their n-fold threshold repetitions.

Factor names used throughout: ``X{i}`` verifier-to-prover message of round
``i``, ``Y{i}`` prover reply, ``Z{i}`` verifier memory, ``W{i}`` prover
memory (1-based).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, InstanceTooLarge, ProtocolFormatError, ValidationError
from .quantum import (
    BinaryPOVM,
    ChoiOperator,
    DensityOperator,
    Operator,
    SpaceDims,
    ValidationReport,
    apply_channel,
    check_dim,
    matrix_from_json,
    matrix_to_json,
    max_entangled,
    proj,
    random_choi,
    random_density,
    random_povm,
    validate,
)

PROTOCOL_FORMAT_VERSION = 1
MAX_THRESHOLD_INSTANCES = 12


def X(i: int) -> str:
    return f"X{i}"


def Y(i: int) -> str:
    return f"Y{i}"


def Z(i: int) -> str:
    return f"Z{i}"


def W(i: int) -> str:
    return f"W{i}"


def strategy_spaces(x_dims: Sequence[int], y_dims: Sequence[int]) -> SpaceDims:
    """Prover-side factors ordered Y1 X1 Y2 X2 ... Yr Xr."""
    labels = []
    for i, (dx, dy) in enumerate(zip(x_dims, y_dims), start=1):
        labels += [(Y(i), dy), (X(i), dx)]
    return SpaceDims(tuple(labels))


@dataclass(frozen=True, eq=False)
class ProtocolSpec:
    """Verifier description: initial state, response channels, final POVM."""

    r: int
    x_dims: tuple[int, ...]
    y_dims: tuple[int, ...]
    z_dims: tuple[int, ...]
    rho: DensityOperator
    psi: tuple[ChoiOperator, ...]
    povm: BinaryPOVM

    def __post_init__(self):
        object.__setattr__(self, "x_dims", tuple(int(d) for d in self.x_dims))
        object.__setattr__(self, "y_dims", tuple(int(d) for d in self.y_dims))
        object.__setattr__(self, "z_dims", tuple(int(d) for d in self.z_dims))
        object.__setattr__(self, "psi", tuple(self.psi))
        r = self.r
        if not isinstance(r, int) or r < 1:
            raise DimensionError(f"round count must be a positive integer, got {r!r}")
        for name, dims in (("x_dims", self.x_dims), ("y_dims", self.y_dims), ("z_dims", self.z_dims)):
            if len(dims) != r or any(d < 1 for d in dims):
                raise DimensionError(f"{name} must list {r} positive dimensions, got {dims}")
        if self.rho.spaces != self.rho_spaces():
            raise DimensionError(f"rho must live on {self.rho_spaces().labels}, got {self.rho.spaces.labels}")
        if len(self.psi) != r - 1:
            raise DimensionError(f"expected {r - 1} response channels, got {len(self.psi)}")
        for i, c in enumerate(self.psi, start=1):
            want_in, want_out = self.psi_spaces(i)
            if c.in_spaces != want_in or c.out_spaces != want_out:
                raise DimensionError(
                    f"psi[{i}] must map {want_in.labels} -> {want_out.labels}, "
                    f"got {c.in_spaces.labels} -> {c.out_spaces.labels}"
                )
        if self.povm.spaces != self.povm_spaces():
            raise DimensionError(f"POVM must live on {self.povm_spaces().labels}")

    @classmethod
    def from_arrays(cls, x_dims, y_dims, z_dims, rho, psi: Sequence, p1, p0=None) -> "ProtocolSpec":
        """Attach the standard factor labels to raw matrices.

        ``psi`` holds Choi matrices on ``(Y_i Z_i) (x) (X_{i+1} Z_{i+1})``.
        ``p0`` defaults to ``I - p1``.
        """
        r = len(x_dims)
        if len(psi) != r - 1:
            raise DimensionError(f"expected {r - 1} response channels, got {len(psi)}")
        shell = _Dims(r, tuple(x_dims), tuple(y_dims), tuple(z_dims))
        rho_op = DensityOperator(rho, shell.rho_spaces())
        psi_ops = []
        for i, m in enumerate(psi, start=1):
            sin, sout = shell.psi_spaces(i)
            psi_ops.append(ChoiOperator(m, sin, sout))
        p1 = np.asarray(p1, dtype=complex)
        if p0 is None:
            p0 = np.eye(p1.shape[0]) - p1
        povm = BinaryPOVM(p0, p1, shell.povm_spaces())
        return cls(r, tuple(x_dims), tuple(y_dims), tuple(z_dims), rho_op, tuple(psi_ops), povm)

    def rho_spaces(self) -> SpaceDims:
        return _Dims(self.r, self.x_dims, self.y_dims, self.z_dims).rho_spaces()

    def psi_spaces(self, i: int) -> tuple[SpaceDims, SpaceDims]:
        return _Dims(self.r, self.x_dims, self.y_dims, self.z_dims).psi_spaces(i)

    def povm_spaces(self) -> SpaceDims:
        return _Dims(self.r, self.x_dims, self.y_dims, self.z_dims).povm_spaces()

    @property
    def strategy_dim(self) -> int:
        return math.prod(self.x_dims) * math.prod(self.y_dims)


@dataclass(frozen=True)
class _Dims:
    r: int
    x_dims: tuple[int, ...]
    y_dims: tuple[int, ...]
    z_dims: tuple[int, ...]

    def rho_spaces(self) -> SpaceDims:
        return SpaceDims.of((X(1), self.x_dims[0]), (Z(1), self.z_dims[0]))

    def psi_spaces(self, i: int) -> tuple[SpaceDims, SpaceDims]:
        # psi[i] answers round i: (Y_i Z_i) -> (X_{i+1} Z_{i+1})
        sin = SpaceDims.of((Y(i), self.y_dims[i - 1]), (Z(i), self.z_dims[i - 1]))
        sout = SpaceDims.of((X(i + 1), self.x_dims[i]), (Z(i + 1), self.z_dims[i]))
        return sin, sout

    def povm_spaces(self) -> SpaceDims:
        return SpaceDims.of((Y(self.r), self.y_dims[-1]), (Z(self.r), self.z_dims[-1]))


def validate_protocol(p: ProtocolSpec, tol: float | None = None) -> ValidationReport:
    report = ValidationReport("protocol")
    report = report.merged(validate(p.rho, tol), "rho.")
    for i, c in enumerate(p.psi, start=2):
        report = report.merged(validate(c, tol), f"psi{i}.")
    return report.merged(validate(p.povm, tol), "povm.")


@dataclass(frozen=True, eq=False)
class ProverProgram:
    """Explicit prover: one channel per round plus memory dimensions."""

    w_dims: tuple[int, ...]
    phi: tuple[ChoiOperator, ...]

    def __post_init__(self):
        object.__setattr__(self, "w_dims", tuple(int(d) for d in self.w_dims))
        object.__setattr__(self, "phi", tuple(self.phi))
        if len(self.w_dims) != len(self.phi) - 1:
            raise DimensionError(f"{len(self.phi)} rounds need {len(self.phi) - 1} memory dims")

    @property
    def r(self) -> int:
        return len(self.phi)

    @classmethod
    def from_arrays(cls, p: ProtocolSpec, w_dims: Sequence[int], phi: Sequence) -> "ProverProgram":
        ops = []
        for i, m in enumerate(phi, start=1):
            sin, sout = program_spaces(p, w_dims, i)
            ops.append(ChoiOperator(m, sin, sout))
        return cls(tuple(w_dims), tuple(ops))


def program_spaces(p: ProtocolSpec, w_dims: Sequence[int], i: int) -> tuple[SpaceDims, SpaceDims]:
    """Input/output factors of the prover's round-``i`` channel."""
    r = p.r
    sin = [(X(i), p.x_dims[i - 1])]
    if i > 1:
        sin.append((W(i - 1), w_dims[i - 2]))
    sout = [(Y(i), p.y_dims[i - 1])]
    if i < r:
        sout.append((W(i), w_dims[i - 1]))
    return SpaceDims(tuple(sin)), SpaceDims(tuple(sout))


def check_program(p: ProtocolSpec, b: ProverProgram) -> None:
    if b.r != p.r:
        raise DimensionError(f"program has {b.r} rounds, protocol has {p.r}")
    for i, c in enumerate(b.phi, start=1):
        sin, sout = program_spaces(p, b.w_dims, i)
        if c.in_spaces != sin or c.out_spaces != sout:
            raise DimensionError(
                f"phi[{i}] must map {sin.labels} -> {sout.labels}, got {c.in_spaces.labels} -> {c.out_spaces.labels}"
            )


def validate_program(b: ProverProgram, tol: float | None = None) -> ValidationReport:
    report = ValidationReport("program")
    for i, c in enumerate(b.phi, start=1):
        report = report.merged(validate(c, tol), f"phi{i}.")
    return report


def _require(report: ValidationReport, what: str) -> None:
    if not report.passed:
        worst = ", ".join(f"{c.name}={c.residual:.3g}" for c in report.failures())
        raise ValidationError(f"invalid {what}: {worst}", report)


def simulate(p: ProtocolSpec, b: ProverProgram) -> float:
    """Probability of the winning outcome, by running the interaction forward."""
    check_program(p, b)
    _require(validate_protocol(p), "protocol")
    _require(validate_program(b), "prover program")
    state = p.rho
    for i in range(1, p.r + 1):
        state = apply_channel(b.phi[i - 1], state)
        if i < p.r:
            state = apply_channel(p.psi[i - 1], state)
    order = p.povm.spaces.names
    final = Operator(state.matrix, state.spaces).reorder(order).matrix
    return float(np.real(np.trace(p.povm.p1 @ final)))


@dataclass(frozen=True, eq=False)
class WinningOperator:
    """Operator ``q1`` with ``<q1, X> = Pr[win]`` for every prover strategy ``X``."""

    q1: np.ndarray
    spaces: SpaceDims

    @property
    def r(self) -> int:
        return len(self.spaces) // 2

    @property
    def x_dims(self) -> tuple[int, ...]:
        return tuple(self.spaces.dim(X(i)) for i in range(1, self.r + 1))

    @property
    def y_dims(self) -> tuple[int, ...]:
        return tuple(self.spaces.dim(Y(i)) for i in range(1, self.r + 1))


def compile_winning_operator(p: ProtocolSpec) -> WinningOperator:
    """Contract the verifier's state, channels and accepting element over Z1..Zr."""
    check_dim(p.strategy_dim, "winning operator")
    q = p.rho.as_operator()
    for c in p.psi:
        q = q.link(c.as_operator())
    # the accepting functional sigma -> Tr(P1 sigma) has Choi matrix P1^T
    q = q.link(Operator(p.povm.p1.T, p.povm.spaces))
    spaces = strategy_spaces(p.x_dims, p.y_dims)
    q = q.reorder(spaces.names)
    # pairing with the prover's strategy: <Q, X>_link = Tr(Q^T X)
    return WinningOperator(q.matrix.T.copy(), spaces)


# ---------------------------------------------------------------------------
# Parallel repetition with a threshold
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThresholdTask:
    """Win at least ``k`` of ``n`` parallel copies of ``base``."""

    base: ProtocolSpec
    n: int
    k: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not isinstance(self.k, (int, np.integer)) or not 0 <= self.k <= self.n:
            raise ValueError(f"k must satisfy 0 <= k <= n={self.n}, got {self.k!r}")


def threshold_povm(p0, p1, n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Accepting/rejecting elements for "at least k of n", instance-ordered factors."""
    d = p0.shape[0]
    check_dim(d**n, "threshold POVM")
    acc = np.zeros((d**n, d**n), dtype=complex)
    rej = np.zeros_like(acc)
    for bits in itertools.product((0, 1), repeat=n):
        m = np.ones((1, 1), dtype=complex)
        for bit in bits:
            m = np.kron(m, p1 if bit else p0)
        if sum(bits) >= k:
            acc += m
        else:
            rej += m
    return rej, acc


def _copies(m: np.ndarray, spaces: SpaceDims, n: int) -> Operator:
    """n-fold tensor power with copy ``j`` of factor ``A`` named ``A#j``."""
    labels = []
    out = np.ones((1, 1), dtype=complex)
    for j in range(1, n + 1):
        labels += [(f"{name}#{j}", d) for name, d in spaces]
        out = np.kron(out, m)
    return Operator(out, SpaceDims(tuple(labels)))


def _group(names: Iterable[str], n: int) -> list[str]:
    return [f"{name}#{j}" for name in names for j in range(1, n + 1)]


def _threshold_dims(t: ThresholdTask) -> list[tuple[str, int]]:
    b, n = t.base, t.n
    sizes = [("strategy", b.strategy_dim**n), ("rho", b.rho.spaces.total**n), ("povm", b.povm.spaces.total**n)]
    for i, c in enumerate(b.psi, start=2):
        sizes.append((f"psi{i}", (c.d_in * c.d_out) ** n))
    return sizes


def compile_threshold(t: ThresholdTask) -> tuple[ProtocolSpec, WinningOperator]:
    """The n-fold protocol (round i carries X_i^(1)...X_i^(n)) and its winning operator."""
    b, n = t.base, t.n
    if n > MAX_THRESHOLD_INSTANCES:
        raise InstanceTooLarge(f"n={n} exceeds the explicit-POVM limit {MAX_THRESHOLD_INSTANCES}; use bounds-only mode")
    for what, d in _threshold_dims(t):
        try:
            check_dim(d, what)
        except InstanceTooLarge as exc:
            raise InstanceTooLarge(f"{exc}; use bounds-only mode") from None
    if n == 1 and t.k == 1:
        return b, compile_winning_operator(b)

    rho = _copies(b.rho.matrix, b.rho.spaces, n).reorder(_group(b.rho.spaces.names, n)).matrix
    psi = []
    for c in b.psi:
        names = c.in_spaces.names + c.out_spaces.names
        op = _copies(c.matrix, c.in_spaces + c.out_spaces, n)
        psi.append(op.reorder(_group(names, n)).matrix)
    rej, acc = threshold_povm(b.povm.p0, b.povm.p1, n, t.k)
    inst = SpaceDims(tuple((f"{nm}#{j}", d) for j in range(1, n + 1) for nm, d in b.povm.spaces))
    order = _group(b.povm.spaces.names, n)
    acc = Operator(acc, inst).reorder(order).matrix
    rej = Operator(rej, inst).reorder(order).matrix
    compound = ProtocolSpec.from_arrays(
        tuple(d**n for d in b.x_dims),
        tuple(d**n for d in b.y_dims),
        tuple(d**n for d in b.z_dims),
        rho,
        psi,
        acc,
        rej,
    )
    return compound, compile_winning_operator(compound)


def restrict_to_subset(t: ThresholdTask, s: Iterable[int]) -> ThresholdTask:
    """Win-all task on the instances in ``s`` (the prover simulates the others)."""
    s = set(int(i) for i in s)
    if not s:
        raise ValueError("subset must be nonempty")
    if not s <= set(range(1, t.n + 1)):
        raise ValueError(f"subset {sorted(s)} is not contained in 1..{t.n}")
    return ThresholdTask(t.base, len(s), len(s))


# ---------------------------------------------------------------------------
# Built-in protocols
# ---------------------------------------------------------------------------


def builtin_hedging_protocol() -> ProtocolSpec:
    """One-round hedging example.

    The verifier sends half of a maximally entangled pair and accepts on the
    projector onto ``cos(pi/8)|00> + sin(pi/8)|11>`` of reply and memory.
    One copy is won with probability cos^2(pi/8); at least one of two
    copies can be won with certainty.
    """
    c, s = np.cos(np.pi / 8), np.sin(np.pi / 8)
    rho = proj(max_entangled(2))
    p1 = proj([c, 0, 0, s])
    return ProtocolSpec.from_arrays((2,), (2,), (2,), rho, [], p1)


def builtin_coin_protocol() -> ProtocolSpec:
    """Verifier keeps a fair coin the prover never sees and accepts a correct guess."""
    rho = np.kron(proj([1, 0]), np.eye(2) / 2)
    p1 = proj([1, 0, 0, 0]) + proj([0, 0, 0, 1])
    return ProtocolSpec.from_arrays((2,), (2,), (2,), rho, [], p1)


def builtin_always_accept_protocol() -> ProtocolSpec:
    rho = proj(max_entangled(2))
    return ProtocolSpec.from_arrays((2,), (2,), (2,), rho, [], np.eye(4))


BUILTIN_PROTOCOLS = {
    "hedging": builtin_hedging_protocol,
    "coin": builtin_coin_protocol,
    "always-accept": builtin_always_accept_protocol,
}


def random_protocol(rng: np.random.Generator, r: int = 1, dims: Sequence[int] = (2,),
                    pure: bool = False) -> ProtocolSpec:
    """Random protocol with every message and memory dimension drawn from ``dims``."""
    x_dims = tuple(int(rng.choice(dims)) for _ in range(r))
    y_dims = tuple(int(rng.choice(dims)) for _ in range(r))
    z_dims = tuple(int(rng.choice(dims)) for _ in range(r))
    shell = _Dims(r, x_dims, y_dims, z_dims)
    d_rho = x_dims[0] * z_dims[0]
    rho = random_density(d_rho, rng, rank=1 if pure else None)
    psi = [random_choi(*shell.psi_spaces(i), rng, kraus_rank=2).matrix for i in range(1, r)]
    p0, p1 = random_povm(y_dims[-1] * z_dims[-1], rng)
    return ProtocolSpec.from_arrays(x_dims, y_dims, z_dims, rho, psi, p1, p0)


def random_program(p: ProtocolSpec, rng: np.random.Generator, w_dims: Sequence[int] | None = None) -> ProverProgram:
    if w_dims is None:
        w_dims = tuple(int(rng.integers(1, 4)) for _ in range(p.r - 1))
    phi = [random_choi(*program_spaces(p, w_dims, i), rng, kraus_rank=2) for i in range(1, p.r + 1)]
    return ProverProgram(tuple(w_dims), tuple(phi))


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------

_PROTOCOL_KEYS = {"version", "r", "x_dims", "y_dims", "z_dims", "rho", "psi", "p0", "p1"}


def protocol_to_dict(p: ProtocolSpec) -> dict:
    return {
        "version": PROTOCOL_FORMAT_VERSION,
        "r": p.r,
        "x_dims": list(p.x_dims),
        "y_dims": list(p.y_dims),
        "z_dims": list(p.z_dims),
        "rho": matrix_to_json(p.rho.matrix),
        "psi": [matrix_to_json(c.matrix) for c in p.psi],
        "p0": matrix_to_json(p.povm.p0),
        "p1": matrix_to_json(p.povm.p1),
    }


def _int_list(obj, key: str, r: int) -> tuple[int, ...]:
    v = obj[key]
    if not isinstance(v, list) or len(v) != r or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in v):
        raise ProtocolFormatError(f"{key} must be a list of {r} positive integers")
    return tuple(v)


def protocol_from_dict(obj) -> ProtocolSpec:
    if not isinstance(obj, dict):
        raise ProtocolFormatError("protocol must be a JSON object")
    unknown = set(obj) - _PROTOCOL_KEYS
    if unknown:
        raise ProtocolFormatError(f"unknown protocol fields: {sorted(unknown)}")
    missing = _PROTOCOL_KEYS - set(obj)
    if missing:
        raise ProtocolFormatError(f"missing protocol fields: {sorted(missing)}")
    if obj["version"] != PROTOCOL_FORMAT_VERSION:
        raise ProtocolFormatError(f"unsupported protocol version {obj['version']!r}")
    r = obj["r"]
    if not isinstance(r, int) or isinstance(r, bool) or r < 1:
        raise ProtocolFormatError("r must be a positive integer")
    x_dims, y_dims, z_dims = (_int_list(obj, k, r) for k in ("x_dims", "y_dims", "z_dims"))
    if not isinstance(obj["psi"], list):
        raise ProtocolFormatError("psi must be a list of matrices")
    try:
        rho = matrix_from_json(obj["rho"])
        psi = [matrix_from_json(m) for m in obj["psi"]]
        p0 = matrix_from_json(obj["p0"])
        p1 = matrix_from_json(obj["p1"])
        return ProtocolSpec.from_arrays(x_dims, y_dims, z_dims, rho, psi, p1, p0)
    except (ValueError, DimensionError) as exc:
        raise ProtocolFormatError(str(exc)) from exc


def save_protocol(p: ProtocolSpec, path) -> None:
    Path(path).write_text(json.dumps(protocol_to_dict(p), indent=1) + "\n")


def load_protocol(path) -> ProtocolSpec:
    """Read a protocol file; JSON syntax errors surface as ``ProtocolFormatError``."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolFormatError(f"{path}: {exc}") from exc
    return protocol_from_dict(obj)
