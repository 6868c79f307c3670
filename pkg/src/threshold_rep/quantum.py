"""Dense operator algebra on labelled tensor factors.

Matrices are plain complex ``numpy`` arrays.  Every operator that lives on a
tensor product carries a :class:`SpaceDims` naming its factors, and all
bookkeeping (partial traces, permutations, link products) is done by name.

Choi convention, used everywhere including the file format::

    J(Phi) = sum_ij E_ij (x) Phi(E_ij)        (input factors first)

With this convention the link product contracts shared factors row-to-row and
column-to-column, with no explicit partial transposes.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, InstanceTooLarge

TOL_HERM = 1e-8
TOL_PSD = 1e-8
TOL_TRACE = 1e-8
TOL_TP = 1e-8
TOL_POVM = 1e-8

DEFAULT_MAX_DIM = 4096
MAX_DIM_ENV = "THRESHOLD_REP_MAX_DIM"


def get_max_dim() -> int:
    """Total-dimension cap, overridable through ``THRESHOLD_REP_MAX_DIM``."""
    raw = os.environ.get(MAX_DIM_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_MAX_DIM
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{MAX_DIM_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError(f"{MAX_DIM_ENV} must be positive, got {value}")
    return value


def check_dim(dim: int, what: str = "operator") -> None:
    cap = get_max_dim()
    if dim > cap:
        raise InstanceTooLarge(f"instance too large: {what} dimension {dim} exceeds cap {cap}")


def as_matrix(a, *, square: bool = False) -> np.ndarray:
    """Coerce to a finite 2-D complex array."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if square and m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    return m


# ---------------------------------------------------------------------------
# Tensor-factor labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceDims:
    """Ordered (name, dim) pairs identifying tensor factors."""

    labels: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        labels = tuple((str(n), int(d)) for n, d in self.labels)
        object.__setattr__(self, "labels", labels)
        names = [n for n, _ in labels]
        if len(set(names)) != len(names):
            raise DimensionError(f"duplicate space names in {names}")
        for n, d in labels:
            if d < 1:
                raise DimensionError(f"space {n!r} has non-positive dimension {d}")

    @classmethod
    def of(cls, *pairs: tuple[str, int]) -> "SpaceDims":
        return cls(tuple(pairs))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.labels)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.labels)

    @property
    def total(self) -> int:
        return math.prod(self.dims)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, name) -> bool:
        return name in self.names

    def __add__(self, other: "SpaceDims") -> "SpaceDims":
        return SpaceDims(self.labels + other.labels)

    def dim(self, name: str) -> int:
        return self.dims[self.index(name)]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DimensionError(f"unknown space name {name!r}; have {self.names}") from None

    def select(self, names: Iterable[str]) -> "SpaceDims":
        return SpaceDims(tuple((n, self.dim(n)) for n in names))

    def without(self, names: Iterable[str]) -> "SpaceDims":
        drop = set(names)
        return SpaceDims(tuple(lab for lab in self.labels if lab[0] not in drop))

    def renamed(self, mapping: dict[str, str]) -> "SpaceDims":
        return SpaceDims(tuple((mapping.get(n, n), d) for n, d in self.labels))


def _check_square_on(m: np.ndarray, spaces: SpaceDims, what: str = "matrix") -> None:
    if m.shape != (spaces.total, spaces.total):
        raise DimensionError(
            f"{what} has shape {m.shape} but spaces {spaces.names} need "
            f"({spaces.total}, {spaces.total})"
        )


# ---------------------------------------------------------------------------
# Basic algebra
# ---------------------------------------------------------------------------


def tensor(a, b) -> np.ndarray:
    """Kronecker product, ``a``'s factors first."""
    a, b = as_matrix(a), as_matrix(b)
    check_dim(a.shape[0] * b.shape[0], "tensor product")
    check_dim(a.shape[1] * b.shape[1], "tensor product")
    return np.kron(a, b)


def tensor_all(mats: Sequence) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = tensor(out, m)
    return out


def _permute_axes(m: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    n = len(dims)
    if n == 0:
        return m
    t = m.reshape(tuple(dims) * 2)
    t = t.transpose(list(perm) + [p + n for p in perm])
    d = math.prod(dims)
    return t.reshape(d, d)


def permute(m, spaces: SpaceDims, order: Sequence[str]) -> np.ndarray:
    """Reorder tensor factors of a square operator to the named ``order``."""
    m = as_matrix(m, square=True)
    _check_square_on(m, spaces)
    if sorted(order) != sorted(spaces.names):
        raise DimensionError(f"order {list(order)} is not a permutation of {spaces.names}")
    perm = [spaces.index(n) for n in order]
    return _permute_axes(m, spaces.dims, perm)


def partial_trace(m, spaces: SpaceDims, traced_names: Iterable[str]) -> np.ndarray:
    """Trace out the named factors; remaining factors keep their order."""
    m = as_matrix(m, square=True)
    _check_square_on(m, spaces)
    traced = set(traced_names)
    for name in traced:
        spaces.index(name)
    n = len(spaces)
    keep = [i for i, name in enumerate(spaces.names) if name not in traced]
    t = m.reshape(spaces.dims * 2)
    row = list(range(n))
    col = [i + n if i in keep else i for i in range(n)]
    out_idx = keep + [i + n for i in keep]
    r = np.einsum(t, row + col, out_idx)
    d = math.prod(spaces.dims[i] for i in keep)
    return np.asarray(r).reshape(d, d)


def partial_transpose(m, spaces: SpaceDims, names: Iterable[str]) -> np.ndarray:
    m = as_matrix(m, square=True)
    _check_square_on(m, spaces)
    sel = {spaces.index(nm) for nm in names}
    n = len(spaces)
    t = m.reshape(spaces.dims * 2)
    perm = [i + n if i in sel else i for i in range(n)] + [i if i in sel else i + n for i in range(n)]
    return t.transpose(perm).reshape(m.shape)


def _contract(a, a_dims, b, b_dims, pairs):
    """Link-contract square tensors ``a`` and ``b`` on paired factor positions.

    Returns the matrix on ``a``'s unpaired factors followed by ``b``'s
    unpaired factors, plus the kept positions of each.
    """
    na, nb = len(a_dims), len(b_dims)
    for ia, ib in pairs:
        if a_dims[ia] != b_dims[ib]:
            raise DimensionError(f"contracted factors differ in dimension: {a_dims[ia]} vs {b_dims[ib]}")
    sym = itertools.count()
    a_row = [next(sym) for _ in range(na)]
    a_col = [next(sym) for _ in range(na)]
    b_row = [next(sym) for _ in range(nb)]
    b_col = [next(sym) for _ in range(nb)]
    for ia, ib in pairs:
        b_row[ib] = a_row[ia]
        b_col[ib] = a_col[ia]
    paired_a = {ia for ia, _ in pairs}
    paired_b = {ib for _, ib in pairs}
    keep_a = [i for i in range(na) if i not in paired_a]
    keep_b = [i for i in range(nb) if i not in paired_b]
    out = (
        [a_row[i] for i in keep_a]
        + [b_row[i] for i in keep_b]
        + [a_col[i] for i in keep_a]
        + [b_col[i] for i in keep_b]
    )
    d = math.prod(a_dims[i] for i in keep_a) * math.prod(b_dims[i] for i in keep_b)
    check_dim(d, "link product")
    ta = a.reshape(tuple(a_dims) * 2) if na else a.reshape(())
    tb = b.reshape(tuple(b_dims) * 2) if nb else b.reshape(())
    r = np.einsum(ta, a_row + a_col, tb, b_row + b_col, out, optimize=True)
    return np.asarray(r).reshape(d, d), keep_a, keep_b


@dataclass(frozen=True, eq=False)
class Operator:
    """A square matrix on named tensor factors (no in/out roles)."""

    matrix: np.ndarray
    spaces: SpaceDims

    def __post_init__(self):
        m = as_matrix(self.matrix, square=True)
        _check_square_on(m, self.spaces)
        object.__setattr__(self, "matrix", m)

    def link(self, other: "Operator") -> "Operator":
        """Link product over all factor names the two operators share."""
        shared = [n for n in self.spaces.names if n in other.spaces]
        pairs = [(self.spaces.index(n), other.spaces.index(n)) for n in shared]
        m, ka, kb = _contract(self.matrix, self.spaces.dims, other.matrix, other.spaces.dims, pairs)
        labels = tuple(self.spaces.labels[i] for i in ka) + tuple(other.spaces.labels[i] for i in kb)
        return Operator(m, SpaceDims(labels))

    def ptrace(self, names: Iterable[str]) -> "Operator":
        names = list(names)
        return Operator(partial_trace(self.matrix, self.spaces, names), self.spaces.without(names))

    def reorder(self, order: Sequence[str]) -> "Operator":
        return Operator(permute(self.matrix, self.spaces, order), self.spaces.select(order))

    def transpose(self) -> "Operator":
        return Operator(self.matrix.T, self.spaces)

    def scalar(self) -> complex:
        if len(self.spaces):
            raise DimensionError(f"operator still lives on {self.spaces.names}")
        return complex(self.matrix[0, 0])


# ---------------------------------------------------------------------------
# Quantum objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DensityOperator:
    matrix: np.ndarray
    spaces: SpaceDims

    def __post_init__(self):
        m = as_matrix(self.matrix, square=True)
        _check_square_on(m, self.spaces, "density operator")
        object.__setattr__(self, "matrix", m)

    def as_operator(self) -> Operator:
        return Operator(self.matrix, self.spaces)


@dataclass(frozen=True, eq=False)
class ChoiOperator:
    """Choi matrix on ``in_spaces (x) out_spaces``.

    Input and output lists are namespaced separately, so a channel from a
    space to itself may reuse the name.
    """

    matrix: np.ndarray
    in_spaces: SpaceDims
    out_spaces: SpaceDims

    def __post_init__(self):
        m = as_matrix(self.matrix, square=True)
        d = self.in_spaces.total * self.out_spaces.total
        if m.shape != (d, d):
            raise DimensionError(
                f"Choi matrix has shape {m.shape}, expected ({d}, {d}) for "
                f"{self.in_spaces.names} -> {self.out_spaces.names}"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def d_in(self) -> int:
        return self.in_spaces.total

    @property
    def d_out(self) -> int:
        return self.out_spaces.total

    def as_operator(self) -> Operator:
        """View with all names distinct (requires disjoint in/out names)."""
        return Operator(self.matrix, self.in_spaces + self.out_spaces)


@dataclass(frozen=True, eq=False)
class BinaryPOVM:
    p0: np.ndarray
    p1: np.ndarray
    spaces: SpaceDims

    def __post_init__(self):
        p0 = as_matrix(self.p0, square=True)
        p1 = as_matrix(self.p1, square=True)
        _check_square_on(p0, self.spaces, "P0")
        _check_square_on(p1, self.spaces, "P1")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tol)


@dataclass(frozen=True)
class ValidationReport:
    """Per-invariant residuals; ``passed`` iff every residual is within tolerance."""

    subject: str
    checks: tuple[Check, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def merged(self, other: "ValidationReport", prefix: str = "") -> "ValidationReport":
        extra = tuple(Check(prefix + c.name, c.residual, c.tol) for c in other.checks)
        return ValidationReport(self.subject, self.checks + extra)

    def as_dict(self) -> dict:
        return {
            "subject": self.subject,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "residual": c.residual, "tol": c.tol, "passed": c.passed}
                for c in self.checks
            ],
        }


def hermitian_residual(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T)))


def min_eigenvalue(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((m + m.conj().T) / 2)[0])


def _psd_checks(prefix: str, m: np.ndarray, tol_herm: float, tol_psd: float) -> list[Check]:
    # residual reported as the amount of negativity
    return [
        Check(f"{prefix}hermitian", hermitian_residual(m), tol_herm),
        Check(f"{prefix}psd", max(0.0, -min_eigenvalue(m)), tol_psd),
    ]


def validate(obj, tol: float | None = None) -> ValidationReport:
    """Measure every invariant of a density operator, Choi operator or POVM."""
    th = tp = tt = TOL_HERM if tol is None else tol
    if isinstance(obj, DensityOperator):
        m = obj.matrix
        checks = _psd_checks("", m, th, tp)
        checks.append(Check("trace", float(abs(np.trace(m) - 1.0)), tt))
        return ValidationReport("density", tuple(checks))
    if isinstance(obj, ChoiOperator):
        m = obj.matrix
        checks = _psd_checks("", m, th, tp)
        dims = SpaceDims((("in", obj.d_in), ("out", obj.d_out)))
        red = partial_trace(m, dims, ["out"])
        checks.append(Check("trace_preserving", float(np.max(np.abs(red - np.eye(obj.d_in)))), tt))
        return ValidationReport("choi", tuple(checks))
    if isinstance(obj, BinaryPOVM):
        checks = _psd_checks("p0_", obj.p0, th, tp) + _psd_checks("p1_", obj.p1, th, tp)
        eye = np.eye(obj.spaces.total)
        checks.append(Check("completeness", float(np.max(np.abs(obj.p0 + obj.p1 - eye))), tt))
        return ValidationReport("povm", tuple(checks))
    raise TypeError(f"cannot validate object of type {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------


def apply_channel(c: ChoiOperator, rho: DensityOperator) -> DensityOperator:
    """Apply ``c`` to the factors of ``rho`` named by ``c.in_spaces``.

    The output lives on the untouched factors of ``rho`` (original order)
    followed by ``c.out_spaces``.
    """
    for name, d in c.in_spaces:
        if name not in rho.spaces:
            raise DimensionError(f"state has no factor {name!r} (has {rho.spaces.names})")
        if rho.spaces.dim(name) != d:
            raise DimensionError(f"factor {name!r}: state dim {rho.spaces.dim(name)} != channel dim {d}")
    rest = rho.spaces.without(c.in_spaces.names)
    clash = set(rest.names) & set(c.out_spaces.names)
    if clash:
        raise DimensionError(f"channel output names {sorted(clash)} collide with untouched factors")
    chan_dims = c.in_spaces.dims + c.out_spaces.dims
    pairs = [(rho.spaces.index(n), i) for i, n in enumerate(c.in_spaces.names)]
    m, keep_rho, keep_c = _contract(rho.matrix, rho.spaces.dims, c.matrix, chan_dims, pairs)
    return DensityOperator(m, rest + c.out_spaces)


def link_product(a: ChoiOperator, b: ChoiOperator, allow_disjoint: bool = False) -> ChoiOperator:
    """Choi operator of ``b`` after ``a``, contracting ``a.out`` with ``b.in`` by name.

    Uncontracted spaces are carried through; the result has inputs
    ``a.in + (b.in - shared)`` and outputs ``(a.out - shared) + b.out``.
    """
    shared = [n for n in a.out_spaces.names if n in b.in_spaces]
    if not shared and not allow_disjoint:
        raise DimensionError("link product with no shared spaces; pass allow_disjoint=True for a plain tensor")
    in_spaces = a.in_spaces + b.in_spaces.without(shared)
    out_spaces = a.out_spaces.without(shared) + b.out_spaces
    na_in = len(a.in_spaces)
    nb_in = len(b.in_spaces)
    pairs = [(na_in + a.out_spaces.index(n), b.in_spaces.index(n)) for n in shared]
    a_dims = a.in_spaces.dims + a.out_spaces.dims
    b_dims = b.in_spaces.dims + b.out_spaces.dims
    m, keep_a, keep_b = _contract(a.matrix, a_dims, b.matrix, b_dims, pairs)
    # kept positions are in a-then-b order; move b's inputs ahead of a's outputs
    kept = [("a", i) for i in keep_a] + [("b", i) for i in keep_b]
    dims = [a_dims[i] if w == "a" else b_dims[i] for w, i in kept]
    is_input = [(w == "a" and i < na_in) or (w == "b" and i < nb_in) for w, i in kept]
    perm = [j for j, inp in enumerate(is_input) if inp] + [j for j, inp in enumerate(is_input) if not inp]
    m = _permute_axes(m, dims, perm)
    return ChoiOperator(m, in_spaces, out_spaces)


def identity_choi(spaces: SpaceDims, out_spaces: SpaceDims | None = None) -> ChoiOperator:
    out_spaces = spaces if out_spaces is None else out_spaces
    if out_spaces.dims != spaces.dims:
        raise DimensionError("identity channel needs matching input and output dims")
    d = spaces.total
    omega = np.eye(d, dtype=complex).reshape(-1)
    return ChoiOperator(np.outer(omega, omega), spaces, out_spaces)


def choi_from_kraus(kraus: Sequence, in_spaces: SpaceDims, out_spaces: SpaceDims) -> ChoiOperator:
    d_in, d_out = in_spaces.total, out_spaces.total
    j = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
    for k in kraus:
        k = as_matrix(k)
        if k.shape != (d_out, d_in):
            raise DimensionError(f"Kraus operator has shape {k.shape}, expected {(d_out, d_in)}")
        v = k.T.reshape(-1)  # v[(a, o)] = K[o, a]
        j += np.outer(v, v.conj())
    return ChoiOperator(j, in_spaces, out_spaces)


def kraus_from_choi(c: ChoiOperator, tol: float = 1e-12) -> list[np.ndarray]:
    """Kraus operators from the eigendecomposition of the Choi matrix."""
    h = (c.matrix + c.matrix.conj().T) / 2
    w, v = np.linalg.eigh(h)
    ops = []
    for lam, vec in zip(w, v.T):
        if lam > tol:
            ops.append(np.sqrt(lam) * vec.reshape(c.d_in, c.d_out).T)
    return ops


def unitary_choi(u, in_spaces: SpaceDims, out_spaces: SpaceDims | None = None) -> ChoiOperator:
    return choi_from_kraus([u], in_spaces, in_spaces if out_spaces is None else out_spaces)


def depolarizing_choi(in_spaces: SpaceDims, out_spaces: SpaceDims | None = None) -> ChoiOperator:
    """Completely depolarizing channel: every input goes to the maximally mixed state."""
    out_spaces = in_spaces if out_spaces is None else out_spaces
    d_out = out_spaces.total
    return replacement_choi(np.eye(d_out) / d_out, in_spaces, out_spaces)


def replacement_choi(sigma, in_spaces: SpaceDims, out_spaces: SpaceDims) -> ChoiOperator:
    """Channel discarding the input and preparing ``sigma``."""
    return ChoiOperator(np.kron(np.eye(in_spaces.total), as_matrix(sigma)), in_spaces, out_spaces)


def proj(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def max_entangled(d: int) -> np.ndarray:
    """Normalized maximally entangled vector on C^d (x) C^d."""
    return np.eye(d, dtype=complex).reshape(-1) / np.sqrt(d)


# ---------------------------------------------------------------------------
# Random instances (tests, demos, see-saw initialization)
# ---------------------------------------------------------------------------


def random_isometry(d_out: int, d_in: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed isometry C^d_in -> C^d_out."""
    if d_out < d_in:
        raise DimensionError("isometry needs d_out >= d_in")
    g = rng.standard_normal((d_out, d_in)) + 1j * rng.standard_normal((d_out, d_in))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    return random_isometry(d, d, rng)


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_choi(in_spaces: SpaceDims, out_spaces: SpaceDims, rng: np.random.Generator,
                kraus_rank: int | None = None) -> ChoiOperator:
    d_in, d_out = in_spaces.total, out_spaces.total
    rank = d_in * d_out if kraus_rank is None else max(kraus_rank, -(-d_in // d_out))
    v = random_isometry(d_out * rank, d_in, rng).reshape(d_out, rank, d_in)
    return choi_from_kraus([v[:, i, :] for i in range(rank)], in_spaces, out_spaces)


def random_povm(d: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random binary POVM (P0, P1) with P1 spectrum uniform in [0, 1]."""
    u = random_unitary(d, rng)
    p1 = (u * rng.uniform(0, 1, d)) @ u.conj().T
    p1 = (p1 + p1.conj().T) / 2
    return np.eye(d) - p1, p1


# ---------------------------------------------------------------------------
# JSON encoding
# ---------------------------------------------------------------------------


def matrix_to_json(m) -> dict:
    """``{"rows", "cols", "data"}`` with ``data`` row-major nested ``[re, im]`` pairs."""
    m = as_matrix(m)
    return {
        "rows": int(m.shape[0]),
        "cols": int(m.shape[1]),
        "data": [[[float(z.real), float(z.imag)] for z in row] for row in m],
    }


def matrix_from_json(obj) -> np.ndarray:
    if not isinstance(obj, dict) or set(obj) != {"rows", "cols", "data"}:
        raise ValueError("matrix must be an object with exactly the keys rows, cols, data")
    rows, cols, data = obj["rows"], obj["cols"], obj["data"]
    if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 1 or cols < 1:
        raise ValueError("matrix rows/cols must be positive integers")
    if not isinstance(data, list) or len(data) != rows:
        raise ValueError(f"matrix data must have {rows} rows")
    out = np.empty((rows, cols), dtype=complex)
    for i, row in enumerate(data):
        if not isinstance(row, list) or len(row) != cols:
            raise ValueError(f"matrix row {i} must have {cols} entries")
        for j, entry in enumerate(row):
            if (not isinstance(entry, list) or len(entry) != 2
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in entry)):
                raise ValueError(f"matrix entry ({i}, {j}) must be a [re, im] pair")
            out[i, j] = complex(entry[0], entry[1])
    return as_matrix(out)
