"""Typed state storage and the linear factor-graph container.

Every factor is linear in its states: the error is
``e = sum_j J_j @ theta_j - constant`` with constant jacobian blocks.
Linearization therefore only applies row whitening (1/sigma) and the
robust kernel's IRLS weight taken at the current values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels, robust


class VariableKind(enum.IntEnum):
    POSITION_ERROR = 0
    VELOCITY_ERROR = 1
    CLOCK = 2
    CLOCK_DRIFT = 3
    AMBIGUITY = 4


_KIND_LABEL = {
    VariableKind.POSITION_ERROR: "pos_err",
    VariableKind.VELOCITY_ERROR: "vel_err",
    VariableKind.CLOCK: "clock",
    VariableKind.CLOCK_DRIFT: "drift",
    VariableKind.AMBIGUITY: "ambiguity",
}


@dataclass(frozen=True)
class VariableKey:
    """Handle for one state block: (kind, epoch) is unique in a graph."""

    kind: VariableKind
    epoch: int
    dim: int

    def __post_init__(self):
        if self.epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {self.epoch}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    def __str__(self) -> str:
        return f"{_KIND_LABEL[self.kind]}@{self.epoch}[{self.dim}]"


def position_key(epoch: int) -> VariableKey:
    return VariableKey(VariableKind.POSITION_ERROR, epoch, 3)


def velocity_key(epoch: int) -> VariableKey:
    return VariableKey(VariableKind.VELOCITY_ERROR, epoch, 3)


def clock_key(epoch: int, dim: int) -> VariableKey:
    return VariableKey(VariableKind.CLOCK, epoch, dim)


def drift_key(epoch: int) -> VariableKey:
    return VariableKey(VariableKind.CLOCK_DRIFT, epoch, 1)


def ambiguity_key(n_slots: int, epoch: int = 0) -> VariableKey:
    return VariableKey(VariableKind.AMBIGUITY, epoch, n_slots)


class Values:
    """Map from VariableKey to state vector of matching dimension."""

    def __init__(self):
        self._data: dict[tuple[VariableKind, int], tuple[VariableKey, np.ndarray]] = {}

    def set(self, key: VariableKey, vec) -> None:
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        if vec.shape != (key.dim,):
            raise ValueError(
                f"value for {key} must have shape ({key.dim},), got {vec.shape}"
            )
        ident = (key.kind, key.epoch)
        existing = self._data.get(ident)
        if existing is not None and existing[0].dim != key.dim:
            raise ValueError(
                f"key {key} conflicts with existing {existing[0]}: dim is fixed at first insertion"
            )
        self._data[ident] = (key, vec)

    def get(self, key: VariableKey) -> np.ndarray:
        ident = (key.kind, key.epoch)
        if ident not in self._data:
            raise KeyError(f"missing value for key {key}")
        stored_key, vec = self._data[ident]
        if stored_key.dim != key.dim:
            raise ValueError(f"dimension mismatch: requested {key}, stored {stored_key}")
        return vec

    __setitem__ = set
    __getitem__ = get

    def __contains__(self, key: VariableKey) -> bool:
        ident = (key.kind, key.epoch)
        return ident in self._data and self._data[ident][0].dim == key.dim

    def keys(self):
        return [k for k, _ in self._data.values()]

    def items(self):
        return [(k, v) for k, v in self._data.values()]

    def __len__(self) -> int:
        return len(self._data)

    def copy(self) -> "Values":
        out = Values()
        for key, vec in self._data.values():
            out.set(key, vec.copy())
        return out

    def to_vector(self, ordering: "ColumnOrdering") -> np.ndarray:
        x = np.zeros(ordering.n_cols)
        for key in ordering.keys:
            start, stop = ordering.range_of(key)
            x[start:stop] = self.get(key)
        return x

    @staticmethod
    def from_vector(ordering: "ColumnOrdering", x: np.ndarray) -> "Values":
        out = Values()
        for key in ordering.keys:
            start, stop = ordering.range_of(key)
            out.set(key, x[start:stop].copy())
        return out


@dataclass
class Factor:
    """One residual block, linear in its keys.

    ``jacobians[j]`` has shape (rows, keys[j].dim); ``constant`` and
    ``sigma`` have length rows; sigma entries are per-row standard
    deviations and must be positive.
    """

    keys: tuple[VariableKey, ...]
    jacobians: tuple[np.ndarray, ...]
    constant: np.ndarray
    sigma: np.ndarray
    kernel: robust.RobustKernel | None = None

    def __post_init__(self):
        self.keys = tuple(self.keys)
        self.jacobians = tuple(
            np.ascontiguousarray(np.atleast_2d(np.asarray(j, dtype=float)))
            for j in self.jacobians
        )
        self.constant = np.atleast_1d(np.asarray(self.constant, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if len(self.keys) == 0:
            raise ValueError("factor needs at least one key")
        if len(self.jacobians) != len(self.keys):
            raise ValueError("one jacobian block per key required")
        rows = self.jacobians[0].shape[0]
        for key, jac in zip(self.keys, self.jacobians):
            if jac.shape[0] != rows:
                raise ValueError("all jacobian blocks must share the row count")
            if jac.shape[1] != key.dim:
                raise ValueError(
                    f"jacobian block for {key} has {jac.shape[1]} columns, expected {key.dim}"
                )
        if self.constant.shape != (rows,):
            raise ValueError(
                f"constant must have length {rows}, got {self.constant.shape}"
            )
        if self.sigma.shape != (rows,):
            raise ValueError(f"sigma must have length {rows}, got {self.sigma.shape}")
        if not np.all(self.sigma > 0):
            raise ValueError("sigma entries must be > 0")

    @property
    def rows(self) -> int:
        return self.jacobians[0].shape[0]


@dataclass
class Anchor:
    """Per-epoch linearization point: position in meters, velocity in m/s."""

    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)


class FactorGraph:
    """Ordered factor list plus per-epoch anchor metadata."""

    def __init__(self):
        self.factors: list[Factor] = []
        self.anchors: dict[int, Anchor] = {}

    def add(self, factor: Factor) -> int:
        self.factors.append(factor)
        return len(self.factors) - 1

    def set_anchor(self, epoch: int, position, velocity=(0.0, 0.0, 0.0)) -> None:
        self.anchors[epoch] = Anchor(np.asarray(position), np.asarray(velocity))

    def anchor(self, epoch: int) -> Anchor:
        return self.anchors[epoch]

    def keys(self) -> list[VariableKey]:
        """Unique keys in first-seen order; rejects (kind, epoch) dim clashes."""
        seen: dict[tuple[VariableKind, int], VariableKey] = {}
        out: list[VariableKey] = []
        for factor in self.factors:
            for key in factor.keys:
                ident = (key.kind, key.epoch)
                prev = seen.get(ident)
                if prev is None:
                    seen[ident] = key
                    out.append(key)
                elif prev.dim != key.dim:
                    raise ValueError(f"key {key} conflicts with {prev}: dim must not change")
        return out

    def __len__(self) -> int:
        return len(self.factors)


def evaluate_error(factor: Factor, values: Values) -> np.ndarray:
    """Raw error e = sum_j J_j v[key_j] - constant (no whitening, no kernel)."""
    e = -factor.constant.copy()
    for key, jac in zip(factor.keys, factor.jacobians):
        e += jac @ values.get(key)
    return e


def factor_cost(factor: Factor, values: Values) -> float:
    """Kernelized cost of one factor: rho(||e / sigma||^2)."""
    e = evaluate_error(factor, values) / factor.sigma
    sq = float(e @ e)
    code, k = robust.kernel_code(factor.kernel)
    if code == robust.KERNEL_CODE_HUBER:
        return robust.huber_cost(sq, k)
    return sq


def total_weighted_cost(graph: FactorGraph, values: Values) -> float:
    """Objective value: sum over factors of rho(||e / sigma||^2)."""
    if len(graph.factors) == 0:
        raise ValueError("graph is empty")
    return sum(factor_cost(f, values) for f in graph.factors)


@dataclass(frozen=True)
class ColumnOrdering:
    """Assigns each key a contiguous column range in the linear system."""

    keys: tuple[VariableKey, ...]
    offsets: dict[VariableKey, int]
    n_cols: int

    def range_of(self, key: VariableKey) -> tuple[int, int]:
        if key not in self.offsets:
            raise KeyError(f"key {key} not in ordering")
        start = self.offsets[key]
        return start, start + key.dim

    def indices_of(self, keys: Sequence[VariableKey]) -> np.ndarray:
        idx: list[int] = []
        for key in keys:
            start, stop = self.range_of(key)
            idx.extend(range(start, stop))
        return np.asarray(idx, dtype=np.int64)


def build_ordering(graph: FactorGraph) -> ColumnOrdering:
    """Deterministic epoch-major ordering; ambiguity blocks go last."""
    keys = graph.keys()
    keys.sort(key=lambda k: (k.kind == VariableKind.AMBIGUITY, k.epoch, int(k.kind)))
    offsets: dict[VariableKey, int] = {}
    col = 0
    for key in keys:
        offsets[key] = col
        col += key.dim
    return ColumnOrdering(tuple(keys), offsets, col)


class _Group:
    """Factors sharing (rows, block widths); jacobians stacked per block."""

    __slots__ = ("rows", "widths", "jacs", "cols", "consts", "findex")

    def __init__(self, rows: int, widths: tuple[int, ...]):
        self.rows = rows
        self.widths = widths
        self.jacs: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.consts: np.ndarray | None = None
        self.findex: np.ndarray | None = None


class PackedGraph:
    """Whitened, group-stacked factor blocks for fast relinearization.

    Whitening by 1/sigma is folded into the stored jacobians and
    constants once; only the IRLS kernel weights change per iteration.
    """

    def __init__(self, graph: FactorGraph, ordering: ColumnOrdering):
        self.ordering = ordering
        self.n_cols = ordering.n_cols
        self.n_factors = len(graph.factors)
        if self.n_factors == 0:
            raise ValueError("graph is empty")

        self.kernel_codes = np.zeros(self.n_factors, dtype=np.int8)
        self.kernel_ks = np.zeros(self.n_factors)
        self.row_offsets = np.zeros(self.n_factors + 1, dtype=np.int64)

        buckets: dict[tuple[int, tuple[int, ...]], list[tuple[int, Factor]]] = {}
        for fi, factor in enumerate(graph.factors):
            code, k = robust.kernel_code(factor.kernel)
            self.kernel_codes[fi] = code
            self.kernel_ks[fi] = k
            self.row_offsets[fi + 1] = self.row_offsets[fi] + factor.rows
            sig = (factor.rows, tuple(j.shape[1] for j in factor.jacobians))
            buckets.setdefault(sig, []).append((fi, factor))
        self.n_rows = int(self.row_offsets[-1])

        self.groups: list[_Group] = []
        for (rows, widths), members in buckets.items():
            grp = _Group(rows, widths)
            nf = len(members)
            grp.findex = np.asarray([fi for fi, _ in members], dtype=np.int64)
            grp.consts = np.empty((nf, rows))
            for b, width in enumerate(widths):
                jac = np.empty((nf, rows, width))
                col = np.empty(nf, dtype=np.int64)
                for i, (_, factor) in enumerate(members):
                    jac[i] = factor.jacobians[b] / factor.sigma[:, None]
                    col[i] = ordering.offsets[factor.keys[b]]
                grp.jacs.append(np.ascontiguousarray(jac))
                grp.cols.append(col)
            for i, (_, factor) in enumerate(members):
                grp.consts[i] = factor.constant / factor.sigma
            self.groups.append(grp)

    def residuals(self, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Whitened residual rows per group and squared norms per factor."""
        sq = np.zeros(self.n_factors)
        ews: list[np.ndarray] = []
        for grp in self.groups:
            ew = -grp.consts.copy()
            for jac, col in zip(grp.jacs, grp.cols):
                kernels.block_residual_add(ew, jac, col, x)
            ews.append(ew)
            sq[grp.findex] = np.einsum("fm,fm->f", ew, ew)
        return ews, sq

    def cost(self, x: np.ndarray) -> float:
        _, sq = self.residuals(x)
        return float(
            np.sum(robust.costs_from_squares(sq, self.kernel_codes, self.kernel_ks))
        )

    def weights(self, sq: np.ndarray) -> np.ndarray:
        return robust.weights_from_squares(sq, self.kernel_codes, self.kernel_ks)

    def normal_equations(
        self, x: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
        """Weighted normal equations at x.

        Returns (H, rhs, cost, weights) with H = sum_f w_f Jw_f' Jw_f and
        rhs = -sum_f w_f Jw_f' ew_f, so a Gauss-Newton step solves
        H @ step = rhs.
        """
        ews, sq = self.residuals(x)
        w = self.weights(sq)
        cost = float(
            np.sum(robust.costs_from_squares(sq, self.kernel_codes, self.kernel_ks))
        )
        hmat = np.zeros((self.n_cols, self.n_cols))
        rhs = np.zeros(self.n_cols)
        for grp, ew in zip(self.groups, ews):
            wg = w[grp.findex]
            nblocks = len(grp.jacs)
            for a in range(nblocks):
                kernels.block_rhs_accumulate(rhs, grp.jacs[a], grp.cols[a], ew, wg)
                for b in range(nblocks):
                    kernels.block_pair_accumulate(
                        hmat, grp.jacs[a], grp.jacs[b], grp.cols[a], grp.cols[b], wg
                    )
        return hmat, rhs, cost, w

    def dense_jacobian(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (A, b): rows sqrt(w)*J/sigma, b = sqrt(w)*(c - J x)/sigma.

        Row order follows factor insertion order; solving the normal
        equations A'A step = A'b yields the same step as
        ``normal_equations``.
        """
        ews, sq = self.residuals(x)
        w = self.weights(sq)
        amat = np.zeros((self.n_rows, self.n_cols))
        bvec = np.zeros(self.n_rows)
        for grp, ew in zip(self.groups, ews):
            sw = np.sqrt(w[grp.findex])
            for i, fi in enumerate(grp.findex):
                r0 = self.row_offsets[fi]
                r1 = self.row_offsets[fi + 1]
                bvec[r0:r1] = -sw[i] * ew[i]
                for jac, col in zip(grp.jacs, grp.cols):
                    c0 = col[i]
                    amat[r0:r1, c0 : c0 + jac.shape[2]] += sw[i] * jac[i]
        return amat, bvec


@dataclass
class LinearSystem:
    """Linearization snapshot: whitened jacobian, rhs, column ordering."""

    ordering: ColumnOrdering
    _packed: PackedGraph
    _x: np.ndarray

    @property
    def n_cols(self) -> int:
        return self.ordering.n_cols

    def jacobian_dense(self) -> np.ndarray:
        return self._packed.dense_jacobian(self._x)[0]

    def rhs(self) -> np.ndarray:
        return self._packed.dense_jacobian(self._x)[1]

    def jacobian_and_rhs(self) -> tuple[np.ndarray, np.ndarray]:
        return self._packed.dense_jacobian(self._x)

    def normal_equations(self) -> tuple[np.ndarray, np.ndarray]:
        hmat, rhs, _, _ = self._packed.normal_equations(self._x)
        return hmat, rhs


def check_values_cover(graph: FactorGraph, values: Values) -> None:
    for key in graph.keys():
        if key not in values:
            raise KeyError(f"missing value for key {key}")


def linearize(graph: FactorGraph, values: Values) -> LinearSystem:
    """Whitened linear system at the given values.

    Row weights combine 1/sigma with the robust kernel's IRLS weight
    sqrt(w(||e/sigma||)) evaluated at ``values``.
    """
    check_values_cover(graph, values)
    ordering = build_ordering(graph)
    packed = PackedGraph(graph, ordering)
    x = values.to_vector(ordering)
    return LinearSystem(ordering, packed, x)
