"""Kernel estimators on a finite evaluation grid.

Every estimator is stored as one value table per block of its partition and
is combined lazily: the value at a grid node is the product of the block
tables, taken in block order. Tables are computed as

    table[x] = (sum_i prod_{j in I} k_j(X_ij - x_j)) / n

with the sum running over samples in ascending order and ``k_j`` either the
scaled kernel ``K_h`` or the convolution ``K_h * K_eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from ._accumulate import BandedRows, accumulate
from .kernels import DEFAULT_PROFILE_NODES, Kernel, build_convolution_table
from .partitions import Partition, diamond

Bandwidth = tuple[float, ...]
Block = tuple[int, ...]

CHUNK_ELEMENTS = 1 << 21


class EstimatorError(ValueError):
    pass


class GridCoverageError(EstimatorError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n x d`` matrix of finite observations, one row per sample."""

    X: np.ndarray

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=float, order="C", copy=True)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise EstimatorError(f"data must be 2-dimensional, got shape {X.shape}")
        if X.shape[0] < 2:
            raise EstimatorError(f"need at least 2 observations, got {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise EstimatorError(f"non-finite entry at row {bad[0] + 1}, column {bad[1] + 1}")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def summary(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "min": self.X.min(axis=0).tolist(),
            "max": self.X.max(axis=0).tolist(),
        }


def check_bandwidth(h: Sequence[float], d: int | None = None) -> Bandwidth:
    h = tuple(float(x) for x in h)
    if d is not None and len(h) != d:
        raise EstimatorError(f"bandwidth has {len(h)} entries, expected {d}")
    for x in h:
        if not 0 < x <= 1:
            raise EstimatorError(f"bandwidths must lie in (0, 1], got {x}")
    return h


def block_volume(h: Sequence[float], block: Iterable[int]) -> float:
    """``V_{h_I} = prod_{j in I} h_j``."""
    v = 1.0
    for j in block:
        v *= h[j]
    return v


def partition_volume(h: Sequence[float], p: Partition) -> float:
    """``V(h, P) = min_{I in P} V_{h_I}``."""
    return min(block_volume(h, b) for b in p.blocks)


def A_hat(f_bar_n: float, h: Sequence[float], p: Partition, n: int) -> float:
    """``sqrt(f_bar_n ln(n) / (n V(h, P)))``."""
    if n < 3:
        raise EstimatorError(f"n must be >= 3, got {n}")
    if f_bar_n < 1:
        raise EstimatorError(f"f_bar_n must be >= 1, got {f_bar_n}")
    return math.sqrt(f_bar_n * math.log(n) / (n * partition_volume(h, p)))


@dataclass(frozen=True)
class EvaluationGrid:
    """Uniform per-axis nodes ``lo[j] + a * step[j]``, ``a = 0..count[j]-1``."""

    lo: tuple[float, ...]
    step: tuple[float, ...]
    count: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.lo) == len(self.step) == len(self.count)):
            raise EstimatorError("grid axes disagree in length")
        for s, c in zip(self.step, self.count):
            if not s > 0 or c < 2:
                raise EstimatorError(f"bad grid axis: step={s}, count={c}")

    @classmethod
    def for_data(
        cls,
        data: Dataset,
        h_max: Sequence[float],
        spacing: Sequence[float] | float,
    ) -> "EvaluationGrid":
        """Box = data hull inflated by ``h_max`` on every side.

        ``h_max`` is the half-width of the widest pair-estimator support
        ``(h_j + eta_j)/2``, so both plain and convolution estimators vanish
        outside the box.
        """
        d = data.d
        if np.isscalar(spacing):
            spacing = (float(spacing),) * d
        lo, step, count = [], [], []
        for j in range(d):
            a = float(data.X[:, j].min()) - h_max[j]
            b = float(data.X[:, j].max()) + h_max[j]
            c = int(math.ceil((b - a) / spacing[j])) + 1
            lo.append(a)
            step.append(float(spacing[j]))
            count.append(max(c, 2))
        return cls(tuple(lo), tuple(step), tuple(count))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.count

    @property
    def hi(self) -> tuple[float, ...]:
        return tuple(a[-1] for a in self.axes)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        out = []
        for a, s, c in zip(self.lo, self.step, self.count):
            x = a + s * np.arange(c)
            x.setflags(write=False)
            out.append(x)
        return tuple(out)

    def block_shape(self, block: Block) -> tuple[int, ...]:
        return tuple(self.count[j] for j in block)

    def cell_volume(self, block: Block) -> float:
        return block_volume(self.step, block)

    def check_covers(self, data: Dataset, block: Block, half: Sequence[float]) -> None:
        for j, hw in zip(block, half):
            need_lo = float(data.X[:, j].min()) - hw
            need_hi = float(data.X[:, j].max()) + hw
            if self.axes[j][0] > need_lo or self.axes[j][-1] < need_hi:
                raise GridCoverageError(
                    f"grid axis {j + 1} spans [{self.axes[j][0]:.6g}, {self.axes[j][-1]:.6g}] but the "
                    f"data hull plus kernel support needs [{need_lo:.6g}, {need_hi:.6g}]"
                )

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "step": list(self.step), "count": list(self.count)}


@dataclass(frozen=True, eq=False)
class FittedEstimator:
    """Block-product density estimate on a grid.

    ``tables[k]`` holds the values of the factor for ``blocks[k]`` on the
    block's sub-grid. The full tensor is never stored.
    """

    grid: EvaluationGrid
    blocks: tuple[Block, ...]
    tables: tuple[np.ndarray, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for b, t in zip(self.blocks, self.tables):
            if t.shape != self.grid.block_shape(b):
                raise EstimatorError(f"table for block {b} has shape {t.shape}, expected {self.grid.block_shape(b)}")
        covered = sorted(j for b in self.blocks for j in b)
        if covered != list(range(self.grid.d)):
            raise EstimatorError(f"blocks {self.blocks} do not partition {self.grid.d} coordinates")

    def value_at(self, node: Sequence[int]) -> float:
        v = None
        for b, t in zip(self.blocks, self.tables):
            x = t[tuple(node[j] for j in b)]
            v = x if v is None else v * x
        return float(v)

    def materialize(self, rows: slice | None = None) -> np.ndarray:
        """Full tensor (or a slab along axis 0), multiplied in block order."""
        d = self.grid.d
        out = None
        for b, t in zip(self.blocks, self.tables):
            if rows is not None and 0 in b:
                t = t[rows]
            shape = [1] * d
            for pos, j in enumerate(b):
                shape[j] = t.shape[pos]
            t = t.reshape(shape)
            out = t if out is None else out * t
        return np.broadcast_to(out, self._shape(rows))

    def _shape(self, rows: slice | None) -> tuple[int, ...]:
        s = list(self.grid.count)
        if rows is not None:
            s[0] = len(range(*rows.indices(s[0])))
        return tuple(s)

    def marginal_mass(self) -> list[float]:
        """Riemann sum of each block table over its sub-grid."""
        return [float(t.sum() * self.grid.cell_volume(b)) for b, t in zip(self.blocks, self.tables)]


def _row_chunks(grid: EvaluationGrid) -> list[slice]:
    per_row = int(np.prod(grid.count[1:], dtype=np.int64)) if grid.d > 1 else 1
    rows = max(1, CHUNK_ELEMENTS // max(per_row, 1))
    g0 = grid.count[0]
    return [slice(a, min(a + rows, g0)) for a in range(0, g0, rows)]


def sup_norm_diff(a: FittedEstimator, b: FittedEstimator) -> float:
    """Max over grid nodes of ``|a - b|``, in slabs along the first axis."""
    if a.grid != b.grid:
        raise EstimatorError("estimators live on different grids")
    best = 0.0
    for sl in _row_chunks(a.grid):
        diff = np.abs(a.materialize(sl) - b.materialize(sl))
        m = float(diff.max())
        if m > best:
            best = m
    return best


def _key(x: float) -> float:
    return float(x)


class EstimatorBank:
    """Caches per-axis kernel rows and block tables for one dataset and grid.

    Cache fills are idempotent, so concurrent readers may race on a miss
    without changing any result.
    """

    def __init__(
        self,
        data: Dataset,
        kernel: Kernel,
        grid: EvaluationGrid,
        profile_nodes: int = DEFAULT_PROFILE_NODES,
    ) -> None:
        if grid.d != data.d:
            raise EstimatorError(f"grid has {grid.d} axes, data has {data.d} columns")
        self.data = data
        self.kernel = kernel
        self.grid = grid
        self.profile_nodes = profile_nodes
        self._rows: dict = {}
        self._tables: dict = {}
        self.nonnegative_kernel = bool(np.all(kernel(np.linspace(-0.5, 0.5, 4001)) >= 0))

    # per-axis rows -----------------------------------------------------

    def axis_rows(self, j: int, h: float, eta: float | None = None, absolute: bool = False) -> BandedRows:
        """Rows ``k(X_ij - x_a)`` over the grid of axis ``j``, banded to their nonzero windows."""
        if eta is not None:
            h, eta = (h, eta) if h <= eta else (eta, h)
        key = (j, _key(h), None if eta is None else _key(eta), absolute)
        hit = self._rows.get(key)
        if hit is not None:
            return hit
        if absolute:
            out = self.axis_rows(j, h, eta).abs()
        else:
            u = self.data.X[:, j][:, None] - self.grid.axes[j][None, :]
            if eta is None:
                v = self.kernel.scaled(u, h)
            else:
                v = build_convolution_table(self.kernel, h, eta, self.profile_nodes)(u)
            out = BandedRows.from_dense(v)
        self._rows[key] = out
        return out

    def _table(self, block: Block, h_block, eta_block=None, absolute: bool = False) -> np.ndarray:
        half = [
            0.5 * h if eta_block is None else 0.5 * (h + e)
            for h, e in zip(h_block, eta_block if eta_block is not None else h_block)
        ]
        self.grid.check_covers(self.data, block, half)
        rows = [
            self.axis_rows(j, h_block[pos], None if eta_block is None else eta_block[pos], absolute)
            for pos, j in enumerate(block)
        ]
        t = accumulate(rows) / self.data.n
        t.setflags(write=False)
        return t

    def marginal(self, block: Block, h_block: Sequence[float]) -> np.ndarray:
        """Table of ``f~_{h_I}`` on the block sub-grid."""
        key = ("plain", block, tuple(map(_key, h_block)))
        t = self._tables.get(key)
        if t is None:
            t = self._table(block, h_block)
            self._tables[key] = t
        return t

    def abs_marginal(self, block: Block, h_block: Sequence[float]) -> np.ndarray:
        """Table of ``n^-1 sum_i |K_{h_I}(X_I,i - x)|``."""
        if self.nonnegative_kernel:
            return self.marginal(block, h_block)
        key = ("abs", block, tuple(map(_key, h_block)))
        t = self._tables.get(key)
        if t is None:
            t = self._table(block, h_block, absolute=True)
            self._tables[key] = t
        return t

    def pair_marginal(self, block: Block, h_block: Sequence[float], eta_block: Sequence[float]) -> np.ndarray:
        """Table of the convolution-kernel estimator ``f~_{h_I, eta_I}``.

        Only single-axis tables are kept. Multi-axis pair tables are rarely
        reused and would dominate memory; rebuilding them in the canonical
        (sorted) order gives the same bits.
        """
        pairs = tuple(tuple(sorted((_key(a), _key(b)))) for a, b in zip(h_block, eta_block))
        key = ("pair", block, pairs)
        t = self._tables.get(key)
        if t is None:
            t = self._table(block, [p[0] for p in pairs], [p[1] for p in pairs])
            if len(block) == 1:
                self._tables[key] = t
        return t

    # estimators --------------------------------------------------------

    def estimator(self, h: Sequence[float], p: Partition) -> FittedEstimator:
        """``f^_{h,P}(x) = prod_{I in P} f~_{h_I}(x_I)``."""
        tables = tuple(self.marginal(b, [h[j] for j in b]) for b in p.blocks)
        return FittedEstimator(self.grid, p.blocks, tables, {"h": list(h), "P": p.to_json()})

    def pair_estimator(self, h: Sequence[float], p: Partition, eta: Sequence[float], q: Partition) -> FittedEstimator:
        """Convolution-kernel estimator over the blocks of ``P <> P'``."""
        m = diamond(p, q)
        tables = tuple(self.pair_marginal(b, [h[j] for j in b], [eta[j] for j in b]) for b in m.blocks)
        prov = {"h": list(h), "P": p.to_json(), "eta": list(eta), "P_prime": q.to_json(), "blocks": m.to_json()}
        return FittedEstimator(self.grid, m.blocks, tables, prov)

    def pair_key(self, h: Sequence[float], p: Partition, eta: Sequence[float], q: Partition) -> tuple:
        """Identity of the pair estimator's tables, for memoising comparisons."""
        m = diamond(p, q)
        return tuple(
            (b, tuple(tuple(sorted((_key(h[j]), _key(eta[j])))) for j in b)) for b in m.blocks
        )

    @staticmethod
    def plain_key(h: Sequence[float], p: Partition) -> tuple:
        return tuple((b, tuple(_key(h[j]) for j in b)) for b in p.blocks)


def all_blocks(d: int) -> list[Block]:
    return [c for r in range(1, d + 1) for c in combinations(range(d), r)]


def empirical_f_n(bank: EstimatorBank, bandwidths: Sequence[Sequence[float]]) -> tuple[float, float]:
    """``f_n`` (sup over bandwidths, nonempty blocks and nodes) and ``1 v 2 f_n``."""
    if not bandwidths:
        raise EstimatorError("bandwidth grid is empty")
    best = 0.0
    seen = set()
    for block in all_blocks(bank.grid.d):
        for h in bandwidths:
            hb = tuple(float(h[j]) for j in block)
            if (block, hb) in seen:
                continue
            seen.add((block, hb))
            m = float(bank.abs_marginal(block, hb).max())
            if m > best:
                best = m
    return best, max(1.0, 2.0 * best)


# functional forms ---------------------------------------------------------


def fit_marginal(
    data: Dataset, block: Sequence[int], h_block: Sequence[float], grid: EvaluationGrid, kernel: Kernel
) -> np.ndarray:
    block = tuple(block)
    if not block:
        raise EstimatorError("block must be nonempty")
    check_bandwidth(h_block)
    return EstimatorBank(data, kernel, grid).marginal(block, tuple(h_block))


def fit(data: Dataset, h: Sequence[float], p: Partition, grid: EvaluationGrid, kernel: Kernel) -> FittedEstimator:
    return EstimatorBank(data, kernel, grid).estimator(check_bandwidth(h, data.d), p)


def fit_pair(
    data: Dataset,
    hp: tuple[Sequence[float], Partition],
    etaq: tuple[Sequence[float], Partition],
    grid: EvaluationGrid,
    kernel: Kernel,
) -> FittedEstimator:
    (h, p), (eta, q) = hp, etaq
    return EstimatorBank(data, kernel, grid).pair_estimator(check_bandwidth(h, data.d), p, check_bandwidth(eta, data.d), q)
