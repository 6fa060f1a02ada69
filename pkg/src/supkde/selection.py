"""Joint selection of a bandwidth vector and an independence structure.

For every candidate ``(h, P)`` the rule compares the pair estimator built
from ``(h, P)`` and ``(eta, P')`` with the plain estimator ``f^_{eta, P'}``
over all candidates ``(eta, P')``:

    Delta(h, P) = max_{eta, P'} [ ||f^_{(h,P),(eta,P')} - f^_{eta,P'}|| - lam A(eta, P') ]_+

and returns the minimiser of ``Delta(h, P) + lam A(h, P)``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import ConstantsContext, lambda_and_threshold, threshold
from .estimators import (
    Bandwidth,
    Dataset,
    EstimatorBank,
    EvaluationGrid,
    A_hat,
    empirical_f_n,
    partition_volume,
    sup_norm_diff,
)
from .kernels import Kernel
from .partitions import Partition, PartitionFamily


class CandidateError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateSet:
    """Dyadic bandwidth vectors admitted by the volume rule, times a family."""

    bandwidths: tuple[Bandwidth, ...]
    partitions: PartitionFamily
    n: int
    a_star: float

    def __post_init__(self) -> None:
        if not self.bandwidths:
            raise CandidateError("candidate set is empty")

    @property
    def pairs(self) -> list[tuple[Bandwidth, Partition]]:
        return [(h, p) for h in self.bandwidths for p in self.partitions]

    def __len__(self) -> int:
        return len(self.bandwidths) * len(self.partitions)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "a_star": self.a_star,
            "bandwidths": [list(h) for h in self.bandwidths],
            "partitions": self.partitions.to_json(),
        }


def admissible(n: int, a_star: float, h: Sequence[float]) -> bool:
    """``n V_h >= ln(n) / a*``."""
    return n * math.prod(h) >= math.log(n) / a_star


def build_candidates(
    n: int, d: int, a_star: float, family: PartitionFamily, k_max: int | None = None
) -> CandidateSet:
    """All ``h`` with ``h_j = 2^-k_j`` that pass the volume rule.

    ``k_max`` optionally caps the dyadic depth per axis; by default the depth
    is the largest one a single axis can reach.
    """
    if n < 3:
        raise CandidateError(f"n must be >= 3, got {n}")
    if not a_star > 0:
        raise CandidateError(f"a* must be positive, got {a_star}")
    if family.dim != d:
        raise CandidateError(f"family has dimension {family.dim}, data has {d}")
    ratio = n * a_star / math.log(n)
    if ratio < 1:
        raise CandidateError(
            f"no bandwidth satisfies n V_h >= ln(n)/a* (n={n}, a*={a_star:.3g}); "
            "the theoretical threshold is far too small at this n, use calibrated mode or set a_floor"
        )
    depth = int(math.floor(math.log2(ratio))) + 1
    if k_max is not None:
        depth = min(depth, k_max)
    levels = [2.0**-k for k in range(depth + 1)]
    hs = [h for h in itertools.product(levels, repeat=d) if admissible(n, a_star, h)]
    if not hs:
        raise CandidateError(f"no admissible bandwidths for n={n}, a*={a_star:.3g}")
    hs.sort()
    return CandidateSet(tuple(hs), family, n, a_star)


@dataclass(frozen=True)
class CriterionRow:
    h: Bandwidth
    P: Partition
    delta: float
    penalty: float
    volume: float

    @property
    def criterion(self) -> float:
        return self.delta + self.penalty

    def sort_key(self) -> tuple:
        # smallest criterion, largest volume, fewest blocks, then h, then P
        return (self.criterion, -self.volume, len(self.P), self.h, self.P.rgs)

    def to_json(self) -> dict:
        return {
            "h": list(self.h),
            "P": self.P.to_json(),
            "delta_hat": self.delta,
            "lambda_A_hat": self.penalty,
            "criterion": self.criterion,
            "V": self.volume,
        }


@dataclass(eq=False)
class SelectionResult:
    h_hat: Bandwidth
    P_hat: Partition
    table: list[CriterionRow]
    lam: float
    a_star: float
    f_n: float
    f_bar_n: float
    mode: str
    grid: EvaluationGrid
    n_eta: int
    bank: EstimatorBank | None = field(default=None, repr=False)

    @property
    def criterion(self) -> float:
        return self.best.criterion

    @property
    def best(self) -> CriterionRow:
        return min(self.table, key=CriterionRow.sort_key)

    def estimator(self):
        if self.bank is None:
            raise CandidateError("result was detached from its estimator cache")
        return self.bank.estimator(self.h_hat, self.P_hat)

    def to_json(self) -> dict:
        return {
            "h_hat": list(self.h_hat),
            "P_hat": self.P_hat.to_json(),
            "criterion": self.criterion,
            "lambda": self.lam,
            "a_star": self.a_star,
            "f_n": self.f_n,
            "f_bar_n": self.f_bar_n,
            "mode": self.mode,
            "grid": self.grid.to_json(),
            "eta_candidates_used": self.n_eta,
            "tie_break": "criterion asc, V(h,P) desc, block count asc, h lexicographic, P restricted-growth string",
            "table": [r.to_json() for r in self.table],
        }


def eta_subset(pairs: list, budget: int | None) -> list:
    """Deterministic, evenly spaced subsample of the comparison candidates."""
    if budget is None or budget >= len(pairs):
        return pairs
    if budget < 1:
        raise CandidateError(f"eta budget must be positive, got {budget}")
    idx = np.unique(np.linspace(0, len(pairs) - 1, budget).round().astype(int))
    return [pairs[i] for i in idx]


class Comparer:
    """Memoised ``||f^_{(h,P),(eta,P')} - f^_{eta,P'}||`` on a bank's grid.

    Distinct ``(h, P)`` often share the same pair estimator once ``P <> P'``
    is formed, so results are keyed by the tables actually compared.
    """

    def __init__(self, bank: EstimatorBank) -> None:
        self.bank = bank
        self._memo: dict = {}

    def distance(self, h, p, eta, q) -> float:
        key = (self.bank.pair_key(h, p, eta, q), self.bank.plain_key(eta, q))
        v = self._memo.get(key)
        if v is None:
            v = sup_norm_diff(self.bank.pair_estimator(h, p, eta, q), self.bank.estimator(eta, q))
            self._memo[key] = v
        return v


def delta_hat(
    h: Bandwidth,
    p: Partition,
    etas: Sequence[tuple[Bandwidth, Partition]],
    comparer: Comparer,
    penalties: dict,
) -> float:
    """``max_{eta,P'} [dist - lam A(eta,P')]_+`` over the given comparison set.

    ``penalties`` maps ``(eta, P')`` to ``lam A(eta, P')``.
    """
    best = 0.0
    for eta, q in etas:
        v = comparer.distance(h, p, eta, q) - penalties[(eta, q)]
        if v > best:
            best = v
    return best


def default_grid(data: Dataset, cands: CandidateSet, spacing=None) -> EvaluationGrid:
    """Box inflated by the largest candidate bandwidth; default spacing is
    the smallest candidate bandwidth over four, per axis."""
    hs = np.array(cands.bandwidths)
    h_max = hs.max(axis=0)
    if spacing is None:
        spacing = tuple(hs.min(axis=0) / 4.0)
    return EvaluationGrid.for_data(data, tuple(h_max), spacing)


def select(
    data: Dataset,
    kernel: Kernel,
    ctx: ConstantsContext,
    family: PartitionFamily,
    *,
    spacing=None,
    grid: EvaluationGrid | None = None,
    k_max: int | None = None,
    eta_budget: int | None = None,
    threads: int = 1,
) -> SelectionResult:
    """Run the full rule and return the minimiser with its criterion table."""
    if ctx.d != data.d:
        raise CandidateError(f"constants context has d={ctx.d}, data has d={data.d}")
    a_star = threshold(ctx)
    cands = build_candidates(data.n, data.d, a_star, family, k_max)
    if grid is None:
        grid = default_grid(data, cands, spacing)
    bank = EstimatorBank(data, kernel, grid)
    f_n, f_bar = empirical_f_n(bank, cands.bandwidths)
    lam, a_star2 = lambda_and_threshold(ctx, f_bar)
    assert a_star2 == a_star

    pairs = cands.pairs
    penalties = {(h, p): lam * A_hat(f_bar, h, p, data.n) for h, p in pairs}
    etas = eta_subset(pairs, eta_budget)
    comparer = Comparer(bank)

    def row(hp):
        h, p = hp
        return CriterionRow(h, p, delta_hat(h, p, etas, comparer, penalties), penalties[hp], partition_volume(h, p))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            table = list(ex.map(row, pairs))
    else:
        table = [row(hp) for hp in pairs]
    best = min(table, key=CriterionRow.sort_key)
    return SelectionResult(
        best.h, best.P, table, lam, a_star, f_n, f_bar, ctx.mode, grid, len(etas), bank
    )
