"""Oracle quantities and Monte Carlo experiments for synthetic densities.

Bias values come from Gauss-Legendre quadrature against the true block
marginals. Monte Carlo replicates draw from independent child streams of a
single ``SeedSequence``, so a run depends only on its seed and never on the
number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import roots_legendre

from .constants import ConstantsContext
from .densities import SyntheticDensity
from .estimators import Dataset, block_volume, partition_volume, sup_norm_diff
from .kernels import Kernel, _convolution_at
from .partitions import Partition, PartitionFamily, diamond, refines
from .selection import CandidateSet, select

BIAS_TOL = 1e-7
THREADS_ENV = "SUPKDE_THREADS"


class QuadratureError(RuntimeError):
    pass


class HarnessError(ValueError):
    pass


def default_threads() -> int:
    v = os.environ.get(THREADS_ENV)
    if v:
        try:
            t = int(v)
        except ValueError:
            raise HarnessError(f"{THREADS_ENV} must be a positive integer, got {v!r}") from None
        if t < 1:
            raise HarnessError(f"{THREADS_ENV} must be a positive integer, got {v!r}")
        return t
    return os.cpu_count() or 1


# smoothness ---------------------------------------------------------------


@dataclass(frozen=True)
class SmoothnessSpec:
    beta: tuple[float, ...]
    p: tuple[float, ...]
    P: Partition
    L: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        d = self.P.dim
        if len(self.beta) != d or len(self.p) != d:
            raise HarnessError(f"beta and p need {d} entries")
        if any(b <= 0 for b in self.beta):
            raise HarnessError("beta entries must be positive")
        if any(q < 1 for q in self.p):
            raise HarnessError("p entries must lie in [1, inf]")


def gamma_block(beta: Sequence[float], p: Sequence[float], block: Sequence[int]) -> float:
    """``(1 - sum 1/(beta_j p_j)) / sum 1/beta_j`` over the block; ``1/inf = 0``."""
    num = 1.0 - sum(0.0 if math.isinf(p[j]) else 1.0 / (beta[j] * p[j]) for j in block)
    den = sum(1.0 / beta[j] for j in block)
    return num / den


def upsilon(spec: SmoothnessSpec) -> float:
    """Effective smoothness index: the smallest block index over the partition."""
    return min(gamma_block(spec.beta, spec.p, b) for b in spec.P.blocks)


def rate_exponent(ups: float) -> float:
    return ups / (2.0 * ups + 1.0)


# bias ---------------------------------------------------------------------


def _axis_rule(xk: np.ndarray, edges, weight, lo: float, hi: float, gx, gw, panels: int):
    """Per-point GL nodes ``t`` and weights ``w(t - x) dt`` along one axis.

    Each smooth piece ``[x + e_i, x + e_{i+1}]`` is clipped to the support
    ``[lo, hi]``, so no panel straddles a jump of the density.
    """
    npts = xk.shape[0]
    a = np.clip(xk[:, None] + edges[None, :-1], lo, hi)
    b = np.clip(xk[:, None] + edges[None, 1:], lo, hi)
    frac = np.arange(panels) / panels
    start = a[:, :, None] + (b - a)[:, :, None] * frac
    half = np.broadcast_to((0.5 * (b - a) / panels)[:, :, None], start.shape)
    t = ((start + half)[..., None] + half[..., None] * gx).reshape(npts, -1)
    z = t - xk[:, None]
    w = (half[..., None] * gw).reshape(npts, -1) * np.asarray(weight(z.ravel())).reshape(z.shape)
    return t, w


def _smooth(fn, x: np.ndarray, pieces: list, order: int, panels: int, support=None, budget: int = 1 << 20) -> np.ndarray:
    """``int w(t - x) fn(t) dt`` with ``w`` a product of per-axis weights.

    ``pieces[k]`` is ``(edges, weight)``: the weight is smooth between
    consecutive edges, each of which gets ``panels`` GL panels of ``order``
    nodes. ``support`` is the box ``(lo, hi)`` outside which ``fn`` vanishes.
    """
    gx, gw = roots_legendre(order)
    k = len(pieces)
    lo, hi = support if support is not None else (np.full(k, -np.inf), np.full(k, np.inf))
    rules = [_axis_rule(x[:, j], edges, weight, lo[j], hi[j], gx, gw, panels) for j, (edges, weight) in enumerate(pieces)]
    sizes = [t.shape[1] for t, _ in rules]
    total = math.prod(sizes)
    step = max(1, budget // max(total, 1))
    out = np.empty(x.shape[0])
    for a in range(0, x.shape[0], step):
        sl = slice(a, a + step)
        c = x[sl].shape[0]
        pts = np.empty((c, *sizes, k))
        W = np.ones((c, *sizes))
        for j, (t, w) in enumerate(rules):
            shape = [c] + [1] * k
            shape[j + 1] = sizes[j]
            pts[..., j] = t[sl].reshape(shape)
            W = W * w[sl].reshape(shape)
        vals = fn(pts.reshape(-1, k)).reshape(c, -1)
        out[sl] = np.sum(vals * W.reshape(c, -1), axis=1)
    return out


def _kernel_pieces(kernel: Kernel, h: Sequence[float]) -> list:
    return [(np.array([-0.5 * hj, 0.5 * hj]), lambda z, hj=hj: kernel.scaled(z, hj)) for hj in h]


class _PiecewisePoly:
    """Piecewise polynomial on consecutive ``edges``, zero outside them."""

    def __init__(self, edges: np.ndarray, polys: list) -> None:
        self.edges = edges
        self.polys = polys

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        idx = np.clip(np.searchsorted(self.edges, z, side="right") - 1, 0, len(self.polys) - 1)
        out = np.zeros_like(z)
        inside = (z >= self.edges[0]) & (z <= self.edges[-1])
        for i, p in enumerate(self.polys):
            m = inside & (idx == i)
            out[m] = p(z[m])
        return out


def _conv_pieces(kernel: Kernel, h: Sequence[float], eta: Sequence[float]) -> list:
    # K_h * K_eta is a polynomial of degree 2 deg K + 1 between its breakpoints,
    # so Chebyshev interpolation of the exact convolution reproduces it
    deg = 2 * kernel.poly.degree() + 1
    order = max(16, deg + 2)
    out = []
    for hj, ej in zip(h, eta):
        s, t = 0.5 * (hj + ej), 0.5 * abs(hj - ej)
        edges = np.array([-s, -t, t, s]) if t > 0 else np.array([-s, 0.0, s])
        polys = [
            np.polynomial.Chebyshev.interpolate(
                lambda z, hj=hj, ej=ej: _convolution_at(kernel, hj, ej, np.asarray(z, dtype=float), order), deg, domain=[a, b]
            )
            for a, b in zip(edges[:-1], edges[1:])
        ]
        out.append((edges, _PiecewisePoly(edges, polys)))
    return out


def _converged(fn, x, pieces, tol: float, support=None, order: int = 12, panels: int = 1, max_panels: int = 64):
    prev = _smooth(fn, x, pieces, order, panels, support)
    while panels < max_panels:
        panels *= 2
        cur = _smooth(fn, x, pieces, order, panels, support)
        err = float(np.max(np.abs(cur - prev)))
        if err <= tol:
            return cur, err
        prev = cur
    raise QuadratureError(f"quadrature did not reach tolerance {tol:g}; achieved {err:.3g}")


def smoothed_marginal(f: SyntheticDensity, kernel: Kernel, block, h, x, tol: float = BIAS_TOL) -> np.ndarray:
    """``s_h(x) = int K_h(t - x) f_I(t) dt`` at points ``x``."""
    fn = lambda pts: f.marginal_pdf(block, pts)  # noqa: E731
    return _converged(fn, np.atleast_2d(x), _kernel_pieces(kernel, h), tol, f.support(block))[0]


def doubly_smoothed_marginal(f: SyntheticDensity, kernel: Kernel, block, h, eta, x, tol: float = BIAS_TOL) -> np.ndarray:
    """``s*_{h,eta}(x) = int [K_h * K_eta](t - x) f_I(t) dt`` at points ``x``."""
    fn = lambda pts: f.marginal_pdf(block, pts)  # noqa: E731
    return _converged(fn, np.atleast_2d(x), _conv_pieces(kernel, h, eta), tol, f.support(block))[0]


def _dense_nodes(f: SyntheticDensity, block, h) -> np.ndarray:
    lo, hi = f.box(6.0)
    per_axis = {1: 801, 2: 101, 3: 25}.get(len(block), 11)
    axes = [np.linspace(lo[j] - h[k], hi[j] + h[k], per_axis) for k, j in enumerate(block)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(block))


def _refined_max(value, x0s: np.ndarray, step: np.ndarray) -> float:
    best = max(abs(float(value(x[None, :])[0])) for x in x0s)
    for x0 in x0s:
        res = optimize.minimize(
            lambda x: -abs(float(value(x[None, :])[0])),
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-12, "initial_simplex": np.vstack([x0, x0 + np.diag(step)])},
        )
        best = max(best, -float(res.fun))
    return best


def true_bias(
    f: SyntheticDensity, kernel: Kernel, block: Sequence[int], h_block: Sequence[float], tol: float = BIAS_TOL
) -> float:
    """``sup_x |s_h(x) - f_I(x)|`` on a dense block grid, refined near the top nodes."""
    block, h_block = tuple(block), tuple(float(v) for v in h_block)
    if not block:
        raise HarnessError("block must be nonempty")
    return _true_bias_cached(f, kernel, block, h_block, tol)


@lru_cache(maxsize=4096)
def _true_bias_cached(f, kernel, block, h, tol) -> float:
    x = _dense_nodes(f, block, h)
    fn = lambda pts: f.marginal_pdf(block, pts)  # noqa: E731
    pieces = _kernel_pieces(kernel, h)
    support = f.support(block)
    b = _converged(fn, x, pieces, tol, support)[0] - fn(x)

    def value(pts):
        return _converged(fn, pts, pieces, tol, support)[0] - fn(pts)

    top = np.argsort(-np.abs(b))[:3]
    spacing = np.array([(x[:, k].max() - x[:, k].min()) for k in range(len(block))]) / 50.0
    return max(float(np.abs(b).max()), _refined_max(value, x[top], spacing))


def factorizing_partitions(f: SyntheticDensity, family: PartitionFamily) -> list[Partition]:
    """Members of the family over which ``f`` factorizes: coarsenings of the true partition."""
    return [p for p in family if refines(f.P_true, p)]


def bias_term(f: SyntheticDensity, kernel: Kernel, h, p: Partition, family: PartitionFamily) -> float:
    """``B(h, P)``: largest block bias over all blocks of ``P <> P'``."""
    blocks = {b for q in family for b in diamond(p, q).blocks}
    return max(true_bias(f, kernel, b, [h[j] for j in b]) for b in sorted(blocks))


@dataclass
class OracleRisk:
    value: float
    h: tuple
    P: Partition
    table: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"value": self.value, "h": list(self.h), "P": self.P.to_json(), "table": self.table}


def oracle_risk(f: SyntheticDensity, kernel: Kernel, cands: CandidateSet, n: int) -> OracleRisk:
    """Exact minimisation of ``B(h,P) + sqrt(ln n / (n V(h,P)))`` over candidates
    whose partition lies in the factorizing set."""
    parts = factorizing_partitions(f, cands.partitions)
    if not parts:
        raise HarnessError("no candidate partition is a factorization of f")
    table = []
    for h in cands.bandwidths:
        for p in parts:
            bias = bias_term(f, kernel, h, p, cands.partitions)
            stoch = math.sqrt(math.log(n) / (n * partition_volume(h, p)))
            table.append({"h": list(h), "P": p.to_json(), "B": bias, "stochastic": stoch, "value": bias + stoch})
    best = min(table, key=lambda r: r["value"])
    return OracleRisk(best["value"], tuple(best["h"]), Partition.from_json(best["P"], f.d), table)


def smoothing_gap(f: SyntheticDensity, kernel: Kernel, block, h, eta, x) -> tuple[float, float]:
    """``(max_x |s*_{h,eta} - s_eta|, k_1^{|I|} b_h)`` for one block."""
    s_star = doubly_smoothed_marginal(f, kernel, block, h, eta, x)
    s_eta = smoothed_marginal(f, kernel, block, eta, x)
    bound = kernel.l1_norm ** len(block) * true_bias(f, kernel, block, h)
    return float(np.max(np.abs(s_star - s_eta))), bound


# Monte Carlo --------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    kernel: Kernel
    mode: str = "calibrated"
    kappa: float = 0.5
    q_lambda: float = 1.0
    a_floor: float | None = None
    family: PartitionFamily | None = None
    spacing: float | None = None
    k_max: int | None = None
    eta_budget: int | None = None

    def context(self, d: int) -> ConstantsContext:
        return ConstantsContext.for_kernel(
            self.kernel, d, q=self.q_lambda, mode=self.mode, kappa=self.kappa, a_floor=self.a_floor
        )

    def to_json(self) -> dict:
        return {
            "kernel": self.kernel.to_json(),
            "mode": self.mode,
            "kappa": self.kappa,
            "q_lambda": self.q_lambda,
            "a_floor": self.a_floor,
            "family": None if self.family is None else self.family.to_json(),
            "spacing": self.spacing,
            "k_max": self.k_max,
            "eta_budget": self.eta_budget,
        }


@dataclass(frozen=True)
class Replicate:
    index: int
    error: float
    h_hat: tuple
    P_hat: Partition
    best_error: float | None = None
    best_h: tuple | None = None
    best_P: Partition | None = None

    @property
    def ratio(self) -> float | None:
        if self.best_error is None:
            return None
        return self.error / self.best_error

    def to_row(self) -> dict:
        return {
            "replicate": self.index,
            "error": self.error,
            "h_hat": " ".join(repr(v) for v in self.h_hat),
            "P_hat": str(self.P_hat),
            "best_error": self.best_error,
            "best_h": None if self.best_h is None else " ".join(repr(v) for v in self.best_h),
            "best_P": None if self.best_P is None else str(self.best_P),
            "ratio": self.ratio,
        }


@dataclass
class RiskEstimate:
    n: int
    q: float
    risk: float
    stderr: float
    replicates: list[Replicate]

    @property
    def median_ratio(self) -> float | None:
        r = [x.ratio for x in self.replicates if x.ratio is not None]
        return float(np.median(r)) if r else None

    def summary(self) -> dict:
        return {"n": self.n, "q": self.q, "reps": len(self.replicates), "risk": self.risk, "stderr": self.stderr, "median_ratio": self.median_ratio}


def replicate_streams(seed: int, reps: int) -> list[np.random.Generator]:
    """One independent generator per replicate, fixed by ``(seed, index)``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(reps)]


def run_replicate(f: SyntheticDensity, cfg: PipelineConfig, n: int, rng: np.random.Generator, index: int, with_oracle: bool) -> Replicate:
    X = f.sample(rng, n)
    family = cfg.family if cfg.family is not None else PartitionFamily((Partition.trivial(f.d),))
    res = select(
        Dataset(X), cfg.kernel, cfg.context(f.d), family, spacing=cfg.spacing, k_max=cfg.k_max, eta_budget=cfg.eta_budget
    )
    truth = f.on_grid(res.grid)
    err = sup_norm_diff(res.estimator(), truth)
    if not with_oracle:
        return Replicate(index, err, res.h_hat, res.P_hat)
    best = None
    for row in res.table:
        e = sup_norm_diff(res.bank.estimator(row.h, row.P), truth)
        if best is None or e < best[0]:
            best = (e, row.h, row.P)
    return Replicate(index, err, res.h_hat, res.P_hat, *best)


def mc_risk(
    f: SyntheticDensity,
    cfg: PipelineConfig,
    n: int,
    reps: int,
    q: float = 1.0,
    seed: int = 0,
    threads: int | None = None,
    with_oracle: bool = False,
) -> RiskEstimate:
    """``(mean ||f^ - f||^q)^(1/q)`` over replicates, with a delta-method stderr."""
    if reps < 8:
        raise HarnessError(f"reps must be >= 8, got {reps}")
    if q < 1:
        raise HarnessError(f"q must be >= 1, got {q}")
    threads = default_threads() if threads is None else threads
    rngs = replicate_streams(seed, reps)
    job = lambda i: run_replicate(f, cfg, n, rngs[i], i, with_oracle)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            reps_out = list(ex.map(job, range(reps)))
    else:
        reps_out = [job(i) for i in range(reps)]
    e = np.array([r.error for r in reps_out]) ** q
    m = float(e.mean())
    se_m = float(e.std(ddof=1) / math.sqrt(reps))
    risk = m ** (1.0 / q)
    stderr = (1.0 / q) * m ** (1.0 / q - 1.0) * se_m
    return RiskEstimate(n, q, risk, stderr, reps_out)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    residuals: list[float]
    theoretical_slope: float | None

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residuals": self.residuals, "theoretical_slope": self.theoretical_slope}


def fit_slope(ns: Sequence[int], risks: Sequence[float], theoretical: float | None = None) -> SlopeFit:
    """Least squares of ``log risk`` on ``log(n / ln n)``."""
    ns = np.asarray(ns, dtype=float)
    x = np.log(ns / np.log(ns))
    y = np.log(np.asarray(risks, dtype=float))
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    return SlopeFit(float(slope), float(icpt), (y - A @ [slope, icpt]).tolist(), theoretical)


@dataclass
class RateResult:
    fit: SlopeFit
    risks: list[RiskEstimate]
    upsilon: float

    def to_json(self) -> dict:
        return {"upsilon": self.upsilon, **self.fit.to_json(), "per_n": [r.summary() for r in self.risks]}


def rate_experiment(
    f: SyntheticDensity,
    spec: SmoothnessSpec,
    cfg: PipelineConfig,
    n_list: Sequence[int],
    reps: int,
    q: float = 1.0,
    seed: int = 0,
    threads: int | None = None,
) -> RateResult:
    ups = upsilon(spec)
    if ups <= 0:
        raise HarnessError(f"effective smoothness must be positive, got {ups}")
    ns = sorted(int(n) for n in n_list)
    if len(ns) < 4 or ns[-1] < 10 * ns[0]:
        raise HarnessError("n_list needs at least 4 values spanning a decade")
    risks = [mc_risk(f, cfg, n, reps, q, seed + k, threads) for k, n in enumerate(ns)]
    fit = fit_slope(ns, [r.risk for r in risks], -rate_exponent(ups))
    return RateResult(fit, risks, ups)


def structure_recovery(
    f: SyntheticDensity, cfg: PipelineConfig, n: int, reps: int, seed: int = 0, threads: int | None = None
) -> dict:
    """Frequency of each selected partition over replicates (descriptive)."""
    if reps < 1:
        raise HarnessError("reps must be positive")
    threads = default_threads() if threads is None else threads
    rngs = replicate_streams(seed, reps)
    job = lambda i: run_replicate(f, cfg, n, rngs[i], i, False)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(job, range(reps)))
    else:
        out = [job(i) for i in range(reps)]
    counts: dict[str, int] = {}
    for r in out:
        counts[str(r.P_hat)] = counts.get(str(r.P_hat), 0) + 1
    return {
        "n": n,
        "reps": reps,
        "P_true": str(f.P_true),
        "frequencies": {k: v / reps for k, v in sorted(counts.items())},
        "counts": dict(sorted(counts.items())),
        "replicates": [r.to_row() for r in out],
    }
