"""Synthetic densities with a known independence structure.

A density is a product of factors over disjoint coordinate blocks. The
factor blocks form the true partition, and every block marginal is
available in closed form (or by low-dimensional quadrature for truncated
factors), so bias and risk oracles never rely on estimated quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats
from scipy.special import roots_legendre

from .estimators import EvaluationGrid, FittedEstimator
from .partitions import Partition

REJECTION_MIN_EFFICIENCY = 0.01


class DensityError(ValueError):
    pass


def bump_profile(t):
    """``g(t) = (1 - 4t^2)^3 (1 - 36 t^2)`` on ``|t| < 1/2``.

    ``g`` integrates to zero, ``g(0) = 1 = max |g|`` and it is twice
    continuously differentiable on the line.
    """
    t = np.asarray(t, dtype=float)
    s = t * t
    return np.where(s < 0.25, (1.0 - 4.0 * s) ** 3 * (1.0 - 36.0 * s), 0.0)


BUMP_MIN = -16.0 / 27.0  # min of bump_profile, attained at t^2 = 1/12


def _as_points(x, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, k) if k > 1 else x[:, None]
    if x.shape[-1] != k:
        raise DensityError(f"expected points with {k} coordinates, got shape {x.shape}")
    return x


# factors ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianFactor:
    coords: tuple[int, ...]
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        k = len(self.coords)
        mean = np.asarray(self.mean, dtype=float).reshape(k)
        cov = np.asarray(self.cov, dtype=float).reshape(k, k)
        if not np.allclose(cov, cov.T):
            raise DensityError("covariance must be symmetric")
        chol = np.linalg.cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_log_norm", -0.5 * k * math.log(2 * math.pi) - float(np.log(np.diag(chol)).sum()))

    @property
    def scales(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, len(self.coords))
        z = np.linalg.solve(self._chol, (x - self.mean).T)
        return np.exp(self._log_norm - 0.5 * np.sum(z * z, axis=0))

    def marginal(self, positions: Sequence[int]) -> "GaussianFactor":
        pos = list(positions)
        return GaussianFactor(tuple(self.coords[p] for p in pos), self.mean[pos], self.cov[np.ix_(pos, pos)])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, len(self.coords)))
        return self.mean + z @ self._chol.T

    def box(self, width: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
        return self.mean - width * self.scales, self.mean + width * self.scales

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        k = len(self.coords)
        return np.full(k, -np.inf), np.full(k, np.inf)

    def describe(self) -> dict:
        return {"type": "gaussian", "coords": [c + 1 for c in self.coords], "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True, eq=False)
class TruncatedGaussianFactor:
    """Gaussian restricted to the box ``[lo, hi]`` and renormalised."""

    coords: tuple[int, ...]
    mean: np.ndarray
    cov: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        k = len(self.coords)
        base = GaussianFactor(self.coords, self.mean, self.cov)
        lo = np.asarray(self.lo, dtype=float).reshape(k)
        hi = np.asarray(self.hi, dtype=float).reshape(k)
        if np.any(hi <= lo):
            raise DensityError("truncation box must have hi > lo")
        mass = _box_mass(base, lo, hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "_base", base)
        object.__setattr__(self, "_mass", mass)

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, len(self.coords))
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        return np.where(inside, self._base.pdf(x) / self._mass, 0.0)

    def marginal(self, positions: Sequence[int]) -> "_NumericMarginal":
        return _NumericMarginal(self, tuple(positions))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((0, len(self.coords)))
        while out.shape[0] < n:
            m = max(64, int(1.2 * (n - out.shape[0]) / self._mass) + 16)
            x = self._base.sample(rng, m)
            keep = np.all((x >= self.lo) & (x <= self.hi), axis=1)
            out = np.vstack([out, x[keep]])
        return out[:n]

    def box(self, width: float = 8.0):
        return self.lo.copy(), self.hi.copy()

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo.copy(), self.hi.copy()

    def describe(self) -> dict:
        d = self._base.describe()
        d.update(type="truncated-gaussian", lo=self.lo.tolist(), hi=self.hi.tolist(), mass=self._mass)
        return d


def _box_mass(g: GaussianFactor, lo, hi) -> float:
    k = len(g.coords)
    if k == 1:
        s = g.scales[0]
        return float(stats.norm.cdf(hi[0], g.mean[0], s) - stats.norm.cdf(lo[0], g.mean[0], s))
    return float(stats.multivariate_normal(g.mean, g.cov).cdf(hi, lower_limit=lo))


@dataclass(frozen=True, eq=False)
class _NumericMarginal:
    """Marginal of a truncated factor by Gauss-Legendre over the dropped axes."""

    parent: TruncatedGaussianFactor
    positions: tuple[int, ...]
    panels: int = 16
    order: int = 24

    @property
    def coords(self) -> tuple[int, ...]:
        return tuple(self.parent.coords[p] for p in self.positions)

    def pdf(self, x) -> np.ndarray:
        k = len(self.parent.coords)
        keep = list(self.positions)
        drop = [p for p in range(k) if p not in keep]
        x = _as_points(x, len(keep))
        if not drop:
            return self.parent.pdf(x)
        nodes, weights = [], []
        for p in drop:
            u, w = _composite_gl(self.parent.lo[p], self.parent.hi[p], self.panels, self.order)
            nodes.append(u)
            weights.append(w)
        mesh = np.stack(np.meshgrid(*nodes, indexing="ij"), -1).reshape(-1, len(drop))
        wt = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), -1).reshape(-1, len(drop)), axis=1)
        out = np.empty(x.shape[0])
        for i, xi in enumerate(x):
            full = np.empty((mesh.shape[0], k))
            full[:, keep] = xi
            full[:, drop] = mesh
            out[i] = self.parent.pdf(full) @ wt
        return out


def _composite_gl(a: float, b: float, panels: int, order: int):
    x, w = roots_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


@dataclass(frozen=True, eq=False)
class BumpFactor:
    """Isotropic Gaussian on a block plus disjoint compactly supported bumps

        f0(x) + A sum_j prod_l g((x_l - c_jl) / delta_l).

    Every bump integrates to zero along each axis, so the marginal on any
    proper sub-block is the Gaussian marginal.
    """

    coords: tuple[int, ...]
    sigma: float
    amplitude: float
    scales: np.ndarray
    centers: np.ndarray

    def __post_init__(self) -> None:
        k = len(self.coords)
        scales = np.asarray(self.scales, dtype=float).reshape(k)
        centers = np.asarray(self.centers, dtype=float).reshape(-1, k)
        if np.any(scales <= 0) or self.sigma <= 0:
            raise DensityError("bump scales and sigma must be positive")
        for a in range(len(centers)):
            for b in range(a + 1, len(centers)):
                if not np.any(np.abs(centers[a] - centers[b]) >= scales):
                    raise DensityError(f"bumps {a + 1} and {b + 1} overlap")
        base = GaussianFactor(self.coords, np.zeros(k), self.sigma**2 * np.eye(k))
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "_base", base)
        floor = min((_min_on_box(base, c - scales / 2, c + scales / 2) for c in centers), default=np.inf)
        if abs(self.amplitude) * abs(BUMP_MIN if self.amplitude > 0 else 1.0) > floor:
            raise DensityError(
                f"amplitude {self.amplitude:g} makes the density negative inside a bump "
                f"(Gaussian floor there is {floor:.3g})"
            )
        object.__setattr__(self, "_envelope", 1.0 + abs(self.amplitude) / floor if np.isfinite(floor) else 1.0)

    @property
    def efficiency(self) -> float:
        return 1.0 / self._envelope

    def bumps(self, x) -> np.ndarray:
        x = _as_points(x, len(self.coords))
        out = np.zeros(x.shape[0])
        for c in self.centers:
            out += np.prod(bump_profile((x - c) / self.scales), axis=1)
        return self.amplitude * out

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, len(self.coords))
        return self._base.pdf(x) + self.bumps(x)

    def marginal(self, positions: Sequence[int]):
        if len(positions) == len(self.coords):
            return self
        return self._base.marginal(positions)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.efficiency < REJECTION_MIN_EFFICIENCY:
            raise DensityError(
                f"rejection efficiency {self.efficiency:.2%} is below {REJECTION_MIN_EFFICIENCY:.0%}; "
                "reduce the bump amplitude or move bumps toward the Gaussian centre"
            )
        out = np.empty((0, len(self.coords)))
        while out.shape[0] < n:
            m = max(64, int(1.2 * (n - out.shape[0]) * self._envelope) + 16)
            x = self._base.sample(rng, m)
            u = rng.random(m)
            ratio = self.pdf(x) / (self._envelope * self._base.pdf(x))
            out = np.vstack([out, x[u < ratio]])
        return out[:n]

    def box(self, width: float = 8.0):
        return self._base.box(width)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        return self._base.support()

    def describe(self) -> dict:
        return {
            "type": "gaussian-with-bumps",
            "coords": [c + 1 for c in self.coords],
            "sigma": self.sigma,
            "amplitude": self.amplitude,
            "scales": self.scales.tolist(),
            "centers": self.centers.tolist(),
            "rejection_efficiency": self.efficiency,
        }


def _min_on_box(g: GaussianFactor, lo, hi) -> float:
    # a Gaussian is log-concave, so its minimum over a box sits at a vertex
    k = len(lo)
    corners = np.array([[hi[j] if (m >> j) & 1 else lo[j] for j in range(k)] for m in range(2**k)])
    return float(g.pdf(corners).min())


@dataclass(frozen=True, eq=False)
class ScipyFactor:
    """One coordinate following a frozen ``scipy.stats`` distribution."""

    coords: tuple[int, ...]
    dist: object

    def pdf(self, x) -> np.ndarray:
        return self.dist.pdf(_as_points(x, 1)[:, 0])

    def marginal(self, positions):
        return self

    def sample(self, rng, n):
        return np.asarray(self.dist.rvs(size=n, random_state=rng), dtype=float).reshape(n, 1)

    def box(self, width: float = 8.0):
        tail = special.ndtr(-width)
        return np.array([self.dist.ppf(tail)]), np.array([self.dist.isf(tail)])

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.dist.support()
        return np.array([float(a)]), np.array([float(b)])

    def describe(self) -> dict:
        return {"type": "scipy", "coords": [c + 1 for c in self.coords], "dist": self.dist.dist.name, "args": list(self.dist.args), "kwds": dict(self.dist.kwds)}


# densities ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticDensity:
    kind: str
    factors: tuple
    d: int
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        coords = sorted(c for f in self.factors for c in f.coords)
        if coords != list(range(self.d)):
            raise DensityError(f"factor coordinates {coords} do not partition 1..{self.d}")
        for f in self.factors:
            if list(f.coords) != sorted(f.coords):
                raise DensityError("factor coordinates must be increasing")

    @property
    def P_true(self) -> Partition:
        return Partition.from_blocks([f.coords for f in self.factors], self.d)

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, self.d)
        out = np.ones(x.shape[0])
        for f in self.factors:
            out = out * f.pdf(x[:, list(f.coords)])
        return out

    def marginal_pdf(self, block: Sequence[int], x) -> np.ndarray:
        """Density of ``X_I`` at points ``x`` (columns ordered like ``block``)."""
        block = tuple(block)
        x = _as_points(x, len(block))
        out = np.ones(x.shape[0])
        for f in self.factors:
            pos = [f.coords.index(j) for j in block if j in f.coords]
            if not pos:
                continue
            cols = [block.index(f.coords[p]) for p in pos]
            out = out * f.marginal(pos).pdf(x[:, cols])
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        X = np.empty((n, self.d))
        for f in self.factors:
            X[:, list(f.coords)] = f.sample(rng, n)
        return X

    def box(self, width: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.empty(self.d), np.empty(self.d)
        for f in self.factors:
            a, b = f.box(width)
            lo[list(f.coords)] = a
            hi[list(f.coords)] = b
        return lo, hi

    def support(self, block: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Closed box outside which the density (or the ``block`` marginal) vanishes;
        infinite where unbounded. Marginals are smooth inside it."""
        lo, hi = np.empty(self.d), np.empty(self.d)
        for f in self.factors:
            a, b = f.support()
            lo[list(f.coords)] = a
            hi[list(f.coords)] = b
        if block is None:
            return lo, hi
        return lo[list(block)], hi[list(block)]

    def on_grid(self, grid: EvaluationGrid) -> FittedEstimator:
        """True density on a grid, stored as one table per factor."""
        tables = []
        for f in self.factors:
            axes = [grid.axes[j] for j in f.coords]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))
            t = f.pdf(mesh).reshape(grid.block_shape(f.coords))
            tables.append(t)
        return FittedEstimator(grid, tuple(f.coords for f in self.factors), tuple(tables), {"truth": self.kind})

    def describe(self) -> dict:
        return {"kind": self.kind, "d": self.d, "P_true": self.P_true.to_json(), "factors": [f.describe() for f in self.factors], **self.params}


def _per_axis(v, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.full(d, float(v)) if v.ndim == 0 else v.reshape(d)


def product_gaussian(d: int, sigma=0.25, mean=0.0) -> SyntheticDensity:
    """Independent Gaussian coordinates; the true partition is all singletons."""
    s, m = _per_axis(sigma, d), _per_axis(mean, d)
    factors = tuple(GaussianFactor((j,), [m[j]], [[s[j] ** 2]]) for j in range(d))
    return SyntheticDensity("product-gaussian", factors, d, {"sigma": s.tolist(), "mean": m.tolist()})


def block_gaussian(blocks: Sequence[tuple[Sequence[int], Sequence, Sequence]], d: int) -> SyntheticDensity:
    """Gaussian blocks ``(coords, mean, cov)`` (0-based coords), independent across blocks."""
    factors = tuple(sorted((GaussianFactor(tuple(c), m, s) for c, m, s in blocks), key=lambda f: f.coords[0]))
    return SyntheticDensity("block-gaussian", factors, d)


def correlated_gaussian(d: int = 2, sigma: float = 0.25, rho: float = 0.8) -> SyntheticDensity:
    """One fully dependent Gaussian block with equicorrelation ``rho``."""
    cov = sigma**2 * ((1 - rho) * np.eye(d) + rho * np.ones((d, d)))
    out = block_gaussian([(range(d), np.zeros(d), cov)], d)
    return SyntheticDensity("block-gaussian", out.factors, d, {"sigma": sigma, "rho": rho})


def truncated_gaussian(mean, cov, lo, hi) -> SyntheticDensity:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = len(mean)
    f = TruncatedGaussianFactor(tuple(range(d)), mean, cov, lo, hi)
    return SyntheticDensity("truncated-gaussian", (f,), d)


def gaussian_with_bumps(
    d: int,
    sigma: float,
    block: Sequence[int],
    amplitude: float,
    scales,
    centers,
) -> SyntheticDensity:
    """Product Gaussian with a bump perturbation on one block (0-based)."""
    block = tuple(sorted(block))
    factors = [GaussianFactor((j,), [0.0], [[sigma**2]]) for j in range(d) if j not in block]
    factors.append(BumpFactor(block, sigma, amplitude, _per_axis(scales, len(block)), centers))
    factors.sort(key=lambda f: f.coords[0])
    return SyntheticDensity("gaussian-with-bumps", tuple(factors), d, {"sigma": sigma})


def custom_product(dists: Sequence) -> SyntheticDensity:
    """Independent coordinates from frozen scipy distributions."""
    factors = tuple(ScipyFactor((j,), dist) for j, dist in enumerate(dists))
    return SyntheticDensity("custom-product", factors, len(factors))


def _parse_scalar(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def parse_density_spec(spec: str) -> dict:
    """``kind:key=value,...`` into a config dict; list values use ``+`` (``block=1+2``)
    and ``/`` between points (``centers=0+0/0.3+0``)."""
    kind, _, rest = spec.partition(":")
    cfg: dict = {"kind": kind}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise DensityError(f"bad density option {item!r}; expected key=value")
        if "/" in val:
            cfg[key] = [[_parse_scalar(x) for x in pt.split("+")] for pt in val.split("/")]
        elif "+" in val:
            cfg[key] = [_parse_scalar(x) for x in val.split("+")]
        else:
            cfg[key] = _parse_scalar(val)
    return cfg


def density_from_config(cfg: dict) -> SyntheticDensity:
    """Build a density from a config dict (coordinates in configs are 1-based)."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    out = _density_from(kind, cfg)
    if cfg:
        raise DensityError(f"unknown parameters for {kind!r}: {sorted(cfg)}")
    return out


def _density_from(kind, cfg: dict) -> SyntheticDensity:
    try:
        if kind == "product-gaussian":
            return product_gaussian(int(cfg.pop("d")), cfg.pop("sigma", 0.25), cfg.pop("mean", 0.0))
        if kind in ("correlated-gaussian", "block-gaussian") and "blocks" not in cfg:
            return correlated_gaussian(int(cfg.pop("d", 2)), float(cfg.pop("sigma", 0.25)), float(cfg.pop("rho", 0.8)))
        if kind == "block-gaussian":
            blocks = [([c - 1 for c in b["coords"]], b.get("mean", [0.0] * len(b["coords"])), b["cov"]) for b in cfg.pop("blocks")]
            return block_gaussian(blocks, int(cfg.pop("d")))
        if kind == "gaussian-with-bumps":
            d = int(cfg.pop("d"))
            block = cfg.pop("block", list(range(1, d + 1)))
            block = [block] if isinstance(block, int) else block
            centers = cfg.pop("centers", [[0.0] * len(block)])
            if centers and not isinstance(centers[0], list):
                centers = [centers] if len(block) > 1 else [[c] for c in centers]
            return gaussian_with_bumps(
                d,
                float(cfg.pop("sigma", 0.25)),
                [c - 1 for c in block],
                float(cfg.pop("amplitude")),
                cfg.pop("scales", cfg.pop("scale", 0.2)),
                centers,
            )
        if kind == "custom-product":
            dists = []
            for item in cfg.pop("dists"):
                name = item["name"]
                if not hasattr(stats, name):
                    raise DensityError(f"unknown scipy distribution {name!r}")
                dists.append(getattr(stats, name)(*item.get("args", []), **item.get("kwds", {})))
            return custom_product(dists)
    except KeyError as exc:
        raise DensityError(f"density {kind!r} is missing parameter {exc.args[0]!r}") from None
    raise DensityError(
        f"unknown density kind {kind!r}; expected product-gaussian, correlated-gaussian, "
        "block-gaussian, gaussian-with-bumps or custom-product"
    )
