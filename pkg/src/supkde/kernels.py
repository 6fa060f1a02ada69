"""Compactly supported polynomial kernels and their pairwise convolutions.

A kernel here is an even polynomial restricted to ``[-1/2, 1/2]``::

    K(t) = sum_k c_k t^(2k)   for |t| <= 1/2,   K(t) = 0 otherwise.

The scaled univariate kernel is ``K_h(u) = K(u/h)/h`` and the product kernel
over a block of coordinates multiplies the scaled factors in block order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import roots_legendre

MAX_MOMENT_ORDER = 12
DEFAULT_PROFILE_NODES = 1025
LIPSCHITZ_PROBE_POINTS = 10_000


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Even polynomial kernel on ``[-1/2, 1/2]``.

    ``coefficients[k]`` multiplies ``t**(2*k)``. ``moment_order`` is the
    order up to which the moments ``m = 2..moment_order`` are meant to vanish.
    """

    coefficients: tuple[float, ...]
    moment_order: int = 1
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not self.coefficients:
            raise KernelError("kernel needs at least one coefficient")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        t2 = t * t
        c = self.coefficients
        p = np.full_like(t, c[-1])
        for ck in c[-2::-1]:
            p = p * t2 + ck
        return np.where(np.abs(t) <= 0.5, p, 0.0)

    def scaled(self, u, h: float):
        """``K_h(u) = K(u/h)/h``."""
        return self(np.asarray(u, dtype=float) / h) / h

    @property
    def poly(self) -> np.polynomial.Polynomial:
        full = np.zeros(2 * len(self.coefficients) - 1)
        full[::2] = self.coefficients
        return np.polynomial.Polynomial(full)

    @cached_property
    def sup_norm(self) -> float:
        """``k_inf``: max of |K| over the support (critical points plus ends)."""
        p = self.poly
        cand = [0.0, -0.5, 0.5]
        for r in p.deriv().roots():
            if abs(r.imag) < 1e-12 and abs(r.real) <= 0.5:
                cand.append(float(r.real))
        return float(np.max(np.abs(p(np.array(cand)))))

    @cached_property
    def l1_norm(self) -> float:
        """``k_1 = int |K|``: exact antiderivative between sign changes."""
        p = self.poly
        prim = p.integ()
        pts = sorted(
            float(r.real) for r in p.roots() if abs(r.imag) < 1e-12 and -0.5 < r.real < 0.5
        )
        edges = [-0.5, *pts, 0.5]
        return float(sum(abs(prim(b) - prim(a)) for a, b in zip(edges[:-1], edges[1:])))

    @cached_property
    def lipschitz_const(self) -> float:
        """Lipschitz constant measured on a probe grid (a probe, not a proof)."""
        return _lipschitz_probe(self, LIPSCHITZ_PROBE_POINTS)

    def to_json(self) -> dict:
        return {
            "kind": "even-polynomial",
            "support": [-0.5, 0.5],
            "moment_order": self.moment_order,
            "coefficients": list(self.coefficients),
            "name": self.name,
        }

    @classmethod
    def from_json(cls, obj: dict | str) -> "Kernel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if obj.get("kind", "even-polynomial") != "even-polynomial":
            raise KernelError(f"unsupported kernel kind {obj.get('kind')!r}")
        try:
            coeffs = tuple(float(c) for c in obj["coefficients"])
            order = int(obj.get("moment_order", 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise KernelError(f"malformed kernel JSON: {exc}") from None
        return cls(coeffs, order, obj.get("name", ""))


def _lipschitz_probe(k: Kernel, points: int) -> float:
    t = np.linspace(-1.0, 1.0, points)
    v = k(t)
    return float(np.max(np.abs(np.diff(v)) / np.diff(t)))


def _even_moment(j: int):
    """Exact ``int_{-1/2}^{1/2} t^(2j) (1 - 4t^2) dt``."""
    from sympy import Rational

    half = Rational(1, 2)
    return 2 * (half ** (2 * j + 1) / (2 * j + 1) - 4 * half ** (2 * j + 3) / (2 * j + 3))


@lru_cache(maxsize=None)
def build_polynomial_kernel(moment_order: int = 1) -> Kernel:
    """Kernel ``(1 - 4t^2) Q(t^2)`` with unit mass and vanishing moments ``2..b``.

    The factor ``1 - 4t^2`` makes the kernel vanish at the support ends, so it
    is Lipschitz on the whole line. Odd moments vanish by symmetry; the even
    ones are removed by an exact rational solve for the coefficients of Q.
    """
    from sympy import Matrix, Rational

    b = int(moment_order)
    if not 1 <= b <= MAX_MOMENT_ORDER:
        raise KernelError(f"moment order must lie in 1..{MAX_MOMENT_ORDER}, got {b}")
    m = b // 2
    rows = [[_even_moment(k + r) for k in range(m + 1)] for r in range(m + 1)]
    A = Matrix(rows)
    if A.det() == 0:
        raise KernelError(f"moment system for order {b} is singular")
    rhs = Matrix([Rational(1)] + [Rational(0)] * m)
    q = A.LUsolve(rhs)
    # expand (1 - 4 t^2) * sum q_k t^(2k) in powers of t^2
    coeffs = [Rational(0)] * (m + 2)
    for k in range(m + 1):
        coeffs[k] += q[k]
        coeffs[k + 1] += -4 * q[k]
    return Kernel(tuple(float(c) for c in coeffs), b, name=f"poly-b{b}")


def epanechnikov() -> Kernel:
    return build_polynomial_kernel(1)


def box_kernel() -> Kernel:
    return Kernel((1.0,), 1, name="box")


def _gl_moment(k: Kernel, m: int) -> float:
    deg = 2 * (len(k.coefficients) - 1) + m
    x, w = roots_legendre(deg // 2 + 2)
    t = 0.5 * x
    return float(0.5 * np.sum(w * t**m * k(t)))


@dataclass
class KernelReport:
    integral: float
    integral_ok: bool
    support_ok: bool
    symmetric: bool
    lipschitz_probe: float
    lipschitz_finite: bool
    boundary_value: float
    k1: float
    k_inf: float
    moments: dict[int, float]
    moments_ok: bool

    @property
    def all_ok(self) -> bool:
        return all(
            (self.integral_ok, self.support_ok, self.symmetric, self.lipschitz_finite, self.moments_ok)
        )

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["moments"] = {str(m): v for m, v in self.moments.items()}
        out["all_ok"] = self.all_ok
        return out


def check_assumptions(k: Kernel, tol_mass: float = 1e-10, tol_moment: float = 1e-8) -> KernelReport:
    """Report-only check of unit mass, support, symmetry, Lipschitz and moments."""
    integral = _gl_moment(k, 0)
    probe = np.linspace(0.5, 2.0, 2001)[1:]
    support_ok = bool(np.all(k(probe) == 0.0) and np.all(k(-probe) == 0.0))
    t = np.linspace(0.0, 0.75, 5001)
    symmetric = bool(np.all(k(t) == k(-t)))
    lip = _lipschitz_probe(k, LIPSCHITZ_PROBE_POINTS)
    lip_fine = _lipschitz_probe(k, 2 * LIPSCHITZ_PROBE_POINTS)
    boundary = float(k(np.array(0.5)))
    # a jump shows up as a probe that grows with refinement
    lipschitz_finite = bool(abs(boundary) <= 1e-12 and lip_fine <= 1.5 * lip)
    moments = {m: _gl_moment(k, m) for m in range(1, max(k.moment_order, 1) + 1)}
    moments_ok = all(abs(moments[m]) <= tol_moment for m in range(2, k.moment_order + 1))
    return KernelReport(
        integral=integral,
        integral_ok=abs(integral - 1.0) <= tol_mass,
        support_ok=support_ok,
        symmetric=symmetric,
        lipschitz_probe=lip,
        lipschitz_finite=lipschitz_finite,
        boundary_value=boundary,
        k1=k.l1_norm,
        k_inf=k.sup_norm,
        moments=moments,
        moments_ok=moments_ok,
    )


def eval_product_kernel(k: Kernel, h: Sequence[float], u: Sequence[float]) -> float:
    """``K_{h_I}(u) = V_{h_I}^{-1} prod_j K(u_j/h_j)``, multiplied factor by factor."""
    if len(h) != len(u):
        raise KernelError(f"bandwidth has {len(h)} entries, point has {len(u)}")
    out = None
    for hj, uj in zip(h, u):
        if not hj > 0:
            raise KernelError(f"bandwidth must be positive, got {hj}")
        v = k.scaled(uj, hj)
        out = v if out is None else out * v
    return float(out)


@dataclass(frozen=True)
class ConvolutionProfile:
    """Samples of ``z -> [K_h * K_eta](z)`` on a uniform grid over its support.

    Between samples the profile is linearly interpolated; outside the support
    it is zero.
    """

    h: float
    eta: float
    z: np.ndarray
    values: np.ndarray

    @property
    def half_width(self) -> float:
        return 0.5 * (self.h + self.eta)

    def __call__(self, u):
        return np.interp(np.asarray(u, dtype=float), self.z, self.values, left=0.0, right=0.0)

    def mass(self) -> float:
        """Integral of the interpolant (trapezoid rule on the samples)."""
        return float(integrate.trapezoid(self.values, self.z))


def _convolution_at(k: Kernel, h: float, eta: float, z: np.ndarray, order: int) -> np.ndarray:
    # integrand K_h(u - z) K_eta(u) is a polynomial on the overlap, so
    # Gauss-Legendre with enough points is exact up to rounding
    x, w = roots_legendre(order)
    lo = np.maximum(z - 0.5 * h, -0.5 * eta)
    hi = np.minimum(z + 0.5 * h, 0.5 * eta)
    width = np.clip(hi - lo, 0.0, None)
    u = 0.5 * (hi + lo)[:, None] + 0.5 * width[:, None] * x[None, :]
    vals = k.scaled(u - z[:, None], h) * k.scaled(u, eta)
    return 0.5 * width * (vals @ w)


PROFILE_REL_TOL = 1e-7
MAX_PROFILE_NODES = 2**17 + 1


def _mirrored_nodes(half: float, nodes: int) -> np.ndarray:
    pos = half * np.linspace(0.0, 1.0, nodes // 2 + 1)
    return np.concatenate([-pos[:0:-1], pos])


@lru_cache(maxsize=512)
def _profile_cached(k: Kernel, h: float, eta: float, nodes: int) -> ConvolutionProfile:
    # nodes is a floor: the grid is doubled until linear interpolation agrees
    # with the exact convolution at every cell midpoint
    half = 0.5 * (h + eta)
    order = max(16, 2 * len(k.coefficients) + 2)
    while True:
        z = _mirrored_nodes(half, nodes)
        vals = _convolution_at(k, h, eta, z, order)
        vals[0] = vals[-1] = 0.0
        vals = 0.5 * (vals + vals[::-1])  # exact mirror symmetry about 0
        mid = 0.5 * (z[1:] + z[:-1])
        err = np.max(np.abs(0.5 * (vals[1:] + vals[:-1]) - _convolution_at(k, h, eta, mid, order)))
        if err <= PROFILE_REL_TOL * np.max(np.abs(vals)) or nodes >= MAX_PROFILE_NODES:
            break
        nodes = 2 * nodes - 1
    z.setflags(write=False)
    vals.setflags(write=False)
    return ConvolutionProfile(h, eta, z, vals)


def build_convolution_table(k: Kernel, h: float, eta: float, nodes: int = DEFAULT_PROFILE_NODES) -> ConvolutionProfile:
    """Convolution profile of ``K_h`` and ``K_eta``, cached per unordered pair."""
    if not (0 < h <= 1 and 0 < eta <= 1):
        raise KernelError(f"bandwidths must lie in (0, 1], got h={h}, eta={eta}")
    if nodes < 65:
        raise KernelError(f"need at least 65 profile nodes, got {nodes}")
    nodes = int(nodes) | 1  # odd, so z = 0 is a node and the grid is mirror-exact
    a, b = (float(h), float(eta)) if h <= eta else (float(eta), float(h))
    return _profile_cached(k, a, b, int(nodes))


def riemann_convolution(k: Kernel, h: float, eta: float, z, points: int = 100_000) -> np.ndarray:
    """Midpoint-rule convolution over the support of ``K_eta`` (test oracle)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    edges = np.linspace(-0.5 * eta, 0.5 * eta, points + 1)
    u = 0.5 * (edges[1:] + edges[:-1])
    du = eta / points
    ke = k.scaled(u, eta)
    return np.array([np.sum(k.scaled(u - zi, h) * ke) * du for zi in z])
