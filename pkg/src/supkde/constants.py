"""Explicit constants of the selection rule.

``delta_star``, ``C_s``, ``tau_p``, ``gamma_p`` and ``pi_const`` are exact
transcriptions of the closed-form expressions. ``lambda_and_threshold``
turns them into the penalty multiplier and the bandwidth-set threshold, either
from theory or from a user calibration.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy import optimize

Mode = Literal["theoretical", "calibrated"]

MAX_S = 12
SUP_GRID_POINTS = 10_000
DEFAULT_A_FLOOR = 0.25
LOG_BASE_NOTE = "natural logarithm used for |log(a)| in tau_p"


class ConstantsError(ValueError):
    pass


def _delta_map(delta: float) -> float:
    return 8.0 * math.pi**2 * delta * (1.0 + math.log(delta) ** 2)


@lru_cache(maxsize=None)
def delta_star() -> float:
    """Root of ``8 pi^2 d (1 + ln(d)^2) = 1``.

    The map is nondecreasing (its derivative is ``8 pi^2 (1 + ln d)^2``), so
    bisection on a bracket finds the unique, hence smallest, solution.
    """
    lo, hi = 1e-8, 1e-2
    return optimize.bisect(lambda x: _delta_map(x) - 1.0, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def phi(delta):
    """``(6/pi^2) (1 + ln(delta)^2)^{-1}``."""
    delta = np.asarray(delta, dtype=float)
    return (6.0 / math.pi**2) / (1.0 + np.log(delta) ** 2)


def _c1_integrand(s: int, delta: np.ndarray) -> np.ndarray:
    r = delta**2 / phi(delta) ** 2
    first = np.clip(1.0 + np.log(9216.0 * (s + 1) * r), 0.0, None)
    second = np.clip(np.log2(4608.0 * (s + 1) * r), 0.0, None)
    return s * delta**-2.0 * (first + 1.5 * second)


def _c2_integrand(s: int, delta: np.ndarray) -> np.ndarray:
    r = delta / phi(delta)
    first = np.clip(1.0 + np.log(9216.0 * (s + 1) * r), 0.0, None)
    second = np.clip(np.log2(4608.0 * (s + 1) * r), 0.0, None)
    return s * delta**-1.0 * (first + 1.5 * second)


def _grid_sup(fn, s: int, points: int, cutoff: float) -> float:
    ds = delta_star()
    for _ in range(4):  # initial cutoff plus three doublings
        grid = ds * np.exp(np.linspace(0.0, math.log(cutoff / ds), points))
        vals = fn(s, grid)
        k = int(np.argmax(vals))
        if k < points - 1:
            return float(vals[k])
        cutoff *= 2.0
    raise ConstantsError(f"supremum for s={s} still at the grid cutoff {cutoff / 2:g}; not converged")


@dataclass(frozen=True)
class BigC:
    s: int
    c1: float
    c2: float

    @property
    def total(self) -> float:
        return self.c1 + self.c2


@lru_cache(maxsize=None)
def big_C_parts(s: int, points: int = SUP_GRID_POINTS, cutoff: float = 1e3) -> BigC:
    """Both suprema over ``delta > delta_*`` on a log grid.

    The grid starts at ``delta_*``; the supremum is accepted once the grid
    maximum sits strictly below the upper cutoff.
    """
    if not 1 <= s <= MAX_S:
        raise ConstantsError(f"s must lie in 1..{MAX_S}, got {s}")
    return BigC(s, _grid_sup(_c1_integrand, s, points, cutoff), _grid_sup(_c2_integrand, s, points, cutoff))


def big_C(s: int, points: int = SUP_GRID_POINTS) -> float:
    """``C_s = C_s^(1) + C_s^(2)``."""
    return big_C_parts(s, points).total


def tau_p(p: float, s: int, a: float) -> float:
    if a <= 0:
        raise ConstantsError(f"a must be positive, got {a}")
    ds2 = delta_star() ** -2
    return (
        s * (234.0 * s * ds2 + 6.5 * p + 5.5) * math.log(2.0)
        + s * (2.0 * p + 3.0)
        + (108.0 * s * ds2 * abs(math.log(a)) + 36.0 * big_C(s) + 1.0) / math.log(3.0)
    )


def gamma_p(p: float, s: int, a: float, lip: float) -> float:
    """``gamma_p(s, a)`` for a kernel with Lipschitz constant ``lip``."""
    if a <= 0:
        raise ConstantsError(f"a must be positive, got {a}")
    tau = tau_p(p, s, a)
    core = a + 1.5 * lip * a ** (s - 1)
    return 4.0 * math.e * math.sqrt(2.0 * s * tau * core) + (16.0 * math.e / 3.0) * max(s * core, 8.0 * a) * tau


def pi_const(s: int, a: float, lip: float) -> float:
    if a <= 0:
        raise ConstantsError(f"a must be positive, got {a}")
    core = s * (1.0 + 1.5 * lip * a ** (s - 2))
    return max(math.sqrt(a), a) * max(math.sqrt(2.0 * math.e * core), (2.0 * math.e / 3.0) * max(core, 8.0))


@dataclass(frozen=True)
class ConstantsContext:
    """Inputs fixing the penalty.

    In calibrated mode the penalty multiplier is ``kappa`` and the bandwidth
    threshold ``a*`` is the configured floor ``a_floor``. In theoretical mode
    both come from the formulas; ``a_floor`` may still be set to override a*
    when the theoretical bandwidth set would be empty at the given n.
    """

    d: int
    k_inf: float
    k_lip: float
    q: float = 1.0
    mode: Mode = "calibrated"
    kappa: float = 0.5
    a_floor: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("theoretical", "calibrated"):
            raise ConstantsError(f"unknown mode {self.mode!r}")
        if self.q < 1:
            raise ConstantsError(f"q must be >= 1, got {self.q}")
        if self.mode == "calibrated" and not self.kappa > 0:
            raise ConstantsError(f"kappa must be positive, got {self.kappa}")
        if self.a_floor is not None and not self.a_floor > 0:
            raise ConstantsError(f"a_floor must be positive, got {self.a_floor}")

    @classmethod
    def for_kernel(cls, kernel, d: int, **kw) -> "ConstantsContext":
        return cls(d=d, k_inf=kernel.sup_norm, k_lip=kernel.lipschitz_const, **kw)

    def to_json(self) -> dict:
        return asdict(self)


def big_lambda(ctx: ConstantsContext) -> float:
    """``Lambda = gamma_{2q}(d, k_inf)``, after checking gamma increases in s."""
    vals = [gamma_p(2 * ctx.q, s, ctx.k_inf, ctx.k_lip) for s in range(1, ctx.d + 1)]
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise ConstantsError("gamma_{2q}(s, k_inf) is not increasing in s; Lambda needs the full sup")
    return vals[-1]


def theoretical_a_star(ctx: ConstantsContext) -> float:
    return (2.0 * big_lambda(ctx)) ** -2


def lambda_and_threshold(ctx: ConstantsContext, f_bar_n: float) -> tuple[float, float]:
    """Penalty multiplier ``lambda`` and bandwidth threshold ``a*``."""
    if f_bar_n < 1:
        raise ConstantsError(f"f_bar_n must be >= 1, got {f_bar_n}")
    if ctx.mode == "calibrated":
        return float(ctx.kappa), float(ctx.a_floor if ctx.a_floor is not None else DEFAULT_A_FLOOR)
    lam_big = big_lambda(ctx)
    lam = lam_big * ctx.d * f_bar_n ** (ctx.d**2 // 4 + 1)
    a_star = ctx.a_floor if ctx.a_floor is not None else (2.0 * lam_big) ** -2
    return lam, a_star


def threshold(ctx: ConstantsContext) -> float:
    """``a*`` alone; it does not depend on the data."""
    if ctx.mode == "calibrated" or ctx.a_floor is not None:
        return float(ctx.a_floor if ctx.a_floor is not None else DEFAULT_A_FLOOR)
    return theoretical_a_star(ctx)


def constants_report(q: float, s: int, kernel) -> dict:
    """Everything the ``constants`` command prints for block size ``s``."""
    a = kernel.sup_norm
    lip = kernel.lipschitz_const
    parts = big_C_parts(s)
    gam = gamma_p(2 * q, s, a, lip)
    ctx = ConstantsContext(d=s, k_inf=a, k_lip=lip, q=q, mode="theoretical")
    lam_big = big_lambda(ctx)
    return {
        "mode": "theoretical",
        "q": q,
        "s": s,
        "p": 2 * q,
        "kernel": kernel.to_json(),
        "k_inf": a,
        "lipschitz": lip,
        "delta_star": delta_star(),
        "C1_s": parts.c1,
        "C2_s": parts.c2,
        "C_s": parts.total,
        "tau": tau_p(2 * q, s, a),
        "gamma": gam,
        "pi": pi_const(s, a, lip),
        "Lambda": lam_big,
        "a_star": (2.0 * lam_big) ** -2,
        "log_base": LOG_BASE_NOTE,
    }
