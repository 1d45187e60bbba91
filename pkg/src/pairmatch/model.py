"""Problem instances, the (s, alpha) parametrization, Bernoulli kl and lower-bound curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidParamsError

# Returned by kl_bernoulli when the divergence is infinite. Produced explicitly,
# never through overflow; callers test it with math.isinf.
KL_INFINITE = math.inf


def scaling_param(p: float, q: float) -> float:
    """Return s = (p - q)^2 / (p + q).

    Symmetric in its arguments; zero iff p == q.
    """
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise InvalidParamsError(f"probabilities must lie in [0, 1], got p={p}, q={q}")
    if p + q <= 0.0:
        raise InvalidParamsError("scaling parameter undefined for p + q = 0")
    return (p - q) ** 2 / (p + q)


def snap_ceil(x, rtol: float = 1e-12):
    """Ceiling that treats values within rounding error of an integer as that integer,
    so that e.g. (10**5) ** 0.4 = 100.00000000000003 gives 100."""
    x = np.asarray(x, dtype=np.float64)
    near = np.rint(x)
    out = np.where(np.abs(x - near) <= rtol * np.maximum(np.abs(x), 1.0), near, np.ceil(x))
    return out.astype(np.int64) if out.ndim else int(out)


def _log1p_minus(u: float) -> float:
    # log(1 + u) - u, by its series where the direct difference cancels
    if abs(u) < 1e-3:
        return u * u * (-1 / 2 + u * (1 / 3 + u * (-1 / 4 + u * (1 / 5 - u / 6))))
    return math.log1p(u) - u


def kl_bernoulli(p1: float, p2: float) -> float:
    """Kullback-Leibler divergence kl(Ber(p1) || Ber(p2)).

    Returns ``KL_INFINITE`` when p2 is 0 or 1 and differs from p1.
    """
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise InvalidParamsError(f"probabilities must lie in [0, 1], got {p1}, {p2}")
    if p1 == p2:
        return 0.0
    if p2 == 0.0 or p2 == 1.0:
        return KL_INFINITE
    # kl = p1 f(u) + (1 - p1) f(v) + d^2 / (p2 (1 - p2)) with f(x) = log(1 + x) - x;
    # this keeps full relative accuracy when p1 is close to p2
    d = p1 - p2
    head = p1 * _log1p_minus(d / p2) if p1 > 0.0 else 0.0
    tail = (1.0 - p1) * _log1p_minus(-d / (1.0 - p2)) if p1 < 1.0 else 0.0
    return max(0.0, head + tail + d * d / (p2 * (1.0 - p2)))


def kl_symmetric_max(p: float, q: float) -> float:
    """max(kl(p, q), kl(q, p)), the effective scaling of the strong lower bound."""
    return max(kl_bernoulli(p, q), kl_bernoulli(q, p))


def params_from_scaling(s: float, alpha: float) -> tuple[float, float]:
    """Map (s, alpha) back to (p, q): p = s(alpha + sqrt(alpha))/2, q = s(alpha - sqrt(alpha))/2."""
    if s <= 0.0 or alpha <= 1.0:
        raise InvalidParamsError(f"need s > 0 and alpha > 1, got s={s}, alpha={alpha}")
    root = math.sqrt(alpha)
    # alpha - root written without the cancellation near alpha = 1
    return s * (alpha + root) / 2.0, s * root * (alpha - 1.0) / (2.0 * (root + 1.0))


@dataclass(frozen=True)
class ModelParams:
    """Balanced two-community cSBM instance with n nodes, within/between probabilities p > q."""

    n: int
    p: float
    q: float

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or isinstance(self.n, bool):
            raise InvalidParamsError(f"n must be an int, got {self.n!r}")
        if self.n < 4 or self.n % 2:
            raise InvalidParamsError(f"n must be even and >= 4, got {self.n}")
        if not (0.0 < self.q < self.p <= 0.5):
            raise InvalidParamsError(f"need 0 < q < p <= 1/2, got p={self.p}, q={self.q}")

    @classmethod
    def from_scaling(cls, n: int, s: float, alpha: float) -> ModelParams:
        p, q = params_from_scaling(s, alpha)
        return cls(n=n, p=p, q=q)

    @property
    def s(self) -> float:
        return scaling_param(self.p, self.q)

    @property
    def alpha(self) -> float:
        return (self.p + self.q) ** 2 / (self.p - self.q) ** 2

    @property
    def rho(self) -> float:
        return self.p / self.q

    @property
    def n_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def n_good_pairs(self) -> int:
        half = self.n // 2
        return 2 * (half * (half - 1) // 2)

    @property
    def n_bad_pairs(self) -> int:
        return (self.n // 2) ** 2


@dataclass(frozen=True)
class Budget:
    """Query horizon T and per-node cap B_T (``None`` means unbounded)."""

    T: int
    B_T: int | None = None

    def __post_init__(self) -> None:
        if self.T < 0:
            raise InvalidParamsError(f"horizon must be >= 0, got {self.T}")
        if self.B_T is not None and self.B_T < 1:
            raise InvalidParamsError(f"per-node cap must be >= 1, got {self.B_T}")

    @property
    def unbounded(self) -> bool:
        return self.B_T is None

    def cap(self, n: int) -> int:
        """Effective per-node cap; an unbounded budget behaves as min(n - 1, T)."""
        if self.B_T is None:
            return max(1, min(n - 1, self.T))
        return self.B_T

    def check(self, params: ModelParams, *, strict: bool = True) -> None:
        """Raise if the horizon does not fit the instance.

        ``strict`` requires T to be at most the number of within-community
        pairs (where regret is proportional to sampling-regret); otherwise only
        T <= C(n, 2) is required.
        """
        limit = params.n_good_pairs if strict else params.n_pairs
        if self.T > limit:
            what = "within-community pairs" if strict else "pairs"
            raise InvalidParamsError(f"T={self.T} exceeds the {limit} available {what}")


class CurveKind(str, Enum):
    THEOREM = "theorem-rate"
    STRONG_KL = "strong-kl-rate"


def regret_lower_bound(
    T: int,
    B_T: float | None,
    params: ModelParams,
    rho_star: float | None = None,
    kind: CurveKind | str = CurveKind.THEOREM,
) -> float:
    """Lower bound on the expected sampling-regret at horizon T.

    theorem-rate:   (1/32) min( max(sqrt T, T/B_T) / (32 (1 + rho*) s), T )
    strong-kl-rate: (1/32) min( max(sqrt T, T/B_T) / (16 s~), T ),  s~ = max(kl(p,q), kl(q,p))

    ``B_T=None`` is the unconstrained case (T/B_T <= sqrt T there). The value is
    computed outside the range where the bound is proved; see
    ``lower_bound_applicable``.
    """
    kind = CurveKind(kind)
    if T < 0:
        raise InvalidParamsError(f"T must be >= 0, got {T}")
    if B_T is not None and B_T < 1:
        raise InvalidParamsError(f"B_T must be >= 1, got {B_T}")
    rho_star = params.rho if rho_star is None else rho_star
    if rho_star < params.rho * (1.0 - 1e-12):
        raise InvalidParamsError(f"rho_star={rho_star} is below p/q={params.rho}")
    if T == 0:
        return 0.0
    spread = math.sqrt(T) if B_T is None else max(math.sqrt(T), T / B_T)
    if kind is CurveKind.THEOREM:
        denom = 32.0 * (1.0 + rho_star) * params.s
    else:
        s_tilde = kl_symmetric_max(params.p, params.q)
        if math.isinf(s_tilde):
            return 0.0
        denom = 16.0 * s_tilde
    return min(spread / denom, float(T)) / 32.0


def lower_bound_applicable(
    params: ModelParams, rho_star: float | None = None, kind: CurveKind | str = CurveKind.THEOREM
) -> bool:
    kind = CurveKind(kind)
    rho_star = params.rho if rho_star is None else rho_star
    if kind is CurveKind.THEOREM:
        return params.s <= 1.0 / (32.0 * (1.0 + rho_star))
    s_tilde = kl_symmetric_max(params.p, params.q)
    return not math.isinf(s_tilde) and s_tilde <= 1.0 / 16.0


@dataclass(frozen=True)
class BoundCurve:
    """Lazily evaluated lower-bound reference curve T -> bound."""

    kind: CurveKind
    params: ModelParams
    rho_star: float | None = None

    @property
    def applicable(self) -> bool:
        return lower_bound_applicable(self.params, self.rho_star, self.kind)

    def value(self, T: int, B_T: float | None = None) -> float:
        return regret_lower_bound(T, B_T, self.params, self.rho_star, self.kind)

    def values(self, grid, B_T=None) -> dict[int, float]:
        """Evaluate on a grid; ``B_T`` may be a constant, ``None`` or a callable of T."""
        out = {}
        for T in grid:
            cap = B_T(T) if callable(B_T) else B_T
            out[int(T)] = self.value(int(T), cap)
        return out
