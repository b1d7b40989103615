"""Probability generating functions of relay-election slot counts.

Every relay-selection protocol supported here resolves an initial collision
among ``n`` contenders by randomized splitting, and the number of slots it
spends admits a PGF recursion over the conflict multiplicity.  The
self-referential term of each recursion is moved to the left-hand side,
leaving a rational form whose power-series coefficients follow from plain
convolution plus a short linear recurrence.  Everything is numeric array
arithmetic on truncated series with an explicit tail mass; no symbolic
algebra is used anywhere.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, ResourceLimitError, TruncationError

COEFF_SLACK = 1e-12
COMPOSITION_LIMIT = 200_000


@dataclass(frozen=True)
class SplitModel:
    """Contention parameters: multiplicity, group count, group probabilities.

    ``p[j]`` is the probability that a contender joins splitting group ``j``;
    the default is the fair ``q``-sided coin.
    """

    n: int
    q: int = 2
    p: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n < 0:
            raise DomainError(f"multiplicity must be >= 0, got {self.n}")
        if self.q < 2:
            raise DomainError(f"need at least 2 splitting groups, got {self.q}")
        if self.p is None:
            object.__setattr__(self, "p", tuple(1.0 / self.q for _ in range(self.q)))
        else:
            object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        if len(self.p) != self.q:
            raise DomainError(f"probability vector has {len(self.p)} entries for q={self.q}")
        if any(x < 0.0 or x > 1.0 for x in self.p):
            raise DomainError("group probabilities must lie in [0, 1]")
        if abs(sum(self.p) - 1.0) > 1e-12:
            raise DomainError("group probabilities must sum to 1 within 1e-12")

    @classmethod
    def fair(cls, n: int, q: int = 2) -> "SplitModel":
        return cls(n=n, q=q)


@dataclass(frozen=True)
class InversionParams:
    """Contour parameters for series inversion.

    When ``r`` is unset it is chosen as ``10**(-gamma / (2 k))``, which keeps
    the aliasing error of the estimate near ``10**-gamma``.
    """

    r: float | None = None
    gamma: float = 8.0

    def __post_init__(self):
        if self.r is not None and not 0.0 < self.r < 1.0:
            raise DomainError(f"evaluation radius must lie in (0, 1), got {self.r}")
        if self.gamma <= 0.0:
            raise DomainError("gamma must be positive")

    def radius_for(self, k: int) -> float:
        if self.r is not None:
            return self.r
        return 10.0 ** (-self.gamma / (2.0 * k))


@dataclass(frozen=True)
class TruncatedSeries:
    """PMF of a non-negative integer variable, stored as power-series coefficients.

    ``coeffs[k]`` is the mass at ``k``; ``tail_mass`` is the mass attributed
    beyond the truncation index ``k_max = len(coeffs) - 1``.
    """

    coeffs: np.ndarray
    tail_mass: float

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DomainError("coefficients must form a non-empty 1-d array")
        if arr.min() < -COEFF_SLACK or arr.max() > 1.0 + COEFF_SLACK:
            raise DomainError("coefficients must lie in [0, 1] up to numerical slack")
        total = float(arr.sum()) + self.tail_mass
        if not (1.0 - 1e-9 <= total <= 1.0 + 1e-9):
            raise DomainError(f"total mass {total} is not 1 within 1e-9")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def from_coeffs(cls, coeffs: np.ndarray) -> "TruncatedSeries":
        arr = np.asarray(coeffs, dtype=float)
        tail = max(0.0, 1.0 - float(arr.sum()))
        return cls(arr, tail)

    @property
    def k_max(self) -> int:
        return len(self.coeffs) - 1

    def coefficient(self, k: int) -> float:
        if k < 0:
            raise DomainError("index must be non-negative")
        return float(self.coeffs[k]) if k <= self.k_max else 0.0

    def support_min(self) -> int | None:
        """Smallest index carrying positive mass, or None for an all-zero series."""
        nz = np.flatnonzero(self.coeffs > COEFF_SLACK)
        return int(nz[0]) if nz.size else None

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.coeffs)

    def truncation_index(self, level: float = 0.999) -> int:
        """Smallest index whose cumulative mass reaches ``level`` (or k_max)."""
        cdf = self.cdf()
        idx = np.searchsorted(cdf, level)
        return int(min(idx, self.k_max))

    def __call__(self, z: complex) -> complex:
        return evaluate(self, z)


# ---------------------------------------------------------------------------
# building blocks


def split_prob(model: SplitModel, i: int) -> float:
    """Probability that exactly ``i`` of the ``n`` contenders join the first group."""
    if model.q != 2:
        raise DomainError("split_prob is defined for binary splitting (q = 2)")
    if not 0 <= i <= model.n:
        raise DomainError(f"group count {i} outside [0, {model.n}]")
    return _binomial_row(model.n, model.p[0])[i]


def _binomial_row(n: int, p0: float) -> np.ndarray:
    """All binomial(n, p0) masses; log-space above n = 50 to stay stable."""
    out = np.zeros(n + 1)
    if p0 == 0.0:
        out[0] = 1.0
        return out
    if p0 == 1.0:
        out[n] = 1.0
        return out
    if n <= 50:
        for i in range(n + 1):
            out[i] = math.comb(n, i) * p0**i * (1.0 - p0) ** (n - i)
        return out
    lg = math.lgamma(n + 1)
    lp, lq = math.log(p0), math.log1p(-p0)
    for i in range(n + 1):
        log_c = lg - math.lgamma(i + 1) - math.lgamma(n - i + 1)
        out[i] = math.exp(log_c + i * lp + (n - i) * lq)
    return out


def _base_coeffs(size: int) -> np.ndarray:
    # an empty or singleton group costs exactly the one slot it replies in
    arr = np.zeros(size)
    if size > 1:
        arr[1] = 1.0
    return arr


def _shift(arr: np.ndarray, by: int) -> np.ndarray:
    out = np.zeros_like(arr)
    if by < len(arr):
        out[by:] = arr[: len(arr) - by]
    return out


def _conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: len(a)]


def _divide(rhs: np.ndarray, lag_weights: dict[int, float]) -> np.ndarray:
    """Solve a_k = rhs_k + sum_j w_j * a_{k-j} coefficient by coefficient."""
    max_lag = max(lag_weights)
    den = np.zeros(max_lag + 1)
    den[0] = 1.0
    for lag, w in lag_weights.items():
        den[lag] -= w
    return lfilter([1.0], den, rhs)


def _check_k_max(k_max: int) -> None:
    if k_max < 1:
        raise DomainError(f"k_max must be >= 1, got {k_max}")


# ---------------------------------------------------------------------------
# series constructors


def sta_pgf_binary(model: SplitModel, k_max: int) -> TruncatedSeries:
    """Slot-count PGF of the binary splitting-tree election for ``model.n`` contenders.

    Built bottom-up over multiplicities 2..n.  At each level the two
    self-referential split outcomes (everyone in one group) are moved to the
    left-hand side, and the division by (1 - c z^2) is the linear recurrence
    a_k = b_k + c a_{k-2}.
    """
    if model.q != 2:
        raise DomainError("binary construction needs q = 2")
    _check_k_max(k_max)
    size = k_max + 1
    fam = [_base_coeffs(size), _base_coeffs(size)]
    for m in range(2, model.n + 1):
        row = _binomial_row(m, model.p[0])
        rhs = np.zeros(size)
        for i in range(1, m):
            rhs += row[i] * _conv(fam[i], fam[m - i])
        rhs = _shift(rhs, 1)
        fam.append(_divide(rhs, {2: row[0] + row[m]}))
    return TruncatedSeries.from_coeffs(fam[model.n] if model.n >= 2 else fam[min(model.n, 1)])


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _multinomial(total: int, parts: tuple[int, ...]) -> float:
    num = math.factorial(total)
    for c in parts:
        num //= math.factorial(c)
    return float(num)


def sta_pgf_qary(model: SplitModel, k_max: int) -> TruncatedSeries:
    """Slot-count PGF of the q-ary splitting-tree election.

    Enumerates every composition of the colliding set over the q groups.  The
    q degenerate compositions that put all contenders in one group each
    contribute z^q times the level's own series (the q - 1 empty groups cost
    one slot apiece), so the division uses a_k = b_k + c a_{k-q}.  Reduces to
    the binary construction when q = 2.
    """
    _check_k_max(k_max)
    n, q = model.n, model.q
    total_comps = math.comb(n + q, q) if n >= 2 else 0
    if total_comps > COMPOSITION_LIMIT:
        raise ResourceLimitError(
            f"{total_comps} split compositions exceed the limit of {COMPOSITION_LIMIT}"
        )
    size = k_max + 1
    fam = [_base_coeffs(size), _base_coeffs(size)]
    for m in range(2, n + 1):
        rhs = np.zeros(size)
        cancel = 0.0
        for comp in _compositions(m, q):
            if max(comp) == m:
                j = comp.index(m)
                cancel += model.p[j] ** m
                continue
            weight = _multinomial(m, comp)
            for j, c in enumerate(comp):
                weight *= model.p[j] ** c
            prod = None
            empties = 0
            for c in comp:
                if c == 0:
                    empties += 1
                elif prod is None:
                    prod = fam[c]
                else:
                    prod = _conv(prod, fam[c])
            rhs += weight * _shift(prod, 1 + empties)
        fam.append(_divide(rhs, {q: cancel}))
    return TruncatedSeries.from_coeffs(fam[n] if n >= 2 else fam[min(n, 1)])


def _auction_series(model: SplitModel, k_max: int, skip: bool) -> TruncatedSeries:
    if model.q != 2:
        raise DomainError("the auction constructions are binary (q = 2)")
    _check_k_max(k_max)
    size = k_max + 1
    fam = [_base_coeffs(size), _base_coeffs(size)]
    for m in range(2, model.n + 1):
        row = _binomial_row(m, model.p[0])
        rhs = np.zeros(size)
        for i in range(2, m):
            # pruned sibling groups never add a second recursive factor
            rhs += row[i] * fam[i]
        rhs = _shift(rhs, 1)
        if size > 2:
            rhs[2] += row[1]
        if skip:
            fam.append(_divide(rhs, {1: row[0] + row[m]}))
        else:
            fam.append(_divide(rhs, {1: row[m], 2: row[0]}))
    return TruncatedSeries.from_coeffs(fam[model.n] if model.n >= 2 else fam[min(model.n, 1)])


def auction_pgf(model: SplitModel, k_max: int) -> TruncatedSeries:
    """Slot-count PGF of the priority-band auction election.

    An empty first group costs the idle slot plus the regather slot before the
    remaining contenders collide again, so the denominator couples lags 1 and
    2: a_k = b_k + B(m,0) a_{k-2} + B(m,m) a_{k-1}.
    """
    return _auction_series(model, k_max, skip=False)


def auction_skip_pgf(model: SplitModel, k_max: int) -> TruncatedSeries:
    """Auction PGF with the idle slot doubling as the next round's gather slot.

    Identical to :func:`auction_pgf` except the empty-first-group branch costs
    one slot instead of two, collapsing the denominator to a single lag.
    """
    return _auction_series(model, k_max, skip=True)


# ---------------------------------------------------------------------------
# evaluation, inversion, moments


def evaluate(series: TruncatedSeries, z: complex) -> complex:
    """Horner evaluation of the series at ``z`` with ``|z| <= 1``."""
    if abs(z) > 1.0 + 1e-9:
        raise DomainError(f"|z| must be <= 1, got {abs(z)}")
    return complex(np.polyval(series.coeffs[::-1], z))


class InversionResult(NamedTuple):
    prob: float  # clamped to [0, 1]
    raw: float   # pre-clamp estimate, kept for diagnostics


def invert_fourier(
    pgf_eval: Callable[[complex], complex],
    k: int,
    params: InversionParams | None = None,
) -> InversionResult:
    """Recover the mass at ``k`` from PGF evaluations on a circle of radius r < 1.

    Averages (-1)^j Re G(r e^{i pi j / k}) over j = 1..2k and rescales by
    1 / (2 k r^k).  Undefined at k = 0; read the mass at zero directly off the
    series coefficients instead.
    """
    if k == 0:
        raise DomainError("inversion is undefined at k = 0; use the direct coefficient")
    if k < 0:
        raise DomainError("k must be positive")
    params = params or InversionParams()
    r = params.radius_for(k)
    total = 0.0
    sign = -1.0
    for j in range(1, 2 * k + 1):
        zj = r * cmath.exp(1j * math.pi * j / k)
        total += sign * complex(pgf_eval(zj)).real
        sign = -sign
    raw = total / (2.0 * k * r**k)
    return InversionResult(prob=min(max(raw, 0.0), 1.0), raw=raw)


class MomentEstimate(NamedTuple):
    mean: float
    variance: float
    mean_error: float  # bound from the geometric decay of the trailing coefficients


def moments(series: TruncatedSeries) -> MomentEstimate:
    """Mean and variance of the truncated PMF with a tail-bound error estimate."""
    if series.tail_mass >= 1e-6:
        raise TruncationError(
            f"tail mass {series.tail_mass:.3e} >= 1e-6; rebuild the series with a larger k_max"
        )
    c = series.coeffs
    k = np.arange(len(c), dtype=float)
    mean = float(k @ c)
    variance = float((k * k) @ c - mean * mean)
    window = c[-10:]
    s1, s2 = float(window[:-1].sum()), float(window[1:].sum())
    ratio = min(s2 / s1, 1.0 - 1e-9) if s1 > 0.0 else 0.0
    geom_tail = float(c[-1]) * ratio / (1.0 - ratio) if ratio > 0.0 else 0.0
    tail = max(series.tail_mass, geom_tail)
    mean_error = tail * (series.k_max + 1.0 / (1.0 - ratio))
    return MomentEstimate(mean=mean, variance=variance, mean_error=mean_error)


# ---------------------------------------------------------------------------
# adaptive truncation

PROTOCOLS = ("sta", "auction", "auction_skip")


def _builder_for(protocol: str, model: SplitModel):
    if protocol == "sta":
        return sta_pgf_binary if model.q == 2 else sta_pgf_qary
    if protocol == "auction":
        return auction_pgf
    if protocol == "auction_skip":
        return auction_skip_pgf
    raise DomainError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def build_pgf(
    protocol: str,
    model: SplitModel,
    tail_tol: float = 1e-9,
    k_start: int = 128,
    k_cap: int = 16384,
) -> TruncatedSeries:
    """Build a protocol PGF, doubling k_max until the tail mass clears ``tail_tol``."""
    builder = _builder_for(protocol, model)
    k = k_start
    while True:
        series = builder(model, k)
        if series.tail_mass < tail_tol:
            return series
        if k >= k_cap:
            raise TruncationError(
                f"tail mass {series.tail_mass:.3e} still above {tail_tol} at k_max {k_cap}"
            )
        k = min(2 * k, k_cap)
