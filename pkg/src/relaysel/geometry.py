"""Forwarding decision regions and nearest-neighbour distance laws.

Two region families are supported, both subsets of the source's range disk:

* a circular sector aimed at the destination, and
* a convex lens formed by intersecting the range disk with a disk centred on
  an anchor placed one transmission range along the source-destination axis.

Points are placed by a binomial point process (a fixed count, uniform over
the region).  Everything distance-related reduces to the region's radial
mass function p(d) = P(uniform point lies within d of the source), which for
these shapes is available in closed form from two-circle intersection areas.

Regions carry an inner/outer bound on their defining radial coordinate, so a
priority band produced by :func:`partition_region` is just another region and
can be partitioned again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError, InfeasibleRegionError

_TWO_PI = 2.0 * math.pi
_MASS_BISECT_TOL = 1e-10
_MIN_SAMPLING_EFFICIENCY = 1e-3


class Point2(NamedTuple):
    """A planar point in metres."""

    x: float
    y: float


def circle_intersection_area(r1: float, r2: float, d: float) -> float:
    """Area of the intersection of two discs with radii ``r1``, ``r2`` and
    centre separation ``d``.

    Handles the disjoint and contained configurations; the general case is
    the sum of the two circular segments cut off by the common chord.
    """
    if r1 <= 0.0 or r2 <= 0.0:
        return 0.0
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return math.pi * r * r
    x1 = (d * d + r1 * r1 - r2 * r2) / (2.0 * d)
    x2 = d - x1
    c1 = min(1.0, max(-1.0, x1 / r1))
    c2 = min(1.0, max(-1.0, x2 / r2))
    seg1 = r1 * r1 * math.acos(c1) - x1 * math.sqrt(max(r1 * r1 - x1 * x1, 0.0))
    seg2 = r2 * r2 * math.acos(c2) - x2 * math.sqrt(max(r2 * r2 - x2 * x2, 0.0))
    return seg1 + seg2


def _unit(v: tuple[float, float]) -> tuple[float, float]:
    norm = math.hypot(v[0], v[1])
    if norm == 0.0 or not math.isfinite(norm):
        raise DomainError("axis vector must be non-zero and finite")
    return (v[0] / norm, v[1] / norm)


@dataclass(frozen=True)
class SectorRegion:
    """Circular sector of the range disk, opened symmetrically about ``axis``.

    ``inner_radius`` is zero for the full sector; partition bands reuse the
    class with a non-trivial annular bound.
    """

    center: Point2 = Point2(0.0, 0.0)
    radius: float = 1.0
    aperture: float = math.pi
    axis: tuple[float, float] = (1.0, 0.0)
    inner_radius: float = 0.0

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise DomainError("radius must be positive and finite")
        if not 0.0 < self.aperture <= _TWO_PI + 1e-12:
            raise DomainError("aperture must lie in (0, 2*pi]")
        if not 0.0 <= self.inner_radius < self.radius:
            raise DomainError("inner radius must lie in [0, radius)")
        object.__setattr__(self, "center", Point2(*self.center))
        object.__setattr__(self, "axis", _unit(self.axis))

    # -- region protocol ---------------------------------------------------

    @property
    def source(self) -> Point2:
        return self.center

    def area(self) -> float:
        return 0.5 * self.aperture * (self.radius**2 - self.inner_radius**2)

    def source_radial_mass(self, d: float) -> float:
        if not 0.0 <= d <= self.radius * (1.0 + 1e-12):
            raise DomainError(f"distance {d} outside [0, {self.radius}]")
        if d <= self.inner_radius:
            return 0.0
        return (d * d - self.inner_radius**2) / (self.radius**2 - self.inner_radius**2)

    def source_radial_mass_derivative(self, d: float) -> float:
        if d < self.inner_radius or d > self.radius:
            return 0.0
        return 2.0 * d / (self.radius**2 - self.inner_radius**2)

    def contains(self, p: Point2) -> bool:
        dx, dy = p[0] - self.center.x, p[1] - self.center.y
        r = math.hypot(dx, dy)
        if r > self.radius or (r <= self.inner_radius and self.inner_radius > 0.0):
            return False
        if r == 0.0:
            return True
        ang = abs(math.atan2(self.axis[0] * dy - self.axis[1] * dx,
                             self.axis[0] * dx + self.axis[1] * dy))
        return ang <= 0.5 * self.aperture + 1e-12

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # exact inverse-transform draw: uniform angle, area-uniform radius
        base = math.atan2(self.axis[1], self.axis[0])
        lo2 = self.inner_radius**2
        span = self.radius**2 - lo2
        if n <= 16:
            # scalar path: cheaper than array machinery for a handful of points
            out = np.empty((n, 2))
            for i in range(n):
                r = math.sqrt(lo2 + rng.random() * span)
                theta = base + (rng.random() - 0.5) * self.aperture
                out[i, 0] = self.center.x + r * math.cos(theta)
                out[i, 1] = self.center.y + r * math.sin(theta)
            return out
        u = rng.random(n)
        v = rng.random(n)
        r = np.sqrt(lo2 + u * span)
        theta = base + (v - 0.5) * self.aperture
        return np.column_stack(
            (self.center.x + r * np.cos(theta), self.center.y + r * np.sin(theta))
        )

    def partition(self, q: int) -> list["SectorRegion"]:
        """Equal-mass annular bands by source distance, outermost first."""
        lo2, hi2 = self.inner_radius**2, self.radius**2
        edges = [math.sqrt(lo2 + (j / q) * (hi2 - lo2)) for j in range(q + 1)]
        bands = [
            SectorRegion(self.center, edges[j + 1], self.aperture, self.axis, edges[j])
            for j in range(q)
        ]
        return bands[::-1]

    def to_spec(self) -> dict:
        return {
            "kind": "sector",
            "center": [self.center.x, self.center.y],
            "radius": self.radius,
            "aperture": self.aperture,
            "axis": list(self.axis),
            "inner_radius": self.inner_radius,
        }


@dataclass(frozen=True)
class LensRegion:
    """Convex lens: range disk intersected with a disk around the anchor.

    The anchor sits one transmission range from the source along the
    destination axis, so the separation between the two disc centres is
    always ``radius``.  ``inner_rho`` > 0 selects the annular slice between
    two anchor-centred radii, which is how priority bands are represented.
    """

    source: Point2 = Point2(0.0, 0.0)
    radius: float = 1.0
    rho: float | None = None
    axis: tuple[float, float] = (1.0, 0.0)
    inner_rho: float = 0.0

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise DomainError("radius must be positive and finite")
        if self.rho is None:
            object.__setattr__(self, "rho", self.radius)
        if not 0.0 < self.rho <= 2.0 * self.radius + 1e-12:
            raise DomainError("rho must lie in (0, 2*radius]")
        if not 0.0 <= self.inner_rho < self.rho:
            raise DomainError("inner rho must lie in [0, rho)")
        object.__setattr__(self, "source", Point2(*self.source))
        object.__setattr__(self, "axis", _unit(self.axis))
        if self.area() <= 0.0:
            raise InfeasibleRegionError("lens slice has no area")

    @cached_property
    def anchor(self) -> Point2:
        return Point2(
            self.source.x + self.radius * self.axis[0],
            self.source.y + self.radius * self.axis[1],
        )

    def _overlap(self, r_source: float, s_anchor: float) -> float:
        # disk(source, r) with disk(anchor, s); the centres are radius apart
        return circle_intersection_area(r_source, s_anchor, self.radius)

    @cached_property
    def _area(self) -> float:
        return self._overlap(self.radius, self.rho) - self._overlap(self.radius, self.inner_rho)

    def area(self) -> float:
        return self._area

    def source_radial_mass(self, d: float) -> float:
        if not 0.0 <= d <= self.radius * (1.0 + 1e-12):
            raise DomainError(f"distance {d} outside [0, {self.radius}]")
        num = self._overlap(d, self.rho) - self._overlap(d, self.inner_rho)
        return min(1.0, max(0.0, num / self.area()))

    def anchor_radial_mass(self, s: float) -> float:
        """Mass of the slice within anchor distance ``s``; drives partitioning."""
        s = min(max(s, self.inner_rho), self.rho)
        return (self._overlap(self.radius, s) - self._overlap(self.radius, self.inner_rho)) / self.area()

    def contains(self, p: Point2) -> bool:
        dxs, dys = p[0] - self.source.x, p[1] - self.source.y
        if dxs * dxs + dys * dys > self.radius**2 * (1.0 + 1e-12):
            return False
        a = self.anchor
        da = math.hypot(p[0] - a.x, p[1] - a.y)
        if da > self.rho * (1.0 + 1e-12):
            return False
        return da > self.inner_rho or self.inner_rho == 0.0

    @cached_property
    def _sampling_efficiency(self) -> float:
        annulus = math.pi * (self.rho**2 - self.inner_rho**2)
        return self.area() / annulus

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform draw by rejection from the anchor-centred annulus."""
        eff = self._sampling_efficiency
        if eff < _MIN_SAMPLING_EFFICIENCY:
            raise InfeasibleRegionError(
                f"rejection efficiency {eff:.2e} below {_MIN_SAMPLING_EFFICIENCY}"
            )
        a = self.anchor
        out = np.empty((n, 2))
        r2 = self.radius**2
        lo2 = self.inner_rho**2
        span = self.rho**2 - lo2
        if n <= 16:
            # scalar rejection: cheaper than array machinery for a few points
            rand = rng.random
            sx, sy = self.source.x, self.source.y
            got = 0
            while got < n:
                s = min(math.sqrt(lo2 + rand() * span), self.rho)
                theta = _TWO_PI * rand()
                px = a.x + s * math.cos(theta)
                py = a.y + s * math.sin(theta)
                if (px - sx) ** 2 + (py - sy) ** 2 <= r2:
                    out[got, 0] = px
                    out[got, 1] = py
                    got += 1
            return out
        got = 0
        while got < n:
            chunk = int((n - got) / eff * 1.4) + 8
            u = rng.random(chunk)
            v = rng.random(chunk)
            s = np.sqrt(lo2 + u * span)
            np.minimum(s, self.rho, out=s)
            theta = _TWO_PI * v
            px = a.x + s * np.cos(theta)
            py = a.y + s * np.sin(theta)
            keep = (px - self.source.x) ** 2 + (py - self.source.y) ** 2 <= r2
            take = min(int(keep.sum()), n - got)
            out[got : got + take, 0] = px[keep][:take]
            out[got : got + take, 1] = py[keep][:take]
            got += take
        return out

    def partition(self, q: int) -> list["LensRegion"]:
        """Equal-mass anchor-centred slices, the slice nearest the anchor first.

        Band edges come from bisection on the anchor radial mass, to within
        1e-10 of the target mass fraction.
        """
        edges = [self.inner_rho]
        for j in range(1, q):
            target = j / q
            lo, hi = self.inner_rho, self.rho
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                m = self.anchor_radial_mass(mid)
                if abs(m - target) <= _MASS_BISECT_TOL:
                    lo = hi = mid
                    break
                if m < target:
                    lo = mid
                else:
                    hi = mid
            edges.append(0.5 * (lo + hi))
        edges.append(self.rho)
        return [
            LensRegion(self.source, self.radius, edges[j + 1], self.axis, edges[j])
            for j in range(q)
        ]

    def to_spec(self) -> dict:
        return {
            "kind": "lens",
            "source": [self.source.x, self.source.y],
            "radius": self.radius,
            "rho": self.rho,
            "axis": list(self.axis),
            "inner_rho": self.inner_rho,
        }


Region = SectorRegion | LensRegion


def region_from_spec(spec: dict) -> Region:
    kind = spec.get("kind")
    if kind == "sector":
        return SectorRegion(
            center=Point2(*spec.get("center", (0.0, 0.0))),
            radius=spec["radius"],
            aperture=spec["aperture"],
            axis=tuple(spec.get("axis", (1.0, 0.0))),
            inner_radius=spec.get("inner_radius", 0.0),
        )
    if kind == "lens":
        return LensRegion(
            source=Point2(*spec.get("source", (0.0, 0.0))),
            radius=spec["radius"],
            rho=spec.get("rho"),
            axis=tuple(spec.get("axis", (1.0, 0.0))),
            inner_rho=spec.get("inner_rho", 0.0),
        )
    raise DomainError(f"unknown region kind {kind!r}")


def region_to_spec(region: Region) -> dict:
    return region.to_spec()


# ---------------------------------------------------------------------------
# module-level operations


def region_area(region: Region) -> float:
    return region.area()


def radial_mass(region: Region, d: float) -> float:
    return region.source_radial_mass(d)


def nth_neighbor_ccdf(region: Region, rank: int, n_points: int, d: float) -> float:
    """P(the rank-th nearest of ``n_points`` uniform points lies beyond ``d``).

    Equivalently the probability that fewer than ``rank`` points fall within
    distance ``d`` of the source.
    """
    if not 1 <= rank <= n_points:
        raise DomainError(f"rank {rank} outside [1, {n_points}]")
    p = region.source_radial_mass(d)
    total = 0.0
    for k in range(rank):
        total += math.comb(n_points, k) * p**k * (1.0 - p) ** (n_points - k)
    return min(1.0, max(0.0, total))


def nth_neighbor_pdf(region: Region, rank: int, n_points: int, d: float) -> float:
    """Density of the rank-th nearest distance.

    Closed form where the region exposes the radial-mass derivative (the
    sector family); otherwise a central difference of the CCDF with step
    1e-5 * radius.
    """
    if not 1 <= rank <= n_points:
        raise DomainError(f"rank {rank} outside [1, {n_points}]")
    deriv = getattr(region, "source_radial_mass_derivative", None)
    if deriv is not None:
        p = region.source_radial_mass(d)
        dens = (
            rank
            * math.comb(n_points, rank)
            * p ** (rank - 1)
            * (1.0 - p) ** (n_points - rank)
            * deriv(d)
        )
        return max(0.0, dens)
    h = 1e-5 * region.radius
    lo = max(0.0, d - h)
    hi = min(region.radius, d + h)
    if hi <= lo:
        return 0.0
    slope = (
        nth_neighbor_ccdf(region, rank, n_points, lo)
        - nth_neighbor_ccdf(region, rank, n_points, hi)
    ) / (hi - lo)
    return max(0.0, slope)


def expected_nth_distance(region: Region, rank: int, n_points: int) -> float:
    """E[rank-th nearest distance] as the integral of the CCDF over [0, R]."""
    if not 1 <= rank <= n_points:
        raise DomainError(f"rank {rank} outside [1, {n_points}]")
    val, _ = quad(
        lambda d: nth_neighbor_ccdf(region, rank, n_points, d),
        0.0,
        region.radius,
        epsabs=1e-8,
        limit=200,
    )
    return val


def median_nth_distance(region: Region, rank: int, n_points: int) -> float:
    """Distance at which the rank-th neighbour CCDF crosses one half."""
    f = lambda d: nth_neighbor_ccdf(region, rank, n_points, d) - 0.5
    return brentq(f, 0.0, region.radius, xtol=1e-12)


def calibrate_sdr(lens: LensRegion) -> SectorRegion:
    """Sector with the same source, range and area as ``lens``.

    Matching areas equalises the chance of finding nodes inside the two
    decision-region designs.
    """
    aperture = 2.0 * lens.area() / lens.radius**2
    if aperture > _TWO_PI + 1e-9:
        raise DomainError("required aperture exceeds a full circle")
    return SectorRegion(
        center=lens.source,
        radius=lens.radius,
        aperture=min(aperture, _TWO_PI),
        axis=lens.axis,
    )


def partition_region(region: Region, q: int) -> list[Region]:
    """Split a region into ``q`` equal-probability-mass bands in priority order.

    Priority 1 is the band offering the most forward progress: the slice
    closest to the anchor for a lens, the outermost annulus for a sector.
    """
    if q < 2:
        raise DomainError("need at least two bands")
    if region.area() <= 0.0:
        raise DomainError("cannot partition an empty region")
    return region.partition(q)


def iterated_priority_region(region: Region, rounds: int, q: int = 2) -> Region:
    """Region the election narrows to after repeatedly taking the priority-1 band.

    ``rounds=1`` is the region itself; each further round re-partitions and
    keeps the highest-priority band.
    """
    if rounds < 1:
        raise DomainError("rounds start at 1")
    current = region
    for _ in range(rounds - 1):
        current = partition_region(current, q)[0]
    return current


# ---------------------------------------------------------------------------
# point processes


@dataclass(frozen=True)
class Topology:
    """One sampled deployment: source, destination and candidate relays."""

    source: Point2
    destination: Point2
    relays: tuple[tuple[Point2, bool], ...]
    region: Region

    def __post_init__(self):
        r2 = self.region.radius**2 * (1.0 + 1e-9)
        for pos, _ in self.relays:
            dx = pos.x - self.source.x
            dy = pos.y - self.source.y
            if dx * dx + dy * dy > r2:
                raise DomainError("relay outside the source's transmission range")

    @cached_property
    def _eligible(self) -> tuple[int, ...]:
        return tuple(i for i, (_, awake) in enumerate(self.relays) if awake)

    def eligible_ids(self) -> list[int]:
        return list(self._eligible)

    @cached_property
    def _positions(self) -> np.ndarray:
        if not self.relays:
            return np.empty((0, 2))
        return np.array([[p.x, p.y] for p, _ in self.relays])

    def positions(self) -> np.ndarray:
        return self._positions

    @cached_property
    def _separations(self) -> np.ndarray:
        sx, sy = self.source
        return np.array([math.hypot(p.x - sx, p.y - sy) for p, _ in self.relays])

    def separations(self) -> np.ndarray:
        return self._separations

    def projection_of(self, relay_id: int) -> float:
        """Progress of one relay along the source-destination axis."""
        ux = self.destination.x - self.source.x
        uy = self.destination.y - self.source.y
        norm = math.hypot(ux, uy)
        p = self.relays[relay_id][0]
        return ((p.x - self.source.x) * ux + (p.y - self.source.y) * uy) / norm

    def projections(self) -> np.ndarray:
        """Progress of every relay along the source-destination axis."""
        return np.array([self.projection_of(i) for i in range(len(self.relays))])


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_topology(
    region: Region,
    n: int,
    seed,
    awake_prob: float = 1.0,
    destination: Point2 | None = None,
) -> Topology:
    """Draw ``n`` uniform relays on the region; deterministic given the seed."""
    if n < 0:
        raise DomainError("relay count must be >= 0")
    rng = as_generator(seed)
    src = region.source if isinstance(region, LensRegion) else region.center
    if destination is None:
        destination = Point2(
            src.x + 3.0 * region.radius * region.axis[0],
            src.y + 3.0 * region.radius * region.axis[1],
        )
    pts = region.sample(n, rng).tolist() if n else []
    if awake_prob >= 1.0:
        awake = [True] * n
    else:
        awake = (rng.random(n) < awake_prob).tolist()
    relays = tuple((Point2(x, y), a) for (x, y), a in zip(pts, awake))
    return Topology(source=src, destination=destination, relays=relays, region=region)


def sample_sorted_separations(
    region: Region, n_points: int, draws: int, rng: np.random.Generator
) -> np.ndarray:
    """(draws, n_points) source separations, row-sorted; bulk path for experiments."""
    pts = region.sample(draws * n_points, rng)
    src = region.source if isinstance(region, LensRegion) else region.center
    d = np.hypot(pts[:, 0] - src.x, pts[:, 1] - src.y).reshape(draws, n_points)
    d.sort(axis=1)
    return d
