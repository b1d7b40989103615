"""Slot-synchronous Monte Carlo simulator of the relay-election protocols.

The channel is a collision channel with ternary observable feedback per slot
(idle / single / collision) and gated access: only relays present in the
episode's first reply slot ever contend, so the contender set never grows
during an election.

Episode accounting starts at that first reply slot; the source's request
slot is excluded by default and can be re-added with ``include_request_slot``.
Every episode is an isolated state machine driven by an explicit seed, so
batches can derive independent per-episode seeds from one master seed and
aggregate in any order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import (
    LensRegion,
    Region,
    Topology,
    as_generator,
    partition_region,
    sample_topology,
)
from .pgf import SplitModel

PROGRESS_METRICS = ("separation", "projection")


class SlotFeedback(enum.Enum):
    IDLE = "I"
    SINGLE = "S"
    COLLISION = "C"


@dataclass(frozen=True)
class CriRecord:
    """Outcome of one simulated contention episode.

    ``winner_rank`` is the winner's position among the episode's eligible
    relays when ordered by source separation (1 = nearest).
    """

    protocol: str
    n: int
    slots: int
    winner: int | None
    winner_distance: float
    winner_progress: float
    winner_rank: int | None
    feedback_trace: tuple[SlotFeedback, ...]
    transmitters: tuple[tuple[int, ...], ...]
    backoff: bool = False

    def trace_symbols(self) -> str:
        return "".join(f.value for f in self.feedback_trace)

    def to_line(self) -> str:
        dist = repr(self.winner_distance) if self.winner is not None else "nan"
        return f"{self.protocol} {self.n} {self.slots} {dist} {self.trace_symbols()}"

    @classmethod
    def from_line(cls, line: str) -> "CriRecord":
        """Parse the wire form; the winner's identity is not serialized."""
        parts = line.split()
        if len(parts) != 5:
            raise DomainError(f"malformed record line: {line!r}")
        protocol, n, slots, dist, symbols = parts
        trace = tuple(SlotFeedback(ch) for ch in symbols)
        d = float(dist)
        return cls(
            protocol=protocol,
            n=int(n),
            slots=int(slots),
            winner=None,
            winner_distance=d,
            winner_progress=float("nan"),
            winner_rank=None,
            feedback_trace=trace,
            transmitters=tuple(() for _ in trace),
            backoff=math.isnan(d),
        )


class _CoinStream:
    """Chunked group-index draws, one numpy call per refill instead of per slot."""

    __slots__ = ("rng", "q", "probs", "fair", "buf", "pos")

    def __init__(self, rng, model: SplitModel, chunk: int = 64):
        self.rng = rng
        self.q = model.q
        self.probs = np.array(model.p)
        self.fair = all(abs(x - 1.0 / model.q) < 1e-15 for x in model.p)
        self.buf = ()
        self.pos = 0

    def _refill(self, at_least: int):
        size = max(64, at_least)
        if self.fair:
            self.buf = self.rng.integers(0, self.q, size=size).tolist()
        else:
            self.buf = self.rng.choice(self.q, size=size, p=self.probs).tolist()
        self.pos = 0

    def take(self, m: int) -> list[int]:
        if self.pos + m > len(self.buf):
            self._refill(m)
        out = self.buf[self.pos : self.pos + m]
        self.pos += m
        return out


_IDLE = SlotFeedback.IDLE
_SINGLE = SlotFeedback.SINGLE
_COLLISION = SlotFeedback.COLLISION


class _EpisodeLog:
    __slots__ = ("trace", "transmitters", "initial")

    def __init__(self, initial_set):
        self.trace: list[SlotFeedback] = []
        self.transmitters: list[tuple[int, ...]] = []
        self.initial = frozenset(initial_set)

    def slot(self, who) -> SlotFeedback:
        if type(who) is not tuple:
            who = tuple(who)
        # gated access: nobody outside the initial colliding set may appear
        assert self.initial.issuperset(who), "blocked-access violation"
        size = len(who)
        fb = _IDLE if size == 0 else (_SINGLE if size == 1 else _COLLISION)
        self.trace.append(fb)
        self.transmitters.append(who)
        return fb


def _finish(protocol, topology, n, log, winner, include_request_slot, backoff=False):
    if winner is None:
        dist = prog = float("nan")
        rank = None
    else:
        separations = topology.separations()
        dist = float(separations[winner])
        prog = topology.projection_of(winner)
        rank = 1 + sum(
            1
            for rid in topology._eligible
            if separations[rid] < dist or (separations[rid] == dist and rid < winner)
        )
    return CriRecord(
        protocol=protocol,
        n=n,
        slots=len(log.trace) + (1 if include_request_slot else 0),
        winner=winner,
        winner_distance=dist,
        winner_progress=prog,
        winner_rank=rank,
        feedback_trace=tuple(log.trace),
        transmitters=tuple(log.transmitters),
        backoff=backoff,
    )


def run_sta(
    topology: Topology,
    model: SplitModel,
    seed=None,
    progress: str = "separation",
    include_request_slot: bool = False,
) -> CriRecord:
    """Simulate one splitting-tree election over the topology's eligible set.

    All eligible relays reply in the first slot; every collision splits the
    colliding group by an i.i.d. coin with the model's group probabilities,
    and the sub-groups reply depth-first.  The election ends when every relay
    has transmitted alone, after which the source picks the relay with the
    largest progress metric (lowest id on ties).
    """
    if progress not in PROGRESS_METRICS:
        raise DomainError(f"progress must be one of {PROGRESS_METRICS}")
    eligible = topology._eligible
    n = len(eligible)
    if n != model.n:
        raise DomainError(f"topology has {n} eligible relays, model says {model.n}")
    rng = as_generator(seed)
    log = _EpisodeLog(eligible)

    if n == 0:
        log.slot(())
        return _finish("sta", topology, n, log, None, include_request_slot, backoff=True)

    log.slot(eligible)
    if n >= 2:
        coins = _CoinStream(rng, model)
        q = model.q
        stack = [eligible]
        first = True
        while stack:
            group = stack.pop()
            if not first:
                fb = log.slot(group)
                if fb is not _COLLISION:
                    continue
            first = False
            buckets = [[] for _ in range(q)]
            for rid, g in zip(group, coins.take(len(group))):
                buckets[g].append(rid)
            for b in reversed(buckets):
                stack.append(tuple(b))

    metric = topology.separations() if progress == "separation" else topology.projections()
    winner = max(eligible, key=lambda rid: (metric[rid], -rid))
    return _finish("sta", topology, n, log, winner, include_request_slot)


def run_auction(
    topology: Topology,
    q: int = 2,
    skip: bool = False,
    seed=None,
    progress: str = "separation",
    include_request_slot: bool = False,
) -> CriRecord:
    """Simulate one priority-band auction election.

    After the gating reply slot the contenders' region is split into ``q``
    equal-mass priority bands and bands answer in priority order.  A single
    reply wins immediately; a collision drops every lower-priority band for
    the rest of the episode and re-partitions the colliding band; an idle
    slot hands over to the rest of the field, either by re-partitioning it
    at once (``skip``: the idle doubles as the regather slot) or by letting
    it regather and collide in an extra slot first.

    The ``progress`` argument is accepted for interface symmetry; the
    auction's winner is always the first solo replier.
    """
    protocol = "auction_skip" if skip else "auction"
    if progress not in PROGRESS_METRICS:
        raise DomainError(f"progress must be one of {PROGRESS_METRICS}")
    region = topology.region
    if not isinstance(region, LensRegion):
        raise DomainError("the auction needs a lens decision region to form bands")
    eligible = topology._eligible
    n = len(eligible)
    log = _EpisodeLog(eligible)

    if n == 0:
        log.slot(())
        return _finish(protocol, topology, n, log, None, include_request_slot, backoff=True)

    if n == 1:
        # a clean solo reply needs no band descent: gating slot plus the bid
        rid = eligible[0]
        log.slot((rid,))
        log.slot((rid,))
        return _finish(protocol, topology, n, log, rid, include_request_slot)

    ax, ay = region.anchor
    anchor_dist = {
        rid: math.hypot(topology.relays[rid][0].x - ax, topology.relays[rid][0].y - ay)
        for rid in eligible
    }

    log.slot(eligible)  # gating collision that conditions the episode
    active = list(eligible)
    current: LensRegion = region
    bands = _split_bands(current, q)
    idx = 0
    winner = None
    while winner is None:
        members = _band_members(bands[idx], active, anchor_dist)
        fb = log.slot(members)
        if fb is _SINGLE:
            winner = members[0]
        elif fb is _COLLISION:
            # tree pruning: every lower-priority band drops out for good
            active = members
            current = bands[idx]
            bands = _split_bands(current, q)
            idx = 0
        else:
            if skip:
                current = _remainder(current, bands[idx])
                bands = _split_bands(current, q)
                idx = 0
            else:
                idx += 1
                assert idx < q, "active contenders must occupy some band"
    return _finish(protocol, topology, n, log, winner, include_request_slot)


_BAND_CACHE: dict[tuple, list[LensRegion]] = {}


def _split_bands(region: LensRegion, q: int) -> list[LensRegion]:
    key = (region.source, region.radius, region.axis, region.inner_rho, region.rho, q)
    bands = _BAND_CACHE.get(key)
    if bands is None:
        bands = partition_region(region, q)
        _BAND_CACHE[key] = bands
    return bands


def _band_members(band: LensRegion, active, anchor_dist) -> list[int]:
    lo, hi = band.inner_rho, band.rho
    return [
        rid for rid in active if (anchor_dist[rid] > lo or lo == 0.0) and anchor_dist[rid] <= hi
    ]


def _remainder(region: LensRegion, consumed: LensRegion) -> LensRegion:
    return LensRegion(
        source=region.source,
        radius=region.radius,
        rho=region.rho,
        axis=region.axis,
        inner_rho=consumed.rho,
    )


# ---------------------------------------------------------------------------
# batches


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything one episode needs besides its seed.

    ``n`` is the deployed relay count; the realized conflict multiplicity is
    the number of relays that are awake (all of them at the default
    ``awake_prob`` of 1).
    """

    protocol: str
    n: int
    region: Region
    q: int = 2
    p: tuple[float, ...] | None = None
    awake_prob: float = 1.0
    progress: str = "separation"
    include_request_slot: bool = False


@dataclass
class BatchSummary:
    protocol: str
    n: int
    replications: int
    pmf: dict[int, float]
    mean_slots: float
    var_slots: float
    backoff_rate: float
    mean_winner_distance: float
    mean_winner_distance_by_rank: dict[int, float]


def run_single_episode(config: EpisodeConfig, seed) -> CriRecord:
    """One episode: sample the deployment, then run the protocol on it."""
    rng = as_generator(seed)
    topo = sample_topology(config.region, config.n, rng, awake_prob=config.awake_prob)
    if config.protocol == "sta":
        model = SplitModel(n=len(topo.eligible_ids()), q=config.q, p=config.p)
        return run_sta(
            topo,
            model,
            rng,
            progress=config.progress,
            include_request_slot=config.include_request_slot,
        )
    if config.protocol in ("auction", "auction_skip"):
        return run_auction(
            topo,
            q=config.q,
            skip=config.protocol == "auction_skip",
            seed=rng,
            progress=config.progress,
            include_request_slot=config.include_request_slot,
        )
    raise DomainError(f"unknown protocol {config.protocol!r}")


def episode_seeds(master_seed, replications: int) -> list[np.random.SeedSequence]:
    """Counter-split per-episode seeds, reproducible from the master seed."""
    return np.random.SeedSequence(master_seed).spawn(replications)


def run_episode_batch(
    config: EpisodeConfig, replications: int, seed
) -> tuple[list[CriRecord], BatchSummary]:
    """Independent episodes with per-episode seeds split off the master seed."""
    if replications < 1:
        raise DomainError("need at least one replication")
    records = [run_single_episode(config, s) for s in episode_seeds(seed, replications)]

    slots = np.array([r.slots for r in records], dtype=float)
    counts: dict[int, int] = {}
    for r in records:
        counts[r.slots] = counts.get(r.slots, 0) + 1
    pmf = {k: counts[k] / replications for k in sorted(counts)}

    dist_sum = 0.0
    dist_n = 0
    rank_sums: dict[int, float] = {}
    rank_counts: dict[int, int] = {}
    for r in records:
        if r.winner is None:
            continue
        dist_sum += r.winner_distance
        dist_n += 1
        rank_sums[r.winner_rank] = rank_sums.get(r.winner_rank, 0.0) + r.winner_distance
        rank_counts[r.winner_rank] = rank_counts.get(r.winner_rank, 0) + 1

    summary = BatchSummary(
        protocol=config.protocol,
        n=config.n,
        replications=replications,
        pmf=pmf,
        mean_slots=float(slots.mean()),
        var_slots=float(slots.var()),
        backoff_rate=sum(1 for r in records if r.backoff) / replications,
        mean_winner_distance=dist_sum / dist_n if dist_n else float("nan"),
        mean_winner_distance_by_rank={
            rank: rank_sums[rank] / rank_counts[rank] for rank in sorted(rank_sums)
        },
    )
    return records, summary


def empirical_pmf(records) -> dict[int, float]:
    """Slot-count relative frequencies of a record collection."""
    counts: dict[int, int] = {}
    for r in records:
        counts[r.slots] = counts.get(r.slots, 0) + 1
    total = len(records)
    return {k: c / total for k, c in sorted(counts.items())}


def total_variation(analytic: dict[int, float], empirical: dict[int, float]) -> float:
    """Half the L1 distance between two PMFs over the union of their supports."""
    keys = set(analytic) | set(empirical)
    return 0.5 * sum(abs(analytic.get(k, 0.0) - empirical.get(k, 0.0)) for k in keys)
