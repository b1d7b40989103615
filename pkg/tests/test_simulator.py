"""Episode semantics, protocol invariants and batch machinery."""

import math

import numpy as np
import pytest

from relaysel.errors import DomainError
from relaysel.geometry import (
    LensRegion,
    Point2,
    SectorRegion,
    Topology,
    nth_neighbor_ccdf,
    partition_region,
    sample_topology,
)
from relaysel.pgf import SplitModel, build_pgf, moments
from relaysel.simulator import (
    CriRecord,
    EpisodeConfig,
    SlotFeedback,
    empirical_pmf,
    episode_seeds,
    run_auction,
    run_episode_batch,
    run_single_episode,
    run_sta,
    total_variation,
)

LENS = LensRegion(radius=1.0)
SECTOR = SectorRegion(radius=1.0)


def lens_topology(anchor_distances, awake=None, region=LENS):
    """Relays placed on the source->anchor axis at given anchor distances."""
    if awake is None:
        awake = [True] * len(anchor_distances)
    relays = tuple(
        (Point2(region.radius - a, 0.0), up) for a, up in zip(anchor_distances, awake)
    )
    return Topology(
        source=Point2(0.0, 0.0),
        destination=Point2(3.0, 0.0),
        relays=relays,
        region=region,
    )


# ---------------------------------------------------------------------------
# splitting-tree episodes


def test_sta_empty_field_is_one_idle_slot():
    topo = sample_topology(SECTOR, 0, 3)
    rec = run_sta(topo, SplitModel(0), 4)
    assert rec.slots == 1
    assert rec.feedback_trace == (SlotFeedback.IDLE,)
    assert rec.winner is None
    assert rec.backoff


def test_sta_lone_relay_wins_in_one_slot():
    topo = sample_topology(SECTOR, 1, 3)
    rec = run_sta(topo, SplitModel(1), 4)
    assert rec.slots == 1
    assert rec.feedback_trace == (SlotFeedback.SINGLE,)
    assert rec.winner == 0


def test_sta_multiplicity_must_match_topology():
    topo = sample_topology(SECTOR, 3, 3)
    with pytest.raises(DomainError):
        run_sta(topo, SplitModel(4), 1)


def test_sta_pair_resolves_in_three_slots_half_the_time():
    cfg = EpisodeConfig(protocol="sta", n=2, region=SECTOR)
    _, summary = run_episode_batch(cfg, 100_000, 1234)
    assert summary.pmf[3] == pytest.approx(0.5, abs=0.005)


def test_sta_mean_slots_matches_series():
    cfg = EpisodeConfig(protocol="sta", n=4, region=SECTOR)
    reps = 100_000
    _, summary = run_episode_batch(cfg, reps, 777)
    analytic = moments(build_pgf("sta", SplitModel(4))).mean
    se = math.sqrt(summary.var_slots / reps)
    assert abs(summary.mean_slots - analytic) <= 3.0 * se


def test_sta_every_relay_transmits_alone_once():
    for seed in range(20):
        topo = sample_topology(SECTOR, 5, seed)
        rec = run_sta(topo, SplitModel(5), seed + 100)
        singles = [who[0] for who, fb in zip(rec.transmitters, rec.feedback_trace)
                   if fb is SlotFeedback.SINGLE]
        assert sorted(singles) == [0, 1, 2, 3, 4]


def test_sta_blocked_access_never_adds_contenders():
    topo = sample_topology(SECTOR, 6, 9)
    rec = run_sta(topo, SplitModel(6), 10)
    initial = set(rec.transmitters[0])
    for who in rec.transmitters:
        assert set(who) <= initial


def test_sta_winner_maximizes_separation():
    topo = sample_topology(SECTOR, 5, 21)
    rec = run_sta(topo, SplitModel(5), 22)
    seps = topo.separations()
    assert rec.winner == int(np.argmax(seps))
    assert rec.winner_rank == 5
    assert rec.winner_distance == pytest.approx(float(seps.max()))


def test_sta_projection_metric_changes_the_winner_rule():
    relays = (
        (Point2(0.1, 0.85), True),   # large separation, small forward progress
        (Point2(0.6, 0.0), True),    # smaller separation, all of it forward
    )
    topo = Topology(Point2(0, 0), Point2(3.0, 0.0), relays, SECTOR)
    by_sep = run_sta(topo, SplitModel(2), 5, progress="separation")
    by_proj = run_sta(topo, SplitModel(2), 5, progress="projection")
    assert by_sep.winner == 0
    assert by_proj.winner == 1


def test_request_slot_accounting_flag():
    topo = sample_topology(SECTOR, 1, 3)
    rec = run_sta(topo, SplitModel(1), 4, include_request_slot=True)
    assert rec.slots == 2
    assert len(rec.feedback_trace) == 1


# ---------------------------------------------------------------------------
# auction episodes


def test_auction_empty_field_backs_off():
    topo = sample_topology(LENS, 0, 3)
    rec = run_auction(topo, seed=4)
    assert rec.slots == 1
    assert rec.feedback_trace == (SlotFeedback.IDLE,)
    assert rec.backoff
    assert rec.winner is None


@pytest.mark.parametrize("skip", [False, True])
def test_auction_lone_relay_costs_two_slots(skip):
    topo = sample_topology(LENS, 1, 3)
    rec = run_auction(topo, skip=skip, seed=4)
    assert rec.slots == 2
    assert rec.feedback_trace == (SlotFeedback.SINGLE, SlotFeedback.SINGLE)
    assert rec.winner == 0


def test_auction_needs_a_lens_region():
    topo = sample_topology(SECTOR, 2, 3)
    with pytest.raises(DomainError):
        run_auction(topo, seed=1)


def test_auction_walkthrough_collision_then_single():
    # three bidders collide in the gating slot; the split that follows puts
    # the best one alone in the top band, so it replies alone and wins.
    # ids: 0 = "87", 1 = "21", 2 = "55".
    topo = lens_topology([0.2, 0.7, 0.8])
    rec = run_auction(topo, seed=1)
    assert rec.feedback_trace == (SlotFeedback.COLLISION, SlotFeedback.SINGLE)
    assert rec.winner == 0
    assert rec.slots == 2


def test_auction_prunes_lower_band_after_collision():
    # a fourth bidder sits in the low-priority band; it hears the gating
    # collision, then the high band's collision, and never transmits again
    topo = lens_topology([0.2, 0.5, 0.6, 0.9])
    rec = run_auction(topo, seed=1)
    assert rec.feedback_trace == (
        SlotFeedback.COLLISION,  # gating reply of all four
        SlotFeedback.COLLISION,  # high-priority band {0, 1, 2}
        SlotFeedback.SINGLE,     # relay 0 alone after the re-split
    )
    assert rec.winner == 0
    low_priority = 3
    assert all(low_priority not in who for who in rec.transmitters[1:])


def test_auction_winner_is_closest_to_the_anchor():
    for seed in range(30):
        topo = sample_topology(LENS, 5, seed)
        anchor = LENS.anchor
        best = min(
            topo.eligible_ids(),
            key=lambda rid: math.hypot(
                topo.relays[rid][0].x - anchor.x, topo.relays[rid][0].y - anchor.y
            ),
        )
        for skip in (False, True):
            rec = run_auction(topo, skip=skip, seed=seed)
            assert rec.winner == best


def test_auction_idle_handling_differs_between_variants():
    # both bidders in the low band: the gating collision is followed by an
    # idle of the high band; without skip the field regathers (one extra
    # collision), with skip the refreshed partition answers at once
    topo = lens_topology([0.8, 0.9])
    plain = run_auction(topo, skip=False, seed=1)
    assert plain.feedback_trace[:3] == (
        SlotFeedback.COLLISION,
        SlotFeedback.IDLE,
        SlotFeedback.COLLISION,
    )
    skipped = run_auction(topo, skip=True, seed=1)
    assert skipped.feedback_trace[0] is SlotFeedback.COLLISION
    assert skipped.feedback_trace[1] is SlotFeedback.IDLE
    # after the idle the refreshed top band holds the better bidder alone
    assert skipped.feedback_trace[2] is SlotFeedback.SINGLE
    assert skipped.slots == 3


@pytest.mark.parametrize("protocol,n", [("auction", 4), ("auction_skip", 4)])
def test_auction_pmf_matches_series(protocol, n):
    cfg = EpisodeConfig(protocol=protocol, n=n, region=LENS)
    _, summary = run_episode_batch(cfg, 100_000, 4242)
    series = build_pgf(protocol, SplitModel(n))
    analytic = {
        k: float(series.coeffs[k])
        for k in range(series.truncation_index(0.999) + 1)
        if series.coeffs[k] > 0
    }
    assert total_variation(analytic, summary.pmf) <= 0.01


def test_auction_three_band_descent():
    # q = 3: idle high band, then the middle band's lone bidder wins without
    # any regather slot in between
    bands = partition_region(LENS, 3)
    inside_middle = 0.5 * (bands[1].inner_rho + bands[1].rho)
    inside_low = 0.5 * (bands[2].inner_rho + bands[2].rho)
    topo = lens_topology([inside_middle, inside_low])
    rec = run_auction(topo, q=3, seed=1)
    assert rec.feedback_trace == (
        SlotFeedback.COLLISION,
        SlotFeedback.IDLE,
        SlotFeedback.SINGLE,
    )
    assert rec.winner == 0


# ---------------------------------------------------------------------------
# batches and the record stream


def test_batch_is_deterministic():
    cfg = EpisodeConfig(protocol="auction", n=3, region=LENS)
    first = run_episode_batch(cfg, 200, 3131)
    second = run_episode_batch(cfg, 200, 3131)
    assert first[0] == second[0]
    assert first[1] == second[1]


def test_single_replication_equals_direct_call():
    cfg = EpisodeConfig(protocol="sta", n=3, region=SECTOR)
    batch_record = run_episode_batch(cfg, 1, 555)[0][0]
    direct = run_single_episode(cfg, episode_seeds(555, 1)[0])
    assert batch_record == direct


def test_batch_rejects_zero_replications():
    cfg = EpisodeConfig(protocol="sta", n=2, region=SECTOR)
    with pytest.raises(DomainError):
        run_episode_batch(cfg, 0, 1)


def test_winner_distance_follows_the_furthest_neighbor_law():
    # splitting-tree winner = max separation, so winner distances sample the
    # furthest-of-n law of the region
    n, reps = 3, 100_000
    cfg = EpisodeConfig(protocol="sta", n=n, region=SECTOR)
    records, _ = run_episode_batch(cfg, reps, 20240101)
    samples = np.sort(np.array([r.winner_distance for r in records]))
    cdf = np.array([1.0 - nth_neighbor_ccdf(SECTOR, n, n, float(d)) for d in samples])
    hi = np.arange(1, reps + 1) / reps
    lo = np.arange(0, reps) / reps
    ks = max(np.max(np.abs(hi - cdf)), np.max(np.abs(lo - cdf)))
    assert ks <= 0.01


def test_record_line_round_trip():
    topo = sample_topology(LENS, 3, 17)
    rec = run_auction(topo, seed=18)
    line = rec.to_line()
    parsed = CriRecord.from_line(line)
    assert parsed.protocol == "auction"
    assert parsed.n == rec.n
    assert parsed.slots == rec.slots
    assert parsed.winner_distance == rec.winner_distance
    assert parsed.feedback_trace == rec.feedback_trace


def test_backoff_record_line_round_trip():
    topo = sample_topology(LENS, 0, 17)
    rec = run_auction(topo, seed=18)
    parsed = CriRecord.from_line(rec.to_line())
    assert math.isnan(parsed.winner_distance)
    assert parsed.backoff


def test_malformed_record_line_rejected():
    with pytest.raises(DomainError):
        CriRecord.from_line("sta 3 5")


def test_empirical_pmf_and_total_variation_helpers():
    records, summary = run_episode_batch(
        EpisodeConfig(protocol="sta", n=2, region=SECTOR), 500, 99
    )
    assert empirical_pmf(records) == summary.pmf
    assert total_variation(summary.pmf, summary.pmf) == 0.0
    assert total_variation({1: 1.0}, {2: 1.0}) == 1.0


def test_batch_summary_rank_means_cover_all_ranks():
    _, summary = run_episode_batch(
        EpisodeConfig(protocol="auction", n=4, region=LENS), 2000, 6
    )
    assert set(summary.mean_winner_distance_by_rank) <= {1, 2, 3, 4}
    assert summary.backoff_rate == 0.0
    total = sum(summary.pmf.values())
    assert total == pytest.approx(1.0, abs=1e-12)
