import numpy as np
import pytest

import cdrsweep.simulator as sim_mod
from cdrsweep import (
    BadSharesError,
    InvalidConfigError,
    MismatchedConfigsError,
    PerSlotPolicy,
    SimConfig,
    SimReport,
    StaticPolicy,
    SweepSchedule,
    build_schedule,
    compare,
    expected_delay_static,
    rank_sectors,
    rates_from_counts,
    report_csv,
    sequential_ranking,
    simulate,
    summary_csv,
)

from _oracles import expected_wait_brute

SLOT_DUR = 250.0 / 14


def uniform_cfg(seed=0, total_rate=0.5, horizon_slots=1, detect_prob=1.0):
    rates = np.full((1, 4), total_rate / 4)
    return SimConfig(arrival_rates_per_s=rates,
                     horizon_us=horizon_slots * sim_mod.SLOT_US,
                     detect_prob=detect_prob, seed=seed)


def d_first_policy():
    return StaticPolicy(rank_sectors([3.0, 3.0, 3.0, 5.0], np.random.default_rng(0)),
                        name="d_first")


def planted_arrivals(monkeypatch, times, sectors):
    def fake(cfg, rng):
        return np.asarray(times, dtype=np.float64), np.asarray(sectors, dtype=np.int64)
    monkeypatch.setattr(sim_mod, "_draw_arrivals", fake)


def test_ue_at_burst_start_with_matching_first_slot(monkeypatch):
    planted_arrivals(monkeypatch, [0.0], [3])
    report = simulate(uniform_cfg(), d_first_policy())
    assert report.delay_us[0] == 0.0


def test_ue_at_burst_start_under_sequential_waits_three_slots(monkeypatch):
    planted_arrivals(monkeypatch, [0.0], [3])
    report = simulate(uniform_cfg(), StaticPolicy(sequential_ranking()))
    assert abs(report.delay_us[0] - 3 * SLOT_DUR) < 1e-9
    assert abs(report.delay_us[0] - 53.5714285) < 1e-3


def test_ue_just_after_last_sector_slot_catches_next_burst(monkeypatch):
    # sector D's last SSB under sequential sits at offset 11 * slot
    planted_arrivals(monkeypatch, [11 * SLOT_DUR + 0.01], [3])
    report = simulate(uniform_cfg(), StaticPolicy(sequential_ranking()))
    expected = (20_000.0 + 3 * SLOT_DUR) - (11 * SLOT_DUR + 0.01)
    assert abs(report.delay_us[0] - expected) < 1e-9
    assert report.delay_us[0] < 20_000.0 + 250.0


def test_mid_burst_arrival_picks_next_matching_slot(monkeypatch):
    # arrival between the two A-slots of a sequential burst
    planted_arrivals(monkeypatch, [2 * SLOT_DUR, 4.5 * SLOT_DUR], [0, 0])
    report = simulate(uniform_cfg(), StaticPolicy(sequential_ranking()))
    assert abs(report.delay_us[0] - 2 * SLOT_DUR) < 1e-9   # waits for slot 4
    assert abs(report.delay_us[1] - 3.5 * SLOT_DUR) < 1e-9  # waits for slot 8


def test_every_sampled_delay_matches_the_static_rule():
    cfg = uniform_cfg(seed=42, total_rate=2.0)
    sched = build_schedule(sequential_ranking())
    report = simulate(cfg, StaticPolicy(sequential_ranking()))
    assert report.n_ues > 100
    period = cfg.burst_period_us
    for t, s, d in zip(report.arrival_us, report.sectors, report.delay_us):
        offs = sched.sector_offsets_us(int(s))
        phase = t % period
        later = offs[offs >= phase]
        expected = (later[0] - phase) if later.size else (period + offs[0] - phase)
        assert abs(d - expected) < 1e-6
        assert 0.0 <= d < period + 250.0


def test_simulation_is_deterministic_and_arrivals_are_paired():
    cfg = uniform_cfg(seed=7, total_rate=1.0)
    a = simulate(cfg, StaticPolicy(sequential_ranking()))
    b = simulate(cfg, StaticPolicy(sequential_ranking()))
    assert np.array_equal(a.arrival_us, b.arrival_us)
    assert np.array_equal(a.delay_us, b.delay_us)

    c = simulate(cfg, d_first_policy())
    assert np.array_equal(a.arrival_us, c.arrival_us)
    assert np.array_equal(a.sectors, c.sectors)
    assert not np.array_equal(a.delay_us, c.delay_us)


def test_detection_failures_stretch_delays():
    sure = simulate(uniform_cfg(seed=3, total_rate=1.0),
                    StaticPolicy(sequential_ranking()))
    flaky = simulate(uniform_cfg(seed=3, total_rate=1.0, detect_prob=0.4),
                     StaticPolicy(sequential_ranking()))
    assert np.array_equal(sure.arrival_us, flaky.arrival_us)
    assert flaky.mean_us > sure.mean_us
    assert np.all(flaky.delay_us >= sure.delay_us - 1e-9)
    assert np.all(np.isfinite(flaky.delay_us))


def test_dominance_of_earlier_first_slot():
    # all arrivals in sector A: A-first beats A-last with matched arrivals
    rates = np.array([[1.0, 0.0, 0.0, 0.0]])
    cfg = SimConfig(arrival_rates_per_s=rates, horizon_us=sim_mod.SLOT_US, seed=5)
    a_first = simulate(cfg, StaticPolicy(sequential_ranking()))
    a_last = simulate(cfg, StaticPolicy(
        rank_sectors([0.0, 3.0, 2.0, 1.0], np.random.default_rng(0)), name="a_last"))
    assert a_first.mean_us < a_last.mean_us
    only_a = [1.0, 0.0, 0.0, 0.0]
    assert (expected_delay_static(build_schedule(sequential_ranking()), only_a)
            < expected_delay_static(build_schedule(
                rank_sectors([0.0, 3.0, 2.0, 1.0], np.random.default_rng(0))), only_a))


def test_zero_rates_give_empty_report():
    cfg = SimConfig(arrival_rates_per_s=np.zeros((1, 4)),
                    horizon_us=sim_mod.SLOT_US, seed=0)
    report = simulate(cfg, StaticPolicy(sequential_ranking()))
    assert report.n_ues == 0
    assert np.isnan(report.mean_us)
    text = summary_csv([report])
    assert text.splitlines()[1] == "sequential,nan,nan,nan,0"


def test_per_slot_policy_switches_schedules(monkeypatch):
    # two slots: first favors A, second favors D; same phase in each slot
    values = np.array([[9.0, 1.0, 1.0, 2.0], [1.0, 2.0, 3.0, 9.0]])
    policy = PerSlotPolicy.from_values("oracle", values, np.random.default_rng(0),
                                       source="oracle")
    t2 = sim_mod.SLOT_US + 0.0  # first burst of slot 1
    planted_arrivals(monkeypatch, [0.0, t2], [0, 0])
    cfg = SimConfig(arrival_rates_per_s=np.zeros((2, 4)),
                    horizon_us=2 * sim_mod.SLOT_US, seed=0)
    report = simulate(cfg, policy)
    assert report.delay_us[0] == 0.0              # A leads slot 0's schedule
    assert report.delay_us[1] > 2 * SLOT_DUR - 1e-9  # A is ranked behind C,D now

    with pytest.raises(InvalidConfigError):
        policy.schedule_for_slot(2)


def test_simulate_rejects_schedules_missing_a_sector():
    lopsided = SweepSchedule(slots=(0, 1, 2) * 4 + (0, 1))  # sector D never swept

    class Bad:
        name = "bad"

        def schedule_for_slot(self, k):
            return lopsided

    with pytest.raises(InvalidConfigError):
        simulate(uniform_cfg(), Bad())


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        SimConfig(arrival_rates_per_s=np.full((1, 4), -1.0), horizon_us=1e6)
    with pytest.raises(InvalidConfigError):
        SimConfig(arrival_rates_per_s=np.zeros((1, 3)), horizon_us=1e6)
    with pytest.raises(InvalidConfigError):
        SimConfig(arrival_rates_per_s=np.zeros((1, 4)), horizon_us=0.0)
    with pytest.raises(InvalidConfigError):
        SimConfig(arrival_rates_per_s=np.zeros((1, 4)), horizon_us=1e6,
                  detect_prob=0.0)
    with pytest.raises(InvalidConfigError):
        SimConfig(arrival_rates_per_s=np.zeros((1, 4)), horizon_us=1e6,
                  burst_period_us=100.0)
    # two rate rows cannot cover three slots
    cfg = SimConfig(arrival_rates_per_s=np.ones((2, 4)), horizon_us=3 * sim_mod.SLOT_US)
    with pytest.raises(InvalidConfigError):
        simulate(cfg, StaticPolicy(sequential_ranking()))


def test_rates_from_counts_scales_to_target_mean():
    counts = np.array([[10, 0, 0, 10], [20, 0, 0, 0]])
    rates = rates_from_counts(counts, 2.0)
    assert rates.shape == (2, 4)
    assert abs(rates.sum(axis=1).mean() - 2.0) < 1e-12
    assert rates[0, 1] == 0.0
    assert np.array_equal(rates_from_counts(np.zeros((3, 4)), 5.0), np.zeros((3, 4)))


def test_expected_delay_closed_form_against_quadrature():
    rng = np.random.default_rng(21)
    for _ in range(3):
        sched = build_schedule(rank_sectors(rng.uniform(0, 10, 4), rng))
        shares = rng.dirichlet(np.ones(4))
        closed = expected_delay_static(sched, shares)
        brute = sum(shares[s] * expected_wait_brute(
                        sched.sector_offsets_us(s).tolist(), 20_000.0, n_grid=200_000)
                    for s in range(4))
        assert abs(closed - brute) / brute < 1e-3


def test_expected_delay_hand_cases():
    # single opportunity at offset 0 and the whole share on it: mean P/2
    lonely = SweepSchedule(slots=(0,) + (1, 2, 3) * 4 + (1,))
    val = expected_delay_static(lonely, [1.0, 0.0, 0.0, 0.0])
    assert abs(val - 10_000.0) < 1e-9

    # uniform shares: relabeling the sectors in the ranking keeps the mean
    base = build_schedule(sequential_ranking())
    rot = build_schedule(rank_sectors([3.0, 4.0, 1.0, 2.0], np.random.default_rng(0)))
    u = [0.25, 0.25, 0.25, 0.25]
    assert abs(expected_delay_static(base, u) - expected_delay_static(rot, u)) < 1e-9


def test_monte_carlo_tracks_the_closed_form():
    rng = np.random.default_rng(17)
    shares = rng.dirichlet(np.ones(4) * 3)
    sched_rng = np.random.default_rng(18)
    ranking = rank_sectors(sched_rng.uniform(0, 5, 4), sched_rng)
    policy = StaticPolicy(ranking, name="static")
    sched = build_schedule(ranking)

    cfg = SimConfig(arrival_rates_per_s=(shares * 50.0).reshape(1, 4),
                    horizon_us=sim_mod.SLOT_US, seed=4)
    report = simulate(cfg, policy)
    assert report.n_ues > 20_000
    expected = expected_delay_static(sched, shares)
    assert abs(report.mean_us - expected) / expected < 0.02


def test_bad_shares_rejected():
    sched = build_schedule(sequential_ranking())
    with pytest.raises(BadSharesError):
        expected_delay_static(sched, [0.5, 0.5, 0.5, -0.5])
    with pytest.raises(BadSharesError):
        expected_delay_static(sched, [0.3, 0.3, 0.3, 0.3])
    with pytest.raises(BadSharesError):
        expected_delay_static(sched, [1.0, 0.0, 0.0])
    lonely = SweepSchedule(slots=(0,) + (1, 2, 3) * 4 + (1,))
    with pytest.raises(InvalidConfigError):
        # sector D holds share but never appears in the schedule
        expected_delay_static(SweepSchedule(slots=(0, 1, 2) * 4 + (0, 1)),
                              [0.25, 0.25, 0.25, 0.25])
    assert expected_delay_static(lonely, [1.0, 0.0, 0.0, 0.0]) > 0


def test_compare_pairs_by_seed():
    def fake_report(policy, seed, mean):
        delays = np.array([mean])
        return SimReport(policy=policy, seed=seed, sectors=np.zeros(1, dtype=np.int64),
                         arrival_us=np.zeros(1), delay_us=delays)

    reports = []
    for seed, (a, b) in enumerate([(10.0, 8.0), (12.0, 9.0), (11.0, 11.0)]):
        reports.append(fake_report("sequential", seed, a))
        reports.append(fake_report("predicted", seed, b))
    comp = compare(reports)
    assert comp.baseline == "sequential"
    assert [r.policy for r in comp.rows] == ["sequential", "predicted"]
    seq, pred = comp.rows
    assert seq.mean_diff_us == 0.0 and seq.n_equal == 3
    assert pred.n_lower == 2 and pred.n_equal == 1 and pred.n_higher == 0
    assert abs(pred.mean_diff_us - (-5.0 / 3)) < 1e-12
    assert pred.ci_lo_us < pred.mean_diff_us < pred.ci_hi_us

    header = comp.csv_text().splitlines()[0]
    assert header.startswith("policy,n_seeds,mean_us,mean_diff_us")

    with pytest.raises(MismatchedConfigsError):
        compare(reports + [fake_report("oracle", 99, 5.0)])
    with pytest.raises(MismatchedConfigsError):
        compare(reports + [fake_report("sequential", 0, 1.0)])
    with pytest.raises(MismatchedConfigsError):
        compare([])


def test_identical_policies_compare_to_zero():
    cfg_a = uniform_cfg(seed=1, total_rate=0.5)
    cfg_b = uniform_cfg(seed=2, total_rate=0.5)
    seq = StaticPolicy(sequential_ranking())
    twin = StaticPolicy(sequential_ranking(), name="twin")
    reports = [simulate(cfg_a, seq), simulate(cfg_a, twin),
               simulate(cfg_b, seq), simulate(cfg_b, twin)]
    comp = compare(reports)
    assert comp.rows[1].mean_diff_us == 0.0
    assert comp.rows[1].n_equal == 2


def test_report_csv_layout():
    report = simulate(uniform_cfg(seed=9, total_rate=0.2),
                      StaticPolicy(sequential_ranking()))
    lines = report_csv([report]).splitlines()
    assert lines[0] == "policy,seed,ue_id,sector,arrival_us,delay_us"
    assert len(lines) == 1 + report.n_ues
    first = lines[1].split(",")
    assert first[0] == "sequential" and first[2] == "0"
    assert first[3] in "ABCD"

    summary = summary_csv([report]).splitlines()
    assert summary[0] == "policy,mean_us,median_us,p95_us,n"
    assert summary[1].split(",")[4] == str(report.n_ues)
