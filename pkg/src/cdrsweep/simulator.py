"""Monte-Carlo measurement of UE initial-access delay under a sweep policy.

UEs arrive per-sector as Poisson processes whose rates may change every
10-minute slot. A UE detects the cell at the start of the first SSB slot
aimed at its sector at or after its arrival; each such opportunity succeeds
independently with detect_prob. The whole run is driven by one 64-bit seed
split into independent substreams for arrivals, detection and schedule
tie-breaking, so two policies simulated under the same seed face identical
arrival streams and identical per-UE detection luck (common random numbers).
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadSharesError,
    InvalidConfigError,
    MismatchedConfigsError,
)
from .ingest import SECTOR_LABELS
from .scheduler import (
    BURST_DURATION_US,
    BURST_PERIOD_US,
    SectorRanking,
    SweepSchedule,
    build_schedule,
    rank_sectors,
)

SLOT_US = 600_000_000.0  # one 10-minute aggregation slot, in microseconds
N_SECTORS = len(SECTOR_LABELS)


@dataclass
class SimConfig:
    """One simulation run.

    arrival_rates_per_s has one row per 10-minute slot (a single row is
    broadcast over the whole horizon); entries are UE arrivals per second
    per sector.
    """

    arrival_rates_per_s: np.ndarray
    horizon_us: float
    detect_prob: float = 1.0
    seed: int = 0
    burst_period_us: float = BURST_PERIOD_US
    burst_duration_us: float = BURST_DURATION_US
    slot_us: float = SLOT_US

    def __post_init__(self):
        self.arrival_rates_per_s = np.atleast_2d(
            np.asarray(self.arrival_rates_per_s, dtype=np.float64))
        self.validate()

    def validate(self) -> None:
        r = self.arrival_rates_per_s
        if r.ndim != 2 or r.shape[1] != N_SECTORS:
            raise InvalidConfigError(f"rates must be (slots, {N_SECTORS}), got {r.shape}")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise InvalidConfigError("rates must be finite and non-negative")
        if not self.horizon_us > 0:
            raise InvalidConfigError(f"horizon must be positive, got {self.horizon_us}")
        if not 0.0 < self.detect_prob <= 1.0:
            raise InvalidConfigError(f"detect_prob must be in (0, 1], got {self.detect_prob}")
        if not self.burst_duration_us < self.burst_period_us:
            raise InvalidConfigError("burst_duration must be smaller than burst_period")
        if self.slot_us <= 0:
            raise InvalidConfigError("slot_us must be positive")

    @property
    def n_slots(self) -> int:
        return int(np.ceil(self.horizon_us / self.slot_us))


def rates_from_counts(counts, mean_total_rate_per_s: float) -> np.ndarray:
    """Per-slot rates proportional to observed counts.

    Scaled so the time-averaged total arrival rate equals
    mean_total_rate_per_s.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if mean_total_rate_per_s < 0:
        raise InvalidConfigError("mean rate must be non-negative")
    mean_total = counts.sum(axis=1).mean()
    if mean_total == 0:
        return np.zeros_like(counts)
    return counts * (mean_total_rate_per_s / mean_total)


class StaticPolicy:
    """The same schedule for every burst."""

    def __init__(self, ranking: SectorRanking, name: str | None = None):
        self.name = name if name is not None else ranking.source
        self._schedule = build_schedule(ranking)

    def schedule_for_slot(self, slot_idx: int) -> SweepSchedule:
        return self._schedule


class PerSlotPolicy:
    """A precomputed schedule per 10-minute slot (prediction- or truth-driven)."""

    def __init__(self, name: str, schedules):
        self.name = name
        self._schedules = list(schedules)
        if not self._schedules:
            raise InvalidConfigError("need at least one schedule")

    @classmethod
    def from_values(cls, name: str, values_per_slot, rng: np.random.Generator,
                    source: str = "predicted") -> "PerSlotPolicy":
        """Rank each slot's 4-vector and build its schedule; ties use rng."""
        values_per_slot = np.atleast_2d(np.asarray(values_per_slot, dtype=np.float64))
        scheds = [build_schedule(rank_sectors(v, rng, source=source))
                  for v in values_per_slot]
        return cls(name, scheds)

    def schedule_for_slot(self, slot_idx: int) -> SweepSchedule:
        if slot_idx >= len(self._schedules):
            raise InvalidConfigError(
                f"no schedule for slot {slot_idx} (have {len(self._schedules)})")
        return self._schedules[slot_idx]


@dataclass
class SimReport:
    policy: str
    seed: int
    sectors: np.ndarray     # int sector index per UE
    arrival_us: np.ndarray
    delay_us: np.ndarray

    @property
    def n_ues(self) -> int:
        return self.delay_us.shape[0]

    @property
    def mean_us(self) -> float:
        return float(np.mean(self.delay_us)) if self.n_ues else float("nan")

    @property
    def median_us(self) -> float:
        return float(np.median(self.delay_us)) if self.n_ues else float("nan")

    @property
    def p95_us(self) -> float:
        return float(np.percentile(self.delay_us, 95)) if self.n_ues else float("nan")

    def mean_by_sector(self) -> dict:
        out = {}
        for s, label in enumerate(SECTOR_LABELS):
            mask = self.sectors == s
            out[label] = float(self.delay_us[mask].mean()) if mask.any() else float("nan")
        return out


def _draw_arrivals(cfg: SimConfig, rng: np.random.Generator):
    """Poisson arrivals per (slot, sector), then one stream sorted by time."""
    rates = cfg.arrival_rates_per_s
    if rates.shape[0] == 1:
        rates = np.repeat(rates, cfg.n_slots, axis=0)
    elif rates.shape[0] < cfg.n_slots:
        raise InvalidConfigError(
            f"{rates.shape[0]} rate rows cannot cover {cfg.n_slots} slots")

    times, sectors = [], []
    for k in range(cfg.n_slots):
        start = k * cfg.slot_us
        dur_us = min(cfg.horizon_us, start + cfg.slot_us) - start
        for s in range(N_SECTORS):
            n = rng.poisson(rates[k, s] * dur_us / 1e6)
            if n:
                times.append(rng.uniform(start, start + dur_us, size=n))
                sectors.append(np.full(n, s, dtype=np.int64))

    if not times:
        return np.empty(0), np.empty(0, dtype=np.int64)
    times = np.concatenate(times)
    sectors = np.concatenate(sectors)
    order = np.argsort(times, kind="stable")
    return times[order], sectors[order]


def _offsets_per_slot(cfg: SimConfig, policy) -> list:
    """For each 10-minute slot: per-sector sorted slot-start offsets (lists)."""
    table = []
    for k in range(cfg.n_slots):
        sched = policy.schedule_for_slot(k)
        per_sector = [list(sched.sector_offsets_us(s)) for s in range(N_SECTORS)]
        if any(not offs for offs in per_sector):
            raise InvalidConfigError(
                f"slot {k}: schedule leaves a sector without any SSB")
        table.append(per_sector)
    return table


def simulate(cfg: SimConfig, policy) -> SimReport:
    """Run one (config, policy) pair; deterministic given cfg.seed.

    The substream split keeps arrivals and detection draws identical across
    policies under the same seed. Bursts start every burst_period_us from
    time 0; a UE arriving near the horizon is still followed until detection
    under the final slot's schedule.
    """
    arrival_seq, detect_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    arrivals, sectors = _draw_arrivals(cfg, np.random.default_rng(arrival_seq))
    offsets_table = _offsets_per_slot(cfg, policy)
    last_slot = cfg.n_slots - 1

    n = arrivals.shape[0]
    # one geometric draw per UE: which matching opportunity finally succeeds
    needed = np.random.default_rng(detect_seq).geometric(cfg.detect_prob, size=n)

    period = cfg.burst_period_us
    bursts_per_slot = cfg.slot_us / period
    delays = np.empty(n)
    for i in range(n):
        t = arrivals[i]
        s = int(sectors[i])
        k = int(needed[i])
        b = int(t // period)
        while True:
            slot_idx = min(int(b / bursts_per_slot), last_slot)
            offs = offsets_table[slot_idx][s]
            burst_start = b * period
            phase = t - burst_start
            lo = bisect_left(offs, phase) if phase > 0 else 0
            avail = len(offs) - lo
            if k <= avail:
                delays[i] = burst_start + offs[lo + k - 1] - t
                break
            k -= avail
            b += 1

    return SimReport(policy=policy.name, seed=cfg.seed, sectors=sectors,
                     arrival_us=arrivals, delay_us=delays)


def expected_delay_static(schedule: SweepSchedule, sector_shares,
                          burst_period_us: float = BURST_PERIOD_US) -> float:
    """Closed-form mean delay for a fixed repeating schedule, detect_prob 1.

    The arrival phase is uniform over one burst period; within each sector
    the wait to the next matching slot start integrates piecewise to
    gap^2 / 2 terms. Shares weight the per-sector means.
    """
    shares = np.asarray(sector_shares, dtype=np.float64)
    if shares.shape != (N_SECTORS,) or not np.all(np.isfinite(shares)):
        raise BadSharesError(f"need {N_SECTORS} finite shares, got {sector_shares}")
    if np.any(shares < 0) or abs(shares.sum() - 1.0) > 1e-9:
        raise BadSharesError(f"shares must be non-negative and sum to 1, got {shares}")

    p = burst_period_us
    total = 0.0
    for s in range(N_SECTORS):
        if shares[s] == 0:
            continue
        offs = schedule.sector_offsets_us(s)
        if offs.size == 0:
            raise InvalidConfigError(
                f"sector {SECTOR_LABELS[s]} has positive share but no SSB slot")
        first, last = offs[0], offs[-1]
        acc = first ** 2 / 2.0
        acc += float(np.sum(np.diff(offs) ** 2)) / 2.0
        acc += ((p + first - last) ** 2 - first ** 2) / 2.0
        total += shares[s] * acc / p
    return total


@dataclass
class ComparisonRow:
    policy: str
    n_seeds: int
    mean_us: float          # grand mean of per-seed mean delays
    mean_diff_us: float     # vs the first (baseline) policy, paired by seed
    n_lower: int
    n_equal: int
    n_higher: int
    ci_lo_us: float         # 95% normal CI on the paired mean difference
    ci_hi_us: float


@dataclass
class Comparison:
    baseline: str
    rows: list

    def csv_text(self) -> str:
        lines = ["policy,n_seeds,mean_us,mean_diff_us,n_lower,n_equal,n_higher,"
                 "ci_lo_us,ci_hi_us"]
        for r in self.rows:
            lines.append(f"{r.policy},{r.n_seeds},{r.mean_us:.3f},{r.mean_diff_us:.3f},"
                         f"{r.n_lower},{r.n_equal},{r.n_higher},"
                         f"{r.ci_lo_us:.3f},{r.ci_hi_us:.3f}")
        return "\n".join(lines) + "\n"


def compare(reports) -> Comparison:
    """Paired per-seed comparison; the first report's policy is the baseline.

    All policies must cover exactly the same seed set.
    """
    reports = list(reports)
    if not reports:
        raise MismatchedConfigsError("need at least one report to compare")

    by_policy: dict[str, dict[int, SimReport]] = {}
    for rep in reports:
        seeds = by_policy.setdefault(rep.policy, {})
        if rep.seed in seeds:
            raise MismatchedConfigsError(
                f"duplicate report for policy {rep.policy!r} seed {rep.seed}")
        seeds[rep.seed] = rep

    policies = list(by_policy)
    base_seeds = sorted(by_policy[policies[0]])
    for pol in policies[1:]:
        if sorted(by_policy[pol]) != base_seeds:
            raise MismatchedConfigsError(
                f"policy {pol!r} covers different seeds than {policies[0]!r}")

    base_means = np.array([by_policy[policies[0]][s].mean_us for s in base_seeds])
    rows = []
    for pol in policies:
        means = np.array([by_policy[pol][s].mean_us for s in base_seeds])
        diffs = means - base_means
        n = len(diffs)
        mean_diff = float(diffs.mean())
        if n > 1 and pol != policies[0]:
            half = 1.96 * float(diffs.std(ddof=1)) / np.sqrt(n)
        else:
            half = 0.0
        rows.append(ComparisonRow(
            policy=pol, n_seeds=n, mean_us=float(means.mean()),
            mean_diff_us=mean_diff,
            n_lower=int(np.sum(diffs < 0)), n_equal=int(np.sum(diffs == 0)),
            n_higher=int(np.sum(diffs > 0)),
            ci_lo_us=mean_diff - half, ci_hi_us=mean_diff + half))
    return Comparison(baseline=policies[0], rows=rows)


def report_csv(reports) -> str:
    """Per-UE rows across runs: policy,seed,ue_id,sector,arrival_us,delay_us."""
    lines = ["policy,seed,ue_id,sector,arrival_us,delay_us"]
    for rep in reports:
        for i in range(rep.n_ues):
            lines.append(f"{rep.policy},{rep.seed},{i},{SECTOR_LABELS[int(rep.sectors[i])]},"
                         f"{rep.arrival_us[i]:.3f},{rep.delay_us[i]:.3f}")
    return "\n".join(lines) + "\n"


def summary_csv(reports) -> str:
    """Pooled per-policy stats: policy,mean_us,median_us,p95_us,n."""
    pooled: dict[str, list] = {}
    for rep in reports:
        pooled.setdefault(rep.policy, []).append(rep.delay_us)
    lines = ["policy,mean_us,median_us,p95_us,n"]
    for pol, chunks in pooled.items():
        delays = np.concatenate(chunks) if chunks else np.empty(0)
        if delays.size:
            lines.append(f"{pol},{delays.mean():.3f},{np.median(delays):.3f},"
                         f"{np.percentile(delays, 95):.3f},{delays.size}")
        else:
            lines.append(f"{pol},nan,nan,nan,0")
    return "\n".join(lines) + "\n"
