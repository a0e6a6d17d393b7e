"""Per-vehicle acquisition records and their summaries."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

QUANTILES = (50, 90, 95, 99)
VEHICLE_COLUMNS = ["vehicle_id", "role", "trip_start", "trip_end", "start", "cognizant_at",
                   "delay_s", "outcome", "pieces_received", "forged_dropped", "fingerprint_at"]


@dataclass
class VehicleRecord:
    vehicle_id: int
    role: str = "honest"  # honest | selfish | attacker
    trip_start: float = 0.0
    trip_end: float | None = None
    start: float = 0.0  # max(trip start, CRL release)
    cognizant_at: float | None = None
    fingerprint_at: float | None = None
    observed_until: float | None = None  # end of the run for vehicles still driving
    pieces_received: int = 0
    forged_dropped: int = 0

    @property
    def delay(self) -> float | None:
        return None if self.cognizant_at is None else self.cognizant_at - self.start

    @property
    def outcome(self) -> str:
        """``cognizant``, ``failed`` (trip over first) or ``censored`` (still driving at the end)."""
        if self.cognizant_at is not None:
            return "cognizant"
        return "failed" if self.trip_end is not None else "censored"


@dataclass
class MetricsLog:
    records: dict[int, VehicleRecord] = field(default_factory=dict)
    cognizant_series: list[tuple[float, int, int]] = field(default_factory=list)  # (t, cognizant, present)
    counters: dict[str, float] = field(default_factory=dict)
    delta_validated: list[tuple[int, int, float]] = field(default_factory=list)  # (vehicle, interval, t)

    def bump(self, name: str, amount: float = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + amount

    def measured(self) -> list[VehicleRecord]:
        return [r for r in self.records.values() if r.role != "attacker"]

    def delays(self) -> np.ndarray:
        """Observed delays; failed trips count as +inf and censored ones are left out."""
        out = []
        for r in self.measured():
            if r.outcome == "cognizant":
                out.append(r.delay)
            elif r.outcome == "failed":
                out.append(math.inf)
        return np.array(sorted(out), dtype=float)

    def summary(self) -> dict:
        return summarize(self)


def delay_cdf(log: MetricsLog) -> tuple[np.ndarray, np.ndarray]:
    """Kaplan-Meier estimate of the acquisition-delay CDF.

    Cognizant vehicles are events at their delay. Failed trips never acquire,
    so they stay at risk for every finite delay. Censored vehicles (still
    driving at the end) leave the risk set after their observed time.
    Returns the event delays and F just after each; with no censoring this is
    the plain empirical CDF with failures at +inf.
    """
    obs = []
    for r in log.measured():
        if r.outcome == "cognizant":
            obs.append((r.delay, 0))
        elif r.outcome == "censored":
            end = r.observed_until if r.observed_until is not None else r.start
            obs.append((max(end - r.start, 0.0), 1))
        else:
            obs.append((math.inf, 0))
    obs.sort()
    at_risk = len(obs)
    surv = 1.0
    times, cdf = [], []
    i = 0
    while i < len(obs) and math.isfinite(obs[i][0]):
        t = obs[i][0]
        events = censored = 0
        while i < len(obs) and obs[i][0] == t:
            if obs[i][1]:
                censored += 1
            else:
                events += 1
            i += 1
        if events:
            surv *= 1 - events / at_risk
            times.append(t)
            cdf.append(1 - surv)
        at_risk -= events + censored
    return np.array(times, dtype=float), np.array(cdf, dtype=float)


def _quantile(times: np.ndarray, cdf: np.ndarray, q: float) -> float:
    """Smallest delay at which the CDF reaches ``q`` percent; +inf if never reached."""
    hit = np.nonzero(cdf >= q / 100 - 1e-12)[0]
    return float(times[hit[0]]) if len(hit) else math.inf


def summarize(log: MetricsLog, bins: int = 20) -> dict:
    records = log.measured()
    counts = {"cognizant": 0, "failed": 0, "censored": 0}
    for r in records:
        counts[r.outcome] += 1
    decided = counts["cognizant"] + counts["failed"]
    d = log.delays()
    finite = d[np.isfinite(d)]
    times, cdf = delay_cdf(log)
    hist_counts, edges = (np.histogram(finite, bins=bins) if len(finite) else (np.zeros(0, int), np.zeros(0)))
    return {
        "vehicles": len(records),
        "cognizant": counts["cognizant"],
        "failed": counts["failed"],
        "censored": counts["censored"],
        "cognizant_fraction": counts["cognizant"] / decided if decided else math.nan,
        "failure_ratio": counts["failed"] / decided if decided else math.nan,
        "mean_delay_s": float(finite.mean()) if len(finite) else math.nan,
        "quantiles_s": {f"p{q}": _quantile(times, cdf, q) for q in QUANTILES},
        "histogram": {"edges_s": [float(e) for e in edges], "counts": [int(c) for c in hist_counts]},
        "counters": dict(sorted(log.counters.items())),
    }


def _fmt(v) -> str:
    """Times always print with six decimals; ``None`` becomes an empty cell."""
    return "" if v is None else f"{float(v):.6f}"


def write_vehicle_csv(log: MetricsLog, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VEHICLE_COLUMNS)
        for vid in sorted(log.records):
            r = log.records[vid]
            w.writerow([r.vehicle_id, r.role, _fmt(r.trip_start), _fmt(r.trip_end), _fmt(r.start),
                        _fmt(r.cognizant_at), _fmt(r.delay), r.outcome, r.pieces_received,
                        r.forged_dropped, _fmt(r.fingerprint_at)])


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return round(obj, 9)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")


def read_vehicle_csv(path: str | Path, duration: float | None = None) -> MetricsLog:
    """Load a per-vehicle table; ``duration`` restores the censoring time of vehicles still driving."""
    log = MetricsLog()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            opt = lambda k: float(row[k]) if row[k] else None  # noqa: E731
            rec = VehicleRecord(int(row["vehicle_id"]), role=row["role"], trip_start=float(row["trip_start"]),
                                trip_end=opt("trip_end"), start=float(row["start"]),
                                cognizant_at=opt("cognizant_at"), fingerprint_at=opt("fingerprint_at"),
                                pieces_received=int(row["pieces_received"]),
                                forged_dropped=int(row["forged_dropped"]))
            if rec.outcome == "censored":
                rec.observed_until = duration
            log.records[rec.vehicle_id] = rec
    return log


def record_dict(r: VehicleRecord) -> dict:
    out = asdict(r)
    out["outcome"] = r.outcome
    return out
