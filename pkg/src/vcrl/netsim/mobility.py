"""Vehicle mobility: a synthetic Manhattan grid and CSV trace replay."""

from __future__ import annotations

import csv
import itertools
import math
import random
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRACE_HEADER = ["vehicle_id", "time_s", "x_m", "y_m"]


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass
class StepResult:
    ids: list[int]
    xy: np.ndarray  # shape (len(ids), 2)
    started: list[tuple[int, float]]
    ended: list[tuple[int, float]]


_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class _Car:
    vid: int
    x: float
    y: float
    dx: int
    dy: int
    speed: float
    trip_end: float


class ManhattanMobility:
    """Constant-population grid traffic.

    Vehicles drive along streets spaced ``block`` metres apart, pick a random
    direction at each intersection (no U-turns unless at the edge) and leave
    after an exponentially distributed trip. Every departure is replaced by a
    fresh vehicle at a random intersection.
    """

    def __init__(self, width: float, height: float, block: float, n_vehicles: int,
                 speed_min: float, speed_max: float, mean_trip: float, rng: random.Random):
        self.width, self.height, self.block = width, height, block
        self.nx = int(width // block)
        self.ny = int(height // block)
        self.n_vehicles = n_vehicles
        self.speed = (speed_min, speed_max)
        self.mean_trip = mean_trip
        self.rng = rng
        self._ids = itertools.count()
        self.cars: dict[int, _Car] = {}
        self.visits: Counter = Counter()
        self._initialised = False

    def intersections(self) -> list[tuple[float, float]]:
        return [(i * self.block, j * self.block) for i in range(self.nx + 1) for j in range(self.ny + 1)]

    def _spawn(self, t: float) -> _Car:
        r = self.rng
        x = r.randint(0, self.nx) * self.block
        y = r.randint(0, self.ny) * self.block
        dx, dy = self._pick_dir(x, y, None)
        car = _Car(next(self._ids), x, y, dx, dy, r.uniform(*self.speed), t + r.expovariate(1 / self.mean_trip))
        self.cars[car.vid] = car
        return car

    def _pick_dir(self, x: float, y: float, prev: tuple[int, int] | None) -> tuple[int, int]:
        options = []
        for dx, dy in _DIRS:
            nx, ny = x + dx * self.block, y + dy * self.block
            if 0 <= nx <= self.nx * self.block and 0 <= ny <= self.ny * self.block:
                options.append((dx, dy))
        if prev is not None and len(options) > 1:
            back = (-prev[0], -prev[1])
            options = [o for o in options if o != back] or options
        return self.rng.choice(options)

    def _advance(self, car: _Car, dt: float) -> None:
        remaining = car.speed * dt
        b = self.block
        while remaining > 1e-9:
            # distance to the next intersection along the heading
            pos = car.x if car.dx else car.y
            d = car.dx or car.dy
            nxt = (math.floor(pos / b + 1e-9) + 1) * b if d > 0 else (math.ceil(pos / b - 1e-9) - 1) * b
            gap = abs(nxt - pos)
            if remaining < gap:
                if car.dx:
                    car.x += d * remaining
                else:
                    car.y += d * remaining
                return
            remaining -= gap
            if car.dx:
                car.x = nxt
            else:
                car.y = nxt
            self.visits[(round(car.x), round(car.y))] += 1
            car.dx, car.dy = self._pick_dir(car.x, car.y, (car.dx, car.dy))

    def step(self, t: float, dt: float) -> StepResult:
        """Advance to time ``t`` (the previous step was at ``t - dt``)."""
        started, ended = [], []
        if not self._initialised:
            self._initialised = True
            for _ in range(self.n_vehicles):
                started.append((self._spawn(t).vid, t))
        else:
            for car in list(self.cars.values()):
                self._advance(car, dt)
            for car in [c for c in self.cars.values() if c.trip_end <= t]:
                ended.append((car.vid, car.trip_end))
                del self.cars[car.vid]
                new = self._spawn(car.trip_end)
                started.append((new.vid, car.trip_end))
        ids = list(self.cars)
        xy = np.array([(self.cars[i].x, self.cars[i].y) for i in ids], dtype=float).reshape(-1, 2)
        return StepResult(ids, xy, started, ended)

    def dry_run(self, duration: float, dt: float = 1.0) -> Counter:
        """Intersection visit counts over ``duration`` seconds (consumes this instance)."""
        t = 0.0
        self.step(0.0, dt)
        while t < duration:
            t += dt
            self.step(t, dt)
        return self.visits


# --------------------------------------------------------------------------
# traces


def load_trace(path: str | Path) -> dict[int, list[tuple[float, float, float]]]:
    """Read ``vehicle_id,time_s,x_m,y_m`` rows into per-vehicle sorted samples."""
    out: dict[int, list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACE_HEADER:
            raise TraceFormatError(f"expected header {','.join(TRACE_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise TraceFormatError(f"expected 4 fields, got {len(row)}", lineno)
            try:
                vid = int(row[0])
                t, x, y = float(row[1]), float(row[2]), float(row[3])
            except ValueError as exc:
                raise TraceFormatError(str(exc), lineno) from None
            if not all(math.isfinite(v) for v in (t, x, y)) or t < 0:
                raise TraceFormatError("non-finite or negative value", lineno)
            out.setdefault(vid, []).append((t, x, y))
    for samples in out.values():
        samples.sort()
    return out


class TraceMobility:
    """Replays a trace; a vehicle exists from its first to its last sample."""

    def __init__(self, samples: dict[int, list[tuple[float, float, float]]]):
        self.samples = samples
        self.first = {v: s[0][0] for v, s in samples.items()}
        self.last = {v: s[-1][0] for v, s in samples.items()}
        self._times = {v: np.array([p[0] for p in s]) for v, s in samples.items()}
        self._xs = {v: np.array([p[1] for p in s]) for v, s in samples.items()}
        self._ys = {v: np.array([p[2] for p in s]) for v, s in samples.items()}
        self.active: set[int] = set()
        self.seen: set[int] = set()

    @classmethod
    def from_csv(cls, path: str | Path) -> "TraceMobility":
        return cls(load_trace(path))

    def position(self, vid: int, t: float) -> tuple[float, float]:
        ts = self._times[vid]
        return float(np.interp(t, ts, self._xs[vid])), float(np.interp(t, ts, self._ys[vid]))

    def step(self, t: float, dt: float) -> StepResult:
        started, ended = [], []
        for vid in sorted(self.active):
            if self.last[vid] < t:
                ended.append((vid, self.last[vid]))
                self.active.discard(vid)
        for vid in sorted(self.samples):
            if vid not in self.seen and self.first[vid] <= t <= self.last[vid]:
                self.seen.add(vid)
                self.active.add(vid)
                started.append((vid, self.first[vid]))
        ids = sorted(self.active)
        xy = np.array([self.position(v, t) for v in ids], dtype=float).reshape(-1, 2)
        return StepResult(ids, xy, started, ended)

    def dry_run(self, duration: float, dt: float = 1.0, block: float = 1.0) -> Counter:
        counts: Counter = Counter()
        t = 0.0
        while t <= duration:
            for vid in self.samples:
                if self.first[vid] <= t <= self.last[vid]:
                    x, y = self.position(vid, t)
                    counts[(round(x / block) * block, round(y / block) * block)] += 1
            t += dt
        return counts


# --------------------------------------------------------------------------
# RSU placement


def place_rsus(visits: Counter, count: int, min_spacing: float) -> list[tuple[float, float]]:
    """Greedy: most-visited locations first, skipping any closer than ``min_spacing``
    to an already chosen one. Ties break on coordinates so the result is stable."""
    chosen: list[tuple[float, float]] = []
    for (x, y), _ in sorted(visits.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(chosen) == count:
            break
        if all(math.hypot(x - cx, y - cy) > min_spacing for cx, cy in chosen):
            chosen.append((float(x), float(y)))
    if len(chosen) < count:
        warnings.warn(f"only {len(chosen)} of {count} RSU sites satisfy the spacing constraint", stacklevel=2)
    return chosen


def grid_rsus(width: float, height: float, count: int) -> list[tuple[float, float]]:
    """Spread ``count`` RSUs over a near-square lattice."""
    if count <= 0:
        return []
    cols = math.ceil(math.sqrt(count))
    rows = math.ceil(count / cols)
    out = []
    for r in range(rows):
        for c in range(cols):
            if len(out) < count:
                out.append(((c + 0.5) * width / cols, (r + 0.5) * height / rows))
    return out
