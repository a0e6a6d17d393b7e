"""Scenario configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

# reference workload: 1,712,782 pseudonyms/day at tau_p = 60 s
LUST_DAILY_VEHICLE_SECONDS = 1_712_782 * 60

KB = 1024


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


@dataclass
class SimConfig:
    # area and infrastructure
    width: float = 2000.0
    height: float = 2000.0
    block: float = 200.0
    rsu_count: int = 4
    rsu_placement: str = "top-intersections"  # top-intersections | grid | explicit
    rsu_positions: list[tuple[float, float]] = field(default_factory=list)
    radio_range: float = 300.0
    cs_range_factor: float = 2.0
    loss_prob: float = 0.0

    # CRL distribution
    bandwidth: int = 25 * KB
    piece_tx_interval: float = 0.5
    request_interval: float = 0.5
    fingerprint_tx_interval: float = 5.0
    cam_rate: float = 10.0
    fp_rate: float = 1e-30
    carrier_fraction: float = 0.3
    bf_check_cost: float = 0.352e-3
    sig_verify_cost: float = 2.346e-3
    signature_scheme: str = "mock"

    # pseudonyms and revocation
    tau_p: int = 60
    gamma: int = 60
    gamma_crl: int = 3600
    revocation_rate: float = 0.01
    daily_vehicle_seconds: float = LUST_DAILY_VEHICLE_SECONDS
    optimized_disclosure: bool = True
    delta_event_times: list[float] = field(default_factory=list)
    delta_event_size: int = 5
    max_clock_error: float = 0.0

    # receiver protections
    rate_limit_factor: float = 2.0
    buffer_cap_bytes: int = 4 << 20

    # adversary: none | selfish | dos | delta_flood
    adversary: str = "none"
    adversary_fraction: float = 0.0
    bogus_interval: float = 0.5

    # mobility: synthetic | trace
    mobility: str = "synthetic"
    trace_file: str = ""
    n_vehicles: int = 300
    speed_min: float = 8.0
    speed_max: float = 14.0
    mean_trip: float = 692.81

    # run
    mode: str = "vehicle_centric"  # vehicle_centric | baseline
    duration: float = 900.0
    seed: int = 1

    def validate(self) -> "SimConfig":
        def need(cond: bool, key: str, msg: str):
            if not cond:
                raise ConfigError(msg, key)

        need(self.width > 0 and self.height > 0, "width", "area must be positive")
        need(0 < self.block <= min(self.width, self.height), "block", "block must fit the area")
        need(self.rsu_count >= 0, "rsu_count", "must be >= 0")
        need(self.rsu_placement in ("top-intersections", "grid", "explicit"), "rsu_placement",
             "must be top-intersections, grid or explicit")
        need(self.radio_range > 0, "radio_range", "must be positive")
        need(self.cs_range_factor >= 1, "cs_range_factor", "must be >= 1")
        need(0 <= self.loss_prob < 1, "loss_prob", "must be in [0, 1)")
        need(self.bandwidth > 0, "bandwidth", "must be positive")
        for key in ("piece_tx_interval", "request_interval", "fingerprint_tx_interval", "cam_rate"):
            need(getattr(self, key) > 0, key, "must be positive")
        need(0 < self.fp_rate < 1, "fp_rate", "must be in (0, 1)")
        need(0 <= self.carrier_fraction <= 1, "carrier_fraction", "must be in [0, 1]")
        need(self.tau_p > 0, "tau_p", "must be positive")
        need(self.gamma > 0 and self.gamma % self.tau_p == 0, "gamma", "must be a positive multiple of tau_p")
        need(self.gamma_crl > 0 and self.gamma_crl % self.tau_p == 0, "gamma_crl",
             "must be a positive multiple of tau_p")
        need(0 <= self.revocation_rate <= 1, "revocation_rate", "must be in [0, 1]")
        need(self.adversary in ("none", "selfish", "dos", "delta_flood"), "adversary",
             "must be none, selfish, dos or delta_flood")
        need(0 <= self.adversary_fraction <= 1, "adversary_fraction", "must be in [0, 1]")
        need(self.bogus_interval > 0, "bogus_interval", "must be positive")
        need(self.mobility in ("synthetic", "trace"), "mobility", "must be synthetic or trace")
        need(self.mobility != "trace" or bool(self.trace_file), "trace_file", "required for trace mobility")
        need(self.n_vehicles >= 0, "n_vehicles", "must be >= 0")
        need(0 < self.speed_min <= self.speed_max, "speed_min", "need 0 < speed_min <= speed_max")
        need(self.mean_trip > 0, "mean_trip", "must be positive")
        need(self.mode in ("vehicle_centric", "baseline"), "mode", "must be vehicle_centric or baseline")
        need(self.duration > 0, "duration", "must be positive")
        need(self.signature_scheme in ("mock", "ecdsa_p256"), "signature_scheme", "must be mock or ecdsa_p256")
        need(self.rsu_placement != "explicit" or len(self.rsu_positions) == self.rsu_count, "rsu_positions",
             "explicit placement needs rsu_count positions")
        return self

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes).validate()


_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}
REQUIRED_KEYS = ("mode", "seed", "duration")


def _coerce(key: str, raw: str):
    default = getattr(SimConfig(), key)
    try:
        if key == "rsu_positions":
            pts = []
            for chunk in raw.split(";"):
                chunk = chunk.strip()
                if chunk:
                    x, y = chunk.split(",")
                    pts.append((float(x), float(y)))
            return pts
        if key == "delta_event_times":
            return [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r}", key) from None


def parse_config(text: str, require: tuple[str, ...] = REQUIRED_KEYS) -> SimConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key", key)
        values[key] = _coerce(key, raw)
    for key in require:
        if key not in values:
            raise ConfigError("missing required key", key)
    return SimConfig(**values).validate()


def load_config(path: str | Path, require: tuple[str, ...] = REQUIRED_KEYS) -> SimConfig:
    return parse_config(Path(path).read_text(), require)


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if name == "rsu_positions":
            value = ";".join(f"{x},{y}" for x, y in value)
        elif name == "delta_event_times":
            value = ",".join(str(v) for v in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
