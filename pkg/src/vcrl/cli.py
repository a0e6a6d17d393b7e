"""Command-line front end: ``simulate``, ``analyze`` and ``vectors``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import bloom
from .netsim.config import REQUIRED_KEYS, ConfigError, SimConfig, load_config
from .netsim.metrics import QUANTILES, write_summary_json, write_vehicle_csv

log = logging.getLogger("vcrl")

MODES = {"vehicle_centric": "vehicle_centric", "vc": "vehicle_centric", "baseline": "baseline"}
SUMMARY_COLUMNS = (["mode", "seed", "vehicles", "cognizant", "failed", "censored", "cognizant_fraction",
                    "failure_ratio", "mean_delay_s"] + [f"p{q}_s" for q in QUANTILES]
                   + ["pieces", "p95_ratio_vs_baseline"])


def parse_seeds(text: str) -> list[int]:
    """``"1,2,5-8"`` -> ``[1, 2, 5, 6, 7, 8]`` (sorted, deduplicated)."""
    seeds: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.update(range(int(lo), int(hi) + 1))
        else:
            seeds.add(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return sorted(seeds)


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return str(v)


# --------------------------------------------------------------------------
# simulate


def _run_one(cfg: SimConfig, out_dir: str, plots: bool) -> dict:
    """Run one (mode, seed) pair and write its files. Executes in a worker process."""
    from .netsim.engine import run_simulation

    result = run_simulation(cfg)
    stem = Path(out_dir) / f"{cfg.mode}_seed{cfg.seed}"
    write_vehicle_csv(result.metrics, f"{stem}_vehicles.csv")
    with open(f"{stem}_cognizant.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "cognizant", "present"])
        for t, c, n in result.metrics.cognizant_series:
            w.writerow([_fmt(float(t)), c, n])
    summary = result.summary()
    write_summary_json(summary, f"{stem}_summary.json")
    if plots:
        _plot(result.metrics, str(stem))
    return summary


def _plot(metrics, stem: str) -> None:
    """SVG delay CDF and cognizant-over-time charts. Never raises."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        import numpy as np

        d = metrics.delays()
        finite = d[np.isfinite(d)]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if len(d):
            ax.step(finite, np.arange(1, len(finite) + 1) / len(d), where="post")
        ax.set_xlabel("acquisition delay (s)")
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        fig.savefig(f"{stem}_cdf.svg", metadata={"Date": None})
        plt.close(fig)

        series = metrics.cognizant_series
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if series:
            t = [s[0] for s in series]
            ax.plot(t, [s[1] / s[2] if s[2] else 0 for s in series])
        ax.set_xlabel("time (s)")
        ax.set_ylabel("cognizant fraction of vehicles present")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        fig.savefig(f"{stem}_cognizant.svg", metadata={"Date": None})
        plt.close(fig)
    except Exception as exc:  # plots are a convenience, the CSV is the contract
        log.warning("plotting skipped for %s: %s", stem, exc)


def _summary_rows(summaries: list[dict]) -> list[dict]:
    base_p95 = {s["seed"]: s["quantiles_s"]["p95"] for s in summaries if s["mode"] == "baseline"}
    rows = []
    for s in sorted(summaries, key=lambda s: (s["seed"], s["mode"] != "baseline", s["mode"])):
        row = {k: s[k] for k in ("mode", "seed", "vehicles", "cognizant", "failed", "censored",
                                 "cognizant_fraction", "failure_ratio", "mean_delay_s", "pieces")}
        for q in QUANTILES:
            row[f"p{q}_s"] = s["quantiles_s"][f"p{q}"]
        if s["mode"] == "baseline":
            row["p95_ratio_vs_baseline"] = 1.0
        else:
            row["p95_ratio_vs_baseline"] = _ratio(s["quantiles_s"]["p95"], base_p95.get(s["seed"]))
        rows.append(row)
    return rows


def _ratio(value: float, reference: float | None) -> float:
    """``value / reference``; a finite value against an infinite reference gives 0."""
    if reference is None or math.isnan(value) or math.isnan(reference):
        return math.nan
    if math.isinf(reference):
        return 0.0 if math.isfinite(value) else math.nan
    if reference == 0:
        return math.nan
    return value / reference


def _threads() -> int:
    raw = os.environ.get("CRL_SIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CRL_SIM_THREADS must be an integer, got {raw!r}") from None


def cmd_simulate(args) -> int:
    try:
        if args.seeds is not None:
            seeds = parse_seeds(args.seeds)
        elif args.seed is not None:
            seeds = [args.seed]
        else:
            seeds = None
    except ValueError as exc:
        print(f"error: --seeds: {exc}", file=sys.stderr)
        return 2
    require = tuple(k for k in REQUIRED_KEYS
                    if not (k == "mode" and args.mode) and not (k == "seed" and seeds is not None))
    try:
        cfg = load_config(args.config, require)
        threads = _threads()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    modes = [cfg.mode] if not args.mode else (
        ["vehicle_centric", "baseline"] if args.mode == "both" else [MODES[args.mode]])
    seeds = seeds if seeds is not None else [cfg.seed]
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: output directory: {exc}", file=sys.stderr)
        return 2

    jobs = []
    for seed in seeds:
        for mode in modes:
            try:
                jobs.append(cfg.replace(mode=mode, seed=seed))
            except ConfigError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return 2
    summaries, failures = [], 0
    if threads == 1 or len(jobs) == 1:
        for job in jobs:
            log.info("running %s seed %d", job.mode, job.seed)
            try:
                summaries.append(_run_one(job, str(out), not args.no_plots))
            except ConfigError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return 2
            except Exception as exc:
                log.error("%s seed %d failed: %s", job.mode, job.seed, exc)
                failures += 1
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            futures = [(job, pool.submit(_run_one, job, str(out), not args.no_plots)) for job in jobs]
            for job, fut in futures:
                try:
                    summaries.append(fut.result())
                except ConfigError as exc:
                    print(f"config error: {exc}", file=sys.stderr)
                    return 2
                except Exception as exc:
                    log.error("%s seed %d failed: %s", job.mode, job.seed, exc)
                    failures += 1

    rows = _summary_rows(summaries)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    write_summary_json({"runs": rows}, out / "summary.json")
    _print_table(rows, ["mode", "seed", "cognizant_fraction", "failure_ratio", "p50_s", "p95_s",
                        "p95_ratio_vs_baseline"])
    return 1 if failures else 0


def _print_table(rows: list[dict], columns: list[str]) -> None:
    cells = [[_fmt(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    print("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    for row in cells:
        print("  ".join(v.rjust(w) for v, w in zip(row, widths)))


# --------------------------------------------------------------------------
# analyze


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def analyze_rows(kind: str, args) -> tuple[list[str], list[dict]]:
    if kind == "fp":
        cols = ["n", "m_bits", "k", "fp"]
        rows = []
        for m in (int(x) for x in _floats(args.bits)):
            for n in range(1, args.max_n + 1):
                k = args.k if args.k else bloom.optimal_k(m, n)
                rows.append({"n": n, "m_bits": m, "k": k, "fp": bloom.false_positive_prob(m, k, n)})
        return cols, rows
    if kind == "attack-cost":
        cols = ["p", "k", "hashrate", "seconds", "hours"]
        rows = []
        for p in _floats(args.p):
            k = args.k if args.k else bloom.bf_params(args.n, p)[1]
            for rate in _floats(args.hashrate):
                s = bloom.attack_time(p, k, rate)
                rows.append({"p": p, "k": k, "hashrate": rate, "seconds": s, "hours": s / 3600})
        return cols, rows
    if kind == "fingerprint-size":
        cols = ["n_pieces", "p", "m_bits", "k", "bf_bytes", "sha1_list_bytes"]
        rows = []
        for p in _floats(args.p):
            for n in range(1, args.max_n + 1):
                m, k = bloom.bf_params(n, p)
                rows.append({"n_pieces": n, "p": p, "m_bits": m, "k": k, "bf_bytes": (m + 7) // 8,
                             "sha1_list_bytes": bloom.concatenated_digest_size(n, 20)})
        return cols, rows
    if kind == "sync-period":
        cols = ["ppm", "max_error_s", "period_s", "period_h"]
        rows = []
        for ppm in _floats(args.ppm):
            for err in _floats(args.max_error):
                s = bloom.sync_period(ppm, err)
                rows.append({"ppm": ppm, "max_error_s": err, "period_s": s, "period_h": s / 3600})
        return cols, rows
    raise ValueError(kind)


def _afmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_analyze(args) -> int:
    try:
        cols, rows = analyze_rows(args.kind, args)
    except (ValueError, bloom.ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cells = [[_afmt(r[c]) for c in cols] for r in rows]
    widths = [max([len(c)] + [len(x[i]) for x in cells]) for i, c in enumerate(cols)]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
    for x in cells:
        print("  ".join(v.rjust(w) for v, w in zip(x, widths)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"analyze_{args.kind}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return 0


# --------------------------------------------------------------------------
# vectors


def cmd_vectors(args) -> int:
    from .vectors import golden_vectors

    data = golden_vectors(args.seed)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "vectors.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out / "vectors.json")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vcrl", description="Vehicle-centric CRL distribution tools.")
    ap.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run distribution scenarios over one or more seeds")
    sim.add_argument("--config", required=True, help="flat key = value scenario file")
    sim.add_argument("--mode", choices=["vehicle_centric", "vc", "baseline", "both"],
                     help="override the config's mode; 'both' runs the two schemes per seed")
    sim.add_argument("--seeds", help="seed list such as 1,2,5-8 (overrides the config's seed)")
    sim.add_argument("--seed", type=int, help="single seed (ignored when --seeds is given)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--no-plots", action="store_true", help="skip SVG charts")
    sim.set_defaults(func=cmd_simulate)

    an = sub.add_parser("analyze", help="analytical calculators for the Bloom fingerprint")
    an.add_argument("kind", choices=["fp", "attack-cost", "fingerprint-size", "sync-period"])
    an.add_argument("--n", type=int, default=10, help="pieces in the filter (attack-cost k derivation)")
    an.add_argument("--max-n", type=int, default=20, help="largest piece count in fp/fingerprint-size sweeps")
    an.add_argument("--bits", default="800", help="filter sizes in bits for the fp sweep")
    an.add_argument("--k", type=int, default=0, help="fixed hash count (0 = derive)")
    an.add_argument("--p", default="1e-20,1e-22,1e-23,1e-25", help="target false-positive rates")
    an.add_argument("--hashrate", default="1.6e18", help="attacker hashes per second")
    an.add_argument("--ppm", default="20", help="clock accuracy in ppm")
    an.add_argument("--max-error", default="1", help="tolerated clock error in seconds")
    an.add_argument("--out", help="also write analyze_<kind>.csv into this directory")
    an.add_argument("--seed", type=int, default=0, help="accepted for uniformity; results are closed-form")
    an.set_defaults(func=cmd_analyze)

    vec = sub.add_parser("vectors", help="write golden test vectors as hex JSON")
    vec.add_argument("--out", required=True, help="output directory")
    vec.add_argument("--seed", type=int, default=1)
    vec.set_defaults(func=cmd_vectors)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
