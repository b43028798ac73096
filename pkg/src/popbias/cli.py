"""Command-line front end.

Subcommands::

    popbias skeleton --users 2000 --items 1500 --interactions 50000 --seed 7 --out skel.csv
    popbias synth    --manifest run.json [--scenario 1,2] [--seed-synth N] [--out DIR]
    popbias analyze  ratings.csv [--fraction 0.2] [--out DIR]
    popbias run      --manifest run.json [--config "-1,false,1,auto" ...] [--out DIR]
    popbias report   results.csv [--out FILE]

Flags take precedence over manifest values. Exit codes: 0 success, 2 invalid
input or manifest, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Sequence

from . import __version__
from .data import (
    DataError,
    format_interactions,
    generate_longtail_skeleton,
    item_popularity,
    item_rating_means,
    load_interactions,
    load_ratings,
    profile_stats,
    rating_popularity_correlation,
    top_profile_users,
)
from .evaluation import (
    MetricsRow,
    format_results,
    format_samples,
    parse_results,
    run_experiment,
)
from .manifest import (
    ManifestError,
    RunManifest,
    load_manifest,
    parse_config_flag,
    parse_scenario_ids,
)
from .synth import synthesize_ratings

log = logging.getLogger("popbias")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _manifest_from_args(args, need=("synth", "folds", "tune")) -> RunManifest:
    overrides = {
        "seed_synth": getattr(args, "seed_synth", None),
        "seed_folds": getattr(args, "seed_folds", None),
        "seed_tune": getattr(args, "seed_tune", None),
        "output_dir": getattr(args, "out", None),
        "skeleton_path": getattr(args, "skeleton", None),
    }
    if getattr(args, "scenario", None):
        overrides["scenarios"] = parse_scenario_ids(args.scenario)
    if getattr(args, "config", None):
        overrides["configs"] = [parse_config_flag(c) for c in args.config]
    m = load_manifest(args.manifest, overrides)
    m.validate(need)
    return m


def _skeleton(m: RunManifest):
    if m.skeleton_path is not None:
        return load_interactions(m.skeleton_path)
    p = m.skeleton_params
    return generate_longtail_skeleton(
        int(p["num_users"]), int(p["num_items"]), int(p["num_interactions"]),
        float(p.get("exponent", 1.0)), int(p["seed"]),
    )


# --- subcommands ---------------------------------------------------------------


def cmd_skeleton(args) -> int:
    sk = generate_longtail_skeleton(args.users, args.items, args.interactions, args.exponent, args.seed)
    text = format_interactions(sk)
    out = Path(args.out)
    write_atomic(out, text)
    meta = {
        "num_users": args.users, "num_items": args.items, "num_interactions": args.interactions,
        "exponent": args.exponent, "seed": args.seed, "sha256": _sha256(text),
    }
    write_atomic(out.with_suffix(".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} ({len(sk)} interactions, {sk.n_users} users, {sk.n_items} items)")
    return EXIT_OK


def cmd_synth(args) -> int:
    m = _manifest_from_args(args, need=("synth",))
    digest = m.digest()
    sk = _skeleton(m)
    for spec in m.scenarios:
        ds = synthesize_ratings(sk, spec)
        text = format_interactions(ds)
        path = m.output_dir / f"scenario_{spec.scenario_id}.csv"
        write_atomic(path, text)
        sidecar = {
            "scenario": spec.scenario_id,
            "sigma": spec.sigma,
            "profile_fraction": spec.profile_fraction,
            "seed": spec.seed,
            "generator": "numpy PCG64",
            "skeleton": m.to_dict()["skeleton"],
            "sha256": _sha256(text),
            "manifest_hash": digest,
        }
        write_atomic(path.with_suffix(".json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path} sha256={sidecar['sha256'][:16]}")
    return EXIT_OK


def _na(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return repr(float(v))


def cmd_analyze(args) -> int:
    path = Path(args.ratings)
    if not path.is_file():
        raise CliError(f"{path} does not exist")
    ds = load_ratings(path)
    top = top_profile_users(profile_stats(ds), args.fraction)
    pop = item_popularity(ds)
    mean_all = item_rating_means(ds)
    mean_top = item_rating_means(ds, top)
    lines = ["item,popularity,avg_rating_all,avg_rating_top"]
    for k, item in enumerate(ds.item_ids):
        if item in pop.counts:
            lines.append(f"{item},{pop.counts[item]},{_na(mean_all[k])},{_na(mean_top[k])}")
    summary = {
        "ratings": str(path),
        "n_users": ds.n_users,
        "n_items": ds.n_items,
        "profile_fraction": args.fraction,
        "n_top_users": len(top),
        "correlation_all": rating_popularity_correlation(ds),
        "correlation_top": rating_popularity_correlation(ds, top),
    }
    out = Path(args.out) if args.out else path.parent
    write_atomic(out / f"{path.stem}_analysis.csv", "\n".join(lines) + "\n")
    write_atomic(out / f"{path.stem}_analysis_summary.json", json.dumps(summary, indent=2) + "\n")
    for key in ("correlation_all", "correlation_top"):
        v = summary[key]
        print(f"{key}: {'undefined' if v is None else f'{v:.4f}'}")
    return EXIT_OK


def render_summary(rows: Sequence[MetricsRow], manifest_hash: str = "") -> str:
    """Plain-text results table: ``**`` marks a scenario's highest bias value,
    ``*`` a value significantly below it."""
    best: dict[tuple[int, str], float] = {}
    for r in rows:
        for m in ("pop_corr", "arp", "pl"):
            v = getattr(r, m)
            if v is not None:
                best[r.scenario_id, m] = max(best.get((r.scenario_id, m), -math.inf), v)

    def cell(r: MetricsRow, m: str, fmt: str, sig: bool = False) -> str:
        v = getattr(r, m)
        if v is None:
            return "NA"
        s = format(v, fmt)
        if best.get((r.scenario_id, m)) == v and sum(x.scenario_id == r.scenario_id for x in rows) > 1:
            return f"**{s}**"
        return s + ("*" if sig else "")

    head = ["Scenario", "MinSim", "OverCommon", "MinNbrs", "k", "PopCorr", "ARP", "PL",
            "AggDiv", "RMSE", "NDCG@10", "Coverage"]
    table = [head]
    for r in rows:
        table.append([
            str(r.scenario_id), f"{r.min_sim:g}", str(r.over_common), str(r.min_nbrs), str(r.k),
            cell(r, "pop_corr", ".3f"),
            cell(r, "arp", ".4f", r.arp_sig_lower),
            cell(r, "pl", ".3f", r.pl_sig_lower),
            f"{r.agg_div:.3f}",
            "NA" if r.rmse is None else f"{r.rmse:.3f}",
            "NA" if r.ndcg_at_10 is None else f"{r.ndcg_at_10:.4f}",
            f"{r.coverage:.3f}",
        ])
    widths = [max(len(row[c]) for row in table) for c in range(len(head))]
    out = [f"manifest {manifest_hash}"] if manifest_hash else []
    for n, row in enumerate(table):
        out.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
        if n == 0:
            out.append("  ".join("-" * w for w in widths))
    out.append("")
    out.append("** highest value in the scenario; * significantly lower (Mann-Whitney U, p < 0.005)")
    return "\n".join(out) + "\n"


def cmd_run(args) -> int:
    m = _manifest_from_args(args)
    digest = m.digest()
    out = m.output_dir
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "run.log"
    handler = logging.FileHandler(log_path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logger = logging.getLogger("popbias")
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    logger.propagate = bool(args.verbose)
    try:
        log.info("manifest %s: %s", digest, json.dumps(m.to_dict(), sort_keys=True))
        start = time.perf_counter()
        sk = _skeleton(m)
        log.info("skeleton: %d interactions, %d users, %d items", len(sk), sk.n_users, sk.n_items)
        res = run_experiment(
            sk, m.scenarios, m.configs,
            n_folds=m.n_folds,
            seed_folds=m.seeds["folds"],
            seed_tune=m.seeds["tune"],
            k_grid=m.k_grid,
            on_error="record",
            progress=lambda msg: (log.info(msg), print(msg, flush=True)),
        )
        tuning = [
            {
                "scenario": r.scenario_id, "min_sim": r.min_sim, "over_common": r.over_common,
                "min_nbrs": r.min_nbrs, "k": r.k,
                "validation_rmse": None if t is None else {str(k): v for k, v in t.items()},
            }
            for r, t in zip(res.rows, res.tuning)
        ]
        write_atomic(out / "results.csv", format_results(res.rows, digest))
        write_atomic(out / "samples.csv", format_samples(res.rows, res.samples, digest))
        write_atomic(
            out / "tuning.json",
            json.dumps({"manifest_hash": digest, "cells": tuning}, indent=2) + "\n",
        )
        summary = render_summary(res.rows, digest)
        write_atomic(out / "summary.txt", summary)
        print(summary, end="")
        log.info("finished %d cells in %.1fs", len(res.rows), time.perf_counter() - start)
        for sid, gc, err in res.failures:
            log.error("FAILED scenario %d %s: %s", sid, gc.label(), err)
            print(f"FAILED scenario {sid} {gc.label()}: {err}", file=sys.stderr)
        return EXIT_RUNTIME if res.failures else EXIT_OK
    finally:
        logger.removeHandler(handler)
        logger.propagate = True
        handler.close()


def cmd_report(args) -> int:
    path = Path(args.results)
    if not path.is_file():
        raise CliError(f"{path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        rows = parse_results(text)
    except (KeyError, ValueError) as exc:
        raise CliError(f"{path} is not a results table: {exc}") from None
    first = text.splitlines()[1].rsplit(",", 1)[-1] if len(text.splitlines()) > 1 else ""
    summary = render_summary(rows, first)
    if args.out:
        write_atomic(Path(args.out), summary)
    print(summary, end="")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popbias", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("skeleton", help="generate a long-tail interaction skeleton")
    s.add_argument("--users", type=int, default=2000)
    s.add_argument("--items", type=int, default=1500)
    s.add_argument("--interactions", type=int, default=50000)
    s.add_argument("--exponent", type=float, default=1.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="output CSV path")
    s.set_defaults(func=cmd_skeleton)

    def manifest_flags(sp, seeds):
        sp.add_argument("--manifest", help="JSON run manifest")
        sp.add_argument("--skeleton", help="interaction CSV (overrides the manifest skeleton)")
        sp.add_argument("--scenario", help="comma-separated scenario ids, e.g. 1,2,3")
        for name in seeds:
            sp.add_argument(f"--seed-{name}", type=int, dest=f"seed_{name}")
        sp.add_argument("--out", help="output directory")

    s = sub.add_parser("synth", help="write one synthetic rating file per scenario")
    manifest_flags(s, ("synth",))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("analyze", help="item rating vs popularity data for a rating file")
    s.add_argument("ratings")
    s.add_argument("--fraction", type=float, default=0.2, help="share of largest profiles")
    s.add_argument("--out", help="output directory (default: next to the input)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("run", help="run the scenario x configuration grid")
    manifest_flags(s, ("synth", "folds", "tune"))
    s.add_argument(
        "--config", action="append",
        help='"min_sim,over_common,min_nbrs,k" (k may be "auto"); repeatable',
    )
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="re-render the summary table from results.csv")
    s.add_argument("results")
    s.add_argument("--out", help="also write the table to this file")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, ManifestError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "code", EXIT_INVALID)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if args.command in ("skeleton", "analyze") else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
