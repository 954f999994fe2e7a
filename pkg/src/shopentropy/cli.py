"""Command-line interface: generate -> ingest-check -> analyze -> simulate -> overlap / stability.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Settings resolve as command-line flag > ``--config`` file > built-in default.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path

from . import __version__
from .entropy import entropy_distribution, histograms_to_csv, reports_to_json
from .errors import ConfigError, SchemaMismatch, ShopEntropyError, ValidationError
from .experiments import (
    SimulationConfig,
    bundling_score,
    cohort_summary,
    cohort_summary_csvs,
    overlap_monte_carlo,
    overlap_report,
    run_entropy_simulation,
    top_merchant_profile,
    window_stability,
)
from .ingest import Dataset, load_dataset, segment_cohorts
from .model import INCOME_COHORTS, Window
from .structure import fit_zipf, population_graph, predictable_quintile, rank_curve
from .synthgen import PRESETS, PopulationSpec, write_population

log = logging.getLogger("shopentropy")

MEASURES = ("entropy", "zipf", "graph", "bundle", "cohorts")

DEFAULTS = {
    "seed": 0,
    "threads": os.cpu_count() or 1,
    "timezone": "UTC",
    "strict": False,
    "measures": "entropy",
    "bin_width": 0.25,
    "level": "mcc",
    "quintile": "all",
    "rank_range": None,
    "n_boot": 1000,
    "mode": "shuffle_day",
    "runs": 10_000,
    "sample": 2_000,
    "window_start": None,
    "window_end": None,
    "exclude_mcc": "",
    "dedup_same_day": False,
    "samples": 0,
    "count": None,
}

_BOOL_KEYS = {"strict", "dedup_same_day"}
_INT_KEYS = {"seed", "threads", "n_boot", "runs", "sample", "samples", "count"}
_FLOAT_KEYS = {"bin_width"}


class UsageError(Exception):
    pass


def read_config(path: str | None) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment; dashes in keys act as underscores."""
    if not path:
        return {}
    out = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    try:
        if key in _BOOL_KEYS:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise UsageError(f"config value for {key!r} is invalid: {value!r}") from None
    return value


def resolve(args: argparse.Namespace) -> dict:
    config = read_config(getattr(args, "config", None))
    unknown = sorted(set(config) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    settings = {}
    args.defaulted = set()
    keys = {k for k in vars(args) if k not in ("func", "config", "command", "defaulted")}
    for key in sorted(keys):
        cli = getattr(args, key, None)
        if cli is not None:
            settings[key] = cli
        elif key in config:
            settings[key] = _coerce(key, config[key])
        else:
            settings[key] = DEFAULTS.get(key)
            args.defaulted.add(key)
    return settings


def _digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, settings: dict, inputs: list[str], outputs: list[str]) -> None:
    manifest = {
        "toolkit": "shopentropy",
        "version": __version__,
        "command": command,
        "settings": {k: v for k, v in sorted(settings.items()) if k != "threads"},
        "inputs": [{"path": str(p), "sha256": _digest(p)} for p in inputs],
        "outputs": [{"path": o, "sha256": _digest(out_dir / o)} for o in sorted(outputs)],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _window(settings: dict) -> Window | None:
    start, end = settings.get("window_start"), settings.get("window_end")
    if start is None and end is None:
        return None
    if start is None or end is None:
        raise UsageError("--window-start and --window-end must be given together")
    try:
        return Window(date.fromisoformat(start), date.fromisoformat(end))
    except ValueError as exc:
        raise UsageError(f"invalid window: {exc}") from None


def _load(path: str, settings: dict, out_dir: Path | None = None) -> Dataset:
    if not Path(path).exists():
        raise UsageError(f"input file not found: {path}")
    exclude = [m for m in str(settings.get("exclude_mcc") or "").split(",") if m]
    ds, parsed = load_dataset(
        path,
        _window(settings),
        strict=bool(settings["strict"]),
        tz=settings["timezone"],
        exclude_mcc=exclude,
        dedup_same_day=bool(settings["dedup_same_day"]),
    )
    if parsed.errors:
        print(f"warning: skipped {len(parsed.errors)} invalid rows", file=sys.stderr)
        if out_dir is not None:
            (out_dir / "errors.jsonl").write_text(parsed.error_report(), encoding="utf-8")
    return ds


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args, settings) -> int:
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; valid: {', '.join(sorted(PRESETS))}")
        kwargs = {"count": settings["count"]} if settings.get("count") else {}
        spec = PRESETS[args.preset](**kwargs)
        inputs = []
    elif args.spec:
        spec = PopulationSpec.load(args.spec)
        inputs = [args.spec]
    else:
        raise UsageError("generate needs a spec file or --preset")
    if "seed" not in args.defaulted:
        spec = PopulationSpec(spec.cohorts, spec.window, settings["seed"], spec.tz)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as handle:
        n_rows = write_population(spec, handle)
    (out.parent / (out.name + ".spec.json")).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    settings = dict(settings, spec=spec.to_dict())
    write_manifest(out.parent, "generate", settings, inputs, [out.name, out.name + ".spec.json"])
    print(f"agents={spec.n_agents} rows={n_rows} window={spec.window.start}..{spec.window.end} out={out}")
    return 0


def cmd_ingest_check(args, settings) -> int:
    out_dir = _out_dir(args.out) if args.out else None
    ds = _load(args.input, settings, out_dir)
    n_events = sum(s.n_events for s in ds.sequences.values())
    print(f"accounts={len(ds)} events={n_events} window={ds.window.start}..{ds.window.end}")
    return 0


def _parse_rank_range(text: str | None) -> tuple[int, int]:
    if not text:
        raise UsageError("zipf needs an explicit --rank-range LO,HI")
    try:
        lo, hi = (int(x) for x in str(text).split(","))
    except ValueError:
        raise UsageError(f"--rank-range must look like 1,3; got {text!r}") from None
    return lo, hi


def cmd_analyze(args, settings) -> int:
    measures = [m.strip() for m in str(settings["measures"]).split(",") if m.strip()]
    unknown = [m for m in measures if m not in MEASURES]
    if unknown or not measures:
        raise UsageError(f"unknown measure(s) {', '.join(unknown) or '(none)'}; valid: {', '.join(MEASURES)}")
    rank_range = _parse_rank_range(settings["rank_range"]) if "zipf" in measures else None
    if settings["quintile"] not in ("all", "top", "bottom"):
        raise UsageError("--quintile must be all, top or bottom")
    out = _out_dir(args.out)
    ds = _load(args.input, settings, out)
    seqs = [ds.sequences[a] for a in ds.accounts]
    written = []

    def emit(name: str, text: str) -> None:
        (out / name).write_text(text, encoding="utf-8")
        written.append(name)

    if "entropy" in measures:
        dist = entropy_distribution(seqs, settings["bin_width"], threads=settings["threads"])
        emit("entropy_reports.json", reports_to_json(dist.reports))
        emit("entropy_histograms.csv", histograms_to_csv(dist.histograms.values()))
        emit("entropy_too_few_events.json", json.dumps(dist.too_few_events, indent=2) + "\n")
    if "zipf" in measures:
        curve = rank_curve(seqs)
        fit = fit_zipf(curve, rank_range, n_boot=settings["n_boot"], seed=settings["seed"])
        emit("rank_curve.csv", curve.to_csv())
        emit("zipf_fit.json", fit.to_json())
    if "graph" in measures:
        chosen = seqs
        if settings["quintile"] != "all":
            keep = predictable_quintile(seqs, settings["quintile"])
            chosen = [s for s in seqs if s.account_id in keep]
        graph = population_graph(chosen, level=settings["level"])
        emit("graph.dot", graph.to_dot())
        emit("graph.json", graph.to_json())
        emit("graph_out_degree.json", json.dumps(graph.out_degrees(), indent=2) + "\n")
    if "bundle" in measures:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["account_id", "variance", "mean_daily", "n_days"])
        for s in seqs:
            b = bundling_score(s)
            w.writerow([b.account_id, repr(b.variance), repr(b.mean_daily), b.n_days])
        emit("bundling.csv", buf.getvalue())
    if "cohorts" in measures:
        groups = segment_cohorts(ds, INCOME_COHORTS)
        non_empty = {k: v for k, v in groups.items() if v}
        summaries = cohort_summary(ds, non_empty)
        for name, text in cohort_summary_csvs(summaries).items():
            emit(name, text)
        profile = {k: top_merchant_profile(ds, v) for k, v in non_empty.items()}
        emit("cohort_membership.json", json.dumps({k: sorted(v) for k, v in groups.items()}, indent=2) + "\n")
        emit("top_merchant_profile.json", json.dumps(profile, indent=2) + "\n")
    write_manifest(out, "analyze", settings, [args.input], written)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_simulate(args, settings) -> int:
    try:
        config = SimulationConfig(
            runs=settings["runs"], sample_size=settings["sample"], seed=settings["seed"],
            mode=settings["mode"], bin_width=settings["bin_width"],
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    ds = _load(args.input, settings, out)
    result = run_entropy_simulation(ds, config, threads=settings["threads"])
    (out / "simulation.json").write_text(result.to_json(), encoding="utf-8")
    write_manifest(out, "simulate", settings, [args.input], ["simulation.json"])
    d = result.deltas()
    print(f"accounts={len(d)} mean_baseline={result.baseline().mean():.4f} "
          f"mean_transformed={result.transformed().mean():.4f} mean_delta={d.mean():+.4f}")
    return 0


def _read_group(path: str) -> set[str]:
    if not Path(path).exists():
        raise UsageError(f"group file not found: {path}")
    with open(path, encoding="utf-8") as handle:
        return {line.strip() for line in handle if line.strip()}


def cmd_overlap(args, settings) -> int:
    out = _out_dir(args.out)
    ds = _load(args.input, settings, out)
    inputs = [args.input]
    if args.auto_quintiles:
        seqs = [ds.sequences[a] for a in ds.accounts]
        a = predictable_quintile(seqs, "top")
        b = predictable_quintile(seqs, "bottom")
    else:
        if not (args.group_a and args.group_b):
            raise UsageError("overlap needs --group-a and --group-b, or --auto-quintiles")
        a, b = _read_group(args.group_a), _read_group(args.group_b)
        inputs += [args.group_a, args.group_b]
        missing = sorted((a | b) - set(ds.sequences))
        if missing:
            raise UsageError(f"unknown account ids in groups: {', '.join(missing[:5])}")
    if not a or not b:
        raise UsageError("overlap groups must be non-empty")
    report = overlap_report(ds, a, b)
    report["groups"] = {"top": sorted(a), "bottom": sorted(b)}
    if settings["samples"]:
        mc_a = overlap_monte_carlo(ds, a, samples=settings["samples"], seed=settings["seed"])
        mc_x = overlap_monte_carlo(ds, a, b, samples=settings["samples"], seed=settings["seed"])
        mc_b = overlap_monte_carlo(ds, b, samples=settings["samples"], seed=settings["seed"])
        report["monte_carlo"] = {
            "samples": settings["samples"],
            "within_top": mc_a.within_group_prob,
            "within_bottom": mc_b.within_group_prob,
            "cross": mc_x.cross_group_prob,
        }
    (out / "overlap.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, "overlap", settings, inputs, ["overlap.json"])
    print(" ".join(f"{k}={report[k]:.4f}" for k in ("within_top", "within_bottom", "pooled_within", "cross")))
    return 0


def cmd_stability(args, settings) -> int:
    out = _out_dir(args.out)
    s_a = dict(settings, window_start=None, window_end=None)
    ds_a = _load(args.input_a, s_a)
    ds_b = _load(args.input_b, s_a)
    result = window_stability(ds_a, ds_b)
    (out / "stability.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
    write_manifest(out, "stability", settings, [args.input_a, args.input_b], ["stability.json"])
    print(f"shared={len(result.accounts)} rank_corr_unc={result.rank_corr_unc:.4f} "
          f"rank_corr_true={result.rank_corr_true:.4f}")
    return 0


def _global_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="flat key=value config file (CLI flags take precedence)")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--threads", type=int, default=None, help="parallelism cap (default: all cores)")
    g.add_argument("--timezone", default=None, help="timezone for day/week boundaries (default UTC)")
    g.add_argument("--strict", action="store_true", default=None, help="abort on the first invalid row")
    g.add_argument("--window-start", default=None)
    g.add_argument("--window-end", default=None)
    g.add_argument("--exclude-mcc", default=None, help="comma-separated MCCs to drop from visits")
    g.add_argument("--dedup-same-day", action="store_true", default=None,
                   help="count repeat same-day purchases at one merchant as one visit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shopentropy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"shopentropy {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic population as transaction CSV")
    p.add_argument("spec", nargs="?", help="population spec JSON")
    p.add_argument("--preset", help=f"built-in spec: {', '.join(sorted(PRESETS))}")
    p.add_argument("--count", type=int, default=None, help="agents per cohort for --preset")
    p.add_argument("--out", required=True)
    _global_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest-check", help="validate a transaction file")
    p.add_argument("input")
    p.add_argument("--out", help="directory for errors.jsonl")
    _global_flags(p)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("analyze", help="entropy, Zipf, graph, bundling and cohort outputs")
    p.add_argument("input")
    p.add_argument("--measures", default=None, help=f"comma list of {', '.join(MEASURES)}")
    p.add_argument("--out", required=True)
    p.add_argument("--bin-width", type=float, default=None)
    p.add_argument("--level", choices=("merchant", "mcc"), default=None)
    p.add_argument("--quintile", default=None, help="all, top or bottom (graph account filter)")
    p.add_argument("--rank-range", default=None, help="inclusive ranks for the Zipf fit, e.g. 1,3")
    p.add_argument("--n-boot", type=int, default=None)
    _global_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="shuffle/sort Monte Carlo on true entropy")
    p.add_argument("input")
    p.add_argument("--mode", default=None, help="shuffle_day or sort_week")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--bin-width", type=float, default=None)
    p.add_argument("--out", required=True)
    _global_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("overlap", help="same-MCC coincidence within and across groups")
    p.add_argument("input")
    p.add_argument("--group-a")
    p.add_argument("--group-b")
    p.add_argument("--auto-quintiles", action="store_true")
    p.add_argument("--samples", type=int, default=None, help="also run a Monte Carlo check with N samples")
    p.add_argument("--out", required=True)
    _global_flags(p)
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("stability", help="compare entropies of shared accounts across two windows")
    p.add_argument("input_a")
    p.add_argument("input_b")
    p.add_argument("--out", required=True)
    _global_flags(p)
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = resolve(args)
        return args.func(args, settings)
    except (UsageError, ConfigError, ValidationError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShopEntropyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
