"""Command line front end: simulate, fit, diagnose, predict, bench.

Every command resolves its settings as defaults < JSON config file <
explicit command-line flags, echoes the resolved values into a
``manifest.json`` in the output directory, and derives all randomness from
the single seed recorded there, so a run can be reproduced exactly from its
manifest and inputs.  The default output directory comes from the
``FLOWBREAKS_OUTPUT_DIR`` environment variable (falling back to the current
directory).  Usage and validation problems exit with status 2; status 0
means every output file was written.

Trace files are one CSV per chain with columns, in order: ``iteration``,
``model_label``, ``mu``, ``sigma2``, ``lambda2``, one ``beta:<column>`` per
design column, one ``theta:<id>`` per location, then ``eta:<id>``,
``routing:<id>``, ``boundary:<id>`` flags as 0/1.  Floats are written in
full precision and round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsError, predict, summarize
from .flowdata import (
    FlowDataError,
    haversine_km,
    load_dataset,
    save_dataset,
    _parse_locations_file,
)
from .initialize import initial_values
from .sampler import ChainTrace, SamplerConfig, model_labels_from_eta, run_chains
from .simharness import ScenarioError, SimScenario, bench_scaling, generate, run_study

USAGE_ERROR = 2
RJ_PROPOSAL_NOTE = (
    "uniform toggle over eligible hinge columns; Normal birth proposal at the "
    "conditional mode with conditional variance; identity dimension map (unit Jacobian)"
)


class CliError(ValueError):
    """User-facing configuration or input problem; exits with status 2."""


def _output_dir(value: str | None) -> Path:
    root = value or os.environ.get("FLOWBREAKS_OUTPUT_DIR") or "."
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_settings(defaults: dict, config_path: str | None, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; unknown file keys are errors."""
    resolved = dict(defaults)
    if config_path:
        try:
            with open(config_path) as fh:
                file_settings = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config file {config_path}: {exc}") from exc
        unknown = sorted(set(file_settings) - set(defaults))
        if unknown:
            raise CliError(f"config file {config_path} has unknown keys: {', '.join(unknown)}")
        resolved.update(file_settings)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- trace round trip -------------------------------------------------------


def trace_columns(trace: ChainTrace) -> list[str]:
    ids = trace.location_ids
    return (
        ["iteration", "model_label", "mu", "sigma2", "lambda2"]
        + [f"beta:{c}" for c in trace.column_map]
        + [f"theta:{i}" for i in ids]
        + [f"eta:{i}" for i in ids]
        + [f"routing:{i}" for i in ids]
        + [f"boundary:{i}" for i in ids]
    )


def write_trace_csv(trace: ChainTrace, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_columns(trace))
        for k in range(trace.n_states):
            row = [int(trace.iterations[k]), int(trace.model_labels[k])]
            row += [repr(float(v)) for v in (trace.mu[k], trace.sigma2[k], trace.lambda2[k])]
            row += [repr(float(v)) for v in trace.beta[k]]
            row += [repr(float(v)) for v in trace.theta[k]]
            row += [int(v) for v in trace.eta[k]]
            row += [int(v) for v in trace.eta_routing[k]]
            row += [int(v) for v in trace.boundary[k]]
            writer.writerow(row)


def read_trace_csv(path: Path, manifest: dict, chain_entry: dict) -> ChainTrace:
    ids = tuple(manifest["location_ids"])
    column_map = tuple(manifest["column_map"])
    S, p = len(ids), len(column_map)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [line for line in reader if line]
    expected = (
        ["iteration", "model_label", "mu", "sigma2", "lambda2"]
        + [f"beta:{c}" for c in column_map]
        + [f"theta:{i}" for i in ids]
        + [f"eta:{i}" for i in ids]
        + [f"routing:{i}" for i in ids]
        + [f"boundary:{i}" for i in ids]
    )
    if header != expected:
        raise CliError(f"trace file {path} does not match the manifest's column layout")
    T = len(rows)
    raw = np.array(rows, dtype=object)
    floats = raw[:, 2 : 5 + p + S].astype(float)
    flags = raw[:, 5 + p + S :].astype(int).astype(bool)
    trace = ChainTrace(
        case=manifest["case"],
        chain_index=int(chain_entry["chain_index"]),
        location_ids=ids,
        column_map=column_map,
        iterations=raw[:, 0].astype(int),
        mu=floats[:, 0],
        sigma2=floats[:, 1],
        lambda2=floats[:, 2],
        beta=floats[:, 3 : 3 + p],
        theta=floats[:, 3 + p : 3 + p + S],
        eta=flags[:, :S],
        eta_routing=flags[:, S : 2 * S],
        boundary=flags[:, 2 * S :],
        model_labels=raw[:, 1].astype(np.uint64),
        accept_counts=np.asarray(chain_entry["accept_counts"], dtype=np.int64),
        n_proposals=np.asarray(chain_entry["n_proposals"], dtype=np.int64),
        config=SamplerConfig(**manifest["config"]),
    )
    if T and not np.array_equal(model_labels_from_eta(trace.eta), trace.model_labels):
        raise CliError(f"trace file {path} is corrupt: model labels do not match inclusion patterns")
    return trace


def load_run(run_dir: Path) -> tuple[dict, list[ChainTrace]]:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise CliError(f"no manifest.json under {run_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    traces = []
    for entry in manifest["traces"]:
        traces.append(read_trace_csv(run_dir / entry["file"], manifest, entry))
    if not traces:
        raise CliError(f"manifest under {run_dir} lists no trace files")
    return manifest, traces


# --- subcommands -------------------------------------------------------------

SCENARIO_DEFAULTS = asdict(SimScenario())


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = _resolve_settings(SCENARIO_DEFAULTS, args.config, args)
    scenario = SimScenario(**settings)
    out = _output_dir(args.output_dir)
    data, truth = generate(scenario, np.random.default_rng(np.random.SeedSequence(scenario.seed)))
    save_dataset(data, out / "locations.csv", out / "flows.csv", out / "distances.csv")
    _write_json(out / "truth.json", truth.to_dict())
    _write_json(
        out / "manifest.json",
        {
            "command": "simulate",
            "version": __version__,
            "scenario": asdict(scenario),
            "outputs": ["locations.csv", "flows.csv", "distances.csv", "truth.json"],
            "seed_derivation": "dataset drawn from default_rng(SeedSequence(seed))",
        },
    )
    print(f"wrote dataset ({data.n_locations} locations, {data.n_pairs} pairs) to {out}")
    return 0


FIT_DEFAULTS = {**asdict(SamplerConfig()), "case": "I"}


def cmd_fit(args: argparse.Namespace) -> int:
    settings = _resolve_settings(FIT_DEFAULTS, args.config, args)
    case = settings.pop("case")
    config = SamplerConfig(**settings)
    out = _output_dir(args.output_dir)
    data, report = load_dataset(
        args.locations, args.flows, args.distance_source, args.distances
    )
    init = initial_values(data, case, config.grid_size)
    traces = run_chains(data, case, config, init)
    entries = []
    for trace in traces:
        name = f"trace_chain{trace.chain_index}.csv"
        write_trace_csv(trace, out / name)
        entries.append(
            {
                "file": name,
                "chain_index": trace.chain_index,
                "accept_counts": [int(v) for v in trace.accept_counts],
                "n_proposals": [int(v) for v in trace.n_proposals],
            }
        )
    _write_json(
        out / "manifest.json",
        {
            "command": "fit",
            "version": __version__,
            "case": case,
            "inputs": {
                "locations": str(args.locations),
                "flows": str(args.flows),
                "distance_source": args.distance_source,
                "distances": None if args.distances is None else str(args.distances),
            },
            "load_report": asdict(report),
            "config": asdict(config),
            "location_ids": list(data.location_ids),
            "column_map": list(init.column_map),
            "initial_values": {
                "mu": init.mu,
                "sigma2": init.sigma2,
                "theta": [float(v) for v in init.theta],
                "beta": [float(v) for v in init.beta],
                "eta": [bool(v) for v in init.eta],
                "boundary": [bool(v) for v in init.boundary],
                "fallback": [bool(v) for v in init.fallback],
            },
            "seed_derivation": "chain c uses SeedSequence(config.seed).spawn(chains)[c]",
            "rj_proposal": RJ_PROPOSAL_NOTE,
            "traces": entries,
        },
    )
    print(f"wrote {len(traces)} trace file(s) and manifest.json to {out}")
    return 0


DIAGNOSE_DEFAULTS = {"alpha": 0.05, "scalar": "sigma2", "batches": 10}


def cmd_diagnose(args: argparse.Namespace) -> int:
    settings = _resolve_settings(DIAGNOSE_DEFAULTS, args.config, args)
    run_dir = Path(args.run_dir)
    _, traces = load_run(run_dir)
    report = summarize(
        traces, alpha=settings["alpha"], scalar=settings["scalar"], n_batches=settings["batches"]
    )
    out = _output_dir(args.output_dir or str(run_dir))
    (out / "diagnostics.txt").write_text(report.to_text())
    (out / "psrf.csv").write_text(report.psrf_table())
    print(f"wrote diagnostics.txt and psrf.csv to {out}")
    print(
        f"final psrf1={report.psrf1_series[-1]:.4g} psrf2={report.psrf2_series[-1]:.4g} "
        f"mean acceptance={report.mean_acceptance:.4g}"
    )
    return 0


PREDICT_DEFAULTS = {"alpha": 0.05, "interval": "mean", "noise_seed": 0}


def cmd_predict(args: argparse.Namespace) -> int:
    settings = _resolve_settings(PREDICT_DEFAULTS, args.config, args)
    if settings["interval"] not in ("mean", "predictive"):
        raise CliError("interval must be 'mean' or 'predictive'")
    run_dir = Path(args.run_dir)
    _, traces = load_run(run_dir)
    locations = _parse_locations_file(args.locations)
    index = {loc.id: k for k, loc in enumerate(locations)}
    if args.distances is not None:
        dist = np.atleast_2d(np.loadtxt(args.distances, delimiter=","))
        if dist.shape != (len(locations), len(locations)):
            raise CliError("distance matrix shape does not match the locations file")
    else:
        lat = np.array([loc.latitude for loc in locations], dtype=float)
        lon = np.array([loc.longitude for loc in locations], dtype=float)
        if np.any(~np.isfinite(lat)) or np.any(~np.isfinite(lon)):
            raise CliError("locations file lacks coordinates; supply --distances instead")
        dist = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    log_pop = {loc.id: float(np.log(loc.population)) for loc in locations}

    pairs = []
    with open(args.pairs, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"source_id", "destination_id"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise CliError(f"pairs file {args.pairs} needs columns source_id,destination_id")
        for lineno, row in enumerate(reader, start=2):
            sid, did = row["source_id"], row["destination_id"]
            for key in (sid, did):
                if key not in index:
                    raise CliError(f"{args.pairs}:{lineno}: unknown location id {key!r}")
            if sid == did:
                raise CliError(f"{args.pairs}:{lineno}: self-pair {sid!r} has no distance")
            d = dist[index[sid], index[did]]
            if not d > 0:
                raise CliError(f"{args.pairs}:{lineno}: non-positive distance for {sid!r}->{did!r}")
            pairs.append((sid, did, float(np.log(d)), log_pop[sid], log_pop[did]))
    rng = np.random.default_rng(settings["noise_seed"])
    rows = predict(traces, pairs, alpha=settings["alpha"], interval=settings["interval"], rng=rng)
    out = _output_dir(args.output_dir or str(run_dir))
    with open(out / "predictions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "destination", "log_distance", "mean", "lower", "upper"])
        for r in rows:
            writer.writerow(
                [r.source, r.destination]
                + [f"{v:.10g}" for v in (r.log_distance, r.mean, r.lower, r.upper)]
            )
    print(f"wrote {len(rows)} prediction(s) to {out / 'predictions.csv'}")
    return 0


BENCH_DEFAULTS = {
    "s_values": "10,20,40,80",
    "iterations": 25,
    "warmup": 5,
    "repeats": 3,
    "case": "I",
    "seed": 0,
}


def cmd_bench(args: argparse.Namespace) -> int:
    settings = _resolve_settings(BENCH_DEFAULTS, args.config, args)
    raw = settings["s_values"]
    try:
        if isinstance(raw, (list, tuple)):
            s_values = [int(v) for v in raw]
        else:
            s_values = [int(tok) for tok in str(raw).split(",") if tok.strip()]
    except ValueError as exc:
        raise CliError(f"cannot parse --s-values: {raw!r}") from exc
    scenario = SimScenario(seed=settings["seed"])
    report = bench_scaling(
        s_values,
        case=settings["case"],
        iterations=settings["iterations"],
        warmup=settings["warmup"],
        repeats=settings["repeats"],
        scenario=scenario,
    )
    out = _output_dir(args.output_dir)
    (out / "bench.csv").write_text(report.to_text())
    _write_json(
        out / "manifest.json",
        {
            "command": "bench",
            "version": __version__,
            "settings": settings,
            "outputs": ["bench.csv"],
            "note": "timings are wall-clock and machine-dependent; settings are deterministic",
        },
    )
    print(report.to_text(), end="")
    print(f"wrote bench.csv to {out}")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowbreaks",
        description="Break-point distance-decay modeling of directed flow counts.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file of settings (flags override it)")
        p.add_argument("--output-dir", help="output directory (default: $FLOWBREAKS_OUTPUT_DIR or .)")

    p = sub.add_parser("simulate", help="generate a synthetic dataset plus its truth record")
    add_common(p)
    p.add_argument("--S", dest="n_locations", type=int, help="number of locations (default 20)")
    p.add_argument("--sigma2", type=float, help="noise variance (default 0.38)")
    p.add_argument("--break-fraction", dest="break_fraction", type=float)
    p.add_argument("--region-km", dest="region_km", type=float)
    p.add_argument("--intercept", type=float)
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler on a dataset")
    add_common(p)
    p.add_argument("--locations", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--distance-source", choices=("haversine", "explicit_matrix"), default="haversine")
    p.add_argument("--distances", help="distance matrix file for --distance-source explicit_matrix")
    p.add_argument("--case", choices=("I", "II"), help="model structure (default I)")
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", dest="outer_iterations", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--sigma2-theta", dest="sigma2_theta", type=float)
    p.add_argument("--inner-h", dest="inner_h", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="summarize a fit: intervals, acceptance, PSRF series")
    add_common(p)
    p.add_argument("--run-dir", required=True, help="directory holding manifest.json and traces")
    p.add_argument("--alpha", type=float)
    p.add_argument("--scalar", help="diagnostic scalar (default sigma2)")
    p.add_argument("--batches", type=int)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("predict", help="posterior predictions for listed pairs")
    add_common(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--distances", help="explicit distance matrix (else haversine coordinates)")
    p.add_argument("--pairs", required=True, help="CSV with source_id,destination_id")
    p.add_argument("--interval", choices=("mean", "predictive"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--noise-seed", dest="noise_seed", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="time one sampler iteration over increasing sizes")
    add_common(p)
    p.add_argument("--s-values", dest="s_values", help="comma-separated location counts")
    p.add_argument("--iterations", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--case", choices=("I", "II"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FlowDataError, ScenarioError, DiagnosticsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
