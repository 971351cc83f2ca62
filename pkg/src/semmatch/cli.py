"""Command-line front end: simulate, match, evaluate, calibrate.

One binary with subcommands.  Options can come from a TOML config file
(flat keys mirroring the FilterConfig / HmmConfig field names); explicit
flags win over the file.  Every command is deterministic given its inputs,
config and seed.  Set SEMMATCH_LOG to control log verbosity.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import click

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from semmatch import report
from semmatch.matcher import (
    HmmConfig,
    MatchOutput,
    Matcher,
    estimate_sigma_h,
    match_events,
    SIGMA_H_FLOOR_DEG,
)
from semmatch.metrics import SegmentPath, score, segment_path_from_states
from semmatch.preprocess import CleanFix, FilterConfig, preprocess_trace, read_trace, write_trace
from semmatch.roadnet import GeoPoint, RoadNetwork, load_network, network_to_geojson
from semmatch.semantics import SemanticEvent, SemanticType, build_confusion
from semmatch.sim import (
    NOISE_PRESETS,
    generate_network,
    read_truth,
    sensor_stream,
    simulate_trace,
    write_truth,
)

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Collected settings for one command invocation."""

    network_path: Optional[str] = None
    trace_path: Optional[str] = None
    sensors_path: Optional[str] = None
    truth_path: Optional[str] = None
    out_base: Optional[str] = None
    filter_config: FilterConfig = field(default_factory=FilterConfig)
    hmm_config: HmmConfig = field(default_factory=HmmConfig)
    preset: Optional[str] = None
    seed: Optional[int] = None
    figures: bool = True
    # Simulation geometry (config-file keys).
    rows: int = 10
    cols: int = 10
    segment_len_m: float = 500.0
    density_per_km: float = 2.0
    length_km: float = 10.0
    speed_mps: float = 15.0
    trace_id: str = "trace"


_FILTER_KEYS = {f.name for f in dataclasses.fields(FilterConfig)}
_HMM_KEYS = {f.name for f in dataclasses.fields(HmmConfig)}
_SIM_KEYS = {"rows", "cols", "segment_len_m", "density_per_km", "length_km", "speed_mps",
             "trace_id"}


def _parse_config_file(path: str) -> dict:
    """Parse a TOML (or bare key=value) config file into a flat dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return tomllib.loads(data.decode())
    except tomllib.TOMLDecodeError:
        flat = {}
        for line in data.decode().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            value = value.strip()
            try:
                flat[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                flat[key.strip()] = value
        return flat


def _apply_config_file(cfg: RunConfig, path: Optional[str]) -> RunConfig:
    if path is None:
        return cfg
    flat = _parse_config_file(path)
    filter_kwargs = {k: v for k, v in flat.items() if k in _FILTER_KEYS}
    hmm_kwargs = {k: v for k, v in flat.items() if k in _HMM_KEYS}
    unknown = set(flat) - _FILTER_KEYS - _HMM_KEYS - _SIM_KEYS
    if unknown:
        logger.warning("ignoring unknown config keys: %s", ", ".join(sorted(unknown)))
    if filter_kwargs:
        cfg.filter_config = dataclasses.replace(cfg.filter_config, **filter_kwargs)
    if hmm_kwargs:
        cfg.hmm_config = dataclasses.replace(cfg.hmm_config, **hmm_kwargs)
    for key in _SIM_KEYS & set(flat):
        setattr(cfg, key, flat[key])
    return cfg


def _speed_lookup(network: RoadNetwork):
    """Per-area speed limit from the nearest tagged landmark's segment."""
    limits = [network.segments[s.segment_id].speed_limit_mps for s in network.state_space]
    if not any(limit is not None for limit in limits):
        return None

    def lookup(loc: GeoPoint) -> Optional[float]:
        states = network.query_radius(loc, 1000.0)
        if not states:
            return None
        nearest = min(states, key=lambda s: (geodesic_distance(s.loc, loc), s.index))
        return network.segments[nearest.segment_id].speed_limit_mps

    return lookup


def assemble_observations(
    events: Sequence[SemanticEvent], clean_fixes: Sequence[CleanFix]
) -> list[SemanticEvent]:
    """Bind events to the preprocessed location stream.

    When cleaned fixes cover an event's timestamp, the event location is
    re-anchored to the time-interpolated cleaned position (the filters have
    already removed teleports and bouncing); the declared error estimate is
    kept.  NO_CLASS events are dropped: they carry no landmark evidence.
    """
    out = []
    ts = [f.t for f in clean_fixes]
    for ev in sorted(events, key=lambda e: e.t):
        if ev.type is SemanticType.NO_CLASS:
            continue
        loc = ev.loc
        if clean_fixes and ts[0] <= ev.t <= ts[-1]:
            hi = bisect.bisect_left(ts, ev.t)
            if hi < len(ts) and ts[hi] == ev.t:
                loc = clean_fixes[hi].loc
            else:
                lo = hi - 1
                span = ts[hi] - ts[lo]
                f = 0.0 if span <= 0 else (ev.t - ts[lo]) / span
                a, b = clean_fixes[lo].loc, clean_fixes[hi].loc
                loc = GeoPoint(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))
        out.append(dataclasses.replace(ev, loc=loc))
    return out


def _match_geojson(network: RoadNetwork, output: MatchOutput) -> dict:
    features = [
        {
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[s.loc.lon, s.loc.lat] for s in output.states],
            },
            "properties": {"kind": "decoded_states"},
        }
    ]
    path = segment_path_from_states(network, output.states)
    for order, (sid, _) in enumerate(path.entries):
        seg = network.segments[sid]
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[p.lon, p.lat] for p in seg.polyline],
                },
                "properties": {"kind": "matched_segment", "segment_id": sid, "order": order},
            }
        )
    return {"type": "FeatureCollection", "features": features}


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def run_match(cfg: RunConfig) -> list[str]:
    """Preprocess a trace, assemble observations, match, write outputs."""
    network = load_network(cfg.network_path)
    fixes, sensors, events = read_trace(cfg.trace_path)
    if cfg.sensors_path:
        _, extra_sensors, _ = read_trace(cfg.sensors_path)
        sensors = sorted(sensors + extra_sensors, key=lambda s: s.t)
    clean = preprocess_trace(fixes, sensors, cfg.filter_config, _speed_lookup(network))
    observations = assemble_observations(events, clean)
    if not observations:
        raise click.ClickException("trace contains no semantic events to match")

    confusion = build_confusion()
    matcher = Matcher(network, confusion, cfg.hmm_config)
    for z in observations:
        matcher.step(z)
    output = matcher.result()

    base = cfg.out_base
    written = []
    jsonl_path = base + ".jsonl"
    with open(jsonl_path, "w") as fh:
        for rec in output.records:
            fh.write(rec.to_json() + "\n")
    written.append(jsonl_path)

    path = segment_path_from_states(network, output.states)
    path_json = base + ".path.json"
    write_truth(path_json, path, cfg.trace_id)
    written.append(path_json)

    geojson_path = base + ".geojson"
    with open(geojson_path, "w") as fh:
        json.dump(_match_geojson(network, output), fh, sort_keys=True)
        fh.write("\n")
    written.append(geojson_path)

    if cfg.figures:
        fig_path = base + ".png"
        report.save_match_figure(fig_path, network, output.states, fixes, observations)
        written.append(fig_path)
    logger.info(
        "matched %d observations (%d skipped, %d restarts)",
        len(output.records),
        output.skipped_steps,
        output.restarts,
    )
    return written


def run_simulate(cfg: RunConfig) -> list[str]:
    """Generate (or load) a network, simulate a drive, write trace + truth."""
    if cfg.preset not in NOISE_PRESETS:
        raise click.ClickException(
            f"unknown preset {cfg.preset!r}; choose from {', '.join(sorted(NOISE_PRESETS))}"
        )
    noise = NOISE_PRESETS[cfg.preset]
    written = []
    if cfg.network_path:
        network = load_network(cfg.network_path)
    else:
        network = generate_network(
            cfg.rows, cfg.cols, cfg.segment_len_m, cfg.density_per_km, seed=cfg.seed
        )
        net_path = cfg.out_base + ".network.geojson"
        with open(net_path, "w") as fh:
            json.dump(network_to_geojson(network), fh, sort_keys=True)
            fh.write("\n")
        written.append(net_path)

    sim, route = simulate_trace(network, noise, cfg.length_km, cfg.seed, speed_mps=cfg.speed_mps)
    trace_path = cfg.out_base + ".trace.jsonl"
    write_trace(
        trace_path,
        fixes=sim.raw_fixes,
        sensors=sensor_stream(route),
        events=sim.observations,
    )
    written.append(trace_path)

    truth_path = cfg.out_base + ".truth.json"
    write_truth(truth_path, sim.truth_path, cfg.trace_id)
    written.append(truth_path)

    if cfg.figures:
        fig_path = cfg.out_base + ".png"
        truth_lonlat = [(f.loc.lon, f.loc.lat) for f in sim.truth_fixes]
        report.save_simulation_figure(
            fig_path, network, truth_lonlat, sim.raw_fixes, sim.observations
        )
        written.append(fig_path)
    logger.info(
        "simulated %.1f km: %d events, %d fixes (%d ping-pong)",
        cfg.length_km,
        len(sim.observations),
        len(sim.raw_fixes),
        len(sim.injected_outlier_indices),
    )
    return written


def _load_output_path(cfg: RunConfig) -> tuple[Optional[str], SegmentPath]:
    """Read the matched path being evaluated: a .path.json sidecar or raw
    .jsonl records (the latter needs the network for segment lengths)."""
    path = cfg.trace_path
    if path.endswith(".jsonl"):
        if not cfg.network_path:
            raise click.ClickException("--network is required to evaluate raw .jsonl output")
        network = load_network(cfg.network_path)
        ids = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                sid = rec.get("segment_id")
                if sid is not None and (not ids or ids[-1] != sid):
                    ids.append(sid)
        entries = [(sid, network.segments[sid].length_m) for sid in ids]
        return None, SegmentPath(entries)
    return read_truth(path)


def run_evaluate(cfg: RunConfig) -> list[str]:
    """Score a matched path against ground truth; write JSON + CSV + figure."""
    out_id, output_path = _load_output_path(cfg)
    truth_id, truth_path = read_truth(cfg.truth_path)
    if out_id is not None and truth_id is not None and out_id != truth_id:
        raise click.ClickException(f"trace id mismatch: output {out_id!r} vs truth {truth_id!r}")
    result = score(output_path, truth_path)
    trace_id = truth_id or out_id or "trace"

    base = cfg.out_base
    written = []
    score_json = base + ".score.json"
    with open(score_json, "w") as fh:
        json.dump(
            {"trace_id": trace_id, **dataclasses.asdict(result)}, fh, indent=2, sort_keys=True
        )
        fh.write("\n")
    written.append(score_json)

    csv_path = base + ".scores.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["trace_id", "precision", "recall", "f_measure", "x_m", "y_m", "g_m", "empty_output"]
        )
        writer.writerow(
            [
                trace_id,
                f"{result.precision:.6f}",
                f"{result.recall:.6f}",
                f"{result.f_measure:.6f}",
                f"{result.x_m:.3f}",
                f"{result.y_m:.3f}",
                f"{result.g_m:.3f}",
                result.empty_output,
            ]
        )
    written.append(csv_path)

    if cfg.figures:
        fig_path = base + ".png"
        report.save_scores_figure(fig_path, [(trace_id, result)])
        written.append(fig_path)
    click.echo(
        f"precision={result.precision:.4f} recall={result.recall:.4f} "
        f"f_measure={result.f_measure:.4f}"
    )
    return written


def run_calibrate(cfg: RunConfig) -> float:
    """Estimate the heading-noise scale from (observed, map) pairs."""
    pairs = []
    with open(cfg.trace_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pairs.append((float(rec["dtheta_obs"]), float(rec["dtheta_map"])))
    if not pairs:
        raise click.ClickException("no heading-change pairs in input")
    raw = estimate_sigma_h(pairs)
    sigma = max(raw, SIGMA_H_FLOOR_DEG)
    if cfg.out_base:
        with open(cfg.out_base + ".sigma_h.json", "w") as fh:
            json.dump(
                {"sigma_h_deg": sigma, "raw_estimate_deg": raw, "pairs": len(pairs)},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    click.echo(f"sigma_h_deg={sigma:.4f} (raw {raw:.4f} from {len(pairs)} pairs)")
    return sigma


# ----------------------------------------------------------------------
# Click wiring
# ----------------------------------------------------------------------


def _base_config(
    config: Optional[str],
    sigma_h: Optional[float],
    window: Optional[int],
    alpha: Optional[float],
    err_scale: Optional[float],
) -> RunConfig:
    cfg = RunConfig()
    cfg = _apply_config_file(cfg, config)
    hmm_overrides = {}
    if sigma_h is not None:
        hmm_overrides["sigma_h_deg"] = sigma_h
    if window is not None:
        hmm_overrides["window_steps"] = window
    if err_scale is not None:
        hmm_overrides["err_scale"] = err_scale
    if hmm_overrides:
        cfg.hmm_config = dataclasses.replace(cfg.hmm_config, **hmm_overrides)
    if alpha is not None:
        cfg.filter_config = dataclasses.replace(cfg.filter_config, alpha=alpha)
    return cfg


_shared_options = [
    click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="TOML config file; flags override it."),
    click.option("--sigma-h", type=float, default=None, help="Heading-noise scale, degrees."),
    click.option("--window", type=int, default=None, help="Viterbi window length, steps."),
    click.option("--alpha", type=float, default=None, help="Bounce filter trim fraction."),
    click.option("--err-scale", type=float, default=None,
                 help="Candidate radius multiplier on the fix error."),
    click.option("--figures/--no-figures", default=True, help="Render report PNGs."),
]


def _with_shared(func):
    for option in reversed(_shared_options):
        func = option(func)
    return func


@click.group()
def main() -> None:
    """Road-semantics map matching toolkit."""
    level = os.environ.get("SEMMATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


@main.command("match")
@click.option("--network", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--trace", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sensors", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional separate sensor stream (JSON lines).")
@click.option("--out", required=True, type=click.Path(), help="Output base path.")
@click.option("--trace-id", default="trace")
@_with_shared
def match_cmd(network, trace, sensors, out, trace_id, config, sigma_h, window, alpha,
              err_scale, figures):
    """Map match a trace against a semantically tagged network."""
    cfg = _base_config(config, sigma_h, window, alpha, err_scale)
    cfg.network_path = network
    cfg.trace_path = trace
    cfg.sensors_path = sensors
    cfg.out_base = out
    cfg.trace_id = trace_id
    cfg.figures = figures
    for path in run_match(cfg):
        click.echo(path)


@main.command("simulate")
@click.option("--preset", required=True, type=click.Choice(sorted(NOISE_PRESETS)))
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path(), help="Output base path.")
@click.option("--network", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Reuse an existing network instead of generating a grid.")
@click.option("--length-km", type=float, default=None)
@click.option("--density", type=float, default=None, help="Landmarks per km of road.")
@click.option("--trace-id", default="trace")
@_with_shared
def simulate_cmd(preset, seed, out, network, length_km, density, trace_id, config, sigma_h,
                 window, alpha, err_scale, figures):
    """Simulate a drive under a noise regime; write trace and truth files."""
    cfg = _base_config(config, sigma_h, window, alpha, err_scale)
    cfg.preset = preset
    cfg.seed = seed
    cfg.out_base = out
    cfg.network_path = network
    cfg.trace_id = trace_id
    cfg.figures = figures
    if length_km is not None:
        cfg.length_km = length_km
    if density is not None:
        cfg.density_per_km = density
    for path in run_simulate(cfg):
        click.echo(path)


@main.command("evaluate")
@click.option("--trace", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Matched output: a .path.json sidecar or raw .jsonl records.")
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--network", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(), help="Output base path.")
@_with_shared
def evaluate_cmd(trace, truth, network, out, config, sigma_h, window, alpha, err_scale, figures):
    """Score a matched trajectory against ground truth."""
    cfg = _base_config(config, sigma_h, window, alpha, err_scale)
    cfg.trace_path = trace
    cfg.truth_path = truth
    cfg.network_path = network
    cfg.out_base = out
    cfg.figures = figures
    for path in run_evaluate(cfg):
        click.echo(path)


@main.command("calibrate")
@click.option("--trace", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON lines of {dtheta_obs, dtheta_map} pairs.")
@click.option("--out", type=click.Path(), default=None, help="Optional output base path.")
@_with_shared
def calibrate_cmd(trace, out, config, sigma_h, window, alpha, err_scale, figures):
    """Estimate the heading-noise scale from ground-truth pairs."""
    cfg = _base_config(config, sigma_h, window, alpha, err_scale)
    cfg.trace_path = trace
    cfg.out_base = out
    run_calibrate(cfg)


if __name__ == "__main__":
    main()
