"""Command line entry point.

Exit codes: 0 pipeline completed (the decision is in the report), 1 input
error, 2 I/O error, 3 internal invariant violation. Log verbosity comes from
the ``EMISSION_SENTINEL_LOG`` environment variable (a logging level name).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from emission_sentinel import formats, svg
from emission_sentinel.experiment import plan_from_config, run_experiment
from emission_sentinel.inference import (
    conditional_location_map,
    hpd_cells_from_points,
    point_estimates,
)
from emission_sentinel.model import check_radius
from emission_sentinel.pipeline import run_detection, write_detection
from emission_sentinel.simulator import generate_dataset

log = logging.getLogger("emission_sentinel")

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = formats.FlatConfig.load(args.config)
    scenario = formats.scenario_from_config(cfg, seed=args.seed)
    cfg.reject_unknown()
    dataset = generate_dataset(scenario)
    out = _out_dir(args.out)
    obs_path = out / "observations.csv"
    formats.write_observations(obs_path, dataset.observations)
    formats.write_json(out / "truth.json", dataset.truth())
    print(f"n={dataset.observations.n} source_events={dataset.n_source} "
          f"offset_redraws={dataset.rejections} sha256={formats.file_digest(obs_path)}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = formats.FlatConfig.load(args.config)
    d = cfg.float("d_radius", 0.01)
    formats.validated(cfg, "d_radius", lambda: check_radius(d))
    prior = formats.prior_from_config(cfg)
    sampler = formats.sampler_from_config(cfg, seed=args.seed)
    hpd_level = cfg.float("hpd_level", 0.95)
    hpd_resolution = cfg.int("hpd_resolution", 64)
    cfg.check("hpd_resolution", hpd_resolution >= 16, "hpd_resolution must be at least 16")
    cfg.check("hpd_level", 0.0 < hpd_level < 1.0, "hpd_level must lie in (0, 1)")
    strict = args.strict_paper_mode or cfg.bool("strict_paper_mode", False)
    cfg.reject_unknown()

    obs = formats.read_observations(args.observations)
    out = _out_dir(args.out)
    samples, report = run_detection(obs, prior, d, sampler, hpd_level, hpd_resolution, strict,
                                    run_log=out / "run_log.ndjson")
    write_detection(out, samples, report, {
        "observations": str(args.observations),
        "observations_sha256": formats.file_digest(args.observations),
        "n_particles": obs.n,
        "d_radius": d,
        "prior": formats.prior_to_dict(prior),
        "sampler": formats.sampler_to_dict(sampler),
        "strict_paper_mode": strict,
    })
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    l1, l2 = report.location_hat
    print(f"BF={report.bf_display} log10_BF={report.log10_bf:.3f} pr_no_source={report.pr_no_source:.4g} "
          f"evidence={report.evidence} detected={report.detected} "
          f"p_hat={report.p_hat:.5g} location_hat=({l1:.4f}, {l2:.4f})")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = formats.FlatConfig.load(args.config)
    plan = plan_from_config(cfg, seed=args.seed)
    if args.strict_paper_mode:
        plan = replace(plan, strict_paper_mode=True)
    run_experiment(plan, _out_dir(args.out), jobs=args.jobs)
    print((Path(args.out) / "summary.txt").read_text(), end="")
    return EXIT_OK


def cmd_posterior_map(args) -> int:
    if args.resolution < 16:
        raise formats.InputError("--resolution must be at least 16")
    if not 0.0 < args.p < 1.0:
        raise formats.InputError("--p must lie in (0, 1)")
    try:
        d = check_radius(args.d_radius)
    except ValueError as exc:
        raise formats.InputError(str(exc)) from None
    obs = formats.read_observations(args.observations)
    surface = conditional_location_map(obs, args.p, d, args.resolution)
    out = _out_dir(args.out)
    with open(out / "posterior_map.csv", "w") as fh:
        fh.write("l1,l2,log_density\n")
        for a, b, v in zip(surface.l1.tolist(), surface.l2.tolist(), surface.log_density.tolist()):
            fh.write(f"{a!r},{b!r},{v!r}\n")
    if args.svg:
        (out / "posterior_map.svg").write_text(svg.heat_map(surface))
    a, b = surface.argmax()
    print(f"argmax=({a:.4f}, {b:.4f}) local_maxima={surface.count_local_maxima()}")
    return EXIT_OK


def cmd_figure3(args) -> int:
    samples = formats.read_samples(args.samples)
    truth = None
    if args.truth:
        doc = formats.read_json(args.truth)
        if doc.get("p_true", 0.0) > 0.0:
            truth = (doc["location_l1"], doc["location_l2"])
    l1, l2 = samples.locations()
    region = hpd_cells_from_points(l1, l2, args.level, args.resolution)
    *_, estimate = point_estimates(samples, args.strict_paper_mode)
    out = _out_dir(args.out)

    with open(out / "figure3_points.csv", "w") as fh:
        fh.write("l1,l2\n")
        for a, b in zip(l1.tolist(), l2.tolist()):
            fh.write(f"{a!r},{b!r}\n")
    with open(out / "figure3_hpd.csv", "w") as fh:
        fh.write("cell,ix,iy,l1_min,l1_max,l2_min,l2_max,count\n")
        for cell, count in zip(region.cells, region.counts):
            iy, ix = divmod(cell, region.resolution)
            x0, x1, y0, y1 = region.cell_bounds(cell)
            fh.write(f"{cell},{ix},{iy},{x0!r},{x1!r},{y0!r},{y1!r},{count}\n")
    summary = {
        "hpd_level": region.level,
        "hpd_resolution": region.resolution,
        "hpd_cells": len(region.cells),
        "hpd_area": region.area,
        "hpd_disk_fraction": region.area / np.pi,
        "hpd_mass": region.mass,
        "hpd_reliable": region.reliable,
        "location_hat": list(estimate),
        "truth": list(truth) if truth else None,
        "truth_in_hpd": region.contains(*truth) if truth else None,
        "truth_distance": float(np.hypot(estimate[0] - truth[0], estimate[1] - truth[1])) if truth else None,
    }
    formats.write_json(out / "figure3.json", summary)
    (out / "figure3.svg").write_text(svg.location_figure(l1, l2, region, truth, estimate))
    print(f"hpd_cells={len(region.cells)} disk_fraction={summary['hpd_disk_fraction']:.3f} "
          f"truth_in_hpd={summary['truth_in_hpd']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emission-sentinel",
                                     description="Detect a small weak source in uniform background")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic observation file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="run the sampler and write a detection report")
    p.add_argument("observations")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.add_argument("--strict-paper-mode", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("experiment", help="run a replicated simulation campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="overrides base_seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=".")
    p.add_argument("--strict-paper-mode", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("posterior-map", help="conditional location surface at fixed p")
    p.add_argument("observations")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--d-radius", type=float, default=0.01)
    p.add_argument("--out", default=".")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_posterior_map)

    p = sub.add_parser("figure3", help="location cloud and HPD cells from a detect run")
    p.add_argument("--samples", required=True)
    p.add_argument("--truth")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", default=".")
    p.add_argument("--strict-paper-mode", action="store_true")
    p.set_defaults(func=cmd_figure3)
    return parser


def configure_logging():
    level = getattr(logging, os.environ.get("EMISSION_SENTINEL_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(level)


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
