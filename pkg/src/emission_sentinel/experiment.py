"""Replicated simulation campaigns and their summary tables.

A plan is a list of cells (emission rate, location, data size, prior) run for a
fixed number of replicates. Replicate ``k`` of cell ``c`` takes its data and
sampler seeds from ``SeedSequence([base_seed, c, k])``, so any replicate can be
rerun on its own and reproduce its report exactly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from emission_sentinel import formats
from emission_sentinel.inference import LN10, format_bayes_factor
from emission_sentinel.model import PriorSpec, check_radius
from emission_sentinel.pipeline import run_detection, write_detection
from emission_sentinel.sampler import SamplerConfig
from emission_sentinel.simulator import ScenarioConfig, generate_dataset

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("p", "location", "min", "med", "max", "prop_gt_3", "median_pr_no_source")


@dataclass(frozen=True)
class Cell:
    p_true: float
    location: tuple[float, float]
    n: int
    prior: PriorSpec

    def label(self) -> str:
        if self.p_true == 0.0:
            return "n/a"
        return f"({self.location[0]:g}, {self.location[1]:g})"


@dataclass(frozen=True)
class ExperimentPlan:
    cells: tuple[Cell, ...]
    replicates: int
    base_seed: int
    sampler: SamplerConfig
    d: float = 0.01
    hpd_level: float = 0.95
    hpd_resolution: int = 64
    strict_paper_mode: bool = False

    def __post_init__(self):
        if not self.cells:
            raise ValueError("plan has no cells")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        check_radius(self.d)


def replicate_seeds(base_seed: int, cell_index: int, replicate: int) -> tuple[int, int]:
    """(data seed, sampler seed) for one replicate."""
    state = np.random.SeedSequence([base_seed, cell_index, replicate]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def replicate_dir(out_dir, cell_index: int, replicate: int) -> Path:
    return Path(out_dir) / f"cell{cell_index:02d}_rep{replicate:02d}"


def run_replicate(plan: ExperimentPlan, cell_index: int, replicate: int, out_dir) -> dict:
    cell = plan.cells[cell_index]
    data_seed, sampler_seed = replicate_seeds(plan.base_seed, cell_index, replicate)
    scenario = ScenarioConfig(cell.p_true, cell.location, plan.d, cell.n, data_seed)
    dataset = generate_dataset(scenario)
    sampler = replace(plan.sampler, seed=sampler_seed)

    where = replicate_dir(out_dir, cell_index, replicate)
    where.mkdir(parents=True, exist_ok=True)
    formats.write_json(where / "truth.json", dataset.truth())
    samples, report = run_detection(dataset.observations, cell.prior, plan.d, sampler,
                                    plan.hpd_level, plan.hpd_resolution, plan.strict_paper_mode,
                                    run_log=where / "run_log.ndjson")
    return write_detection(where, samples, report, {
        "cell_index": cell_index,
        "replicate": replicate,
        "p_true": cell.p_true,
        "location": list(cell.location),
        "n_particles": cell.n,
        "data_seed": data_seed,
        "prior": formats.prior_to_dict(cell.prior),
        "sampler": formats.sampler_to_dict(sampler),
    })


def _run_one(args):
    plan, c, k, out_dir = args
    try:
        return c, k, run_replicate(plan, c, k, out_dir), None
    except Exception as exc:  # recorded and excluded, never dropped silently
        log.exception("replicate %d of cell %d failed", k, c)
        return c, k, None, f"{type(exc).__name__}: {exc}"


def run_experiment(plan: ExperimentPlan, out_dir, jobs: int = 1) -> dict:
    """Run every cell x replicate and write summary.csv, summary.txt and summary.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(plan, c, k, str(out_dir)) for c in range(len(plan.cells)) for k in range(plan.replicates)]
    if jobs <= 1:
        results = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))

    reports = {(c, k): rep for c, k, rep, err in results if rep is not None}
    failures = [{"cell_index": c, "replicate": k, "error": err} for c, k, rep, err in results if err]
    for f in failures:
        log.warning("excluded failed replicate %(replicate)d of cell %(cell_index)d: %(error)s", f)
    rows = summarise(plan.cells, reports)
    write_summary(out_dir, rows, failures)
    return {"rows": rows, "failures": failures}


def summarise(cells, reports: dict) -> list[dict]:
    """One summary row per cell from ``{(cell, replicate): report}``."""
    rows = []
    for c, cell in enumerate(cells):
        mine = [reports[key] for key in sorted(reports) if key[0] == c]
        row = {"cell_index": c, "p": cell.p_true, "location": cell.label(), "n_particles": cell.n,
               "replicates": len(mine)}
        if mine:
            log_bf = np.array([r["log_bf"] for r in mine])
            pr = np.array([r["pr_no_source"] for r in mine])
            med = float(np.median(log_bf))
            row.update({
                "min_log_bf": float(log_bf.min()),
                "median_log_bf": med,
                "max_log_bf": float(log_bf.max()),
                "min": format_bayes_factor(float(log_bf.min())),
                "med": format_bayes_factor(med),
                "max": format_bayes_factor(float(log_bf.max())),
                "prop_gt_3": float(np.mean(log_bf > math.log(3.0))),
                "median_pr_no_source": float(np.median(pr)),
                "log10_bf": [float(v / LN10) for v in log_bf],
            })
        rows.append(row)
    return rows


def summary_from_directory(out_dir, cells) -> list[dict]:
    """Recompute the summary rows from persisted per-replicate reports."""
    reports = {}
    for path in sorted(Path(out_dir).glob("cell*_rep*/report.json")):
        doc = formats.read_json(path)
        reports[(doc["cell_index"], doc["replicate"])] = doc
    return summarise(cells, reports)


def _fmt_pr(v):
    return f"{v:.3g}"


def write_summary(out_dir, rows, failures=()):
    out_dir = Path(out_dir)
    table = []
    for row in rows:
        if row["replicates"]:
            table.append([f"{row['p']:g}", row["location"], row["min"], row["med"], row["max"],
                          f"{row['prop_gt_3']:g}", _fmt_pr(row["median_pr_no_source"])])
        else:
            table.append([f"{row['p']:g}", row["location"], "-", "-", "-", "-", "-"])
    header = ["p", "location", "min", "med", "max", "prop>3", "median pr(p=0|Y)"]

    with open(out_dir / "summary.csv", "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for cells in table:
            fh.write(",".join(f'"{c}"' if "," in c else c for c in cells) + "\n")

    widths = [max(len(h), *(len(r[i]) for r in table)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in table]
    for f in failures:
        lines.append(f"# failed: cell {f['cell_index']} replicate {f['replicate']}: {f['error']}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    formats.write_json(out_dir / "summary.json", {"rows": rows, "failures": list(failures)})
    return "\n".join(lines)


def plan_from_config(cfg: formats.FlatConfig, seed=None) -> ExperimentPlan:
    """Build a plan from a flat config.

    Cells are declared as ``cell.<k>.p_true``, ``cell.<k>.location_l1``,
    ``cell.<k>.location_l2``, ``cell.<k>.n_particles`` and optionally
    ``cell.<k>.prior_a_p`` / ``prior_b_p`` / ``prior_h``. Without a cell prior
    the plan-level prior applies, and without that the reference grid for the
    cell's rate.
    """
    ids = sorted({key.split(".")[1] for key in cfg.keys() if key.startswith("cell.")},
                 key=lambda s: (len(s), s))
    if not ids:
        raise formats.ConfigError(f"{cfg.source}: no cells declared (use cell.<k>.p_true = ...)")
    d = cfg.float("d_radius", 0.01)
    has_plan_prior = any(k in cfg for k in ("prior_a_p", "prior_b_p", "prior_h"))
    plan_prior = formats.prior_from_config(cfg) if has_plan_prior else None
    cells = []
    for cid in ids:
        prefix = f"cell.{cid}."
        p_true = cfg.float(prefix + "p_true", formats.REQUIRED)
        loc = (cfg.float(prefix + "location_l1", 0.0), cfg.float(prefix + "location_l2", 0.0))
        n = cfg.int(prefix + "n_particles", formats.REQUIRED)
        fallback = plan_prior or formats.default_prior_for(p_true)
        prior = formats.prior_from_config(cfg, prefix, fallback)
        # validate the scenario part now so errors point at the config line
        formats.validated(cfg, prefix + "p_true", lambda: ScenarioConfig(p_true, loc, d, n, 0))
        cells.append(Cell(p_true, loc, n, prior))
    if seed is None:
        seed = cfg.int("base_seed", 0)
    replicates = cfg.int("replicates", 10)
    sampler = formats.sampler_from_config(cfg, seed=0)
    plan = formats.validated(cfg, "replicates", lambda: ExperimentPlan(
        tuple(cells), replicates, seed, sampler, d,
        cfg.float("hpd_level", 0.95), cfg.int("hpd_resolution", 64),
        cfg.bool("strict_paper_mode", False)))
    cfg.reject_unknown()
    return plan
