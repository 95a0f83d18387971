"""Detection pipeline: sampler run followed by the inference summary."""

from __future__ import annotations

import logging
from pathlib import Path

from emission_sentinel import formats
from emission_sentinel.inference import DetectionReport, build_report
from emission_sentinel.model import ObservationSet, PriorSpec
from emission_sentinel.sampler import PosteriorSamples, SamplerConfig, run_sampler

log = logging.getLogger(__name__)


def run_detection(obs: ObservationSet, prior: PriorSpec, d: float, sampler: SamplerConfig,
                  hpd_level: float = 0.95, hpd_resolution: int = 64,
                  strict_paper_mode: bool = False, run_log=None) -> tuple[PosteriorSamples, DetectionReport]:
    """Sample the posterior and summarise it.

    ``run_log`` is an optional path; one JSON line per diagnostic window is written there.
    """
    if run_log is None:
        samples = run_sampler(obs, prior, d, sampler)
    else:
        with open(run_log, "w") as fh:
            def emit(record):
                fh.write(formats.to_json_line(record) + "\n")
                log.info("iteration %d: cold state %s, exchange %s", record["iteration"],
                         record["cold_state"], record["exchange"])
            samples = run_sampler(obs, prior, d, sampler, on_window=emit)
    report = build_report(samples, hpd_level, hpd_resolution, strict_paper_mode)
    return samples, report


def write_detection(out_dir, samples: PosteriorSamples, report: DetectionReport, extra: dict):
    out_dir = Path(out_dir)
    formats.write_samples(out_dir / "samples.csv", samples)
    document = report.to_dict()
    document.update(extra)
    formats.write_json(out_dir / "report.json", document)
    return document
