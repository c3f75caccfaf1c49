"""
luigi tasks for the loss ablation.

SyntheticSuite -> VariantFits (one per loss variant) -> AblationReport

Every output file name carries a salted version of the task and everything upstream of it, so
changing a suite parameter, the seed count or the config re-runs exactly the work it affects.
"""
import logging
import os
from dataclasses import replace
from typing import Tuple

import luigi
import pandas as pd
from luigi.util import inherits

from crowd_points import salted
from crowd_points.annotations import read_scenes, write_scenes
from crowd_points.config import load_config, suite_defaults
from crowd_points.fitting import ABLATION_VARIANTS, FitConfig, fit_suite, summarize_fits
from crowd_points.points import LossConfig
from crowd_points.reports import format_table
from crowd_points.synthetic import apply_annotation_noise, generate_suite

logger = logging.getLogger(__name__)

join = os.path.join


class SyntheticSuite(luigi.Task):
    """Writes a suite of clean scenes and its noisy copy (deletions, then jitter) as scene files"""

    __version__ = "0.1.0"

    suite = suite_defaults()

    output_dir = luigi.Parameter(default="data")
    n_scenes = luigi.IntParameter(default=suite["n_scenes"])
    width = luigi.IntParameter(default=suite["width"])
    height = luigi.IntParameter(default=suite["height"])
    n_points = luigi.IntParameter(default=suite["n_points"])
    distribution = luigi.Parameter(default=suite["distribution"])
    jitter = luigi.FloatParameter(default=suite["jitter"])
    deletion_rate = luigi.FloatParameter(default=suite["deletion_rate"])
    suite_seed = luigi.IntParameter(default=suite["suite_seed"])

    def output(self) -> dict:
        salt = salted.get_salted_version(self)
        return {
            "clean": luigi.LocalTarget(join(self.output_dir, "suites", f"clean-{salt}.jsonl")),
            "noisy": luigi.LocalTarget(join(self.output_dir, "suites", f"noisy-{salt}.jsonl")),
        }

    def run(self) -> None:
        scenes = generate_suite(
            self.n_scenes, self.width, self.height, self.n_points, self.distribution, self.suite_seed
        )
        noisy = apply_annotation_noise(scenes, self.jitter, self.deletion_rate, self.suite_seed + 1)
        logger.info("generated %d scenes, %d points before noise", len(scenes), sum(s.n for s in scenes))

        # atomic writes, a half-written suite must not look complete
        for name, suite in (("clean", scenes), ("noisy", noisy)):
            with self.output()[name].temporary_path() as tmp:
                write_scenes(tmp, suite)


@inherits(SyntheticSuite)
class VariantFits(luigi.Task):
    """Fits every noisy scene for every seed with one loss variant; one CSV row per fit"""

    __version__ = "0.1.0"

    variant_id = luigi.IntParameter()
    n_seeds = luigi.IntParameter(default=SyntheticSuite.suite["n_seeds"])
    config = luigi.Parameter(default="")
    steps = luigi.IntParameter(default=-1)  # -1 keeps the config value

    def requires(self) -> SyntheticSuite:
        return self.clone(SyntheticSuite)

    def output(self) -> luigi.LocalTarget:
        return luigi.LocalTarget(
            join(self.output_dir, "fits", f"variant{self.variant_id}-{salted.get_salted_version(self)}.csv")
        )

    def resolved_config(self) -> Tuple[LossConfig, FitConfig]:
        loss_cfg, fit_cfg = load_config(self.config or None)
        if self.steps >= 0:
            fit_cfg = replace(fit_cfg, steps=self.steps)
        return loss_cfg, fit_cfg

    def salted_settings(self) -> str:
        # an edited config file must not reuse fits made with its old contents
        loss_cfg, fit_cfg = self.resolved_config()
        return repr(loss_cfg) + repr(fit_cfg)

    def run(self) -> None:
        clean = {s.image_id: s.n for s in read_scenes(self.input()["clean"].path)}
        noisy = read_scenes(self.input()["noisy"].path)
        loss_cfg, fit_cfg = self.resolved_config()

        records = fit_suite(
            noisy,
            ABLATION_VARIANTS[self.variant_id],
            range(self.n_seeds),
            fit_cfg,
            loss_cfg,
            variant_id=self.variant_id,
            clean_counts=clean,
        )
        with self.output().temporary_path() as tmp:
            records.to_csv(tmp, index=False)


@inherits(SyntheticSuite)
class AblationReport(luigi.Task):
    """Aggregates the fits of every variant into one row per variant"""

    __version__ = "0.1.0"

    variant_ids = luigi.ListParameter(default=sorted(ABLATION_VARIANTS))
    n_seeds = luigi.IntParameter(default=SyntheticSuite.suite["n_seeds"])
    config = luigi.Parameter(default="")
    steps = luigi.IntParameter(default=-1)
    fmt = luigi.ChoiceParameter(default="csv", choices=["csv", "json"])

    def requires(self) -> list:
        return [self.clone(VariantFits, variant_id=i) for i in self.variant_ids]

    def output(self) -> luigi.LocalTarget:
        return luigi.LocalTarget(join(self.output_dir, f"ablation-{salted.get_salted_version(self)}.{self.fmt}"))

    def run(self) -> None:
        records = pd.concat([pd.read_csv(target.path) for target in self.input()], ignore_index=True)
        table = summarize_fits(records)
        with self.output().open("w") as out:
            out.write(format_table(table, self.fmt, "ablate"))
