"""
End-to-end extraction pipeline: synthesize, train, extract, evaluate and
run the K sweep and ablation experiments.
"""

from __future__ import annotations

import logging

import numpy as np

from c2f_codec import C2FCodec, RawCoordinateCodec, count_roundtrip_failures, encode_centerline
from data_storage import DatasetStorage, ground_truth_files, list_centerline_files
from denoiser import Denoiser, check_compatible, init_params, load_checkpoint, make_example, train
from errors import ConfigError, DataError
from metrics import evaluate_cases
from report_generator import SWEEP_RADIUS, ExtractionReportGenerator
from run_config import RunConfig
from synth import make_dataset
from volume_io import load_centerline, split_dataset
from voting import aggregate, aggregate_samples, draw_samples

logger = logging.getLogger(__name__)


class ExtractionPipeline:
    """Ties the codec, denoiser, sampler, voting and metrics together for one RunConfig"""

    def __init__(self, config: RunConfig, progress=False):
        self.config = config
        self.codec_cfg = config.codec_config()
        self.arch = config.denoiser_arch()
        self.progress = progress
        self.reporter = ExtractionReportGenerator()

    # ---- data ----

    def synthesize(self):
        """Generated cases and their (train, val, test) split"""
        cfg = self.config
        cases = make_dataset(cfg.n_cases, cfg.tree_spec(), cfg.seed, cfg.max_len)
        return cases, split_dataset(cases, cfg.split_spec())

    def prepare_examples(self, cases):
        """C2F matrices paired with pooled volume features and ridge voxels"""
        return [
            make_example(
                encode_centerline(c.centerline, c.volume.dims, self.codec_cfg), c.volume, self.arch, self.codec_cfg
            )
            for c in cases
        ]

    # ---- training ----

    def train(self, storage: DatasetStorage):
        splits = storage.load_split()
        train_cases = storage.load_cases(splits["train"])
        val_cases = storage.load_cases(splits["val"])
        if not train_cases or not val_cases:
            raise DataError(
                f"training needs non-empty train and val splits, got {len(train_cases)}/{len(val_cases)}"
            )
        logger.info(f"training on {len(train_cases)} cases, validating on {len(val_cases)}")
        params = init_params(self.arch, seed=self.config.seed)
        logger.info(f"denoiser has {params.count()} parameters")
        return train(
            params, self.arch, self.prepare_examples(train_cases), self.prepare_examples(val_cases),
            self.config.train_config(), self.config.schedule(), progress=self.progress,
        )

    def load_denoiser(self, ckpt_path):
        """Checkpoint as a sampler-ready Denoiser; refuses architecture mismatches"""
        params, arch = load_checkpoint(ckpt_path)
        check_compatible(self.arch, arch)
        return Denoiser(params, arch, self.codec_cfg, self.config.schedule())

    # ---- extraction ----

    def extract(self, denoiser, volume, K=None):
        voting_cfg = self.config.voting_config(K)
        return aggregate(
            denoiser, volume, voting_cfg, self.config.sampler_config(), self.codec_cfg, progress=self.progress
        )

    def tau_mode(self):
        return "auto" if self.config.voting_config().tau is None else "fixed"

    def sample_cases(self, denoiser, cases, K_max):
        """K_max decoded samples per case with seeds seed_base.. so smaller K reuse a prefix"""
        cfg = self.config
        if K_max > cfg.max_seeds:
            raise ConfigError(f"K={K_max} exceeds max_seeds={cfg.max_seeds}")
        seeds = range(cfg.seed_base, cfg.seed_base + K_max)
        samples = {}
        for case in cases:
            samples[case.id] = draw_samples(
                denoiser, case.volume, seeds, cfg.sampler_config(), self.codec_cfg, cfg.workers, self.progress,
            )
            logger.debug(f"{case.id}: sampled {K_max} centerlines")
        return samples

    def _aggregate_prefix(self, cases, samples, K):
        """Aggregate the first K samples of every case; returns (pairs, taus)"""
        tau = self.config.voting_config().tau
        if tau is not None:
            tau = min(tau, K)
        pairs, taus = [], []
        for case in cases:
            result = aggregate_samples(samples[case.id][:K], case.volume.dims, tau)
            pairs.append((case.id, result.aggregated, case.centerline))
            taus.append(result.tau_used)
        return pairs, taus

    # ---- evaluation ----

    def evaluate_directories(self, pred_dir, gt_dir, split="all"):
        """Metrics table for prediction files matched to ground truth by case id"""
        preds = list_centerline_files(pred_dir)
        truths = ground_truth_files(gt_dir, split)
        missing_pred = sorted(set(truths) - set(preds))
        missing_gt = sorted(set(preds) - set(truths))
        if missing_pred or missing_gt:
            parts = []
            if missing_pred:
                parts.append(f"no prediction for: {', '.join(missing_pred)}")
            if missing_gt:
                parts.append(f"no ground truth for: {', '.join(missing_gt)}")
            raise DataError("case ids do not match; " + "; ".join(parts))
        if not truths:
            raise DataError(f"no centerline files found in {gt_dir}")
        pairs = [(i, load_centerline(preds[i]), load_centerline(truths[i])) for i in sorted(truths)]
        return evaluate_cases(pairs, self.config.radii, self.config.connectivity)

    # ---- experiments ----

    def sweep(self, denoiser, cases, k_values):
        """Mean F1@R=1 and Betti numbers per K over nested sample prefixes"""
        k_values = sorted(set(int(k) for k in k_values))
        samples = self.sample_cases(denoiser, cases, k_values[-1])
        radii = sorted(set(float(r) for r in self.config.radii) | {SWEEP_RADIUS})
        rows = []
        for K in k_values:
            pairs, taus = self._aggregate_prefix(cases, samples, K)
            table = evaluate_cases(pairs, radii, self.config.connectivity)
            row = self.reporter.sweep_row(K, table, taus)
            logger.info(f"K={K}: F1@R=1={row['f1_r1']:.4f} betti0={row['betti0']:.2f}")
            rows.append(row)
        return self.reporter.sweep_table(rows)

    def codec_ablation(self, centerlines, dims):
        """Round-trip failures of C2F vs raw coordinates under growing noise"""
        cfg = self.config
        codecs = [
            C2FCodec(self.codec_cfg),
            RawCoordinateCodec(cfg.max_len, cfg.bit_low, cfg.bit_high, cfg.flag_threshold),
        ]
        rows = []
        for sigma in cfg.ablation_noise:
            for codec in codecs:
                rng = np.random.default_rng([cfg.seed, int(round(sigma * 1e6))])
                failures = count_roundtrip_failures(codec, centerlines, dims, sigma, rng)
                rows.append({"noise_sigma": sigma, "codec": codec.name, "failures": failures,
                             "total": len(centerlines)})
        return self.reporter.codec_ablation_table(rows)

    def vote_ablation(self, denoiser, cases):
        """Single sample (vote off) against K-sample voting (vote on), same seeds"""
        K = self.config.K
        samples = self.sample_cases(denoiser, cases, K)
        variants = []
        for name, k in (("vote_off", 1), ("vote_on", K)):
            pairs, _ = self._aggregate_prefix(cases, samples, k)
            variants.append((name, k, evaluate_cases(pairs, self.config.radii, self.config.connectivity)))
        return self.reporter.vote_ablation_table(variants)
