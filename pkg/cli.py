"""
Command-line driver: synth | train | extract | eval | sweep | ablation | render

Exit codes: 0 success, 2 usage/config error, 3 data/format error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from data_storage import (
    DatasetStorage,
    ensure_output_directory,
    refuse_existing,
    save_table,
)
from denoiser import save_checkpoint
from errors import CenterlineError, UsageError
from pipeline import ExtractionPipeline
from run_config import load_config
from visualization_utils import CenterlineVisualizer
from volume_io import load_centerline, load_volume, save_centerline
from voting import dump_vote_grid

logger = logging.getLogger(__name__)


def _sidecar(path, suffix):
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _echo_config(config, target):
    """config.txt inside output directories, <stem>.config.txt beside output files"""
    target = Path(target)
    if target.is_dir():
        return config.write(target)
    path = _sidecar(target, ".config.txt")
    path.write_text(config.to_text(), encoding="ascii")
    return path


def _parse_list(text, kind, minimum):
    try:
        values = tuple(kind(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad list {text!r}")
    if not values:
        raise UsageError("list must not be empty")
    if min(values) < minimum:
        raise UsageError(f"list {text!r} has values below {minimum}")
    return values


def cmd_synth(config, args, pipeline):
    if args.n is not None:
        if args.n < 1:
            raise UsageError(f"--n must be >= 1, got {args.n}")
        config = config.with_overrides(n_cases=args.n)
        pipeline = ExtractionPipeline(config, pipeline.progress)
    out_dir = ensure_output_directory(args.out_dir, args.force)
    cases, splits = pipeline.synthesize()
    DatasetStorage(out_dir).save_dataset(cases, splits, config)
    return 0


def cmd_train(config, args, pipeline):
    ckpt = refuse_existing(args.ckpt_out, args.force)
    result = pipeline.train(DatasetStorage(args.data_dir))
    save_checkpoint(result.params, pipeline.arch, ckpt)
    loss_path = save_table(pipeline.reporter.loss_history_table(result.history), _sidecar(ckpt, ".loss.csv"))
    _echo_config(config, ckpt)
    logger.info(f"checkpoint (epoch {result.best_epoch}) written to {ckpt}; loss history in {loss_path}")
    return 0


def _write_extraction(pipeline, case_id, volume, out_path, denoiser, dump_votes=False):
    result = pipeline.extract(denoiser, volume)
    save_centerline(result.aggregated, out_path)
    report = pipeline.reporter.format_extract_report(case_id, result, pipeline.tau_mode())
    _sidecar(out_path, ".report.txt").write_text(report, encoding="ascii")
    if dump_votes:
        dump_vote_grid(result.grid, _sidecar(out_path, ".votes.txt"))
    return result


def cmd_extract(config, args, pipeline):
    denoiser = pipeline.load_denoiser(args.ckpt)
    source = Path(args.input)
    if source.is_dir():
        out_dir = ensure_output_directory(args.out, args.force)
        cases = DatasetStorage(source).load_split_cases(args.split)
        if not cases:
            raise UsageError(f"split {args.split!r} of {source} is empty")
        for case in cases:
            _write_extraction(pipeline, case.id, case.volume, out_dir / f"{case.id}.txt", denoiser, args.dump_votes)
        _echo_config(config, out_dir)
        logger.info(f"extracted {len(cases)} {args.split} cases into {out_dir}")
    else:
        out = refuse_existing(args.out, args.force)
        result = _write_extraction(pipeline, source.stem, load_volume(source), out, denoiser, args.dump_votes)
        _echo_config(config, out)
        logger.info(f"wrote {len(result.aggregated)} points to {out} (tau={result.tau_used})")
    return 0


def cmd_eval(config, args, pipeline):
    if args.radii is not None:
        config = config.with_overrides(radii=_parse_list(args.radii, float, minimum=0.0))
        pipeline = ExtractionPipeline(config, pipeline.progress)
    out = refuse_existing(args.out_csv, args.force)
    table = pipeline.evaluate_directories(args.pred_dir, args.gt_dir, args.split)
    save_table(table, out)
    save_table(pipeline.reporter.eval_summary(table), _sidecar(out, ".summary.csv"))
    _echo_config(config, out)
    logger.info("\n" + pipeline.reporter.format_eval_summary(table))
    return 0


def cmd_sweep(config, args, pipeline):
    k_values = _parse_list(args.k_values, int, minimum=1) if args.k_values else config.k_values
    out_dir = ensure_output_directory(args.out_dir, args.force)
    denoiser = pipeline.load_denoiser(args.ckpt)
    cases = DatasetStorage(args.data_dir).load_split_cases("test")
    if not cases:
        raise UsageError(f"test split of {args.data_dir} is empty")
    table = pipeline.sweep(denoiser, cases, k_values)
    save_table(table, out_dir / "sweep.csv")
    visualizer = CenterlineVisualizer()
    figure = visualizer.save_figure(visualizer.create_sweep_chart(table), out_dir / "sweep.svg")
    _echo_config(config, out_dir)
    logger.info(f"sweep over K={list(table['K'])} written to {out_dir / 'sweep.csv'} and {figure}")
    return 0


def cmd_ablation(config, args, pipeline):
    out_dir = ensure_output_directory(args.out_dir, args.force)
    storage = DatasetStorage(args.data_dir)
    cases = storage.load_cases(storage.case_ids())
    codec_table = pipeline.codec_ablation([c.centerline for c in cases], cases[0].volume.dims)
    save_table(codec_table, out_dir / "ablation_codec.csv")
    if args.ckpt:
        denoiser = pipeline.load_denoiser(args.ckpt)
        vote_table = pipeline.vote_ablation(denoiser, storage.load_split_cases("test"))
        save_table(vote_table, out_dir / "ablation_vote.csv")
    _echo_config(config, out_dir)
    logger.info(f"ablation tables written to {out_dir}")
    return 0


def cmd_render(config, args, pipeline):
    pred, gt = load_centerline(args.pred), load_centerline(args.gt)
    visualizer = CenterlineVisualizer()
    out = refuse_existing(args.out, args.force)
    figure = visualizer.create_centerline_figure(pred, gt, radius=args.radius, title=Path(args.pred).stem)
    written = visualizer.save_figure(figure, out)
    logger.info(f"figure written to {written}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablation": cmd_ablation,
    "render": cmd_render,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key=value config file")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument(
        "--seed", type=int, default=None,
        help="override the master seed (synthesis, split, init, training); sampling seeds still start at seed_base",
    )
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(description="Diffusion-based vessel centerline extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("out_dir")
    p.add_argument("--n", type=int, default=None, help="number of cases (default: n_cases)")

    p = sub.add_parser("train", parents=[common], help="train the denoiser")
    p.add_argument("data_dir")
    p.add_argument("ckpt_out")

    p = sub.add_parser("extract", parents=[common], help="sample, vote and write centerlines")
    p.add_argument("ckpt")
    p.add_argument("input", help="volume file or dataset directory")
    p.add_argument("out", help="centerline file, or output directory for a dataset")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--dump-votes", action="store_true", help="also write per-voxel vote counts")

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("out_csv")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"],
                   help="ground-truth cases to expect when gt_dir is a dataset")
    p.add_argument("--radii", default=None, help="comma-separated radii (default: radii)")

    p = sub.add_parser("sweep", parents=[common], help="F1 and Betti-0 against K on the test split")
    p.add_argument("ckpt")
    p.add_argument("data_dir")
    p.add_argument("out_dir")
    p.add_argument("--k-values", default=None, help="comma-separated K values (default: k_values)")

    p = sub.add_parser("ablation", parents=[common], help="C2F vs raw codec and vote on/off")
    p.add_argument("data_dir")
    p.add_argument("out_dir")
    p.add_argument("--ckpt", default=None, help="trained checkpoint for the vote ablation")

    p = sub.add_parser("render", parents=[common], help="3D figure of a prediction against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("out", help=".svg/.png (needs kaleido) or .html")
    p.add_argument("--radius", type=float, default=1.0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_overrides(seed=args.seed)
        pipeline = ExtractionPipeline(config, progress=sys.stderr.isatty())
        return COMMANDS[args.command](config, args, pipeline)
    except CenterlineError as e:
        logger.error(str(e))
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
