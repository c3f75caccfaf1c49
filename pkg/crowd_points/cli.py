"""
Command-line entry point: ``python -m crowd_points <command> ...``

Commands: match, loss, eval, gen, fit, ablate, density. Reports go to ``--output`` (stdout by
default) as CSV or JSON; diagnostics go to stderr. Exit code 0 on success, 1 on a data or
config error, 2 on a usage error. ``PM_THREADS`` bounds the worker count.
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, List, Optional, Sequence

import luigi
import pandas as pd

from crowd_points import __version__
from crowd_points.annotations import (
    SchemaError,
    parse_ground_truth,
    parse_predictions,
    read_scenes,
    write_predictions,
    write_scenes,
)
from crowd_points.assignment import METHODS, build_cost_matrix, hungarian_match, match_points, matching_cost
from crowd_points.config import load_config, suite_defaults
from crowd_points.fitting import ABLATION_VARIANTS, fit_points
from crowd_points.losses import ttc_total
from crowd_points.metrics import evaluate_predictions
from crowd_points.pipeline import AblationReport
from crowd_points.points import CountMismatch, PointMatchError, ValidationError
from crowd_points.reports import FORMATS, write_table
from crowd_points.synthetic import (
    DENSITY_METHODS,
    DISTRIBUTIONS,
    apply_annotation_noise,
    expected_density_mass,
    generate_suite,
    integrate_density,
    render_density_map,
)

logger = logging.getLogger(__name__)


def n_threads() -> int:
    """Worker count from PM_THREADS, all cores by default"""
    raw = os.environ.get("PM_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        threads = int(raw)
    except ValueError:
        raise ValidationError("PM_THREADS", f"expected a positive integer, got {raw!r}") from None
    if threads < 1:
        raise ValidationError("PM_THREADS", f"expected a positive integer, got {raw!r}")
    return threads


def map_images(fn: Callable, items: Sequence) -> List:
    """Applies ``fn`` to every item on a thread pool, keeping the input order"""
    with ThreadPoolExecutor(max_workers=n_threads()) as pool:
        return list(pool.map(fn, items))


def paired_images(gt_path: str, pred_path: str) -> List[tuple]:
    """(image_id, PointSet, ProposalSet) sorted by image id"""
    gt = dict(parse_ground_truth(gt_path))
    pred = dict(parse_predictions(pred_path))
    if set(gt) != set(pred):
        missing = sorted(set(gt) ^ set(pred))
        raise SchemaError(f"image ids present in only one file: {', '.join(missing)}")
    return [(image_id, gt[image_id], pred[image_id]) for image_id in sorted(gt)]


def _naming_image(image_id: str, fn: Callable):
    try:
        return fn()
    except CountMismatch as e:
        raise CountMismatch(f"{image_id}: {e}", image_id) from e


def cmd_match(args) -> int:
    loss_cfg, _ = load_config(args.config, args.seed)

    def one(item):
        image_id, gt, pred = item

        def solve():
            cost = build_cost_matrix(gt, pred, loss_cfg.gamma)
            matching = hungarian_match(cost, method=args.method)
            return {
                "image_id": image_id,
                "n_gt": gt.n,
                "n_pred": pred.m,
                "cost": matching_cost(cost, matching),
                "assignment": " ".join(map(str, matching.assignment)),
                "unmatched": " ".join(map(str, matching.unmatched)),
            }

        return _naming_image(image_id, solve)

    rows = map_images(one, paired_images(args.gt, args.pred))
    columns = ["image_id", "n_gt", "n_pred", "cost", "assignment", "unmatched"]
    write_table(pd.DataFrame(rows, columns=columns), args.format, "match", args.output)
    return 0


def cmd_loss(args) -> int:
    loss_cfg, _ = load_config(args.config, args.seed)

    def one(item):
        image_id, gt, pred = item

        def evaluate():
            report = ttc_total(gt, pred, match_points(gt, pred, loss_cfg), loss_cfg)
            return {"image_id": image_id, "n_gt": gt.n, "n_pred": pred.m, **report.as_dict()}

        return _naming_image(image_id, evaluate)

    rows = map_images(one, paired_images(args.gt, args.pred))
    columns = ["image_id", "n_gt", "n_pred", "l_reg", "l_cls", "l_cou", "total"]
    write_table(pd.DataFrame(rows, columns=columns), args.format, "loss", args.output)
    return 0


def cmd_eval(args) -> int:
    loss_cfg, _ = load_config(args.config, args.seed)
    result = evaluate_predictions(parse_ground_truth(args.gt), parse_predictions(args.pred), loss_cfg.threshold)
    table = result.per_image.astype({"gt_count": int, "pred_count": int})
    write_table(table, args.format, "eval", args.output)
    # stdout stays parseable JSON
    summary = sys.stderr if args.format == "json" else sys.stdout
    summary.write(f"MAE={result.mae:g} MSE={result.mse:g}\n")
    return 0


def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else args.suite_seed
    scenes = generate_suite(args.n_scenes, args.width, args.height, args.n_points, args.distribution, seed)
    noisy = apply_annotation_noise(scenes, args.jitter, args.deletion_rate, seed + 1)
    write_scenes(os.path.join(args.output_dir, "clean.jsonl"), scenes)
    write_scenes(os.path.join(args.output_dir, "noisy.jsonl"), noisy)
    table = pd.DataFrame(
        {
            "image_id": [s.image_id for s in scenes],
            "clean_count": [s.n for s in scenes],
            "noisy_count": [s.n for s in noisy],
        }
    )
    write_table(table, args.format, "gen", args.output)
    return 0


def _select_scene(path: str, image_id: Optional[str]):
    scenes = read_scenes(path)
    if not scenes:
        raise SchemaError(f"{path} holds no scenes")
    if image_id is None:
        return scenes[0]
    for scene in scenes:
        if scene.image_id == image_id:
            return scene
    raise SchemaError(f"no scene {image_id!r} in {path}")


def cmd_fit(args) -> int:
    loss_cfg, fit_cfg = load_config(args.config, args.seed)
    if args.variant not in ABLATION_VARIANTS:
        raise ValidationError("variant", f"expected one of {sorted(ABLATION_VARIANTS)}, got {args.variant}")
    fit_cfg = replace(fit_cfg, variant=ABLATION_VARIANTS[args.variant])
    scene = _select_scene(args.scenes, args.image_id)
    initial = None
    if args.init_from:
        initial = dict(parse_predictions(args.init_from)).get(scene.image_id)
        if initial is None:
            raise SchemaError(f"no proposals for {scene.image_id!r} in {args.init_from}")

    trace = fit_points(scene, fit_cfg, loss_cfg, initial)
    history = trace.history
    keep = (history["step"] % args.every == 0) | (history["step"] == history["step"].iloc[-1])
    write_table(history[keep].reset_index(drop=True), args.format, "fit", args.output)
    if args.predictions:
        write_predictions(args.predictions, [(scene.image_id, trace.final)])
    logger.info("%s: loss %.6f -> %.6f", scene.image_id, trace.initial_loss, trace.final_loss)
    return 0


def cmd_ablate(args) -> int:
    # fail on a bad config here, not inside the scheduler
    load_config(args.config)
    task = AblationReport(
        output_dir=args.work_dir,
        n_scenes=args.n_scenes,
        width=args.width,
        height=args.height,
        n_points=args.n_points,
        jitter=args.jitter,
        deletion_rate=args.deletion_rate,
        distribution=args.distribution,
        suite_seed=args.seed if args.seed is not None else args.suite_seed,
        n_seeds=args.seeds,
        variant_ids=args.variants,
        config=args.config or "",
        steps=args.steps,
        fmt=args.format,
    )
    ok = luigi.build([task], local_scheduler=True, workers=n_threads())
    if not ok:
        raise PointMatchError("ablation pipeline failed, see the luigi log above")
    with task.output().open("r") as report:
        text = report.read()
    if args.output is None:
        sys.stdout.write(text)
    else:
        with open(args.output, mode="w", encoding="utf-8", newline="") as out:
            out.write(text)
    return 0


def cmd_density(args) -> int:
    scenes = sorted(read_scenes(args.scenes), key=lambda s: s.image_id)

    def one(scene):
        integral = integrate_density(render_density_map(scene, args.sigma, args.method))
        return {
            "image_id": scene.image_id,
            "n_points": scene.n,
            "integral": integral,
            "expected": expected_density_mass(scene, args.sigma),
            "deficit": scene.n - integral,
        }

    rows = map_images(one, scenes)
    columns = ["image_id", "n_points", "integral", "expected", "deficit"]
    write_table(pd.DataFrame(rows, columns=columns), args.format, "density", args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    suite = suite_defaults()

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat YAML config file")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--format", choices=FORMATS, default="csv")
    common.add_argument("--output", default=None, help="report file, stdout by default")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="crowd_points", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"crowd_points {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def suite_args(p):
        p.add_argument("--n-scenes", type=int, default=suite["n_scenes"])
        p.add_argument("--width", type=int, default=suite["width"])
        p.add_argument("--height", type=int, default=suite["height"])
        p.add_argument("--n-points", type=int, default=suite["n_points"])
        p.add_argument("--distribution", choices=DISTRIBUTIONS, default=suite["distribution"])
        p.add_argument("--jitter", type=float, default=suite["jitter"])
        p.add_argument("--deletion-rate", type=float, default=suite["deletion_rate"])
        p.set_defaults(suite_seed=suite["suite_seed"])

    p = commands.add_parser("match", parents=[common], help="matching of predictions to ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--method", choices=METHODS, default="scipy")
    p.set_defaults(func=cmd_match)

    p = commands.add_parser("loss", parents=[common], help="TTC loss per image")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=cmd_loss)

    p = commands.add_parser("eval", parents=[common], help="MAE / MSE of decoded counts")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("gen", parents=[common], help="synthetic scenes with annotation noise")
    suite_args(p)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = commands.add_parser("fit", parents=[common], help="fit proposals to one scene")
    p.add_argument("--scenes", required=True)
    p.add_argument("--image-id", default=None)
    p.add_argument("--variant", type=int, default=10, help="loss ablation id, 10 is the full TTC loss")
    p.add_argument("--every", type=int, default=1, help="report every k-th step")
    p.add_argument("--predictions", default=None, help="write the fitted proposals here")
    p.add_argument("--init-from", default=None, help="start from the proposals of a predictions file")
    p.set_defaults(func=cmd_fit)

    p = commands.add_parser("ablate", parents=[common], help="loss ablation on a noisy synthetic suite")
    suite_args(p)
    p.add_argument("--seeds", type=int, default=suite["n_seeds"], help="number of fit seeds")
    p.add_argument("--steps", type=int, default=-1, help="fit steps, the config value by default")
    p.add_argument("--variants", type=int, nargs="+", default=sorted(ABLATION_VARIANTS))
    p.add_argument("--work-dir", default="data", help="where the luigi targets live")
    p.set_defaults(func=cmd_ablate)

    p = commands.add_parser("density", parents=[common], help="density-map integral against point count")
    p.add_argument("--scenes", required=True)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--method", choices=DENSITY_METHODS, default="integral")
    p.set_defaults(func=cmd_density)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parses ``argv`` (sys.argv by default), runs the command and returns the exit code"""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        return args.func(args)
    except PointMatchError as e:
        sys.stderr.write(f"error: {e.__class__.__name__}: {e}\n")
        return 1
    except OSError as e:
        sys.stderr.write(f"error: {e.__class__.__name__}: {e}\n")
        return 1
