import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from config import load_config
from dataset_processor import DatasetProcessor
from errors import PSForgeError
from evaluation import DEFAULT_KEYPOINT_SOURCE, DEFAULT_N_POINTS, DEFAULT_PAIRING_ANCHOR
from evaluation_processor import DEFAULT_BATCH_SIZE, DEFAULT_DISTRACTORS, TASKS, EvaluationProcessor
from scene.colmap_handler import ColmapHandler
from synth_scene import LAYOUTS, SynthConfig, write_synthetic

env_path = Path(__file__).parent.parent / '.env'

logger = logging.getLogger("psforge")


def _int_list(text: str):
    return [int(v) for v in text.split(",") if v.strip()]


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="run config file (KEY=value lines)")
    parser.add_argument("--scene", dest="scene_dir", help="COLMAP text model directory")
    parser.add_argument("--images", dest="images_dir", help="image directory (defaults to the scene directory)")
    parser.add_argument("--out", dest="out_dir", help="dataset directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--margin", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psforge", description="Patch-correspondence datasets from SFM models")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build", help="sample pairs and extract patches")
    _add_config_flags(build)
    build.add_argument("--scene-name")
    build.add_argument("--sc-th", type=float)
    build.add_argument("--min-v-th", type=float)
    build.add_argument("--max-v-th", type=float)
    build.add_argument("--scale-jump", type=float)
    build.add_argument("--planar", dest="planar_scene", action="store_const", const=True,
                       help="use the 75 degree viewpoint threshold")
    build.add_argument("--grayscale", action="store_true", help="also write 32x32 grayscale crops")

    evaluate = sub.add_parser("eval", help="evaluate descriptors")
    evaluate.add_argument("task", choices=TASKS)
    _add_config_flags(evaluate)
    evaluate.add_argument("--descriptors", help="descriptor file aligned with the patch file")
    evaluate.add_argument("--labels", help="verify: TSV of row_a, row_b, label")
    evaluate.add_argument("--distractors", type=_int_list, default=list(DEFAULT_DISTRACTORS),
                          help="retrieve: comma-separated distractor counts")
    evaluate.add_argument("--keypoints", help="strecha: 'x y' keypoints of the keypoint-source image")
    evaluate.add_argument("--descriptors-dir", help="strecha: one .psde file per image")
    evaluate.add_argument("--keypoint-source", type=int, default=DEFAULT_KEYPOINT_SOURCE)
    evaluate.add_argument("--anchor", type=int, default=DEFAULT_PAIRING_ANCHOR)
    evaluate.add_argument("--n-points", type=int, default=DEFAULT_N_POINTS)
    evaluate.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)

    stats = sub.add_parser("stats", help="summarize a built dataset")
    _add_config_flags(stats)

    synth = sub.add_parser("gen-synth", help="write a synthetic scene and images")
    synth.add_argument("--out", required=True)
    synth.add_argument("--points", type=int, default=SynthConfig.n_points)
    synth.add_argument("--cameras", type=int, default=SynthConfig.n_cameras)
    synth.add_argument("--radius", type=float, default=SynthConfig.radius)
    synth.add_argument("--width", type=int, default=SynthConfig.width)
    synth.add_argument("--height", type=int, default=SynthConfig.height)
    synth.add_argument("--layout", choices=LAYOUTS, default=SynthConfig.layout)
    synth.add_argument("--elevation", type=float, default=SynthConfig.elevation_deg)
    synth.add_argument("--jitter", type=float, default=SynthConfig.jitter_px)
    synth.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args) -> dict:
    keys = ("scene_dir", "images_dir", "out_dir", "scene_name", "sc_th", "min_v_th", "max_v_th",
            "scale_jump", "planar_scene", "margin", "seed", "threads")
    return {key: getattr(args, key, None) for key in keys}


def cmd_build(args) -> int:
    config = load_config(args.config, _overrides(args))
    manifest = DatasetProcessor(config).build(grayscale=args.grayscale)
    print(f"Built {manifest['counts']['patches']} patches and {manifest['counts']['pairs']} pairs "
          f"in {config.out_dir}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config, _overrides(args))
    scene = ColmapHandler(config.scene_dir).read_model() if config.scene_dir else None
    processor = EvaluationProcessor(config.out_dir, scene=scene, seed=config.seed)
    if args.task == "strecha":
        if not args.keypoints or not args.descriptors_dir:
            raise PSForgeError("eval strecha needs --keypoints and --descriptors-dir")
        report = processor.strecha(args.keypoints, args.descriptors_dir, args.keypoint_source,
                                   args.anchor, args.n_points)
    else:
        if not args.descriptors:
            raise PSForgeError(f"eval {args.task} needs --descriptors")
        if args.task == "mine":
            summary = processor.mine(args.descriptors, args.batch_size, config.margin)
            print(f"loss {summary['loss']:.6f} over {summary['active_rows']} active rows")
            return 0
        if args.task == "match":
            report = processor.match(args.descriptors)
        elif args.task == "verify":
            report = processor.verify(args.descriptors, args.labels)
        else:
            report = processor.retrieve(args.descriptors, args.distractors)
    processor.write_report(report)
    print(f"{report.task}: mAP {report.mean_ap:.4f}")
    return 0


def cmd_stats(args) -> int:
    config = load_config(args.config, _overrides(args))
    summary = DatasetProcessor(config).stats()
    print(f"{summary['tracks']} tracks, {summary['patches']} patches, {summary['pairs']} pairs")
    return 0


def cmd_gen_synth(args) -> int:
    cfg = SynthConfig(n_points=args.points, n_cameras=args.cameras, radius=args.radius, rng_seed=args.seed,
                      width=args.width, height=args.height, layout=args.layout,
                      elevation_deg=args.elevation, jitter_px=args.jitter)
    scene, scene_dir, images_dir = write_synthetic(cfg, args.out)
    print(f"Wrote {len(scene.tracks)} points in {len(scene.views)} views to {scene_dir} and {images_dir}")
    return 0


COMMANDS = {"build": cmd_build, "eval": cmd_eval, "stats": cmd_stats, "gen-synth": cmd_gen_synth}


def main(argv=None) -> int:
    load_dotenv(dotenv_path=env_path)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return COMMANDS[args.command](args)
    except PSForgeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
