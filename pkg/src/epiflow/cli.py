"""Command-line entry points: estimate, refine, segment, eval, synth.

Failures print ``error: <CODE>: <message>`` on one line to stderr and exit
with status 1 (2 for usage errors).
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import io
from .exceptions import EpiflowError
from .optimizer import FINETUNE_DEFAULTS, REGULARIZERS, finetune_epipolar, optimize
from .segmentation import MotionSegmenter
from .subspace import sample_pixels
from .synth import CASES, make_scene
from .types import OcclusionMask, flow_to_correspondences


def _config(args, base=None):
    overrides = {}
    if getattr(args, "regularizer", None):
        overrides["regularizer"] = args.regularizer
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    return io.load_config(args.config, overrides, base)


def _pair(args):
    return io.read_image(args.img1), io.read_image(args.img2)


def _write_flow_outputs(args, flow):
    io.write_flo(args.out, flow)
    if args.viz:
        io.write_image(args.viz, io.flow_to_color(flow))


def cmd_estimate(args):
    result = optimize(_pair(args), _config(args))
    _write_flow_outputs(args, result.forward)


def cmd_refine(args):
    init = io.read_flo(args.init)
    result = finetune_epipolar(_pair(args), init, _config(args, FINETUNE_DEFAULTS))
    _write_flow_outputs(args, result.forward)


def cmd_segment(args):
    cfg = _config(args)
    ref, target = _pair(args)
    if args.flow:
        flow, mask = io.read_flo(args.flow), OcclusionMask.ones(*ref.shape)
    else:
        result = optimize((ref, target), cfg)
        flow, mask = result.forward, result.occlusion
    index = sample_pixels(mask, cfg.loss.sample_count, cfg.loss.rng_seed)
    corrs = flow_to_correspondences(flow).subset(index)
    k = "auto" if args.k == "auto" else int(args.k)
    seg = MotionSegmenter(n_motions=k, lambda_sub=cfg.loss.lambda_sub,
                          random_state=cfg.loss.rng_seed).fit(corrs)
    xy = corrs.points
    rows = np.column_stack([xy, corrs.points + corrs.displacement])
    with open(args.out, "w") as f:
        f.write("x,y,x2,y2,label\n")
        for (x, y, x2, y2), label in zip(rows, seg.labels_):
            f.write(f"{x:.0f},{y:.0f},{x2:.6f},{y2:.6f},{label}\n")
    if args.affinity:
        io.write_image(args.affinity, io.affinity_image(seg.affinity_, seg.labels_))
    print(json.dumps({"k": int(seg.n_motions_), "points": len(corrs)}))


def cmd_eval(args):
    est = io.read_flo(args.est)
    gt, valid = io.read_flow(args.gt)
    noc = io.read_mask(args.noc) if args.noc else None
    result = io.evaluate(est, gt, valid, noc)
    print(json.dumps(result.to_dict()))


def cmd_synth(args):
    scene = make_scene(args.case, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_image(os.path.join(args.out_dir, "img1.png"), scene.ref)
    io.write_image(os.path.join(args.out_dir, "img2.png"), scene.target)
    io.write_flo(os.path.join(args.out_dir, "flow.flo"), scene.flow)
    io.write_image(os.path.join(args.out_dir, "occlusion.png"), scene.occlusion.values.astype(float))
    np.savetxt(os.path.join(args.out_dir, "labels.csv"), scene.labels, fmt="%d", delimiter=",")


def build_parser():
    parser = argparse.ArgumentParser(prog="epiflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def flow_command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("img1")
        p.add_argument("img2")
        p.add_argument("--regularizer", choices=REGULARIZERS)
        p.add_argument("--out", required=True)
        p.add_argument("--viz")
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--iterations", type=int)
        p.set_defaults(func=func)
        return p

    flow_command("estimate", cmd_estimate, "estimate optical flow for an image pair")
    refine = flow_command("refine", cmd_refine, "refine an existing flow at full resolution")
    refine.add_argument("--init", required=True)

    seg = sub.add_parser("segment", help="segment sampled points into rigid motions")
    seg.add_argument("img1")
    seg.add_argument("img2")
    seg.add_argument("--flow")
    seg.add_argument("--k", default="auto")
    seg.add_argument("--out", required=True)
    seg.add_argument("--affinity")
    seg.add_argument("--regularizer", choices=REGULARIZERS)
    seg.add_argument("--config")
    seg.add_argument("--seed", type=int)
    seg.set_defaults(func=cmd_segment)

    ev = sub.add_parser("eval", help="score a flow against ground truth (prints JSON)")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--noc")
    ev.set_defaults(func=cmd_eval)

    syn = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    syn.add_argument("case", choices=sorted(CASES))
    syn.add_argument("--out-dir", default=".")
    syn.add_argument("--seed", type=int, default=0)
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "k", "auto") != "auto":
        try:
            int(args.k)
        except ValueError:
            print(f"error: BAD_ARGUMENT: --k must be an integer or 'auto', got {args.k!r}", file=sys.stderr)
            return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except EpiflowError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: FILE_NOT_FOUND: {exc.filename}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: INVALID_INPUT: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
