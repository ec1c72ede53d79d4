"""Command line front end: synth, train, predict, eval, tree-opt, count, ablate.

Every command writes into ``--out``: its outputs, the resolved configuration
(``config.txt``) and a plain-text ``index.txt`` listing the files it wrote.
"""
import argparse
import os
import sys

import numpy as np

from . import combiner, experiments, postproc
from .architectures import Network
from . import eval as ev
from .data import (
    Entry,
    SynthParams,
    generate_scene,
    load_raw,
    load_scene,
    meta_path,
    meta_to_text,
    params_from_text,
    params_to_text,
    read_manifest,
    save_image,
    save_mask,
    save_prob_pgm,
    save_raw,
    split_of,
    write_manifest,
)


class CliError(Exception):
    pass


class _Out:
    """Output directory bookkeeping."""

    def __init__(self, path):
        os.makedirs(path, exist_ok=True)
        self.path = path
        self.files = []

    def __call__(self, *parts):
        p = os.path.join(self.path, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self.files.append(os.path.relpath(p, self.path))
        return p

    def config(self, args, extra=""):
        with open(self("config.txt"), "w") as f:
            for k, v in sorted(vars(args).items()):
                if k != "func":
                    f.write(f"{k}={v}\n")
            f.write(extra)

    def close(self):
        with open(os.path.join(self.path, "index.txt"), "w") as f:
            for name in self.files:
                f.write(name + "\n")


def _need(path, what):
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _entries(args):
    entries = read_manifest(_need(args.manifest, "manifest"))
    if getattr(args, "split", None):
        entries = split_of(entries, args.split)
    if not entries:
        raise CliError(f"no scenes in split {args.split!r} of {args.manifest}")
    return entries


def _pred_map(directory, scene_id):
    return load_raw(_need(os.path.join(directory, f"{scene_id}.map"), "prediction map"))


# -- commands --------------------------------------------------------------------------

def cmd_synth(args):
    base = SynthParams()
    if args.params:
        with open(_need(args.params, "synth parameter file")) as f:
            base = params_from_text(f.read())
    counts = {"train": args.train, "val": args.val, "test": args.test}
    out = _Out(args.out)
    entries = []
    k = 0
    for split in ("train", "val", "test"):
        for _ in range(counts[split]):
            p = SynthParams(**{**vars(base), "seed": args.seed + k})
            scene = generate_scene(p)
            sid = f"scene{k:03d}"
            img, mask = out("images", sid + ".ppm"), out("masks", sid + ".pgm")
            save_image(img, scene.image)
            save_mask(mask, scene.mask)
            with open(out(os.path.relpath(meta_path(mask), args.out)), "w") as f:
                f.write(meta_to_text(scene.meta))
            entries.append(Entry(sid, img, mask, split))
            k += 1
    write_manifest(out("manifest.tsv"), entries)
    out.config(args, "# scene parameters (seed is --seed + scene index)\n" + params_to_text(base))
    out.close()
    print(f"wrote {len(entries)} scenes to {args.out}")


def _train_config(args):
    cfg = experiments.TrainConfig()
    if args.config:
        with open(_need(args.config, "training config")) as f:
            cfg = experiments.TrainConfig.from_text(f.read())
    over = {"seed": args.seed, "profile": args.profile, "mode": args.mode, "target": args.cls,
            "epochs": args.epochs, "iters_per_epoch": args.iters, "lr": args.lr,
            "batch_size": args.batch_size, "positive_fraction": args.positive_fraction,
            "hard_negatives": args.hard_negatives, "lr_decay": args.lr_decay, "rho": args.rho}
    for k, v in over.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


def cmd_train(args):
    cfg = _train_config(args)
    entries = read_manifest(_need(args.manifest, "manifest"))
    train_s = [load_scene(e) for e in split_of(entries, "train")]
    val_s = [load_scene(e) for e in split_of(entries, "val")]
    if not train_s or not val_s:
        raise CliError("manifest needs both train and val scenes")
    out = _Out(args.out)

    def progress(epoch, log):
        print(f"epoch {epoch}: mean loss {np.mean(log.losses[-cfg.iters_per_epoch:]):.3f} "
              f"val F {log.val_f[-1]:.4f} @ {log.val_threshold[-1]:.2f}", flush=True)

    try:
        res = experiments.train(cfg, train_s, val_s, progress)
    except experiments.DivergenceError as e:
        net = Network(cfg.profile, cfg.mode)
        net.load_state(e.state)
        experiments.save_model(out("last_good.bin"), net)
        out.files.append("last_good.bin.cfg")
        out.close()
        raise CliError(f"training diverged: {e}; last good parameters in {args.out}/last_good.bin")
    experiments.save_model(out("model.bin"), res.net)
    out.files.append("model.bin.cfg")
    res.log.write_losses(out("losses.csv"))
    with open(out("runlog.txt"), "w") as f:
        f.write(f"seed={res.log.seed}\nconfig_hash={res.log.config_hash}\n")
        f.write(f"run_hash={res.log.digest()}\nbest_epoch={res.log.best_epoch}\n")
        f.write(f"stopped_early={res.log.stopped_early}\n")
        f.write("val_f=" + ",".join(f"{v:.6f}" for v in res.log.val_f) + "\n")
        f.write("val_threshold=" + ",".join(f"{v:.2f}" for v in res.log.val_threshold) + "\n")
    with open(out("train_config.txt"), "w") as f:
        f.write(cfg.to_text())
    out.config(args)
    out.close()
    print(f"model written to {args.out}/model.bin (best epoch {res.log.best_epoch})")


def cmd_predict(args):
    net = experiments.load_model(_need(args.model, "model"))
    out = _Out(args.out)
    for e in _entries(args):
        scene = load_scene(e)
        if net.mode == "ra-classifier":
            prob = experiments.ra_map(net, scene.image)
        else:
            prob = experiments.complementarity(net, scene.image, args.blank)
        save_raw(out(f"{e.scene_id}.map"), prob)
        save_prob_pgm(out(f"{e.scene_id}.pgm"), prob)
    out.config(args)
    out.close()
    print(f"predictions written to {args.out}")


def cmd_eval(args):
    pairs = []
    ids = []
    for e in _entries(args):
        scene = load_scene(e)
        pairs.append((_pred_map(args.pred, e.scene_id), scene.mask))
        ids.append(e.scene_id)
    grid = ev.threshold_grid(args.grid_step)
    out = _Out(args.out)
    rows = ev.sweep_many(pairs, grid, args.rho, pooled=args.pooled)
    ev.write_csv(out("sweep.csv"), rows)
    for sid, (p, g) in zip(ids, pairs):
        ev.write_csv(out("per_image", f"{sid}.csv"), ev.sweep(p, g, grid, args.rho))
    best = ev.best_row(rows)
    out.config(args)
    out.close()
    print(f"best mean F {best.f_measure:.4f} at threshold {best.threshold:.2f}")


def cmd_tree_opt(args):
    data = []
    ra_pairs = []
    for e in _entries(args):
        scene = load_scene(e)
        ls, ra = _pred_map(args.lseg, e.scene_id), _pred_map(args.ra, e.scene_id)
        data.append(combiner.TreeInputs(ra, ls, scene.mask))
        ra_pairs.append((ra, experiments.ra_truth_map(scene, args.ra_min_buildings)))
    grid = ev.threshold_grid(args.grid_step)
    l2 = ev.best_row(ev.sweep_many([(d.lseg, d.gt) for d in data], grid, args.rho))
    l1 = ev.best_row(ev.sweep_many(ra_pairs, grid, 0))
    t, trace = combiner.optimize_triplet(data, grid, (l1.threshold, l2.threshold), args.rho,
                                         refine=args.refine)
    out = _Out(args.out)
    combiner.write_trace(out("trace.csv"), trace)
    with open(out("triplet.txt"), "w") as f:
        f.write(f"L1={t.L1}\nL2={t.L2}\nL3={t.L3}\nmean_f={trace[-1].mean_f:.6f}\n"
                f"single_threshold_f={l2.f_measure:.6f}\n")
    out.config(args)
    out.close()
    print(f"L1={t.L1:.3f} L2={t.L2:.3f} L3={t.L3:.3f}: mean F {trace[-1].mean_f:.4f} "
          f"(single threshold {l2.f_measure:.4f})")


def cmd_count(args):
    if args.threshold is None:
        if not args.val_pred:
            raise CliError("give --threshold or --val-pred to select one")
        val = [(_pred_map(args.val_pred, e.scene_id), load_scene(e).mask)
               for e in split_of(read_manifest(args.manifest), "val")]
        if not val:
            raise CliError("manifest has no val scenes for threshold selection")
        args.threshold = postproc.select_threshold(val, args.rho)
    out = _Out(args.out)
    rows = []
    for e in _entries(args):
        scene = load_scene(e)
        blobs = postproc.count_buildings(_pred_map(args.pred, e.scene_id), args.threshold,
                                         args.erode_radius, args.min_area)
        refs = [b for b in (r.bbox(scene.shape) for r in scene.rects("building")) if b is not None]
        rows.append((e.scene_id, postproc.count_report(blobs, refs, args.iou, args.multiplier)))
        postproc.save_overlay(out("overlays", f"{e.scene_id}.ppm"), scene.image, blobs)
    postproc.write_count_csv(out("counts.csv"), rows)
    out.config(args)
    out.close()
    tot = sum(r.detected_count for _, r in rows), sum(r.human_count for _, r in rows)
    print(f"threshold {args.threshold:.3f}: detected {tot[0]} blobs for {tot[1]} reference buildings")


def cmd_ablate(args):
    net = experiments.load_model(_need(args.model, "model"))
    out = _Out(args.out)
    lines = ["scene,blank,decoy_false_positives,boundary_f"]
    for e in _entries(args):
        scene = load_scene(e)
        for blank in experiments.BLANKS:
            prob = experiments.complementarity(net, scene.image, blank)
            save_raw(out(blank, f"{e.scene_id}.map"), prob)
            save_prob_pgm(out(blank, f"{e.scene_id}.pgm"), prob)
            fp = experiments.decoy_false_positives(prob, scene, args.threshold)
            bf = experiments.boundary_f(prob, scene, args.threshold)
            lines.append(f"{e.scene_id},{blank},{fp},{bf:.6f}")
    with open(out("ablation.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")
    out.config(args)
    out.close()
    print("\n".join(lines))


# -- parser ---------------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="aeroseg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes and a manifest")
    p.add_argument("--seed", type=int, default=0, help="seed of the first scene")
    p.add_argument("--train", type=int, default=6)
    p.add_argument("--val", type=int, default=1)
    p.add_argument("--test", type=int, default=2)
    p.add_argument("--params", help="key=value scene parameter file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on the train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value training config; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=["desk", "paper"])
    p.add_argument("--mode", choices=["dual", "local-only", "global-only", "ra-classifier"])
    p.add_argument("--class", dest="cls", choices=experiments.TARGETS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--iters", type=int, help="iterations per epoch")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", type=float, help="per-epoch learning-rate factor")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--positive-fraction", type=float)
    p.add_argument("--hard-negatives", type=float)
    p.add_argument("--rho", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write probability maps for a split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--blank", default="none", choices=experiments.BLANKS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="threshold sweep of relaxed correctness/completeness")
    p.add_argument("--pred", required=True, help="directory of .map predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--rho", type=int, default=3)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--pooled", action="store_true", help="pool pixel counts over images")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tree-opt", help="search the classifier-tree threshold triplet")
    p.add_argument("--lseg", required=True, help="directory of L-Seg .map predictions")
    p.add_argument("--ra", required=True, help="directory of RA-Seg .map predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--rho", type=int, default=3)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--refine", action="store_true", help="half-step pass after convergence")
    p.add_argument("--ra-min-buildings", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tree_opt)

    p = sub.add_parser("count", help="count buildings as blobs and score against metadata")
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--val-pred", help="val-split predictions used to select the threshold")
    p.add_argument("--rho", type=int, default=3)
    p.add_argument("--erode-radius", type=int, default=1)
    p.add_argument("--min-area", type=int, default=4)
    p.add_argument("--iou", type=float, default=0.3)
    p.add_argument("--multiplier", type=int, default=2, help="houses credited per residential hit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("ablate", help="blank one pathway of a dual model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, ValueError, OSError) as e:
        print(f"aeroseg {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
