"""Command line interface.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import container
from .hafm_codec import residual_gt
from .junction_codec import decode_junctions, encode_junctions, proposals_to_arrays
from .losses import loss_junc, loss_ls, loss_ver, total_loss
from .pipeline import (
    PipelineConfig,
    PredictedMaps,
    Predictor,
    config_help,
    parse,
    predict,
    propose,
    read_config_file,
    run_eval,
    synth_dataset,
    train_scorer,
)
from .scene_io import AnnotationError, SceneError, load_wireframe, save_wireframe
from .verify import MLPScorer, assign_labels, augment_samples, loi_pool_batch

log = logging.getLogger("wireparse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> PipelineConfig:
    kv = read_config_file(args.config) if args.config else {}
    if args.seed is not None:
        kv["seed"] = str(args.seed)
        kv.setdefault("predictor_seed", str(args.seed))
    for key in ("predictor", "sigma", "drop_rate"):
        value = getattr(args, key, None)
        if value is not None:
            kv[key] = str(value)
    try:
        return PipelineConfig.from_kv(kv)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scorer(args, cfg):
    if getattr(args, "scorer", None):
        return MLPScorer.load(args.scorer)
    log.info("no --scorer given, training the reference scorer on %d synthetic scenes", cfg.train_scenes)
    return train_scorer(cfg)


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.n_segments is not None:
        cfg = replace(cfg, synth_segments=args.n_segments)
    out = _out(args)
    for i, wf in enumerate(synth_dataset(cfg, args.n_scenes, cfg.seed)):
        save_wireframe(wf, out / f"scene_{i:04d}.json")
    print(f"wrote {args.n_scenes} scenes to {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    wf = load_wireframe(args.scene)
    spec = cfg.spec_for(wf)
    maps = predict(wf, Predictor("oracle"), spec, cfg)
    out = _out(args)
    maps.save(out)
    if args.text:
        (out / "afm.txt").write_text(container.dump_text(maps.afm.channels, spec))
        (out / "junctions.txt").write_text(container.dump_text(maps.junctions.stack(), spec))
    if args.figure:
        from .plotting import plot_field

        plot_field(maps.afm, out / "afm.png")
    print(f"foreground pixels: {int(maps.afm.foreground.sum())}, junctions: {int(maps.junctions.mask.sum())}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _config(args)
    maps = PredictedMaps.load(args.maps)
    lines, refined, _ = propose(maps, cfg)
    jpos, jscore = proposals_to_arrays(decode_junctions(maps.junctions, cfg.junction_k, cfg.junction_w))
    doc = {
        "coarse_frame": "line proposals in coarse px, junctions in image px",
        "line_proposals": lines.segments.tolist(),
        "line_pixels": lines.pixels.tolist(),
        "junction_proposals": jpos.tolist(),
        "junction_scores": jscore.tolist(),
        "matched_segments": refined.segments.tolist(),
        "matched_pairs": refined.pairs.tolist() if refined.pairs is not None else [],
        "matched_junctions": refined.junctions.tolist(),
    }
    out = _out(args)
    (out / "proposals.json").write_text(json.dumps(doc) + "\n")
    print(f"line proposals: {len(lines)}, junction proposals: {len(jpos)}, matched: {len(refined)}")
    return EXIT_OK


def cmd_parse(args) -> int:
    cfg = _config(args)
    scorer = _scorer(args, cfg)
    if args.maps:
        wf = None
        scene = PredictedMaps.load(args.maps)
        name = Path(args.maps).name
    else:
        wf = load_wireframe(args.scene)
        scene = wf
        name = Path(args.scene).stem
    pred, stats = parse(scene, cfg, scorer)
    out = _out(args)
    save_wireframe(pred, out / f"{name}.pred.json")
    if args.figure and wf is not None:
        from .plotting import plot_wireframe

        plot_wireframe(wf, out / f"{name}.png", pred)
    print(" ".join(f"{k}={v}" for k, v in stats.as_dict().items()))
    return EXIT_OK


def cmd_train_scorer(args) -> int:
    cfg = _config(args)
    scenes = [load_wireframe(p) for p in sorted(Path(args.dataset).glob("*.json"))] if args.dataset else None
    negatives = load_wireframe(args.negatives, require_used_junctions=False) if args.negatives else None
    scorer = train_scorer(cfg, scenes, negatives=negatives)
    out = _out(args)
    scorer.save(out / "scorer.bin")
    print(f"scorer with {scorer.input_dim} inputs written to {out / 'scorer.bin'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    scorer = _scorer(args, cfg)
    run = run_eval(args.dataset, cfg, _out(args), scorer, jobs=args.jobs, figures=not args.no_figures)
    r = run.report
    saps = " ".join(f"sAP{t:g}={100 * v:.1f}" for t, v in r.sap.items())
    print(f"{saps} msAP={100 * r.msap:.1f} mAPJ={100 * r.mapj:.1f} APH={100 * r.aph:.1f} FH={100 * r.fh:.1f}")
    for name, st in run.stats.items():
        print(f"{name}: junctions={st.junction_proposals} line_proposals={st.line_proposals} "
              f"verification={st.verification_proposals} gt_lines={st.gt_lines}")
    if run.failures:
        for name, err in run.failures:
            print(f"skipped {name}: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_loss(args) -> int:
    cfg = _config(args)
    wf = load_wireframe(args.scene)
    spec = cfg.spec_for(wf)
    gt = predict(wf, Predictor("oracle"), spec, cfg)
    pred = PredictedMaps.load(args.maps, expected=spec)
    l_ls = loss_ls(gt.afm, pred.afm, residual_gt(gt.afm, pred.afm), pred.residual)
    l_junc = loss_junc(encode_junctions(wf, spec), pred.junctions, cfg.loss)
    # verification loss on one sampled batch of LOIs from the predicted maps
    _, refined, _ = propose(pred, cfg)
    pos, neg = augment_samples(assign_labels(refined.segments, wf, spec, cfg.verify), wf, spec, cfg.verify,
                               seed=cfg.seed)
    segs = np.array([p.segment for p in pos + neg]).reshape(-1, 4)
    labels = np.array([1.0] * len(pos) + [0.0] * len(neg))
    feats = loi_pool_batch(segs, pred.features, cfg.verify)
    scorer = MLPScorer.load(args.scorer) if args.scorer else MLPScorer.zeros(feats.shape[1], cfg.scorer_hidden)
    l_ver = loss_ver(scorer.score(feats), labels) if len(labels) else 0.0
    report = total_loss(l_ls, l_junc, l_ver)
    text = report.to_text()
    if args.out_dir:
        (_out(args) / "loss.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="wireparse",
        description="Attraction-field wireframe parsing: codecs, oracle/noisy pipeline and evaluation.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config file: plain text, one key=value per line, '#' starts a comment.\n"
        "keys and defaults:\n" + config_help(),
    )
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, help="global seed (data, predictor noise, scorer)")
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic annotation dataset")
    s.add_argument("--n-scenes", type=int, default=50)
    s.add_argument("--n-segments", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", help="encode an annotation into field and junction maps")
    s.add_argument("scene")
    s.add_argument("--text", action="store_true", help="also write lossless text dumps")
    s.add_argument("--figure", action="store_true", help="render the field channels to afm.png")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="decode a maps directory into line and junction proposals")
    s.add_argument("maps")
    s.set_defaults(func=cmd_decode)

    for name, helptext in (("parse", "run the three-stage parser on one scene"),
                           ("eval", "parse and evaluate a dataset directory")):
        s = sub.add_parser(name, help=helptext)
        if name == "parse":
            s.add_argument("scene", nargs="?")
            s.add_argument("--maps", help="parse serialized maps instead of a predictor output")
            s.add_argument("--figure", action="store_true")
            s.set_defaults(func=cmd_parse)
        else:
            s.add_argument("dataset")
            s.add_argument("--jobs", type=int, default=1)
            s.add_argument("--no-figures", action="store_true")
            s.set_defaults(func=cmd_eval)
        s.add_argument("--scorer", help="scorer weights from train-scorer")
        s.add_argument("--predictor", choices=["oracle", "noisy", "file"])
        s.add_argument("--sigma", type=float)
        s.add_argument("--drop-rate", dest="drop_rate", type=float)

    s = sub.add_parser("train-scorer", help="train the reference verification scorer")
    s.add_argument("--dataset", help="annotation directory (default: synthetic scenes)")
    s.add_argument("--negatives", help="annotation file with pre-computed negative segments")
    s.set_defaults(func=cmd_train_scorer)

    s = sub.add_parser("loss", help="training losses of serialized predictions against an annotation")
    s.add_argument("scene")
    s.add_argument("--maps", required=True)
    s.add_argument("--scorer")
    s.set_defaults(func=cmd_loss)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "parse" and not (args.scene or args.maps):
        parser.error("parse needs a scene file or --maps")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wireparse: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AnnotationError as exc:
        print(f"wireparse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SceneError as exc:
        print(f"wireparse: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, container.ContainerError, ValueError) as exc:
        print(f"wireparse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
