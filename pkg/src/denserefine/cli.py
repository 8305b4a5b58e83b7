"""Command-line entry point: ``denserefine <command> [options]``.

Exit codes: 0 success, 2 usage/config, 3 I/O, 4 file format, 5 numeric or
invalid input.
"""
from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from dataclasses import replace

import numpy as np

from . import formats
from .bench import bench_to_csv, run_bench
from .densemap import GroundTruthScene, active_set, encode_ground_truth
from .evalkit import PrCurve, accuracy, average_precision, equal_error_rate
from .formats import ConfigError, FormatError, Record, RunConfig
from .mrf import extract_detections, run_inference
from .nms import greedy_nms_indices
from .synth import SceneSpec, SequenceSpec, generate_scene, generate_sequence
from .temporal import (MatchStrategy, MatchingRnnParams, match_boxes, match_embed, match_embed_soft,
                       run_embedding_sequence)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4, 5


def _load_run_config(args) -> RunConfig:
    cfg = formats.load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return replace(cfg, mrf=replace(cfg.mrf, workers=args.threads))


def _boxes_by_frame(records):
    frames = defaultdict(list)
    for r in records:
        if r.box is not None:
            frames[r.frame if r.frame is not None else 0].append(r)
    return frames


def cmd_encode(args, cfg):
    records = formats.read_records(args.boxes)
    boxes = [r.box for r in records if r.box is not None and (r.frame or 0) == args.frame]
    scene = GroundTruthScene((args.shape[0], args.shape[1]), np.array(boxes).reshape(-1, 4))
    formats.write_dense_map(args.out, encode_ground_truth(scene, cfg.encoder))


def cmd_refine(args, cfg):
    dmap = formats.read_dense_map(args.map)
    act = active_set(dmap, cfg.mrf.rho)
    dets = []
    if len(act.indices):
        dets = extract_detections(run_inference(act.boxes, dmap.shape, cfg.mrf, act.indices), cfg.mrf)
    formats.write_records(args.out, [Record(args.frame, k, *d.box, float(d.score)) for k, d in enumerate(dets)])


def cmd_nms(args, cfg):
    dmap = formats.read_dense_map(args.map)
    act = active_set(dmap, cfg.mrf.rho)
    keep = greedy_nms_indices(act.boxes, act.scores, cfg.nms_iou_threshold)
    formats.write_records(args.out, [Record(args.frame, k, *act.boxes[i].tolist(), float(act.scores[i]))
                                     for k, i in enumerate(keep)])


def cmd_detect_eval(args, cfg):
    dets = _boxes_by_frame(formats.read_records(args.dets))
    gts = _boxes_by_frame(formats.read_records(args.gt))
    curves = []
    for frame in sorted(set(dets) | set(gts)):
        d, g = dets.get(frame, []), gts.get(frame, [])
        boxes = np.array([r.box for r in d]).reshape(-1, 4)
        scores = np.array([r.score if r.score is not None else 0.0 for r in d])
        curves.append(PrCurve.from_detections(boxes, scores, np.array([r.box for r in g]).reshape(-1, 4),
                                              cfg.eval_iou_thr))
    curve = PrCurve.concat(curves)
    ap = average_precision(curve)
    try:
        eer = repr(equal_error_rate(curve))
    except ValueError:
        eer = ""
    n_tp = int(curve.tp.sum())
    lines = ["metric,value", f"ap,{ap!r}", f"eer,{eer}", f"n_detections,{len(curve.tp)}",
             f"n_gt,{curve.n_gt}", f"n_tp,{n_tp}"]
    formats.atomic_write(args.out, "\n".join(lines) + "\n")
    if args.curve:
        pts = ["score,precision,recall"] + [f"{s!r},{p!r},{r!r}" for s, p, r in curve.points()]
        formats.atomic_write(args.curve, "\n".join(pts) + "\n")


def _scene_spec(args, seed) -> SceneSpec:
    return SceneSpec(shape=tuple(args.shape), box_size=tuple(args.box_size), num_boxes=args.boxes, proposals_per_box=args.proposals,
                     corner_noise=args.noise, false_positives=args.false_positives, seed=seed)


def cmd_synth_scene(args, cfg):
    sc = generate_scene(_scene_spec(args, cfg.seed))
    formats.write_dense_map(args.out_map, sc.proposals)
    formats.write_records(args.out_gt, [Record(0, k, *b.tolist()) for k, b in enumerate(sc.truth.boxes)])


def cmd_synth_seq(args, cfg):
    spec = SequenceSpec(frames=args.frames, persons=args.persons, embed_dim=cfg.temporal.d_e,
                        drop_prob=args.drop, box_jitter=args.jitter, embed_jitter=args.jitter,
                        embed_separation=args.separation, seed=cfg.seed)
    frames = generate_sequence(spec)
    records, tensors = [], {}
    for t, fr in enumerate(frames):
        records.append(Record(t, None, label=fr.collective))
        for b, pid, lab in zip(fr.boxes, fr.identities, fr.individual):
            records.append(Record(t, int(pid), *b.tolist(), label=int(lab)))
        tensors[f"frame.{t:06d}"] = fr.embeddings
    formats.write_records(args.out, records)
    formats.write_tensors(args.out_embeddings, tensors)


def _read_tracks(path_csv, path_emb):
    records = formats.read_records(path_csv)
    emb = formats.read_tensors(path_emb) if path_emb else {}
    frames = _boxes_by_frame(records)
    collective = {r.frame: r.label for r in records if r.box is None and r.label is not None}
    out = []
    for t in sorted(frames):
        rows = frames[t]
        e = emb.get(f"frame.{t:06d}")
        if path_emb and (e is None or len(e) != len(rows)):
            raise FormatError(f"embeddings for frame {t} missing or mismatched")
        out.append((t, rows, e, collective.get(t)))
    return out


def cmd_track(args, cfg):
    strategy = MatchStrategy(args.strategy or cfg.temporal.strategy)
    frames = _read_tracks(args.detections, args.embeddings)
    if strategy is not MatchStrategy.BOXES and not args.embeddings:
        raise ConfigError(f"strategy {strategy.value} needs --embeddings")
    params = MatchingRnnParams.from_named(formats.read_tensors(args.params)) if args.params else None
    states = None
    if params is not None:
        if not args.embeddings:
            raise ConfigError("--params needs --embeddings")
        seq = [(np.array([r.box for r in rows]), e) for _, rows, e, _ in frames]
        states = run_embedding_sequence(seq, params, strategy)
    out, prev_ids, prev = [], None, None
    for k, (t, rows, e, coll) in enumerate(frames):
        boxes = np.array([r.box for r in rows])
        conf = np.ones(len(rows))
        if prev is None:
            ids = np.arange(len(rows))
        else:
            if strategy is MatchStrategy.BOXES:
                idx = match_boxes(boxes, prev[0])
            elif strategy is MatchStrategy.EMBED:
                idx = match_embed(e, prev[1])
            else:
                w = match_embed_soft(e, prev[1])
                idx, conf = np.argmax(w, axis=1), w.max(axis=1)
            ids = prev_ids[idx]
        if states is not None:
            labels = np.argmax(states[k].p_individual, axis=1)
            out.append(Record(t, None, label=int(np.argmax(states[k].p_collective))))
        else:
            labels = [r.label for r in rows]
            if coll is not None:
                out.append(Record(t, None, label=coll))
        for r, tid, c, lab in zip(rows, ids, conf, labels):
            out.append(Record(t, int(tid), *r.box, float(c), None if lab is None else int(lab)))
        prev, prev_ids = (boxes, e), ids
    formats.write_records(args.out, out)


def cmd_action_eval(args, cfg):
    pred = formats.read_records(args.pred)
    true = formats.read_records(args.truth)

    def split(records):
        coll = {r.frame: r.label for r in records if r.box is None}
        ind = defaultdict(list)
        for r in records:
            if r.box is not None:
                ind[r.frame].append(r.label)
        return coll, ind

    pc, pi = split(pred)
    tc, ti = split(true)
    if set(pc) != set(tc) or set(pi) != set(ti) or any(len(pi[f]) != len(ti[f]) for f in ti):
        raise FormatError("prediction and truth files describe different frames or detections")
    lines = ["metric,value"]
    if tc:
        frames = sorted(tc)
        lines.append(f"collective_accuracy,{accuracy([pc[f] for f in frames], [tc[f] for f in frames])!r}")
    if ti:
        frames = sorted(ti)
        p = [x for f in frames for x in pi[f]]
        q = [x for f in frames for x in ti[f]]
        lines.append(f"individual_accuracy,{accuracy(p, q)!r}")
    formats.atomic_write(args.out, "\n".join(lines) + "\n")


def cmd_bench(args, cfg):
    rows = run_bench(_scene_spec(args, cfg.seed), args.scenes, cfg.mrf, cfg.nms_iou_threshold,
                     cfg.eval_iou_thr, workers=args.threads)
    formats.atomic_write(args.out, bench_to_csv(rows))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads")

    scene = argparse.ArgumentParser(add_help=False)
    scene.add_argument("--shape", type=int, nargs=2, default=[720, 1080], metavar=("H", "W"))
    scene.add_argument("--boxes", type=int, default=5, help="true boxes per scene")
    scene.add_argument("--proposals", type=int, default=20, help="proposals per true box")
    scene.add_argument("--box-size", type=float, nargs=2, default=[60.0, 160.0], metavar=("MIN", "MAX"),
                       help="side length range of true boxes (pixels)")
    scene.add_argument("--noise", type=float, default=2.0, help="corner noise std (pixels)")
    scene.add_argument("--false-positives", type=int, default=0)

    parser = argparse.ArgumentParser(prog="denserefine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common], help="boxes CSV -> ground-truth dense map")
    p.add_argument("--boxes", required=True)
    p.add_argument("--shape", type=int, nargs=2, required=True, metavar=("H", "W"))
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    for name, func, helptext in (("refine", cmd_refine, "dense map -> MRF detections CSV"),
                                 ("nms", cmd_nms, "dense map -> NMS detections CSV")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--map", required=True)
        p.add_argument("--frame", type=int, default=0)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("detect-eval", parents=[common], help="detections vs ground truth -> AP/EER CSV")
    p.add_argument("--dets", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="optional PR-curve points CSV")
    p.set_defaults(func=cmd_detect_eval)

    p = sub.add_parser("synth-scene", parents=[common, scene], help="synthetic dense map + ground truth")
    p.add_argument("--out-map", required=True)
    p.add_argument("--out-gt", required=True)
    p.set_defaults(func=cmd_synth_scene)

    p = sub.add_parser("synth-seq", parents=[common], help="synthetic person tracks + embeddings")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--persons", type=int, default=6)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.add_argument("--out-embeddings", required=True)
    p.set_defaults(func=cmd_synth_seq)

    p = sub.add_parser("track", parents=[common], help="associate detections across frames")
    p.add_argument("--detections", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--strategy", choices=[s.value for s in MatchStrategy])
    p.add_argument("--params", help="matching-RNN checkpoint; predicts action labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("action-eval", parents=[common], help="label accuracy of predictions vs truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_action_eval)

    p = sub.add_parser("bench", parents=[common, scene], help="MRF vs NMS on synthetic scenes")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_run_config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"config: {exc}")
    except FormatError as exc:
        return _fail(EXIT_FORMAT, f"format: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"io: {exc}")
    except (ValueError, ArithmeticError, LookupError) as exc:
        return _fail(EXIT_NUMERIC, f"numeric: {exc}")
    return EXIT_OK


def _fail(code: int, message: str) -> int:
    print(f"denserefine: {message}".splitlines()[0], file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
