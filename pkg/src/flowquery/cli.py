"""Command-line front door for the full pipeline.

Exit codes: 0 success, 2 usage error (argparse), 1 runtime error.
Every subcommand that uses randomness takes --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .descriptor import (SamplingConfig, Segment, read_dm, sample_segments,
                         descriptors_for_segments, write_dm)
from .encoder import (TrainConfig, load_checkpoint, save_checkpoint, train_dae)
from .errors import BadParam, FlowQueryError
from .evalsuite import LabeledFeatureSet, linear_probe, timing_scaling, uniformity, write_report
from .field import gen_synthetic, load_raw, save_raw
from .llmbridge import ChatClientConfig, gen_instruction_data, review_sample
from .matcher import (MatcherConfig, build_index, load_index, load_matcher,
                      query, save_index, save_matcher, train_matcher)
from .server import ServiceConfig, serve
from .trace import TraceConfig, load_streamlines, save_streamlines, seed_uniform, trace_many


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def _load_segments(path):
    segs = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        segs.append(Segment(streamline_id=rec["streamline_id"],
                            level=rec["level"], arc_start=rec["arc_start"],
                            arc_end=rec["arc_end"],
                            points=np.asarray(rec["points"])))
    return segs


def _save_segments(path, segments):
    with open(path, "w") as fh:
        for i, s in enumerate(segments):
            fh.write(json.dumps({
                "id": i, "streamline_id": s.streamline_id, "level": s.level,
                "arc_start": s.arc_start, "arc_end": s.arc_end,
                "points": [[round(float(c), 9) for c in p] for p in s.points],
            }) + "\n")


def cmd_gen_field(args):
    params = {}
    if args.pitch is not None:
        params["pitch"] = args.pitch
    if args.count is not None:
        params["count"] = args.count
    if args.radius is not None:
        params["radius"] = args.radius
    fld = gen_synthetic(args.kind, args.dims,
                        (args.bounds[:3], args.bounds[3:]), params, args.seed)
    save_raw(fld, args.out)
    print(f"wrote {args.out}.meta / {args.out}.vec "
          f"({fld.dims[0]}x{fld.dims[1]}x{fld.dims[2]})")
    return 0


def cmd_trace(args):
    fld = load_raw(args.field)
    seeds = seed_uniform(fld.bounds, args.n, args.seed)
    cfg = TraceConfig(step=args.step, max_steps=args.max_steps,
                      min_speed=args.min_speed, direction=args.direction)
    lines = trace_many(fld, seeds, cfg)
    save_streamlines(lines, args.out)
    print(f"traced {len(lines)} streamlines -> {args.out}")
    return 0


def cmd_sample(args):
    lines = load_streamlines(args.lines)
    cfg = SamplingConfig(levels=args.levels, max_len=args.max_len,
                         overlap=args.overlap, min_points=args.min_points)
    segments = [s for line in lines for s in sample_segments(line, cfg)]
    if not segments:
        raise BadParam("no segments produced; lower --max-len or retrace")
    mats, _ = descriptors_for_segments(segments)
    write_dm(f"{args.out}.dm", mats)
    _save_segments(f"{args.out}.segs", segments)
    print(f"sampled {len(segments)} segments -> {args.out}.dm / {args.out}.segs")
    return 0


def cmd_train_encoder(args):
    data = read_dm(args.data)
    cfg = TrainConfig(epochs=args.epochs, batch=args.batch, lr=args.lr,
                      latent_dim=args.latent_dim, hidden=args.hidden,
                      t_range=args.t_range, seed=args.seed)
    model = train_dae(data, cfg)
    save_checkpoint(model, args.out)
    print(f"trained on {len(data)} matrices, "
          f"final loss {model.loss_history[-1]:.3e} -> {args.out}")
    return 0


def cmd_encode(args):
    model = load_checkpoint(args.ckpt)
    data = read_dm(args.data)
    np.save(args.out, model.encode_batch(data))
    print(f"encoded {len(data)} descriptors -> {args.out}")
    return 0


def cmd_eval_probe(args):
    feats = np.load(args.features)
    labels = np.load(args.labels)
    names = [str(c) for c in np.unique(labels)]
    acc = linear_probe(LabeledFeatureSet(feats, labels, names),
                       split=args.split, epochs=args.epochs, lr=args.lr,
                       seed=args.seed)
    print(f"probe accuracy {acc:.4f}")
    if args.out:
        write_report(args.out, [{"record": "probe", "accuracy": acc,
                                 "n": len(feats), "split": args.split}])
    return 0


def cmd_eval_uniformity(args):
    feats = np.load(args.features)
    value, se = uniformity(feats, seed=args.seed, with_se=True)
    print(f"uniformity {value:.6f}" + (f" (se {se:.2e})" if se else ""))
    if args.out:
        write_report(args.out, [{"record": "uniformity", "value": value,
                                 "stderr": se, "n": len(feats)}])
    return 0


def cmd_bench_scaling(args):
    rows = timing_scaling(args.counts, op=args.op, seed=args.seed)
    for row in rows:
        if row["record"] == "timing":
            print(f"{row['op']} n={row['count']} {row['seconds']:.4f}s")
    if args.out:
        write_report(args.out, rows)
    return 0


def cmd_train_matcher(args):
    encoder_model = load_checkpoint(args.ckpt)
    corpus = []
    for line in Path(args.corpus).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        mats = read_dm(rec["dm"])
        corpus.append((rec["caption"], mats[np.asarray(rec["indices"])]))
    cfg = MatcherConfig(epochs=args.epochs, batch=args.batch, lr=args.lr,
                        tau=args.tau, seed=args.seed)
    model = train_matcher(corpus, encoder_model, cfg)
    save_matcher(model, args.out)
    print(f"trained matcher on {len(corpus)} caption sets, "
          f"final loss {model.loss_history[-1]:.4f} -> {args.out}")
    return 0


def cmd_build_index(args):
    encoder_model = load_checkpoint(args.ckpt)
    matcher_model = load_matcher(args.matcher)
    segments = _load_segments(args.segs)
    index = build_index(segments, encoder_model, matcher_model)
    save_index(index, args.out)
    print(f"indexed {len(index)} segments -> {args.out} "
          f"(fingerprint {index.fingerprint})")
    return 0


def cmd_query(args):
    index = load_index(args.index)
    for r in query(index, args.text, args.k):
        print(f"{r.rank} {r.score:.6f} {r.segment_id}")
    return 0


def cmd_gen_data(args):
    segments = _load_segments(args.segs)
    cfg = ChatClientConfig(endpoint=args.endpoint, model=args.model)
    samples, failures = gen_instruction_data(
        segments[:args.limit] if args.limit else segments,
        config=cfg, n_views=args.n_views, seed=args.seed,
        dry_run=args.dry_run, out_dir=args.views_dir, jsonl_path=args.out)
    print(f"generated {len(samples)} samples ({failures} failures) -> {args.out}")
    if args.sample_review:
        for s in review_sample(samples, args.sample_review, seed=args.seed):
            print(f"review [{s.template_id}] {s.instruction[:60]} :: "
                  f"{(s.response or '<dry-run>')[:80]}")
    return 0


def cmd_serve(args):
    if args.config:
        cfg = ServiceConfig.from_file(args.config, host=args.host,
                                      port=args.port, data_dir=args.data_dir)
    else:
        cfg = ServiceConfig(host=args.host or "127.0.0.1",
                            port=args.port or 8080,
                            data_dir=args.data_dir or ".",
                            field_path=args.field or "",
                            streamlines_path=args.lines or "",
                            index_path=args.index or "",
                            frontend_dir=args.frontend or "")
    serve(cfg)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="flowquery",
                                description="natural-language flow pattern search")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-field", help="generate a synthetic field")
    g.add_argument("--kind", required=True,
                   choices=["uniform", "rotor", "helix", "critical_points",
                            "two_swirls"])
    g.add_argument("--dims", type=_ints, default=(24, 24, 24))
    g.add_argument("--bounds", type=_floats, default=(-2, -2, -2, 2, 2, 2),
                   help="x0,y0,z0,x1,y1,z1")
    g.add_argument("--pitch", type=float)
    g.add_argument("--count", type=int)
    g.add_argument("--radius", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_field)

    t = sub.add_parser("trace", help="trace streamlines from uniform seeds")
    t.add_argument("--field", required=True)
    t.add_argument("--n", type=int, default=100)
    t.add_argument("--step", type=float, default=0.02)
    t.add_argument("--max-steps", type=int, default=400)
    t.add_argument("--min-speed", type=float, default=1e-4)
    t.add_argument("--direction", default="forward",
                   choices=["forward", "backward", "both"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_trace)

    s = sub.add_parser("sample", help="hierarchical segments + descriptors")
    s.add_argument("--lines", required=True)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--max-len", type=float, default=3.0)
    s.add_argument("--overlap", type=float, default=0.5)
    s.add_argument("--min-points", type=int, default=6)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("train-encoder", help="train the denoising autoencoder")
    e.add_argument("--data", required=True, help=".dm descriptor batch")
    e.add_argument("--epochs", type=int, default=100)
    e.add_argument("--batch", type=int, default=128)
    e.add_argument("--lr", type=float, default=1e-3)
    e.add_argument("--latent-dim", type=int, default=128)
    e.add_argument("--hidden", type=_ints, default=(512, 256))
    e.add_argument("--t-range", type=_ints, default=tuple(range(10, 101, 10)),
                   help="comma-separated corruption steps; 0 = plain AE")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_train_encoder)

    n = sub.add_parser("encode", help="descriptors -> latent vectors (.npy)")
    n.add_argument("--data", required=True)
    n.add_argument("--ckpt", required=True)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_encode)

    pr = sub.add_parser("eval-probe", help="linear probe accuracy")
    pr.add_argument("--features", required=True)
    pr.add_argument("--labels", required=True)
    pr.add_argument("--split", type=float, default=0.8)
    pr.add_argument("--epochs", type=int, default=200)
    pr.add_argument("--lr", type=float, default=1e-2)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_eval_probe)

    u = sub.add_parser("eval-uniformity", help="hypersphere uniformity")
    u.add_argument("--features", required=True)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out")
    u.set_defaults(func=cmd_eval_uniformity)

    b = sub.add_parser("bench-scaling", help="wall-clock scaling table")
    b.add_argument("--counts", type=_ints, default=(10000, 20000, 40000))
    b.add_argument("--op", default="distance_matrices",
                   choices=["distance_matrices", "dae_training"])
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_scaling)

    m = sub.add_parser("train-matcher", help="contrastive text/flow training")
    m.add_argument("--corpus", required=True,
                   help="JSONL of {caption, dm, indices}")
    m.add_argument("--ckpt", required=True, help="encoder checkpoint")
    m.add_argument("--epochs", type=int, default=80)
    m.add_argument("--batch", type=int, default=16)
    m.add_argument("--lr", type=float, default=3e-3)
    m.add_argument("--tau", type=float, default=0.07)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_train_matcher)

    bi = sub.add_parser("build-index", help="pre-encode segments for querying")
    bi.add_argument("--segs", required=True)
    bi.add_argument("--ckpt", required=True)
    bi.add_argument("--matcher", required=True)
    bi.add_argument("--out", required=True)
    bi.set_defaults(func=cmd_build_index)

    q = sub.add_parser("query", help="top-k segments for a text query")
    q.add_argument("--index", required=True)
    q.add_argument("--text", required=True)
    q.add_argument("--k", type=int, default=10)
    q.set_defaults(func=cmd_query)

    d = sub.add_parser("gen-data", help="instruction-following data pipeline")
    d.add_argument("--segs", required=True)
    d.add_argument("--endpoint", default="")
    d.add_argument("--model", default="default")
    d.add_argument("--n-views", type=int, default=3)
    d.add_argument("--limit", type=int, default=0)
    d.add_argument("--views-dir")
    d.add_argument("--dry-run", action="store_true")
    d.add_argument("--sample-review", type=float, default=0.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_gen_data)

    sv = sub.add_parser("serve", help="run the HTTP query service")
    sv.add_argument("--config")
    sv.add_argument("--host")
    sv.add_argument("--port", type=int)
    sv.add_argument("--data-dir")
    sv.add_argument("--field")
    sv.add_argument("--lines")
    sv.add_argument("--index")
    sv.add_argument("--frontend", help="serve the browser explorer from here")
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FlowQueryError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
