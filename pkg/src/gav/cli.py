"""Command-line entry point.

Subcommands: datagen, train, eval, sweep-maxlen, probe (shuffle|mask|subset),
margin, ensemble, search, gradcheck, stats. A JSON config file supplies
defaults ({"gen": {...}, "n_train": N, "n_test": N, "train": {...}});
command-line flags override file values, and the effective configuration is
echoed to stderr for provenance. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import evaluator as E
from . import tensor as T
from . import trainer as TR
from .datagen import (
    GenConfig,
    dataset_stats,
    generate,
    load_manifest,
    worker_count,
    write_stats_csv,
)
from .textops import Charset, encode


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _deep_merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _gen_config(file_cfg, args, n_images, seed_offset=0):
    section = dict(file_cfg.get("gen", {}))
    section["n_images"] = n_images
    cfg = GenConfig.from_dict(_deep_merge(GenConfig().to_dict(), section))
    if args.seed is not None:
        cfg = GenConfig.from_dict({**cfg.to_dict(), "seed": args.seed + seed_offset})
    return cfg


def _train_config(file_cfg, args):
    merged = _deep_merge(TR.TrainConfig().to_dict(), file_cfg.get("train", {}))
    cfg = TR.TrainConfig.from_dict(merged)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        key = "steps_phase1" if args.phase == 1 else "steps_phase2"
        updates[key] = args.steps
    if getattr(args, "max_len", None) is not None:
        updates["max_len"] = args.max_len
    if getattr(args, "model", None):
        updates["model"] = args.model
    if updates:
        cfg = TR.TrainConfig.from_dict(_deep_merge(cfg.to_dict(), updates))
    return cfg


def _echo_config(payload):
    print("effective config: " + json.dumps(payload, sort_keys=True), file=sys.stderr)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_datagen(args):
    file_cfg = _load_config(args.config)
    n_train = args.n_train or file_cfg.get("n_train", 2000)
    n_test = args.n_test or file_cfg.get("n_test", 400)
    train_cfg = _gen_config(file_cfg, args, n_train, seed_offset=0)
    test_cfg = _gen_config(file_cfg, args, n_test, seed_offset=1)
    if args.seed is None:
        test_cfg = GenConfig.from_dict({**test_cfg.to_dict(), "seed": train_cfg.seed + 1})
    _echo_config({"train": train_cfg.to_dict(), "test": test_cfg.to_dict()})
    workers = worker_count()
    for split, cfg in (("train", train_cfg), ("test", test_cfg)):
        out = os.path.join(args.out, split)
        ds = generate(cfg, out, workers=workers)
        write_stats_csv(dataset_stats(ds), os.path.join(out, "stats.csv"))
        print(f"{split}: {len(ds)} images -> {out}", file=sys.stderr)
    return 0


def _cmd_train(args):
    cfg = _train_config(_load_config(args.config), args)
    _echo_config(cfg.to_dict())
    dataset = load_manifest(args.data)
    init = TR.load(args.ckpt) if args.ckpt else None
    if init is not None and args.phase == 1:
        init = TR.Checkpoint(config=cfg, params=init.params, step=init.step, phase=init.phase)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, f"train_log_phase{args.phase}.csv")
    ckpt = TR.train(dataset, cfg, args.phase, init=init, log_path=log_path)
    out_path = os.path.join(args.out, f"checkpoint_phase{args.phase}.gav")
    TR.save(ckpt, out_path)
    print(f"checkpoint -> {out_path}", file=sys.stderr)
    return 0


def _cmd_eval(args):
    dataset = load_manifest(args.data)
    ckpt = TR.load(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    rows = E.score_dataset(
        dataset, ckpt, max_len=args.max_len, hardness_filter=args.filter_hardness
    )
    curve = E.pr_curve(rows)
    curve.to_csv(os.path.join(args.out, "pr_curve.csv"))
    E.write_scores_csv(rows, os.path.join(args.out, "scores.csv"))
    report = {
        "n_pairs": len(rows),
        "pr_auc": curve.auc,
        "roc_auc": round(E.roc_auc(rows), 4),
        "balanced_accuracy": round(E.balanced_accuracy(rows), 4),
        "max_len": args.max_len or ckpt.config.max_len,
        "hardness_filter": args.filter_hardness,
    }
    _write_json(os.path.join(args.out, "report.json"), report)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_sweep(args):
    dataset = load_manifest(args.data)
    ckpt = TR.load(args.ckpt)
    lengths = [int(x) for x in args.lengths.split(",") if x]
    os.makedirs(args.out, exist_ok=True)
    curves = E.max_length_sweep(dataset, ckpt, lengths)
    summary = {}
    for n, curve in curves.items():
        curve.to_csv(os.path.join(args.out, f"pr_maxlen_{n}.csv"))
        summary[str(n)] = curve.auc
    _write_json(os.path.join(args.out, "sweep.json"), {"pr_auc_by_length": summary})
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_probe(args):
    dataset = load_manifest(args.data)
    ckpt = TR.load(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "shuffle":
        report = E.probe_shuffle(dataset, ckpt, trials=args.trials, seed=args.seed or 0)
        _write_json(os.path.join(args.out, "shuffle_report.json"), report)
    elif args.kind == "mask":
        report = E.probe_masked(dataset, ckpt, seed=args.seed or 0)
        _write_json(os.path.join(args.out, "mask_report.json"), report)
    else:
        report = _probe_subset(dataset, ckpt, args)
        _write_json(os.path.join(args.out, "subset_report.json"), report)
    print(json.dumps(report, sort_keys=True))
    return 0


def _probe_subset(dataset, ckpt, args):
    """Score word subsets of positives (or of --query) through the model."""
    from .decoder import score_candidate, score_no_attention
    from .encoder import encode_image
    from .imageio import load_image

    charset = Charset(ckpt.config.charset)
    params = ckpt.tensors()
    samples = dataset.samples[: args.limit]
    report = []
    rng = np.random.default_rng(ckpt.config.seed)
    for sample in samples:
        image = E._prepared_image(load_image(dataset.image_path(sample)), ckpt, rng)
        texts = []
        for pos in sample.positives:
            words = args.query.split(" ") if args.query else pos.split(" ")
            texts.append(" ".join(words))
            texts.extend(words)
            if len(words) >= 3:
                for i in range(len(words)):
                    texts.append(" ".join(w for j, w in enumerate(words) if j != i))
        seen, rows = set(), []
        if ckpt.config.model == "guided":
            fmap = encode_image(image, ckpt.config.encoder, params)
        for text in texts:
            if text in seen:
                continue
            seen.add(text)
            cand = encode(text, charset, ckpt.config.max_len)
            if ckpt.config.model == "guided":
                score, _ = score_candidate(fmap, cand, params)
            else:
                score = score_no_attention(image, cand, params, ckpt.config.encoder)
            rows.append({"text": text, "score": round(score.p_valid, 4)})
        report.append({"image": sample.image, "scores": rows})
    return report


def _cmd_margin(args):
    dataset = load_manifest(args.data)
    ckpt_a = TR.load(args.ckpt)
    ckpt_b = TR.load(args.ckpt_b)
    os.makedirs(args.out, exist_ok=True)
    report = E.margin_report(dataset, ckpt_a, ckpt_b)
    _write_json(os.path.join(args.out, "margin_report.json"), report)
    print(
        json.dumps(
            {k: report[k] for k in ("mean_margin_a", "mean_margin_b", "mean_delta")},
            sort_keys=True,
        )
    )
    return 0


def _cmd_ensemble(args):
    a = E.read_scores_csv(args.a)
    b = E.read_scores_csv(args.b)
    os.makedirs(args.out, exist_ok=True)
    combined = E.ensemble_max(a, b)
    E.write_scores_csv(combined, os.path.join(args.out, "scores.csv"))
    curve = E.pr_curve(combined)
    curve.to_csv(os.path.join(args.out, "pr_curve.csv"))
    print(json.dumps({"pr_auc": curve.auc}))
    return 0


def _cmd_search(args):
    dataset = load_manifest(args.data)
    ckpt = TR.load(args.ckpt)
    results = E.image_search(args.query, dataset, ckpt, threshold=args.threshold)
    lines = [f"{score:.6f}\t{image}" for score, image in results]
    for line in lines:
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "search_results.txt"), "w") as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))
    return 0


def _cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else 0
    worst = 0.0
    for op in sorted(T.OP_CHECKS):
        errs = []
        for s in range(seed, seed + 10):
            rng = np.random.default_rng(s)
            inputs, attrs = T.OP_CHECKS[op](rng)
            errs.append(T.grad_check(op, inputs, seed=s, **attrs))
        err = max(errs)
        worst = max(worst, err)
        print(f"{op:12s} max_rel_err={err:.3e}")
    emb = max(T.grad_check_embedding(seed=s) for s in range(seed, seed + 10))
    worst = max(worst, emb)
    print(f"{'embedding':12s} max_rel_err={emb:.3e}")
    print(f"overall: {worst:.3e} ({'OK' if worst < 1e-3 else 'FAIL'})")
    return 0 if worst < 1e-3 else 1


def _cmd_stats(args):
    dataset = load_manifest(args.data)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "stats.csv")
    write_stats_csv(dataset_stats(dataset), path)
    print(f"stats -> {path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gav",
        description="Scene text verification: train, evaluate, probe, search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, ckpt=True, out=True):
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint path")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("datagen", help="generate synthetic train/test splits + stats")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.set_defaults(fn=_cmd_datagen)

    p = sub.add_parser("train", help="train one phase")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phase", type=int, choices=(1, 2), required=True)
    p.add_argument("--ckpt", default=None, help="initial checkpoint (phase 2)")
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--model", choices=("guided", "no_attention"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score a dataset, write PR curve and report")
    common(p)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--filter-hardness", type=float, default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("sweep-maxlen", help="PR curves across truncation lengths")
    common(p)
    p.add_argument("--lengths", default="1,2,5,10,20,40")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("probe", help="qualitative probes")
    p.add_argument("kind", choices=("shuffle", "mask", "subset"))
    common(p)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--limit", type=int, default=3, help="samples for subset probe")
    p.add_argument("--query", default=None, help="text for the subset probe")
    p.set_defaults(fn=_cmd_probe)

    p = sub.add_parser("margin", help="positive-vs-best-negative margins, two ckpts")
    common(p)
    p.add_argument("--ckpt-b", required=True)
    p.set_defaults(fn=_cmd_margin)

    p = sub.add_parser("ensemble", help="max-combine two scores.csv files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_ensemble)

    p = sub.add_parser("search", help="rank images against a text query")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("stats", help="dataset statistics CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_stats)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
