"""Command-line pipeline driver.

Commands: gen-synthetic, pretrain, embed, train-clf, eval, sweep-chunk.
Each command is a pure function of (config, seed, input artifacts) and
writes artifacts with stable names under the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import corpus as C
from . import metrics as M
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import init_mlp, predict_batch, train_classifier
from .config import ConfigError, ExperimentConfig
from .encoder import init_params
from .pooling import AggregatorConfig, init_aggregator
from .training import OBJECTIVES, embed_documents, pretrain


class CliError(RuntimeError):
    pass


def _require(path, stage, hint=""):
    if not os.path.exists(path):
        extra = f" {hint}" if hint else ""
        raise CliError(f"missing artifact {os.path.basename(path)}: "
                       f"run '{stage}' first.{extra}")
    return path


def _outdir(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config_effective.ini"), "w") as f:
        f.write(cfg.dump())
    return cfg.output_dir


def _load_records(cfg):
    source = cfg.get("corpus", "source")
    if source == "synthetic":
        path = os.path.join(cfg.output_dir, "corpus.jsonl")
        _require(path, "gen-synthetic")
    else:
        path = _require(source, "gen-synthetic", hint="(corpus source file not found)")
    return C.load_jsonl(path)


def _task(cfg, override=None):
    return override or cfg.get("synthetic", "task")


def _split(n, cfg):
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    cut = int(cfg.getfloat("corpus", "train_frac") * n)
    return perm[:cut], perm[cut:]


# ---------------------------------------------------------------------------
# commands

def cmd_gen_synthetic(cfg, args):
    out = _outdir(cfg)
    spec = cfg.synthetic_spec()
    records = C.gen_synthetic(spec, cfg.seed)
    C.save_jsonl(os.path.join(out, "corpus.jsonl"), records)
    C.save_label_map(os.path.join(out, "labels.tsv"),
                     {t: f"topic{t}" for t in range(spec.num_topics)})
    print(f"wrote {len(records)} documents to {out}/corpus.jsonl")
    return 0


def cmd_pretrain(cfg, args):
    out = _outdir(cfg)
    records = _load_records(cfg)
    vocab = C.build_vocab((r["text"] for r in records),
                          min_freq=cfg.getint("corpus", "min_freq"))
    docs = C.encode_documents(records, vocab, task=_task(cfg))
    pcfg = cfg.pretrain_config(objective=args.objective)
    ecfg = cfg.encoder_config(vocab.size, pcfg.objective)

    log_path = os.path.join(out, "pretrain_log.tsv")
    with open(log_path, "w") as log_file:
        result = pretrain(docs, ecfg, pcfg,
                          log=lambda line: print(line, file=log_file))
    save_checkpoint(os.path.join(out, "checkpoint.bin"), result.params,
                    config={"encoder": vars(ecfg) | {"global_tokens": list(ecfg.global_tokens)},
                            "pretrain": vars(pcfg)},
                    vocab=vocab)
    vocab.save(os.path.join(out, "vocab.txt"))
    print(f"pretrained {pcfg.objective} for {result.steps} steps "
          f"(skipped {result.skipped_docs} docs); checkpoint.bin written")
    return 0


def cmd_embed(cfg, args):
    out = _outdir(cfg)
    records = _load_records(cfg)
    ckpt_path = os.path.join(out, "checkpoint.bin")
    if args.random_init:
        vocab = C.build_vocab((r["text"] for r in records),
                              min_freq=cfg.getint("corpus", "min_freq"))
        pcfg = cfg.pretrain_config()
        ecfg = cfg.encoder_config(vocab.size, pcfg.objective)
        params = init_params(ecfg, cfg.seed)
    else:
        _require(ckpt_path, "pretrain", hint="(or pass --random-init)")
        params, meta, vocab = load_checkpoint(ckpt_path)
        ecfg = cfg.encoder_config(vocab.size, meta["pretrain"]["objective"])
        pcfg = cfg.pretrain_config(meta["pretrain"]["objective"])

    docs = C.encode_documents(records, vocab, task=_task(cfg))
    aggregator = None
    if args.pooling == "transformer":
        acfg = AggregatorConfig(dim=ecfg.dim, max_chunks=pcfg.n_chunks,
                                dropout=ecfg.dropout)
        aggregator = (init_aggregator(acfg, cfg.seed), acfg)
    embs = embed_documents(docs, params, ecfg, pooling=args.pooling,
                           chunk_len=pcfg.chunk_len, n_chunks=pcfg.n_chunks,
                           max_tokens=pcfg.max_tokens, aggregator=aggregator)
    M.export_embeddings(os.path.join(out, "embeddings.tsv"), embs,
                        [d.id for d in docs], [d.labels for d in docs])
    print(f"wrote {len(docs)} embeddings (dim {embs.shape[1]}) to {out}/embeddings.tsv")
    return 0


def cmd_train_clf(cfg, args):
    out = _outdir(cfg)
    path = _require(os.path.join(out, "embeddings.tsv"), "embed")
    embs, ids, labels = M.load_embeddings(path)
    task = _task(cfg, args.task)
    num_labels = max((max(ls) for ls in labels if ls), default=-1) + 1
    if num_labels < 1:
        raise CliError("train-clf: corpus has no labels")
    train_idx, _ = _split(len(embs), cfg)
    ccfg = cfg.classifier_config()
    params = train_classifier(embs[train_idx], [labels[i] for i in train_idx],
                              num_labels, task, ccfg)
    save_checkpoint(os.path.join(out, "clf.bin"), params,
                    config={"task": task, "num_labels": num_labels,
                            "threshold": ccfg.threshold})
    print(f"trained {task} classifier on {len(train_idx)} docs; clf.bin written")
    return 0


def cmd_eval(cfg, args):
    out = _outdir(cfg)
    path = _require(os.path.join(out, "embeddings.tsv"), "embed")
    embs, ids, labels = M.load_embeddings(path)
    _, test_idx = _split(len(embs), cfg)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = {}
    for m in wanted:
        if m == "f1":
            clf_path = _require(os.path.join(out, "clf.bin"), "train-clf")
            params, meta, _ = load_checkpoint(clf_path)
            preds, _ = predict_batch(embs[test_idx], params, meta["task"],
                                     threshold=meta["threshold"])
            gold = [labels[i] for i in test_idx]
            f1 = M.f1_scores(preds, gold, meta["num_labels"], meta["task"])
            report["macro_f1"] = f1.macro_f1
            report["micro_f1"] = f1.micro_f1
        elif m == "cluster":
            pts = embs[test_idx]
            if cfg.parser.getboolean("eval", "normalize"):
                norms = np.linalg.norm(pts, axis=1, keepdims=True)
                pts = pts / np.maximum(norms, 1e-12)
            assign = M.dbscan(pts, cfg.getfloat("eval", "dbscan_eps"),
                              cfg.getint("eval", "dbscan_min_pts"))
            gold = [labels[i] for i in test_idx]
            h, c = M.homogeneity_completeness(assign, gold)
            report["homogeneity"] = h
            report["completeness"] = c
            report["num_clusters"] = int(len(set(a for a in assign if a >= 0)))
        else:
            raise CliError(f"unknown metric '{m}' (choose from f1, cluster)")
    report["num_test_docs"] = int(len(test_idx))
    M.write_metrics(os.path.join(out, "metrics.txt"), report)
    for k, v in report.items():
        print(f"{k}\t{v:.6f}" if isinstance(v, float) else f"{k}\t{v}")
    return 0


def cmd_sweep_chunk(cfg, args):
    out = _outdir(cfg)
    sizes = [int(s) for s in args.sizes.split(",")]
    max_tokens = cfg.getint("pretrain", "max_tokens")
    rows = []
    for size in sizes:
        sub = os.path.join(out, f"chunk_{size}")
        arm = ExperimentConfig.load(None, overrides=[])
        arm.parser.read_dict({s: dict(cfg.parser[s]) for s in cfg.parser.sections()})
        arm.parser["run"]["output_dir"] = sub
        arm.parser["pretrain"]["chunk_len"] = str(size)
        arm.parser["pretrain"]["n_chunks"] = str(max(1, max_tokens // size))
        ns = argparse.Namespace(objective=arm.get("pretrain", "objective"),
                                pooling=arm.get("pretrain", "pooling"),
                                random_init=False, task=None, metrics="f1")
        if arm.get("corpus", "source") == "synthetic":
            cmd_gen_synthetic(arm, ns)
        cmd_pretrain(arm, ns)
        cmd_embed(arm, ns)
        cmd_train_clf(arm, ns)
        cmd_eval(arm, ns)
        with open(os.path.join(sub, "metrics.txt")) as f:
            vals = dict(line.rstrip("\n").split("\t") for line in f)
        rows.append((size, float(vals["macro_f1"]), float(vals["micro_f1"])))
    with open(os.path.join(out, "sweep.tsv"), "w") as f:
        f.write("chunk_len\tmacro_f1\tmicro_f1\n")
        for size, mac, mic in rows:
            f.write(f"{size}\t{mac:.6f}\t{mic:.6f}\n")
    print(f"sweep over {sizes} complete; sweep.tsv written")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="cpe",
                                description="chunk-prediction contrastive "
                                            "pretraining pipeline")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-synthetic", help="generate a synthetic topic-mixture corpus")

    sp = sub.add_parser("pretrain", help="contrastive pretraining")
    sp.add_argument("--objective", choices=OBJECTIVES, default=None)

    se = sub.add_parser("embed", help="embed the corpus with a checkpoint")
    se.add_argument("--pooling", choices=("mean", "max", "transformer"), default="max")
    se.add_argument("--random-init", action="store_true",
                    help="use an untrained encoder (baseline arm)")

    st = sub.add_parser("train-clf", help="train the MLP head on frozen embeddings")
    st.add_argument("--task", choices=("multilabel", "multiclass"), default=None)

    sv = sub.add_parser("eval", help="compute metrics on the test split")
    sv.add_argument("--metrics", default="f1,cluster")

    sw = sub.add_parser("sweep-chunk", help="chunk-size ablation sweep")
    sw.add_argument("--sizes", default="64,128,256,512")
    return p


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "train-clf": cmd_train_clf,
    "eval": cmd_eval,
    "sweep-chunk": cmd_sweep_chunk,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, overrides=args.set)
        return COMMANDS[args.command](cfg, args)
    except (CliError, ConfigError, C.CorpusError, ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
