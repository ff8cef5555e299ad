"""Command-line interface: build-tree, train, eval, export, sweep."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from . import evaluation, taxonomy, trainer
from .corpus import load_corpus


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--mode", choices=["topickg", "topickga"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--graph-weight", type=float, dest="graph_weight")
    p.add_argument("--threshold", type=float)
    p.add_argument("--anneal-every", type=int, dest="anneal_every")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--gcn-depth", type=int, dest="gcn_depth")
    p.add_argument("--gamma-prior", type=float, dest="gamma_prior")
    p.add_argument("--rate-prior", type=float, dest="rate_prior")


def _config_from_args(args):
    cfg = trainer.load_config(args.config) if args.config else trainer.TrainConfig()
    for key in ("mode", "iterations", "seed", "graph_weight", "threshold",
                "anneal_every", "batch_size", "learning_rate", "weight_decay",
                "embed_dim", "hidden_dim", "gcn_depth", "gamma_prior", "rate_prior"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _add_corpus_flags(p):
    p.add_argument("--docs", required=True, help="document file (text or triplets)")
    p.add_argument("--vocab", help="vocab file, one token per line")
    p.add_argument("--labels", help="label file, one integer per line")
    p.add_argument("--stopwords", help="stop-word list, one token per line")
    p.add_argument("--min-count", type=int, default=20, dest="min_count")
    p.add_argument("--test-fraction", type=float, default=0.0, dest="test_fraction")
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")


def _corpus_from_args(args):
    return load_corpus(args.docs, vocab_path=args.vocab, labels_path=args.labels,
                       stopwords_path=args.stopwords, min_count=args.min_count,
                       test_fraction=args.test_fraction, split_seed=args.split_seed)


def cmd_build_tree(args):
    pairs = taxonomy.load_lexicon(args.lexicon)
    from .corpus import load_vocab
    vocab = load_vocab(args.vocab)
    tree = taxonomy.build_tree(vocab, pairs, args.layers)
    taxonomy.save_tree(tree, args.out)
    print(f"layers (bottom-up sizes): {tree.layer_sizes}")
    print(f"leaves with lexicon entries: {tree.report['leaves']}")
    print(f"words without lexicon entry: {len(tree.report['excluded_words'])}")
    print(f"root: {tree.report['root']}")
    print(f"tree written to {args.out}")
    return 0


def cmd_train(args):
    corpus = _corpus_from_args(args)
    tree = taxonomy.load_tree(args.tree)
    cfg = _config_from_args(args)
    params, mats, report = trainer.train(corpus, tree, cfg,
                                         checkpoint_path=args.checkpoint)
    if args.report:
        report.write_csv(args.report)
    nll = report.nll_curve()
    print(f"trained {cfg.mode} for {cfg.iterations} iterations; "
          f"mean NLL first/last 10: {nll[:10].mean():.3f} / {nll[-10:].mean():.3f}")
    print(f"checkpoint written to {args.checkpoint}")
    return 0


def _load_word_vectors(path, vocab):
    index = {w: i for i, w in enumerate(vocab)}
    emb = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) < 2:
                continue
            if parts[0] in index:
                vec = np.array([float(v) for v in parts[1:]])
                if emb is None:
                    emb = np.zeros((vec.size, len(vocab)))
                emb[:, index[parts[0]]] = vec
    if emb is None:
        raise ValueError(f"{path}: no vocabulary words found")
    return emb


def cmd_eval(args):
    corpus = _corpus_from_args(args)
    params, cfg, mats, _manifest = trainer.load_checkpoint(args.checkpoint)
    if corpus.vocab_size != mats.layer_sizes[0]:
        raise ValueError(f"corpus vocabulary ({corpus.vocab_size}) does not match "
                         f"checkpoint word layer ({mats.layer_sizes[0]})")
    x_probe = np.zeros((1, corpus.vocab_size))
    _theta, phis = trainer.infer_theta(x_probe, params, mats, cfg)
    if args.embeddings:
        emb = _load_word_vectors(args.embeddings, corpus.vocab)
    else:
        emb = params["E"].data[:, :corpus.vocab_size]
    rows = evaluation.evaluate_topics(phis, corpus.counts, emb)

    if corpus.labels is not None and len(corpus.test_idx):
        def theta_of(idx):
            x = np.asarray(corpus.counts[idx].todense(), dtype=np.float64)
            return trainer.infer_theta(x, params, mats, cfg)[0][0]
        micro, macro = evaluation.classify_theta(
            theta_of(corpus.train_idx), corpus.labels[corpus.train_idx],
            theta_of(corpus.test_idx), corpus.labels[corpus.test_idx])
        rows.append({"layer": 0, "tc": "", "td": "", "we": "",
                     "micro_f1": micro, "macro_f1": macro})

    fields = sorted({k for r in rows for k in r})
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    for r in rows:
        print(",".join(f"{k}={r[k]}" for k in fields if k in r))
    print(f"metrics written to {args.out}")
    return 0


def cmd_export(args):
    params, cfg, mats, manifest = trainer.load_checkpoint(args.checkpoint)
    V = mats.layer_sizes[0]
    names = manifest.get("node_names")
    vocab = names[0] if names else [f"w{i}" for i in range(V)]
    _theta, phis = trainer.infer_theta(np.zeros((1, V)), params, mats, cfg)
    prior_s = prior_c = None
    if args.prior_tree:
        prior = taxonomy.to_matrices(taxonomy.load_tree(args.prior_tree))
        prior_s, prior_c = prior.S, prior.C
    text = evaluation.export_tree(phis, mats, vocab, top_k=args.top_k,
                                  prior_s=prior_s, prior_c=prior_c,
                                  topic_names=names, fmt=args.format)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"export written to {args.out}")
    return 0


def cmd_sweep(args):
    corpus = _corpus_from_args(args)
    tree = taxonomy.load_tree(args.tree)
    base = _config_from_args(args)
    grid = [(b, s) for b in args.betas for s in args.thresholds]
    seeds = list(range(args.n_seeds))

    def run_cell(beta, s, seed):
        cfg = trainer.TrainConfig(**{**base.__dict__})
        cfg.layer_sizes = None
        cfg.graph_weight, cfg.threshold, cfg.seed = beta, s, seed
        params, mats, report = trainer.train(corpus, tree, cfg)
        _theta, phis = trainer.infer_theta(
            np.zeros((1, corpus.vocab_size)), params, mats, cfg)
        emb = params["E"].data[:, :corpus.vocab_size]
        rows = evaluation.evaluate_topics(phis, corpus.counts, emb)
        out = {"nll": float(report.nll_curve()[-min(50, len(report.rows)):].mean())}
        for r in rows:
            out[f"tc_layer{r['layer']}"] = r["tc"]
            out[f"td_layer{r['layer']}"] = r["td"]
            out[f"we_layer{r['layer']}"] = r["we"]
        return out

    result = evaluation.sweep(grid, seeds, run_cell)
    result.write_csv(args.out)
    print(f"sweep results written to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="topickg",
                                     description="Knowledge-graph guided topic models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-tree", help="build a topic tree from a hypernym lexicon")
    p.add_argument("--vocab", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("train", help="train a model")
    _add_corpus_flags(p)
    p.add_argument("--tree", required=True)
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", help="per-iteration CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="topic quality metrics and classification")
    _add_corpus_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", help="external word vectors (text format)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export the learned topic hierarchy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prior-tree", dest="prior_tree",
                   help="prior tree file; revised edges get marked NEW")
    p.add_argument("--top-k", type=int, default=10, dest="top_k")
    p.add_argument("--format", choices=["text", "dot"], default="text")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("sweep", help="grid over graph weight and threshold")
    _add_corpus_flags(p)
    p.add_argument("--tree", required=True)
    _add_config_flags(p)
    p.add_argument("--betas", type=float, nargs="+", required=True)
    p.add_argument("--thresholds", type=float, nargs="+", required=True)
    p.add_argument("--n-seeds", type=int, default=1, dest="n_seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - single CLI error funnel
        print(f"ERROR {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
