"""Command-line pipeline: simulate, train, predict, eval, select, filter,
verify. All randomness is governed by --seed; inputs are never mutated."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from pfslda import corpus as corpus_mod
from pfslda import evaluation, oracle, synthetic
from pfslda.corpus import load_corpus, save_corpus
from pfslda.elbo import compute_elbo, update_phi_closed
from pfslda.model import (
    ModelConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from pfslda.prediction import PredictConfig, predict_target
from pfslda.trainers import TrainConfig, train_coordinate_ascent, train_sgd


def _add_corpus_flags(p: argparse.ArgumentParser, targets: bool = True):
    p.add_argument("--corpus", required=True, help="docs file (index:count pairs)")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    if targets:
        p.add_argument("--targets", required=True, help="targets file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pfslda")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic datasets with ground truth")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--v", type=int, default=100, help="vocabulary size")
    p.add_argument("--k", type=int, default=5, help="topic count")
    p.add_argument("--p", type=float, default=0.25, help="word inclusion prior")
    p.add_argument("--docs", type=int, default=1000, help="documents per dataset")
    p.add_argument("--doc-len", type=int, default=100, help="tokens per document")
    p.add_argument("--datasets", type=int, default=5)

    p = sub.add_parser("train", help="fit a model")
    _add_corpus_flags(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p", type=float, default=0.25)
    p.add_argument("--channel", choices=["on", "off"], default="on")
    p.add_argument("--trainer", choices=["sgd", "ca"], default="sgd")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-type", choices=["real", "binary"], default="real")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="optional CSV trace path")

    p = sub.add_parser("predict", help="score documents with a trained model")
    p.add_argument("--model", required=True)
    _add_corpus_flags(p, targets=False)
    p.add_argument("--out", required=True, help="one score per line")

    p = sub.add_parser("eval", help="report metrics for a trained model")
    p.add_argument("--model", required=True)
    _add_corpus_flags(p)
    p.add_argument("--metrics", default="coherence,rmse",
                   help="csv list from: coherence,rmse,auc,precision,recall,"
                        "selected,overlap")
    p.add_argument("--truth", help="truth file for precision/recall")
    p.add_argument("--top-n", type=int, default=50)
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--coherence-formula", choices=["standard", "paper"],
                   default="standard")
    p.add_argument("--out", help="optional CSV report path")

    p = sub.add_parser("select", help="write indices of words selected as relevant")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--out", required=True)

    p = sub.add_parser("filter", help="write a corpus restricted to selected words")
    _add_corpus_flags(p)
    p.add_argument("--by", choices=["varphi", "correlation"], required=True)
    p.add_argument("--model", help="checkpoint (required for --by varphi)")
    p.add_argument("--n", type=int, help="selection size for --by correlation")
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("verify", help="run oracle self-checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000)
    return ap


def cmd_simulate(args) -> int:
    import os

    cfg = synthetic.SyntheticConfig(V=args.v, relevant_count=args.v // 2,
                                    K=args.k, p=args.p, M=args.docs,
                                    doc_length=args.doc_len,
                                    datasets=args.datasets, seed=args.seed)
    for i in range(args.datasets):
        corpus, truth = synthetic.generate_dataset(cfg, i)
        synthetic.write_dataset(os.path.join(args.out, f"dataset_{i:02d}"),
                                corpus, truth)
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.vocab, args.corpus, args.targets,
                         args.target_type)
    mcfg = ModelConfig(K=args.k, p=args.p, target_type=args.target_type,
                       seed=args.seed, channel_enabled=args.channel == "on")
    tcfg = TrainConfig(trainer=args.trainer, epochs=args.epochs,
                       batch_size=args.batch_size, learning_rate=args.lr,
                       seed=args.seed, ca_sweeps=args.epochs)
    if args.trainer == "sgd":
        params, state, trace = train_sgd(corpus, None, mcfg, tcfg)
    else:
        params, state, trace = train_coordinate_ascent(corpus, mcfg, tcfg)
    save_checkpoint(args.out, params, state, mcfg)
    if args.trace:
        trace.write_csv(args.trace)
    return 0


def cmd_predict(args) -> int:
    params, _state, mcfg = load_checkpoint(args.model)
    vocab = corpus_mod.load_vocab(args.vocab)
    documents = []
    with open(args.corpus, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            documents.append(corpus_mod._parse_doc_line(line, vocab.size,
                                                        args.corpus, lineno))
    pcfg = PredictConfig()
    with open(args.out, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(repr(predict_target(doc, params, mcfg, pcfg)) + "\n")
    return 0


def cmd_eval(args) -> int:
    params, state, mcfg = load_checkpoint(args.model)
    corpus = load_corpus(args.vocab, args.corpus, args.targets,
                         mcfg.target_type)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    rows: list[tuple[str, str]] = []

    if "coherence" in wanted:
        formula = (evaluation.STANDARD_PMI if args.coherence_formula == "standard"
                   else evaluation.PAPER_LITERAL)
        rep = evaluation.topic_coherence(params.beta, corpus, args.top_n,
                                         formula)
        for k, c in enumerate(rep.per_topic):
            rows.append((f"coherence_topic_{k}", repr(float(c))))
        rows.append(("coherence_mean", repr(rep.mean)))
    if "rmse" in wanted or "auc" in wanted:
        pcfg = PredictConfig()
        scores = np.array([predict_target(doc, params, mcfg, pcfg)
                           for doc in corpus.documents])
        if "rmse" in wanted:
            rows.append(("rmse", repr(evaluation.rmse(scores, corpus.targets))))
        if "auc" in wanted:
            rows.append(("auc", repr(evaluation.auc(scores, corpus.targets))))
    selected = evaluation.select_relevant(state.varphi, args.threshold)
    if "selected" in wanted:
        rows.append(("selected_count", str(len(selected))))
    if "precision" in wanted or "recall" in wanted:
        if not args.truth:
            raise ValueError("precision/recall need --truth")
        truth = synthetic.load_truth(args.truth)
        sm = evaluation.selection_metrics(selected, truth.relevant_words)
        if "precision" in wanted:
            rows.append(("precision", repr(sm.precision)))
        if "recall" in wanted:
            rows.append(("recall", repr(sm.recall)))
        rows.append(("selected_count", str(sm.selected_count)))
    if "overlap" in wanted:
        rows.append(("overlap",
                     repr(evaluation.disjointness_overlap(params.beta,
                                                          params.pi))))

    lines = [f"{name},{value}" for name, value in rows]
    print("\n".join(f"{name} = {value}" for name, value in rows))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("metric,value\n" + "\n".join(lines) + "\n")
    return 0


def cmd_select(args) -> int:
    _params, state, _mcfg = load_checkpoint(args.model)
    selected = sorted(evaluation.select_relevant(state.varphi, args.threshold))
    with open(args.out, "w", encoding="utf-8") as fh:
        for v in selected:
            fh.write(f"{v}\n")
    return 0


def cmd_filter(args) -> int:
    import os

    corpus = load_corpus(args.vocab, args.corpus, args.targets)
    if args.by == "varphi":
        if not args.model:
            raise ValueError("--by varphi needs --model")
        _params, state, _mcfg = load_checkpoint(args.model)
        keep = evaluation.select_relevant(state.varphi, args.threshold)
    else:
        if args.n is None:
            raise ValueError("--by correlation needs --n")
        keep = evaluation.correlation_topn(corpus, args.n)
    mask = np.zeros(corpus.vocab.size, dtype=bool)
    mask[sorted(keep)] = True
    filtered = corpus_mod.apply_vocab_mask(corpus, mask)
    os.makedirs(args.out, exist_ok=True)
    save_corpus(filtered,
                os.path.join(args.out, "vocab.txt"),
                os.path.join(args.out, "docs.txt"),
                os.path.join(args.out, "targets.txt"))
    return 0


def cmd_verify(args) -> int:
    """Oracle self-checks: exact K=1 marginal, bound property, and gradient
    agreement on seeded tiny instances. Prints one line per check."""
    from pfslda.elbo import compute_gradients
    from pfslda.testing import pack_coordinates, random_tiny_instance, unpack_into

    failures = 0

    def report(name, value, reference, ok):
        nonlocal failures
        print(f"{name}: value={value:.6g} reference={reference:.6g} "
              f"{'pass' if ok else 'FAIL'}")
        failures += 0 if ok else 1

    rng = np.random.default_rng(args.seed)
    for trial in range(3):
        corpus, mcfg, params, state = random_tiny_instance(rng)
        update_phi_closed(corpus, range(corpus.num_documents), params, state,
                          mcfg)
        total = compute_elbo(corpus, range(corpus.num_documents), params,
                             state, mcfg).total
        ref = 0.0
        se = 0.0
        for d in range(corpus.num_documents):
            est = oracle.mc_marginal_loglik(corpus.documents[d],
                                            corpus.targets[d], params, mcfg,
                                            args.samples, args.seed + d)
            ref += est.value
            se = float(np.hypot(se, est.stderr))
        report(f"bound_property_{trial}", total, ref + 3 * se,
               total <= ref + 3 * se)

    corpus, mcfg, params, state = random_tiny_instance(rng)
    grads = compute_gradients(corpus, range(corpus.num_documents), params,
                              state, mcfg)
    point, layout = pack_coordinates(params, state, corpus, mcfg)

    def objective(x):
        p2, s2 = unpack_into(x, layout, params, state, corpus, mcfg)
        update_phi_closed(corpus, range(corpus.num_documents), p2, s2, mcfg)
        return compute_elbo(corpus, range(corpus.num_documents), p2, s2,
                            mcfg).total

    fd = oracle.finite_difference_gradient(objective, point, 1e-5)
    analytic = pack_coordinates(params, state, corpus, mcfg,
                                gradient=grads)[0]
    mask = np.abs(analytic) > 1e-8
    rel = np.max(np.abs(fd[mask] - analytic[mask])
                 / np.maximum(np.abs(analytic[mask]), 1e-12)) if mask.any() else 0.0
    report("gradient_fd_agreement", rel, 1e-4, rel < 1e-4)

    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "train": cmd_train,
        "predict": cmd_predict,
        "eval": cmd_eval,
        "select": cmd_select,
        "filter": cmd_filter,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"pfslda {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
