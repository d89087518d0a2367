"""Command-line interface: targ {gen-data,train,eval,predict,grad-check,dump-attention,analyze}."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .attention import dump_attention
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig
from .corpus import CorpusError, Corpus, iter_examples, load_corpus, save_corpus
from .io import atomic_write_text, write_jsonl
from .metrics import knowledge_change_stats
from .synthetic import GenerationError, SyntheticConfig, generate_synthetic, split_corpus
from .tensor import DimensionError

log = logging.getLogger("targ")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


def _need_file(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return p


def cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(topics=args.topics, factoids_per_topic=args.factoids_per_topic,
                          n_dialogues=args.dialogues, shift_prob=args.shift_prob, seed=args.seed)
    corpus = generate_synthetic(cfg)
    if args.n_dev:
        train, dev = split_corpus(corpus, args.n_dev)
        save_corpus(train, args.out)
        dev_out = args.dev_out or str(Path(args.out).with_suffix("")) + ".dev.json"
        save_corpus(dev, dev_out)
        print(f"wrote {len(train.dialogues)} dialogues to {args.out}, {len(dev.dialogues)} to {dev_out}")
    else:
        save_corpus(corpus, args.out)
        print(f"wrote {len(corpus.dialogues)} dialogues to {args.out}")
    if args.provenance:
        atomic_write_text(args.provenance, json.dumps(corpus.provenance, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


def _load_run_config(args) -> RunConfig:
    if args.config:
        rc = RunConfig.load(_need_file(args.config, "--config"))
    else:
        rc = RunConfig.from_dict({"preset": args.preset} if getattr(args, "preset", None) else {})
    return rc


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .training import train

    rc = _load_run_config(args)
    train_path = _need_file(args.train or rc.train_corpus, "--train")
    dev_path = args.dev or rc.dev_corpus
    out = Path(args.out or rc.out_dir or "")
    if not str(out):
        raise UsageError("--out is required")
    cfg = rc.train
    if args.epochs is not None:
        from .config import with_overrides
        cfg = with_overrides(cfg, epochs=args.epochs)
    corpus = load_corpus(train_path)
    dev = load_corpus(_need_file(dev_path, "--dev")) if dev_path else None
    out.mkdir(parents=True, exist_ok=True)
    result = train(corpus, dev, cfg, log_path=out / "train_log.jsonl")
    save_checkpoint(result.model, out / "best.ckpt")
    if result.best_metrics is not None:
        atomic_write_text(out / "dev_metrics.json", result.best_metrics.to_json())
    print(json.dumps({"best_epoch": result.best_epoch, "cpu_seconds": round(result.cpu_seconds, 1),
                      "clamped_probabilities": result.clamped,
                      "dev_em": result.best_metrics.em if result.best_metrics else None}))
    return EXIT_OK


def _model_and_corpus(args):
    model = load_checkpoint(_need_file(args.checkpoint, "--checkpoint"))
    corpus = load_corpus(_need_file(args.corpus, "--corpus"))
    n = len(corpus.knowledge())
    if n > model.config.max_factoids:
        raise UsageError(f"corpus has {n} knowledge entries; checkpoint supports {model.config.max_factoids}")
    return model, corpus


def cmd_eval(args) -> int:
    from .training import evaluate

    model, corpus = _model_and_corpus(args)
    report = evaluate(model, corpus)
    text = report.to_json()
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .training import predict

    model, corpus = _model_and_corpus(args)
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    preds = predict(model, corpus, beam=args.beam)
    rows = [{"dialogue_id": e.dialogue_id, "turn": e.turn_index, "s": s[0], "e": s[1],
             "ranking": rank[:5], "tokens": toks, "text": " ".join(toks)}
            for e, s, rank, toks in zip(preds.examples, preds.spans, preds.rankings, preds.tokens)]
    write_jsonl(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .diagnostics import CHECKS, THRESHOLD

    seed = _load_run_config(args).train.seed if args.config else args.seed
    worst = 0.0
    for name, fn in CHECKS.items():
        r = fn(seed)
        worst = max(worst, r.max_rel_error)
        status = "ok" if r.max_rel_error < THRESHOLD else "FAIL"
        print(f"{name:24s} max_rel_error={r.max_rel_error:.3e} coords={r.n_coords} {status}")
    return EXIT_OK if worst < THRESHOLD else EXIT_INVALID


def attention_rows(model, corpus: Corpus, dialogue: str | None = None,
                   limit: int | None = None) -> list[dict]:
    topics = [t for _, t in corpus.knowledge()]
    examples = [e for e in iter_examples(corpus, model.config.max_turns)
                if dialogue is None or e.dialogue_id == dialogue]
    if dialogue is not None and not examples:
        raise UsageError(f"no system turns for dialogue {dialogue!r}")
    examples = examples[:limit] if limit else examples
    rows = []
    for i in range(0, len(examples), 32):
        chunk = examples[i:i + 32]
        mat = model.topic_matrix(model.make_batch(chunk, corpus))
        weights = {"dot": mat.A_d.data, "bilinear": mat.A_b.data, "outer": mat.A_o.data}
        for b, ex in enumerate(chunk):
            n = len(ex.history)
            for k, topic in enumerate(topics):
                for mech, w in weights.items():
                    for j in range(n):
                        rows.append({"dialogue_id": ex.dialogue_id, "turn_index": ex.turn_index,
                                     "factoid_topic": topic, "mechanism": mech,
                                     "utterance_index": j, "weight": w[b, k, j]})
    return rows


def cmd_dump_attention(args) -> int:
    model, corpus = _model_and_corpus(args)
    rows = attention_rows(model, corpus, args.dialogue, args.limit)
    dump_attention(args.out, rows)
    print(f"wrote {len(rows)} attention weights to {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    corpus = load_corpus(_need_file(args.corpus, "--corpus"))
    gold: dict[str, list] = {}
    for e in iter_examples(corpus):
        gold.setdefault(e.dialogue_id, []).append(e.gold_span)
    g_changes, g_width = knowledge_change_stats(list(gold.values()))
    report = {"gold": {"knowledge_changes_per_dialogue": g_changes, "factoids_per_turn": g_width}}
    if args.predictions:
        pred: dict[str, list] = {}
        with open(_need_file(args.predictions, "--predictions"), encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    pred.setdefault(row["dialogue_id"], []).append((row["s"], row["e"]))
        p_changes, p_width = knowledge_change_stats(list(pred.values()))
        report["predicted"] = {"knowledge_changes_per_dialogue": p_changes,
                               "factoids_per_turn": p_width}
        report["gap"] = {"knowledge_changes_per_dialogue": p_changes - g_changes,
                         "factoids_per_turn": p_width - g_width}
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="targ", description="Topic-aware grounded dialogue on a desk-scale budget.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic topic-shift corpus")
    g.add_argument("--topics", type=int, default=6)
    g.add_argument("--factoids-per-topic", type=int, default=5)
    g.add_argument("--dialogues", type=int, default=500)
    g.add_argument("--shift-prob", type=float, default=0.4)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--n-dev", type=int, default=0, help="hold out the last N dialogues as a dev split")
    g.add_argument("--dev-out")
    g.add_argument("--provenance", help="also write generator ground truth as JSON")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and save the best-dev checkpoint")
    t.add_argument("--config")
    t.add_argument("--preset", choices=["desk", "paper"])
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in [("eval", cmd_eval, "score a checkpoint on a corpus"),
                                 ("predict", cmd_predict, "write predicted spans and responses"),
                                 ("dump-attention", cmd_dump_attention, "export attention weights as CSV")]:
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--corpus", required=True)
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--out", required=name != "eval")
        c.set_defaults(func=func)
        if name == "predict":
            c.add_argument("--beam", type=int, default=1)
        if name == "dump-attention":
            c.add_argument("--dialogue")
            c.add_argument("--limit", type=int)

    gc = sub.add_parser("grad-check", help="finite-difference check of every model stage")
    gc.add_argument("--config")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_grad_check)

    a = sub.add_parser("analyze", help="knowledge-change statistics for gold and predicted spans")
    a.add_argument("--corpus", required=True)
    a.add_argument("--predictions")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusError, CheckpointError, GenerationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, DimensionError, FloatingPointError, OSError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
