"""Command-line entry point: build-vocab, pretrain, align, eval.

Exit codes: 0 success, 2 usage/input error, 3 numerical abort. Progress
lines go to standard error; data goes to files and standard output.
Flags may be seeded from a key=value config file; explicit flags win.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import crossattn, training, transport
from .corpus import (CorpusError, Vocab, build_vocab, load_corpus,
                     load_content, load_entity_pairs, split_words, tokenize)
from .encoder import EncoderConfig
from .phrases import PhraseFileError, load_pool
from .training import (NanGradientError, TrainConfig, eval_reconstruction,
                       init_train_state, load_checkpoint, run_stage1,
                       run_stage2, save_checkpoint)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

PRETRAIN_DEFAULTS = {
    "stage1_epochs": 10,
    "stage2_epochs": 10,
    "batch_size": 32,
    "learning_rate": 1e-5,
    "cea_weight": 1.0,
    "seed": 0,
    "ipot_beta": 0.5,
    "ipot_outer_iters": 50,
    "ipot_inner_k": 1,
    "warm_iters": 1000,
    "warm_alpha": 0.6,
    "ema_decay": 0.9,
    "bootstrap_every": 5,
    "cea_variant": "ot",
    "force_alpha": None,
    "shuffle": True,
    "reset_scheduler_for_stage2": False,
    "eval_docs": 0,
    "layers": 2,
    "dim": 32,
    "heads": 2,
    "ffn_dim": 64,
    "max_seq_len": 128,
    "log_every": 50,
}


def _read_config_file(path, known: dict) -> dict:
    """key=value lines; keys must name known options; values typed by default."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CorpusError(f"{path}:{lineno}: expected key=value")
            key_raw, raw = (part.strip() for part in line.split("=", 1))
            key = key_raw.replace("-", "_")
            if key not in known:
                raise CorpusError(f"{path}:{lineno}: unknown config key {key_raw!r}")
            default = known[key]
            if isinstance(default, bool):
                values[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int) and default is not None:
                values[key] = int(raw)
            elif isinstance(default, float):
                values[key] = float(raw)
            elif default is None and key == "force_alpha":
                values[key] = float(raw)
            else:
                values[key] = raw
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domainlm",
        description="Desk-scale domain LM pre-training: phrase-aware adaptive "
                    "masking plus optimal-transport entity alignment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--corpus", required=True, help="one document per line, UTF-8")
    p.add_argument("--out", required=True, help="output vocab TSV (token<TAB>id)")
    p.add_argument("--min-freq", type=int, default=1)

    p = sub.add_parser("pretrain", help="run the two-stage pre-training schedule")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True, help="vocab file from build-vocab")
    p.add_argument("--phrase-pool", required=True, help="phrase<TAB>score TSV")
    p.add_argument("--pairs", help="entity pair TSV (required when stage 2 runs)")
    p.add_argument("--content", help="entity content TSV (required when stage 2 runs)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key=value file; explicit flags win")
    p.add_argument("--resume", help="checkpoint to continue from")
    for key, default in PRETRAIN_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            if default:
                p.add_argument("--no-" + key.replace("_", "-"), dest=key,
                               action="store_false", default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, dest=key, action="store_true",
                               default=argparse.SUPPRESS)
        elif key == "force_alpha":
            p.add_argument(flag, type=float, default=argparse.SUPPRESS)
        elif key == "cea_variant":
            p.add_argument(flag, choices=("ot", "attention"),
                           default=argparse.SUPPRESS)
        else:
            p.add_argument(flag, type=type(default), default=argparse.SUPPRESS)

    p = sub.add_parser("align", help="export alignment matrices for entity pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--content", help="entity content TSV for --pair lookups")
    p.add_argument("--pair", action="append", default=[],
                   help="id_a,id_b (repeatable)")
    p.add_argument("--text-a", help="literal text instead of --pair")
    p.add_argument("--text-b")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", choices=("ot", "attention"), default="ot")
    p.add_argument("--outer-iters", type=int, default=2000)
    p.add_argument("--beta", type=float, default=0.5)

    p = sub.add_parser("eval", help="masked-reconstruction accuracy by span length")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eval-corpus", required=True)
    p.add_argument("--phrase-pool", required=True)
    p.add_argument("--out", help="also write the table as CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-docs", type=int)
    return parser


# ------------------------------------------------------------------- commands


def cmd_build_vocab(args) -> int:
    vocab = build_vocab(args.corpus, min_freq=args.min_freq)
    vocab.save(args.out)
    total = 0
    covered = 0
    with open(args.corpus, encoding="utf-8") as fh:
        for line in fh:
            for tok in split_words(line):
                total += 1
                covered += tok in vocab.token_to_id
    print(f"vocab_size\t{len(vocab)}")
    print(f"coverage\t{covered / total:.4f}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    merged = dict(PRETRAIN_DEFAULTS)
    if args.config:
        merged.update(_read_config_file(args.config, PRETRAIN_DEFAULTS))
    for key in PRETRAIN_DEFAULTS:
        if hasattr(args, key):
            merged[key] = getattr(args, key)

    if merged["stage2_epochs"] > 0 and not (args.pairs and args.content):
        raise CorpusError("--pairs and --content are required when stage2-epochs > 0")

    vocab = Vocab.load(args.vocab)
    docs = load_corpus(args.corpus, vocab, max_seq_len=merged["max_seq_len"])
    pool = load_pool(args.phrase_pool, vocab)

    config = TrainConfig(
        stage1_epochs=merged["stage1_epochs"], stage2_epochs=merged["stage2_epochs"],
        batch_size=merged["batch_size"], learning_rate=merged["learning_rate"],
        cea_weight=merged["cea_weight"], seed=merged["seed"],
        ipot_beta=merged["ipot_beta"], ipot_outer_iters=merged["ipot_outer_iters"],
        ipot_inner_k=merged["ipot_inner_k"], warm_iters=merged["warm_iters"],
        warm_alpha=merged["warm_alpha"], ema_decay=merged["ema_decay"],
        bootstrap_every=merged["bootstrap_every"], cea_variant=merged["cea_variant"],
        force_alpha=merged["force_alpha"], shuffle=merged["shuffle"],
        reset_scheduler_for_stage2=merged["reset_scheduler_for_stage2"],
        eval_docs=merged["eval_docs"], max_seq_len=merged["max_seq_len"],
    )
    config.validate()

    if args.resume:
        state = load_checkpoint(args.resume)
        state.config = config
    else:
        enc_config = EncoderConfig(
            vocab_size=len(vocab), phrase_vocab_size=pool.phrase_vocab_size,
            layers=merged["layers"], dim=merged["dim"], heads=merged["heads"],
            ffn_dim=merged["ffn_dim"], max_seq_len=merged["max_seq_len"])
        state = init_train_state(vocab, pool, config, enc_config)

    log_every = merged["log_every"]

    def progress(rec: dict) -> None:
        if log_every and rec["iter"] % log_every == 0:
            loss = rec["L_w"] if rec["L_w"] is not None else rec["L_p"]
            extra = f" L_cea={rec['L_cea']:.4f}" if rec["L_cea"] is not None else ""
            print(f"iter={rec['iter']} stage={rec['stage']} mode={rec['mode']} "
                  f"loss={loss:.4f}{extra} alpha={rec['alpha']:.4f}", file=sys.stderr)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.stage1_epochs > 0:
        run_stage1(docs, pool, state, progress=progress)
    if config.stage2_epochs > 0:
        pair_set = load_entity_pairs(args.pairs, args.content, vocab,
                                     max_seq_len=merged["max_seq_len"])
        run_stage2(pair_set, pool, state, progress=progress)

    ckpt = out_dir / "checkpoint.npz"
    save_checkpoint(ckpt, state)
    state.report.write_jsonl(out_dir / "report.jsonl")
    print(f"checkpoint\t{ckpt}")
    print(f"report\t{out_dir / 'report.jsonl'}")
    return EXIT_OK


def _align_one(state, doc_a, doc_b, variant, outer_iters, beta, out_path) -> None:
    emb_a = training._doc_embeddings(state, doc_a)
    emb_b = training._doc_embeddings(state, doc_b)
    if variant == "ot":
        plan = transport.ipot(transport.cost_matrix(emb_a, emb_b).values.data,
                              beta=beta, outer_iters=outer_iters)
        matrix = transport.alignment_matrix(plan)
    else:
        matrix = crossattn.cross_attention(emb_a, emb_b).alpha.data
    row_tokens = state.vocab.decode(doc_a.tokens)
    col_tokens = state.vocab.decode(doc_b.tokens)
    transport.write_alignment_csv(out_path, row_tokens, col_tokens, matrix)
    print(f"alignment\t{out_path}")


def cmd_align(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    max_len = state.enc_config.max_seq_len
    jobs = []
    if args.text_a is not None or args.text_b is not None:
        if not (args.text_a and args.text_b):
            raise CorpusError("--text-a and --text-b must be given together")
        doc_a = tokenize(args.text_a, state.vocab, max_len)
        doc_b = tokenize(args.text_b, state.vocab, max_len)
        if not doc_a.tokens or not doc_b.tokens:
            raise CorpusError("both texts must contain at least one token")
        jobs.append((doc_a, doc_b, out_dir / "align_text.csv"))
    if args.pair:
        if not args.content:
            raise CorpusError("--content is required with --pair")
        content = load_content(args.content, state.vocab, max_len)
        for spec in args.pair:
            parts = spec.split(",")
            if len(parts) != 2:
                raise CorpusError(f"--pair expects 'id_a,id_b', got {spec!r}")
            ida, idb = parts
            if ida not in content or idb not in content:
                missing = ida if ida not in content else idb
                raise CorpusError(f"unknown entity id {missing!r}")
            jobs.append((content[ida], content[idb],
                         out_dir / f"align_{ida}_{idb}.csv"))
    if not jobs:
        raise CorpusError("nothing to align: give --pair or --text-a/--text-b")
    for doc_a, doc_b, path in jobs:
        _align_one(state, doc_a, doc_b, args.variant, args.outer_iters,
                   args.beta, path)
    return EXIT_OK


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    docs = load_corpus(args.eval_corpus, state.vocab,
                       max_seq_len=state.enc_config.max_seq_len)
    pool = load_pool(args.phrase_pool, state.vocab)
    rows = eval_reconstruction(state, docs, pool, span_lengths=(1, 2, 3, 4),
                               seed=args.seed, max_docs=args.max_docs)
    print("span_len\tn_examples\taccuracy")
    lines = ["span_len,n_examples,accuracy"]
    for row in rows:
        acc = "NA" if row["accuracy"] is None else f"{row['accuracy']:.4f}"
        print(f"{row['span_len']}\t{row['n_examples']}\t{acc}")
        lines.append(f"{row['span_len']},{row['n_examples']},{acc}")
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "build-vocab": cmd_build_vocab,
        "pretrain": cmd_pretrain,
        "align": cmd_align,
        "eval": cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except NanGradientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, PhraseFileError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
