"""Pipeline command line.

Subcommands: ingest, split, train-vocab, mine-controls, build-pairs,
train, summarize, evaluate, control-compliance, grad-check.  Options
resolve with precedence flags > config file (--config, JSON object with
option names as keys) > built-in defaults; unknown file keys are
rejected by name.  Exit codes: 0 success, 1 usage/config error, 2 data
error, 3 numerical failure.  Every run logs its resolved configuration
and the sha256 of each input file to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import fields as dataclass_fields

import numpy as np

from . import report
from .control import (
    ControlLexicon,
    augment_review,
    control_token_inventory,
    extract_lexicon,
    infer_prompt,
    train_all_classifiers,
)
from .corpus import ingest_corpus, partition_corpus, serialize_corpus
from .decoding import DecodeConfig, generate_with_prompt, summarize_entity
from .errors import ConfigError, DataError, NumericalError
from .evaluation import (
    EvalExample,
    control_compliance,
    evaluate_summaries,
    train_sentiment_classifier,
)
from .model import (
    ModelConfig,
    MultiSourceTransformer,
    gradient_check,
    load_checkpoint,
)
from .selfsup import PairBuilderConfig, build_pairs, load_pairs, save_pairs
from .tokenizer import EOS_ID, PAD_ID, SubwordVocab, train_subword_vocab
from .training import TrainConfig, build_training_examples, train_loop

log = logging.getLogger("opinsum")

REQUIRED = object()

# (name, type, default, help); REQUIRED means the option must come from
# the config file or a flag.
_CLASSIFIER_OPTS = (
    ("reg_strength", float, 1.0, "L1 regularization strength"),
    ("neg_ratio", float, 1.0, "negatives sampled per positive"),
    ("min_pos", int, 20, "minimum positives to train a label"),
    ("max_epochs", int, 200, "coordinate-descent epoch cap"),
)

_DECODE_OPTS = (
    ("beam_size", int, 5, "beam width"),
    ("alpha", float, 1.2, "length-penalty exponent"),
    ("max_new_tokens", int, 60, "generated-token budget"),
    ("block_repeated_trigrams", bool, True, "mask candidates repeating a trigram"),
    ("n_inputs", int, 8, "reviews fed to the encoder"),
    ("selection", str, "central", "input picking: central | by_id"),
    ("max_source_len", int, 96, "per-source token cap"),
    ("max_control_tokens", int, 8, "inferred n-gram tokens per prompt"),
)

_MODEL_OPTS = (
    ("d_model", int, 64, "model width"),
    ("n_heads", int, 4, "attention heads"),
    ("n_layers", int, 2, "encoder and decoder layers"),
    ("d_ff", int, 0, "feed-forward width (0 = 4 * d_model)"),
    ("dropout", float, 0.1, "dropout probability"),
    ("max_positions", int, 256, "maximum sequence length"),
    ("combination", str, "parallel", "cross-attention combination: parallel | mean"),
    ("strict_mean", bool, False, "mean combination divides by m even at padding"),
)

OPTIONS = {
    "ingest": (
        ("input", str, REQUIRED, "raw review JSONL"),
        ("output", str, REQUIRED, "cleaned corpus JSONL"),
        ("min_reviews", int, 9, "drop entities with fewer reviews"),
    ),
    "split": (
        ("input", str, REQUIRED, "corpus JSONL"),
        ("train_output", str, REQUIRED, "training split path"),
        ("valid_output", str, REQUIRED, "validation split path"),
        ("valid_fraction", float, 0.1, "fraction of entities held out"),
        ("seed", int, 0, "shuffle seed"),
    ),
    "train-vocab": (
        ("input", str, REQUIRED, "corpus JSONL"),
        ("output", str, REQUIRED, "vocabulary file"),
        ("vocab_size", int, 512, "target subword vocabulary size"),
    ),
    "mine-controls": (
        ("input", str, REQUIRED, "corpus JSONL"),
        ("lexicon_output", str, REQUIRED, "control lexicon TSV"),
        *_CLASSIFIER_OPTS,
        ("seed", int, 0, "negative-sampling seed"),
    ),
    "build-pairs": (
        ("input", str, REQUIRED, "corpus JSONL"),
        ("output", str, REQUIRED, "pair file"),
        ("k", int, 8, "input reviews per pair"),
        ("top_fraction", float, 0.15, "per-entity candidate fraction"),
        ("cap", int, 100, "per-entity candidate cap"),
    ),
    "train": (
        ("corpus", str, REQUIRED, "training corpus JSONL"),
        ("pairs", str, REQUIRED, "training pair file"),
        ("vocab", str, REQUIRED, "vocabulary file"),
        ("lexicon", str, REQUIRED, "control lexicon TSV"),
        ("checkpoint_output", str, REQUIRED, "best-checkpoint path"),
        ("valid_corpus", str, "", "validation corpus JSONL (optional)"),
        ("valid_pairs", str, "", "validation pair file (optional)"),
        ("log_output", str, "", "training log TSV (optional)"),
        ("figure_output", str, "", "training-curve figure path (optional)"),
        *_MODEL_OPTS,
        ("max_steps", int, 2000, "optimizer steps"),
        ("batch_size", int, 8, "examples per step"),
        ("learning_rate", float, 0.01, "base learning rate"),
        ("warmup_steps", int, 200, "linear warmup steps"),
        ("momentum", float, 0.99, "Nesterov momentum"),
        ("clip_norm", float, 1.0, "global gradient-norm clip (0 = off)"),
        ("loss_on_prefix", bool, True, "include prompt tokens in the loss"),
        ("log_every", int, 50, "steps between log rows"),
        ("valid_every", int, 200, "steps between validation passes"),
        ("max_target_len", int, 96, "target token cap"),
        ("max_source_len", int, 96, "per-source token cap"),
        ("max_control_tokens", int, 8, "inferred n-gram tokens per prompt"),
        ("seed", int, 0, "training seed (init, shuffle, dropout)"),
    ),
    "summarize": (
        ("corpus", str, REQUIRED, "corpus JSONL"),
        ("vocab", str, REQUIRED, "vocabulary file"),
        ("lexicon", str, REQUIRED, "control lexicon TSV"),
        ("checkpoint", str, REQUIRED, "model checkpoint"),
        ("entity", str, "", "entity id (empty = all entities)"),
        ("output", str, "", "summary TSV (empty = stdout)"),
        *_DECODE_OPTS,
    ),
    "evaluate": (
        ("train_corpus", str, REQUIRED, "corpus for metric classifiers"),
        ("eval_corpus", str, REQUIRED, "corpus holding the eval pairs"),
        ("eval_pairs", str, REQUIRED, "pair file to evaluate on"),
        ("vocab", str, REQUIRED, "vocabulary file"),
        ("lexicon", str, REQUIRED, "control lexicon TSV"),
        ("checkpoint", str, REQUIRED, "model checkpoint"),
        ("output_dir", str, REQUIRED, "report directory"),
        ("max_pairs", int, 0, "evaluate at most this many pairs (0 = all)"),
        *_DECODE_OPTS,
        *_CLASSIFIER_OPTS,
        ("seed", int, 0, "classifier-training seed"),
    ),
    "control-compliance": (
        ("corpus", str, REQUIRED, "corpus JSONL"),
        ("vocab", str, REQUIRED, "vocabulary file"),
        ("lexicon", str, REQUIRED, "control lexicon TSV"),
        ("checkpoint", str, REQUIRED, "model checkpoint"),
        ("output_dir", str, REQUIRED, "report directory"),
        ("n_reviews", int, 100, "reviews sampled"),
        ("repeats", int, 1, "prompt draws per review"),
        ("tokens_per_prompt", int, 8, "lexicon tokens per prompt"),
        ("seed", int, 0, "sampling seed"),
        *_DECODE_OPTS,
    ),
    "grad-check": (
        ("vocab_size", int, 48, "toy vocabulary size"),
        ("d_model", int, 8, "model width"),
        ("n_heads", int, 2, "attention heads"),
        ("n_layers", int, 1, "encoder and decoder layers"),
        ("d_ff", int, 0, "feed-forward width (0 = 4 * d_model)"),
        ("max_positions", int, 64, "maximum sequence length"),
        ("combination", str, "parallel", "cross-attention combination: parallel | mean"),
        ("strict_mean", bool, False, "mean combination divides by m even at padding"),
        ("sources", int, 2, "sources per example"),
        ("batch", int, 2, "examples in the probe batch"),
        ("source_len", int, 7, "source length"),
        ("target_len", int, 6, "target length"),
        ("epsilon", float, 1e-4, "finite-difference step"),
        ("n_coords", int, 40, "parameter coordinates probed"),
        ("tolerance", float, 1e-4, "max relative error allowed"),
        ("seed", int, 7, "model and batch seed"),
    ),
}

# path-valued options hashed into the run log when they exist
INPUT_KEYS = {
    "ingest": ("input",),
    "split": ("input",),
    "train-vocab": ("input",),
    "mine-controls": ("input",),
    "build-pairs": ("input",),
    "train": ("corpus", "pairs", "vocab", "lexicon", "valid_corpus", "valid_pairs"),
    "summarize": ("corpus", "vocab", "lexicon", "checkpoint"),
    "evaluate": ("train_corpus", "eval_corpus", "eval_pairs", "vocab", "lexicon", "checkpoint"),
    "control-compliance": ("corpus", "vocab", "lexicon", "checkpoint"),
    "grad-check": (),
}


class _Parser(argparse.ArgumentParser):
    # usage problems must map to exit code 1, not argparse's default 2
    def error(self, message):
        raise ConfigError(message)


def _coerce(key: str, value, typ):
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {key!r} expects true/false")
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} expects an integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} expects a number")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} expects a string")
        return value
    raise ConfigError(f"config key {key!r} has unsupported type")


def resolve_config(options, file_values, flags) -> dict:
    """Merge defaults <- config file <- flags; reject unknown file keys."""
    known = {name: (typ, default) for name, typ, default, _ in options}
    resolved = {
        name: (None if default is REQUIRED else default)
        for name, (typ, default) in known.items()
    }
    if file_values:
        for key in sorted(file_values):
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = _coerce(key, file_values[key], known[key][0])
    for name in known:
        value = flags.get(name)
        if value is not None:
            resolved[name] = value
    missing = sorted(
        name for name, (_, d) in known.items() if d is REQUIRED and resolved[name] is None
    )
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join(missing))
    return resolved


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return values


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _log_run(cmd: str, resolved: dict) -> None:
    log.info("%s config %s", cmd, json.dumps(resolved, sort_keys=True))
    for key in INPUT_KEYS[cmd]:
        path = resolved.get(key)
        if path and os.path.exists(path):
            log.info("input %s sha256=%s", path, _sha256(path))


def _dataclass_kwargs(cls, resolved: dict) -> dict:
    names = {f.name for f in dataclass_fields(cls)}
    return {k: v for k, v in resolved.items() if k in names}


def _decode_config(resolved: dict) -> DecodeConfig:
    return DecodeConfig(**_dataclass_kwargs(DecodeConfig, resolved))


def _load_vocab_with_controls(vocab_path, lexicon: ControlLexicon) -> SubwordVocab:
    # the extended vocabulary is a pure function of (vocab file, lexicon),
    # so every stage rebuilds the identical table and hash
    vocab = SubwordVocab.load(vocab_path)
    vocab.register_control_tokens(control_token_inventory(lexicon.categories(), lexicon))
    return vocab


def _load_model_stack(resolved: dict, corpus_key: str = "corpus"):
    corpus = ingest_corpus(resolved[corpus_key], min_reviews_per_entity=1)
    lexicon = ControlLexicon.load(resolved["lexicon"])
    vocab = _load_vocab_with_controls(resolved["vocab"], lexicon)
    model, step, ckpt_hash = load_checkpoint(resolved["checkpoint"])
    if ckpt_hash and ckpt_hash != vocab.content_hash():
        raise DataError(
            "checkpoint was trained with a different vocabulary/lexicon "
            f"(hash {ckpt_hash[:12]}.. != {vocab.content_hash()[:12]}..)"
        )
    if model.cfg.vocab_size != len(vocab.id_to_token):
        raise DataError(
            f"checkpoint vocab_size {model.cfg.vocab_size} != vocabulary "
            f"size {len(vocab.id_to_token)}"
        )
    return corpus, vocab, lexicon, model, step


# --- subcommands ---------------------------------------------------------


def cmd_ingest(cfg: dict) -> None:
    corpus = ingest_corpus(cfg["input"], min_reviews_per_entity=cfg["min_reviews"])
    serialize_corpus(corpus, cfg["output"])
    print(
        f"ingested {len(corpus)} reviews across {len(corpus.entities)} entities "
        f"(skipped {corpus.skipped_lines} malformed lines) -> {cfg['output']}"
    )


def cmd_split(cfg: dict) -> None:
    corpus = ingest_corpus(cfg["input"], min_reviews_per_entity=1)
    train, valid = partition_corpus(corpus, cfg["valid_fraction"], cfg["seed"])
    serialize_corpus(train, cfg["train_output"])
    serialize_corpus(valid, cfg["valid_output"])
    print(
        f"split {len(corpus.entities)} entities -> "
        f"{len(train.entities)} train / {len(valid.entities)} valid"
    )


def cmd_train_vocab(cfg: dict) -> None:
    corpus = ingest_corpus(cfg["input"], min_reviews_per_entity=1)
    vocab = train_subword_vocab((r.text for r in corpus.reviews), cfg["vocab_size"])
    vocab.save(cfg["output"])
    print(
        f"trained vocabulary: {len(vocab.id_to_token)} tokens "
        f"({len(vocab.merges)} merges), hash {vocab.content_hash()[:12]} "
        f"-> {cfg['output']}"
    )


def cmd_mine_controls(cfg: dict) -> None:
    corpus = ingest_corpus(cfg["input"], min_reviews_per_entity=1)
    classifiers = train_all_classifiers(
        corpus,
        neg_ratio=cfg["neg_ratio"],
        reg_strength=cfg["reg_strength"],
        seed=cfg["seed"],
        min_pos=cfg["min_pos"],
        max_epochs=cfg["max_epochs"],
    )
    if not classifiers:
        raise DataError("no category had enough positive reviews")
    lexicon = extract_lexicon(classifiers)
    lexicon.save(cfg["lexicon_output"])
    sizes = ", ".join(
        f"{cat}:{len(lexicon.entries[cat])}" for cat in lexicon.categories()
    )
    print(f"mined lexicon ({sizes}) -> {cfg['lexicon_output']}")


def cmd_build_pairs(cfg: dict) -> None:
    corpus = ingest_corpus(cfg["input"], min_reviews_per_entity=1)
    pair_cfg = PairBuilderConfig(
        k=cfg["k"], top_fraction=cfg["top_fraction"], cap=cfg["cap"]
    )
    pairs = build_pairs(corpus, pair_cfg)
    if not pairs:
        raise DataError("no entity produced training pairs")
    save_pairs(pairs, cfg["output"])
    print(f"built {len(pairs)} pairs (k={cfg['k']}) -> {cfg['output']}")


def cmd_train(cfg: dict) -> None:
    corpus = ingest_corpus(cfg["corpus"], min_reviews_per_entity=1)
    lexicon = ControlLexicon.load(cfg["lexicon"])
    vocab = _load_vocab_with_controls(cfg["vocab"], lexicon)
    pairs = load_pairs(cfg["pairs"], corpus)
    if not pairs:
        raise DataError("pair file is empty")
    train_cfg = TrainConfig(**_dataclass_kwargs(TrainConfig, cfg))
    examples = build_training_examples(pairs, corpus, vocab, lexicon, train_cfg)
    valid_examples = None
    if cfg["valid_corpus"] and cfg["valid_pairs"]:
        valid_corpus = ingest_corpus(cfg["valid_corpus"], min_reviews_per_entity=1)
        valid_pairs = load_pairs(cfg["valid_pairs"], valid_corpus)
        valid_examples = build_training_examples(
            valid_pairs, valid_corpus, vocab, lexicon, train_cfg
        )
    model_cfg = ModelConfig(
        vocab_size=len(vocab.id_to_token),
        sources=len(pairs[0].inputs),
        **_dataclass_kwargs(ModelConfig, {k: v for k, v in cfg.items()
                                          if k not in ("vocab_size", "sources")}),
    )
    model = MultiSourceTransformer(model_cfg, seed=cfg["seed"])
    log_stream = open(cfg["log_output"], "w", encoding="utf-8") if cfg["log_output"] else None
    try:
        result = train_loop(
            model,
            examples,
            valid_examples,
            train_cfg,
            checkpoint_path=cfg["checkpoint_output"],
            vocab_hash=vocab.content_hash(),
            log_stream=log_stream,
        )
    finally:
        if log_stream is not None:
            log_stream.close()
    if cfg["figure_output"]:
        report.plot_training_curves(cfg["figure_output"], result.history)
    best = (
        f"{result.best_valid_ppl:.4f}" if math.isfinite(result.best_valid_ppl) else "n/a"
    )
    print(
        f"trained {result.final_step} steps on {len(examples)} examples; "
        f"best validation perplexity {best} at step {result.best_step} "
        f"-> {cfg['checkpoint_output']}"
    )


def cmd_summarize(cfg: dict) -> None:
    corpus, vocab, lexicon, model, _ = _load_model_stack(cfg)
    decode_cfg = _decode_config(cfg)
    entities = [cfg["entity"]] if cfg["entity"] else corpus.entities
    results = [
        summarize_entity(model, vocab, lexicon, corpus, e, decode_cfg)
        for e in entities
    ]
    if cfg["output"]:
        report.write_summaries_tsv(cfg["output"], results)
        print(f"wrote {len(results)} summaries -> {cfg['output']}")
    else:
        for r in results:
            print(f"{r.entity_id}\t{r.text}")


def cmd_evaluate(cfg: dict) -> None:
    eval_corpus, vocab, lexicon, model, _ = _load_model_stack(cfg, "eval_corpus")
    train_corpus = ingest_corpus(cfg["train_corpus"], min_reviews_per_entity=1)
    pairs = load_pairs(cfg["eval_pairs"], eval_corpus)
    if cfg["max_pairs"] > 0:
        pairs = pairs[: cfg["max_pairs"]]
    if not pairs:
        raise DataError("no pairs to evaluate")
    decode_cfg = _decode_config(cfg)
    entity_cats = {
        e: frozenset().union(*(r.categories for r in eval_corpus.entity_reviews(e)))
        for e in eval_corpus.entities
    }
    examples = []
    results = []
    for pair in pairs:
        cats = entity_cats[pair.target.entity_id]
        augs = [
            augment_review(r, cats, lexicon, decode_cfg.max_control_tokens)
            for r in pair.inputs
        ]
        prompt = infer_prompt(augs, lexicon, decode_cfg.max_control_tokens)
        sources = [
            [*vocab.encode(r.text)[: decode_cfg.max_source_len - 1], EOS_ID]
            for r in pair.inputs
        ]
        result = generate_with_prompt(model, vocab, sources, prompt.tokens(), decode_cfg)
        result.entity_id = pair.target.entity_id
        result.input_review_ids = [r.review_id for r in pair.inputs]
        results.append(result)
        examples.append(
            EvalExample(
                candidate=result.text,
                reference=pair.target.text,
                input_mean_rating=sum(r.rating for r in pair.inputs) / len(pair.inputs),
                gold_categories=cats,
            )
        )
    sentiment = train_sentiment_classifier(
        train_corpus,
        neg_ratio=cfg["neg_ratio"],
        reg_strength=cfg["reg_strength"],
        seed=cfg["seed"],
        min_pos=cfg["min_pos"],
        max_epochs=cfg["max_epochs"],
    )
    category_clfs = train_all_classifiers(
        train_corpus,
        neg_ratio=cfg["neg_ratio"],
        reg_strength=cfg["reg_strength"],
        seed=cfg["seed"],
        min_pos=cfg["min_pos"],
        max_epochs=cfg["max_epochs"],
    )
    rep = evaluate_summaries(examples, sentiment, category_clfs)
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    rows = rep.rows()
    report.write_tsv(os.path.join(out, "metrics.tsv"), rows)
    report.write_table(os.path.join(out, "metrics.txt"), rows, title="automatic metrics")
    report.plot_metric_bars(os.path.join(out, "metrics.png"), rows)
    report.write_summaries_tsv(os.path.join(out, "summaries.tsv"), results)
    print(
        f"evaluated {rep.n_examples} pairs: rouge1_f={rep.rouge1_f:.4f} "
        f"rouge2_f={rep.rouge2_f:.4f} rougeL_f={rep.rougeL_f:.4f} -> {out}"
    )


def cmd_control_compliance(cfg: dict) -> None:
    corpus, vocab, lexicon, model, _ = _load_model_stack(cfg)
    decode_cfg = _decode_config(cfg)
    rep = control_compliance(
        model,
        vocab,
        corpus,
        lexicon,
        decode_cfg,
        n_reviews=cfg["n_reviews"],
        repeats=cfg["repeats"],
        tokens_per_prompt=cfg["tokens_per_prompt"],
        seed=cfg["seed"],
    )
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    rows = report.compliance_rows(rep)
    report.write_tsv(os.path.join(out, "compliance.tsv"), rows)
    report.write_table(os.path.join(out, "compliance.txt"), rows, title="prompt compliance")
    report.plot_compliance_histogram(os.path.join(out, "compliance.png"), rep)
    print(
        f"compliance over {len(rep.correct_fractions)} generations/condition: "
        f"correct={rep.mean_correct:.3f} incorrect={rep.mean_incorrect:.3f} "
        f"gap={rep.gap:.3f} -> {out}"
    )


def cmd_grad_check(cfg: dict) -> None:
    model_cfg = ModelConfig(
        vocab_size=cfg["vocab_size"],
        d_model=cfg["d_model"],
        n_heads=cfg["n_heads"],
        n_layers=cfg["n_layers"],
        d_ff=cfg["d_ff"],
        dropout=0.0,
        max_positions=cfg["max_positions"],
        combination=cfg["combination"],
        sources=cfg["sources"],
        strict_mean=cfg["strict_mean"],
    )
    model = MultiSourceTransformer(model_cfg, seed=cfg["seed"], dtype=np.float64)
    rng = np.random.default_rng(cfg["seed"])
    b, m = cfg["batch"], cfg["sources"]
    src = rng.integers(5, cfg["vocab_size"], size=(b, m, cfg["source_len"]))
    src_mask = np.ones(src.shape, dtype=bool)
    if b > 1 and cfg["source_len"] > 2:
        src_mask[-1, -1, -2:] = False  # exercise padded positions
        src[-1, -1, -2:] = PAD_ID
    dec = rng.integers(5, cfg["vocab_size"], size=(b, cfg["target_len"]))
    labels = rng.integers(5, cfg["vocab_size"], size=(b, cfg["target_len"]))
    loss_mask = np.ones(labels.shape, dtype=bool)
    loss_mask[-1, -1] = False
    err = gradient_check(
        model,
        (src, src_mask, dec, labels, loss_mask),
        epsilon=cfg["epsilon"],
        n_coords=cfg["n_coords"],
        seed=cfg["seed"],
    )
    print(f"max relative gradient error {err:.3e} over {cfg['n_coords']} coordinates")
    if err >= cfg["tolerance"]:
        raise NumericalError(
            f"gradient error {err:.3e} exceeds tolerance {cfg['tolerance']:g}"
        )


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train-vocab": cmd_train_vocab,
    "mine-controls": cmd_mine_controls,
    "build-pairs": cmd_build_pairs,
    "train": cmd_train,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "control-compliance": cmd_control_compliance,
    "grad-check": cmd_grad_check,
}


def build_parser() -> _Parser:
    parser = _Parser(
        prog="opinsum",
        description="Self-supervised controlled opinion summarization pipeline.",
    )
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    for name, options in OPTIONS.items():
        p = sub.add_parser(name, help=f"{name} stage")
        p.add_argument("--config", default=None, help="JSON config file")
        for opt_name, typ, default, help_text in options:
            flag = "--" + opt_name.replace("_", "-")
            shown = "required" if default is REQUIRED else repr(default)
            if typ is bool:
                p.add_argument(
                    flag,
                    dest=opt_name,
                    action=argparse.BooleanOptionalAction,
                    default=None,
                    help=f"{help_text} (default {shown})",
                )
            else:
                p.add_argument(
                    flag,
                    dest=opt_name,
                    type=typ,
                    default=None,
                    help=f"{help_text} (default {shown})",
                )
    return parser


def main(argv=None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            level=logging.INFO,
            stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise ConfigError("a subcommand is required (see --help)")
        options = OPTIONS[ns.command]
        file_values = _load_config_file(ns.config) if ns.config else None
        resolved = resolve_config(options, file_values, vars(ns))
        _log_run(ns.command, resolved)
        COMMANDS[ns.command](resolved)
        return 0
    except ConfigError as e:
        log.error("%s", e)
        return 1
    except DataError as e:
        log.error("%s", e)
        return 2
    except NumericalError as e:
        log.error("%s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
