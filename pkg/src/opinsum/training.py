"""Teacher-forced training: example construction from mined pairs,
length-bucketed batching, Nesterov momentum with linear warmup, and
validation perplexity with best-checkpoint selection.

Reruns with the same seed and inputs are bit-identical: batch order,
dropout noise and parameter updates all come from seeded generators.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import no_grad
from .control import ControlLexicon, augment_review
from .corpus import Corpus
from .errors import DataError, NumericalError
from .model import MultiSourceTransformer, pad_sources, pad_targets, save_checkpoint
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, SubwordVocab


@dataclass
class TrainConfig:
    max_steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 0.01
    warmup_steps: int = 200
    momentum: float = 0.99
    clip_norm: float = 1.0  # 0 disables gradient clipping
    loss_on_prefix: bool = True  # control prompt tokens count in the loss
    seed: int = 0
    log_every: int = 50
    valid_every: int = 200
    max_source_len: int = 96
    max_target_len: int = 96
    max_control_tokens: int = 8

    def __post_init__(self):
        if self.max_steps < 1 or self.batch_size < 1:
            raise DataError("max_steps and batch_size must be positive")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DataError("momentum must be in [0, 1)")
        if self.clip_norm < 0.0:
            raise DataError("clip_norm must be >= 0 (0 disables clipping)")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the base rate, constant afterwards; step is 1-based."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.learning_rate * step / cfg.warmup_steps
    return cfg.learning_rate


def nesterov_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
                  lr: float, momentum: float) -> None:
    """v <- mu v - lr g;  theta <- theta + mu v - lr g  (in place)."""
    velocity *= momentum
    velocity -= lr * grad
    param += momentum * velocity
    param -= lr * grad


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.square(g, dtype=np.float64).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


@dataclass
class OptimizerState:
    velocities: dict
    step: int = 0

    @classmethod
    def for_model(cls, model: MultiSourceTransformer) -> "OptimizerState":
        return cls(
            velocities={n: np.zeros_like(p.data) for n, p in model.params.items()}
        )


@dataclass
class TrainingExample:
    """Encoded pair: m source id sequences and one prompted target."""

    sources: tuple  # tuple of id tuples, each ending in EOS
    target: tuple  # BOS, prompt ids (separator last), body ids, EOS
    prefix_len: int  # prompt ids between BOS and body
    target_review_id: str = ""


def build_training_examples(
    pairs,
    corpus: Corpus,
    vocab: SubwordVocab,
    lexicon: ControlLexicon,
    cfg: TrainConfig,
) -> list:
    """Encode mined pairs; the target carries its oracle control prompt."""
    entity_cats = {
        e: frozenset().union(*(r.categories for r in corpus.entity_reviews(e)))
        for e in corpus.entities
    }
    examples = []
    for pair in pairs:
        target_review = pair.target
        aug = augment_review(
            target_review,
            entity_cats[target_review.entity_id],
            lexicon,
            max_tokens=cfg.max_control_tokens,
        )
        prefix_ids = vocab.encode(" ".join(aug.prefix_tokens()))
        body_budget = max(cfg.max_target_len - 2 - len(prefix_ids), 0)
        body_ids = vocab.encode(target_review.text)[:body_budget]
        target = (BOS_ID, *prefix_ids, *body_ids, EOS_ID)
        sources = tuple(
            (*vocab.encode(r.text)[: cfg.max_source_len - 1], EOS_ID)
            for r in pair.inputs
        )
        examples.append(
            TrainingExample(
                sources=sources,
                target=target,
                prefix_len=len(prefix_ids),
                target_review_id=target_review.review_id,
            )
        )
    if not examples:
        raise DataError("no training examples could be built")
    return examples


def _bucketed_batches(examples: list, batch_size: int) -> list:
    # group similar lengths so padding stays cheap
    order = sorted(
        range(len(examples)),
        key=lambda i: (
            len(examples[i].target),
            max(len(s) for s in examples[i].sources),
            i,
        ),
    )
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def batch_arrays(examples: list, loss_on_prefix: bool = True):
    """Pad a list of examples into model-ready arrays.

    Returns (src_ids, src_mask, dec_in, labels, loss_mask); the loss mask
    excludes padding and, optionally, the control prompt positions.
    """
    src_ids, src_mask = pad_sources([[list(s) for s in ex.sources] for ex in examples])
    full = pad_targets([list(ex.target) for ex in examples])
    dec_in = full[:, :-1]
    labels = full[:, 1:]
    loss_mask = labels != PAD_ID
    if not loss_on_prefix:
        for bi, ex in enumerate(examples):
            loss_mask[bi, : ex.prefix_len] = False
    return src_ids, src_mask, dec_in, labels, loss_mask


def batch_loss(model, arrays, train: bool = False, rng=None):
    src_ids, src_mask, dec_in, labels, loss_mask = arrays
    if int(loss_mask.sum()) == 0:
        raise DataError("loss mask selects no positions")
    encoded = model.encode_sources(src_ids, src_mask, train=train, rng=rng)
    logits = model.decoder_forward(encoded, dec_in, train=train, rng=rng)
    return ad.cross_entropy(logits, labels, loss_mask)


def evaluate_perplexity(
    model, examples: list, batch_size: int = 8, loss_on_prefix: bool = True
) -> float:
    """exp(total NLL / total predicted tokens) over a fixed batch order."""
    if not examples:
        raise DataError("perplexity over an empty example list")
    total_nll, total_tokens = 0.0, 0
    with no_grad():
        for idx in _bucketed_batches(examples, batch_size):
            arrays = batch_arrays([examples[i] for i in idx], loss_on_prefix)
            n = int(arrays[4].sum())
            total_nll += batch_loss(model, arrays).item() * n
            total_tokens += n
    mean_nll = total_nll / total_tokens
    if not math.isfinite(mean_nll):
        raise NumericalError("non-finite validation loss")
    return math.exp(mean_nll) if mean_nll < 700 else math.inf


@dataclass
class TrainResult:
    history: list  # dict rows: step, loss, lr, grad_norm, tokens_per_s, valid_ppl
    best_step: int
    best_valid_ppl: float
    final_step: int


LOG_COLUMNS = ("step", "loss", "lr", "grad_norm", "tokens_per_s", "valid_ppl")


def _write_log_row(stream, row: dict) -> None:
    if stream is None:
        return
    cells = []
    for col in LOG_COLUMNS:
        v = row.get(col)
        if v is None:
            cells.append("")
        elif col == "step":
            cells.append(str(v))
        else:
            cells.append(f"{v:.6g}")
    stream.write("\t".join(cells) + "\n")
    stream.flush()


def train_loop(
    model: MultiSourceTransformer,
    train_examples: list,
    valid_examples,
    cfg: TrainConfig,
    checkpoint_path=None,
    vocab_hash: str = "",
    log_stream=None,
) -> TrainResult:
    """Run teacher-forced optimization for cfg.max_steps updates.

    Validation perplexity is measured every cfg.valid_every steps and at
    the end; whenever it improves, the checkpoint (if a path was given)
    is rewritten.  Without a validation set the final step is saved.
    """
    if not train_examples:
        raise DataError("train_loop needs at least one example")
    opt = OptimizerState.for_model(model)
    rng_shuffle = np.random.default_rng(cfg.seed)
    rng_drop = np.random.default_rng(cfg.seed + 1)
    if log_stream is not None:
        log_stream.write("\t".join(LOG_COLUMNS) + "\n")

    history: list = []
    best_ppl, best_step = math.inf, -1
    queue: list = []
    tokens_since, since_t0 = 0, time.perf_counter()

    for step in range(1, cfg.max_steps + 1):
        if not queue:
            batches = _bucketed_batches(train_examples, cfg.batch_size)
            for j in rng_shuffle.permutation(len(batches)):
                queue.append(batches[j])
        idx = queue.pop()
        arrays = batch_arrays([train_examples[i] for i in idx], cfg.loss_on_prefix)
        loss = batch_loss(model, arrays, train=True, rng=rng_drop)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NumericalError(f"non-finite training loss at step {step}")
        model.zero_grad()
        loss.backward()
        grads = {
            n: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for n, p in model.params.items()
        }
        grad_norm = clip_global_norm(grads, cfg.clip_norm)
        lr = lr_at(step, cfg)
        for name, p in model.params.items():
            nesterov_step(p.data, grads[name], opt.velocities[name], lr, cfg.momentum)
        opt.step = step
        tokens_since += int(arrays[4].sum())

        at_end = step == cfg.max_steps
        row = None
        if step % cfg.log_every == 0 or at_end:
            elapsed = max(time.perf_counter() - since_t0, 1e-9)
            row = {
                "step": step,
                "loss": loss_value,
                "lr": lr,
                "grad_norm": grad_norm,
                "tokens_per_s": tokens_since / elapsed,
                "valid_ppl": None,
            }
            tokens_since, since_t0 = 0, time.perf_counter()
        if valid_examples and (step % cfg.valid_every == 0 or at_end):
            ppl = evaluate_perplexity(
                model, valid_examples, cfg.batch_size, cfg.loss_on_prefix
            )
            if row is None:
                row = {"step": step, "loss": loss_value, "lr": lr,
                       "grad_norm": grad_norm, "tokens_per_s": None, "valid_ppl": ppl}
            else:
                row["valid_ppl"] = ppl
            if ppl < best_ppl:
                best_ppl, best_step = ppl, step
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model, step=step, vocab_hash=vocab_hash)
        if row is not None:
            history.append(row)
            _write_log_row(log_stream, row)

    if best_step < 0:
        best_step = cfg.max_steps
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, step=best_step, vocab_hash=vocab_hash)
    return TrainResult(
        history=history,
        best_step=best_step,
        best_valid_ppl=best_ppl,
        final_step=cfg.max_steps,
    )
