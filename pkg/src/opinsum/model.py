"""Multi-source Transformer: shared per-source encoder, masked decoder,
and two strategies for combining m encoded inputs in cross-attention.

``parallel`` attends to every source separately and averages the m
per-head contexts; ``mean`` averages keys and values position-wise
across sources (mask-aware by default, with a strict 1/m mode) and runs
one attention.  Sources carry no identity embedding, so decoder logits
are invariant under source permutation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor, no_grad
from .errors import DataError, NumericalError

CKPT_MAGIC = "opinsum-ckpt"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 0  # 0 resolves to 4 * d_model
    dropout: float = 0.1
    max_positions: int = 256
    combination: str = "parallel"  # parallel | mean
    sources: int = 8  # expected m, informational for the pipeline
    strict_mean: bool = False  # divide by m even at padded positions

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise DataError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise DataError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.combination not in ("parallel", "mean"):
            raise DataError(f"unknown combination {self.combination!r}")


def sinusoidal_positions(max_positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_positions)[:, None].astype(np.float64)
    dim = np.arange(0, d_model, 2).astype(np.float64)
    angle = pos / np.power(10000.0, dim / d_model)
    pe = np.zeros((max_positions, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


@dataclass
class EncodedSources:
    """Per-source encoder states (B, m, L, d_model) plus the padding mask."""

    states: Tensor
    mask: np.ndarray  # bool (B, m, L), True at real tokens

    @property
    def n_sources(self) -> int:
        return self.states.shape[1]


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    *lead, length, d = t.shape
    t = ad.reshape(t, (*lead, length, n_heads, d // n_heads))
    nd = t.data.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return ad.transpose(t, axes)


def _merge_heads(t: Tensor) -> Tensor:
    nd = t.data.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    t = ad.transpose(t, axes)
    *lead, length, h, dh = t.shape
    return ad.reshape(t, (*lead, length, h * dh))


def _attention_t(q: Tensor, k: Tensor, v: Tensor, additive_mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d_head) + mask) v on trailing (T, d_head) axes."""
    d_head = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.swap_last2(k)), 1.0 / math.sqrt(d_head))
    if additive_mask is not None:
        scores = ad.add(scores, Tensor(additive_mask))
    return ad.matmul(ad.softmax(scores, axis=-1), v)


# --- public single-head operations (numpy in, numpy out) -----------------


def attention_head(q, k, v, mask=None) -> np.ndarray:
    """One scaled dot-product attention head over raw arrays."""
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DataError(
            f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}"
        )
    with no_grad():
        return _attention_t(Tensor(q), Tensor(k), Tensor(v), mask).data


def _stack_sources(ks, vs, masks):
    ks = [np.asarray(k, dtype=np.float64) for k in ks]
    vs = [np.asarray(v, dtype=np.float64) for v in vs]
    if len(ks) == 0 or len(ks) != len(vs):
        raise DataError("need m >= 1 sources with matching keys and values")
    length = max(k.shape[0] for k in ks)
    d = ks[0].shape[1]
    dv = vs[0].shape[1]
    m = len(ks)
    k_pad = np.zeros((m, length, d))
    v_pad = np.zeros((m, length, dv))
    live = np.zeros((m, length), dtype=bool)
    for i, (k, v) in enumerate(zip(ks, vs)):
        if masks is not None:
            src_live = np.asarray(masks[i], dtype=bool)
        else:
            src_live = np.ones(k.shape[0], dtype=bool)
        k_pad[i, : k.shape[0]] = k
        v_pad[i, : v.shape[0]] = v
        live[i, : k.shape[0]] = src_live
    return k_pad, v_pad, live


def parallel_cross_attention(q, ks, vs, masks=None) -> np.ndarray:
    """Average of per-source attention contexts: (1/m) sum_i A(q, K_i, V_i)."""
    q = np.asarray(q, dtype=np.float64)
    k_pad, v_pad, live = _stack_sources(ks, vs, masks)
    additive = np.where(live, 0.0, NEG_INF)[:, None, :]  # (m, 1, L)
    with no_grad():
        ctx = _attention_t(Tensor(q[None]), Tensor(k_pad), Tensor(v_pad), additive)
        return ad.mean_axis(ctx, 0).data


def mean_cross_attention(q, ks, vs, masks=None, strict: bool = False) -> np.ndarray:
    """One attention over position-wise averaged keys and values.

    By default padded positions are excluded from the average through a
    mask-aware denominator; ``strict=True`` divides by m everywhere,
    which coincides with the default when no source is padded.
    """
    q = np.asarray(q, dtype=np.float64)
    k_pad, v_pad, live = _stack_sources(ks, vs, masks)
    m = k_pad.shape[0]
    if strict:
        denom = np.full(k_pad.shape[1], float(m))
    else:
        denom = np.maximum(live.sum(axis=0), 1).astype(np.float64)
    weight = live[..., None].astype(np.float64)
    k_bar = (k_pad * weight).sum(axis=0) / denom[:, None]
    v_bar = (v_pad * weight).sum(axis=0) / denom[:, None]
    additive = np.where(live.any(axis=0), 0.0, NEG_INF)[None, :]
    with no_grad():
        return _attention_t(Tensor(q), Tensor(k_bar), Tensor(v_bar), additive).data


# --- parameterized model -------------------------------------------------


def _init_params(cfg: ModelConfig, seed: int, dtype) -> tuple[dict, list]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    order: list[str] = []

    def uniform(name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        arr = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = Tensor(arr, requires_grad=True)
        order.append(name)

    def fill(name, shape, value):
        params[name] = Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)
        order.append(name)

    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    uniform("embed.tok", (v, d), d)

    def attn_block(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            uniform(f"{prefix}.{w}", (d, d), d)
        for b in ("bq", "bk", "bv", "bo"):
            fill(f"{prefix}.{b}", (d,), 0.0)

    def ln_block(prefix):
        fill(f"{prefix}.g", (d,), 1.0)
        fill(f"{prefix}.b", (d,), 0.0)

    def ff_block(prefix):
        uniform(f"{prefix}.w1", (d, ff), d)
        fill(f"{prefix}.b1", (ff,), 0.0)
        uniform(f"{prefix}.w2", (ff, d), ff)
        fill(f"{prefix}.b2", (d,), 0.0)

    for i in range(cfg.n_layers):
        attn_block(f"enc.{i}.attn")
        ln_block(f"enc.{i}.ln1")
        ff_block(f"enc.{i}.ff")
        ln_block(f"enc.{i}.ln2")
    for i in range(cfg.n_layers):
        attn_block(f"dec.{i}.self")
        ln_block(f"dec.{i}.ln1")
        attn_block(f"dec.{i}.cross")
        ln_block(f"dec.{i}.ln2")
        ff_block(f"dec.{i}.ff")
        ln_block(f"dec.{i}.ln3")
    uniform("out.w", (d, v), d)
    fill("out.b", (v,), 0.0)
    return params, order


class MultiSourceTransformer:
    """Encoder shared across sources; decoder with multi-source cross-attention."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32, _params=None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        if _params is None:
            self.params, self.param_order = _init_params(cfg, seed, self.dtype)
        else:
            self.params, self.param_order = _params
        self.positions = sinusoidal_positions(cfg.max_positions, cfg.d_model).astype(
            self.dtype
        )

    # -- parameter bookkeeping

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "MultiSourceTransformer":
        dtype = np.dtype(dtype)
        params = {
            name: Tensor(p.data.astype(dtype), requires_grad=True)
            for name, p in self.params.items()
        }
        return MultiSourceTransformer(
            self.cfg, dtype=dtype, _params=(params, list(self.param_order))
        )

    # -- building blocks

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _embed(self, ids: np.ndarray) -> Tensor:
        length = ids.shape[-1]
        if length > self.cfg.max_positions:
            raise DataError(
                f"sequence length {length} exceeds max_positions={self.cfg.max_positions}"
            )
        x = ad.scale(ad.embedding(self._p("embed.tok"), ids), math.sqrt(self.cfg.d_model))
        return ad.add(x, Tensor(self.positions[:length]))

    def _drop(self, t: Tensor, train: bool, rng) -> Tensor:
        if train and self.cfg.dropout > 0.0:
            return ad.dropout(t, self.cfg.dropout, rng)
        return t

    def _proj_heads(self, prefix: str, which: str, x: Tensor) -> Tensor:
        y = ad.add(ad.matmul(x, self._p(f"{prefix}.w{which}")), self._p(f"{prefix}.b{which}"))
        return _split_heads(y, self.cfg.n_heads)

    def _self_attention(self, prefix: str, x: Tensor, additive_mask) -> Tensor:
        q = self._proj_heads(prefix, "q", x)
        k = self._proj_heads(prefix, "k", x)
        v = self._proj_heads(prefix, "v", x)
        ctx = _merge_heads(_attention_t(q, k, v, additive_mask))
        return ad.add(ad.matmul(ctx, self._p(f"{prefix}.wo")), self._p(f"{prefix}.bo"))

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        h = ad.relu(ad.add(ad.matmul(x, self._p(f"{prefix}.w1")), self._p(f"{prefix}.b1")))
        return ad.add(ad.matmul(h, self._p(f"{prefix}.w2")), self._p(f"{prefix}.b2"))

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self._p(f"{prefix}.g"), self._p(f"{prefix}.b"))

    # -- encoder

    def encode_sources(
        self, src_ids: np.ndarray, src_mask: np.ndarray, train: bool = False, rng=None
    ) -> EncodedSources:
        """Run the shared encoder independently over each of the m sources.

        src_ids: int (B, m, L); src_mask: bool (B, m, L).  No cross-source
        interaction and no source-identity signal.
        """
        b, m, length = src_ids.shape
        flat_ids = src_ids.reshape(b * m, length)
        flat_mask = src_mask.reshape(b * m, length)
        additive = np.where(flat_mask, 0.0, NEG_INF).astype(self.dtype)[:, None, None, :]
        x = self._drop(self._embed(flat_ids), train, rng)
        for i in range(self.cfg.n_layers):
            h = self._self_attention(f"enc.{i}.attn", x, additive)
            x = self._ln(f"enc.{i}.ln1", ad.add(x, self._drop(h, train, rng)))
            f = self._ffn(f"enc.{i}.ff", x)
            x = self._ln(f"enc.{i}.ln2", ad.add(x, self._drop(f, train, rng)))
        states = ad.reshape(x, (b, m, length, self.cfg.d_model))
        return EncodedSources(states=states, mask=src_mask)

    # -- decoder

    def _cross_context(self, i: int, x: Tensor, encoded: EncodedSources) -> Tensor:
        prefix = f"dec.{i}.cross"
        q = self._proj_heads(prefix, "q", x)  # (B, H, T, dh)
        k = self._proj_heads(prefix, "k", encoded.states)  # (B, m, H, L, dh)
        v = self._proj_heads(prefix, "v", encoded.states)
        b, m, length = encoded.mask.shape
        if self.cfg.combination == "parallel":
            additive = np.where(encoded.mask, 0.0, NEG_INF).astype(self.dtype)[
                :, :, None, None, :
            ]
            q5 = ad.reshape(q, (b, 1, *q.shape[1:]))
            ctx = _attention_t(q5, k, v, additive)  # (B, m, H, T, dh)
            ctx = ad.mean_axis(ctx, 1)
        else:
            live = encoded.mask.astype(self.dtype)  # (B, m, L)
            if self.cfg.strict_mean:
                denom = np.full((b, length), float(m), dtype=self.dtype)
            else:
                denom = np.maximum(live.sum(axis=1), 1.0)
            weight = (live / denom[:, None, :])[:, :, None, :, None].astype(self.dtype)
            k_bar = ad.sum_axis(ad.mul(k, Tensor(weight)), 1)  # (B, H, L, dh)
            v_bar = ad.sum_axis(ad.mul(v, Tensor(weight)), 1)
            any_live = encoded.mask.any(axis=1)  # (B, L)
            additive = np.where(any_live, 0.0, NEG_INF).astype(self.dtype)[
                :, None, None, :
            ]
            ctx = _attention_t(q, k_bar, v_bar, additive)
        ctx = _merge_heads(ctx)
        return ad.add(ad.matmul(ctx, self._p(f"{prefix}.wo")), self._p(f"{prefix}.bo"))

    def decoder_forward(
        self,
        encoded: EncodedSources,
        dec_ids: np.ndarray,
        train: bool = False,
        rng=None,
    ) -> Tensor:
        """Logits over the vocabulary for every position of the prefix.

        dec_ids: int (B, T).  Causal self-attention, then the configured
        multi-source cross-attention, then feed-forward; post-norm
        residuals throughout.
        """
        b, t = dec_ids.shape
        causal = np.triu(np.full((t, t), NEG_INF, dtype=self.dtype), k=1)[None, None]
        x = self._drop(self._embed(dec_ids), train, rng)
        for i in range(self.cfg.n_layers):
            h = self._self_attention(f"dec.{i}.self", x, causal)
            x = self._ln(f"dec.{i}.ln1", ad.add(x, self._drop(h, train, rng)))
            c = self._cross_context(i, x, encoded)
            x = self._ln(f"dec.{i}.ln2", ad.add(x, self._drop(c, train, rng)))
            f = self._ffn(f"dec.{i}.ff", x)
            x = self._ln(f"dec.{i}.ln3", ad.add(x, self._drop(f, train, rng)))
        return ad.add(ad.matmul(x, self._p("out.w")), self._p("out.b"))


def pad_sources(
    source_ids: list[list[list[int]]], pad_id: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Pad a batch of per-example source lists to (B, m, L) ids + mask."""
    b = len(source_ids)
    m = max(len(srcs) for srcs in source_ids)
    length = max(len(s) for srcs in source_ids for s in srcs)
    ids = np.full((b, m, length), pad_id, dtype=np.int64)
    mask = np.zeros((b, m, length), dtype=bool)
    for bi, srcs in enumerate(source_ids):
        for si, s in enumerate(srcs):
            ids[bi, si, : len(s)] = s
            mask[bi, si, : len(s)] = True
    return ids, mask


def pad_targets(target_ids: list[list[int]], pad_id: int = 0) -> np.ndarray:
    b = len(target_ids)
    t = max(len(s) for s in target_ids)
    out = np.full((b, t), pad_id, dtype=np.int64)
    for bi, s in enumerate(target_ids):
        out[bi, : len(s)] = s
    return out


def gradient_check(
    model: MultiSourceTransformer,
    batch,
    epsilon: float = 1e-4,
    n_coords: int = 40,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central finite differences.

    ``batch`` is (src_ids, src_mask, dec_ids, labels, loss_mask).  The
    model must be in double precision with dropout off; coordinates are
    sampled across all parameter tensors.  A zero-length loss mask is the
    empty-sum case: loss 0, gradients 0, error 0.
    """
    if model.dtype != np.float64:
        raise NumericalError("gradient_check requires a float64 model")
    src_ids, src_mask, dec_ids, labels, loss_mask = batch
    if int(loss_mask.sum()) == 0:
        return 0.0

    def compute_loss() -> Tensor:
        encoded = model.encode_sources(src_ids, src_mask, train=False)
        logits = model.decoder_forward(encoded, dec_ids, train=False)
        return ad.cross_entropy(logits, labels, loss_mask)

    loss = compute_loss()
    if not np.isfinite(loss.item()):
        raise NumericalError("non-finite loss in gradient check")
    model.zero_grad()
    loss.backward()
    analytic = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in model.params.items()
    }

    rng = np.random.default_rng(seed)
    sizes = [(name, model.params[name].data.size) for name in model.param_order]
    total = sum(s for _, s in sizes)
    flat_choices = rng.choice(total, size=min(n_coords, total), replace=False)
    max_rel = 0.0
    for flat in sorted(int(c) for c in flat_choices):
        offset = flat
        for name, size in sizes:
            if offset < size:
                break
            offset -= size
        arr = model.params[name].data
        idx = np.unravel_index(offset, arr.shape)
        saved = arr[idx]
        with no_grad():
            arr[idx] = saved + epsilon
            up = compute_loss().item()
            arr[idx] = saved - epsilon
            down = compute_loss().item()
            arr[idx] = saved
        numeric = (up - down) / (2.0 * epsilon)
        a = float(analytic[name][idx])
        denom = max(abs(a), abs(numeric))
        if denom < 1e-8:
            continue
        max_rel = max(max_rel, abs(a - numeric) / denom)
    return max_rel


def save_checkpoint(path, model: MultiSourceTransformer, step: int = 0, vocab_hash: str = "") -> None:
    """Versioned JSON header plus flat weight payload in declared order."""
    header = {
        "magic": CKPT_MAGIC,
        "version": CKPT_VERSION,
        "config": asdict(model.cfg),
        "dtype": model.dtype.str,
        "step": step,
        "vocab_hash": vocab_hash,
        "params": [[name, list(model.params[name].data.shape)] for name in model.param_order],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for name in model.param_order:
            fh.write(np.ascontiguousarray(model.params[name].data).tobytes())


def load_checkpoint(path) -> tuple[MultiSourceTransformer, int, str]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: not a checkpoint file: {e}") from e
        if header.get("magic") != CKPT_MAGIC:
            raise DataError(f"{path}: bad checkpoint magic")
        if header.get("version") != CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version")
        cfg = ModelConfig(**header["config"])
        dtype = np.dtype(header["dtype"])
        params: dict[str, Tensor] = {}
        order: list[str] = []
        for name, shape in header["params"]:
            n_bytes = int(np.prod(shape)) * dtype.itemsize
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise DataError(f"{path}: truncated payload at {name}")
            arr = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
            params[name] = Tensor(arr, requires_grad=True)
            order.append(name)
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after payload")
    model = MultiSourceTransformer(cfg, dtype=dtype, _params=(params, order))
    return model, int(header["step"]), str(header["vocab_hash"])
