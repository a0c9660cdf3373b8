"""Text side: tokenizer, vocabulary, targeted prompts, input assembly, encoder.

Tokenization is word-level: lowercase, alphanumeric runs are words, every
other non-space character is its own token. Subword vocabularies buy
nothing for a randomly initialized desk-scale encoder.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import TransformerLayer, key_mask_bias
from .tensor import Tensor

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")

CLS, SEP, PAD, UNK = "[cls]", "[sep]", "[pad]", "[unk]"
SPECIALS = (PAD, UNK, CLS, SEP)


class UnknownTargetError(KeyError):
    pass


class PromptTooLongError(ValueError):
    pass


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token-id map with fixed special slots pad=0, unk=1, cls=2, sep=3."""

    def __init__(self, tokens):
        self.tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    pad_id, unk_id, cls_id, sep_id = 0, 1, 2, 3

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def encode(self, tokens):
        return [self.index.get(t, self.unk_id) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]


def build_vocab(corpus, min_freq=1):
    """Frequency-thresholded word vocabulary, ordered (freq desc, token asc)."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = {}
    for text in corpus:
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


class TargetRegistry:
    """Maps target ids to the display phrase (and a short alias) used by the
    prompt templates. Plain-text file format, one target per line:

        ID | display phrase | short alias
    """

    def __init__(self):
        self._entries = {}

    def register(self, target, display, short=None):
        self._entries[target] = (display, short or display)

    def targets(self):
        return sorted(self._entries)

    def __contains__(self, target):
        return target in self._entries

    def phrases(self, target):
        try:
            return self._entries[target]
        except KeyError:
            raise UnknownTargetError(
                f"unknown target {target!r}; registered: {', '.join(self.targets()) or '(none)'}"
            ) from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.targets():
                display, short = self._entries[t]
                fh.write(f"{t} | {display} | {short}\n")

    @classmethod
    def load(cls, path):
        reg = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split("|")]
                if len(parts) not in (2, 3) or not parts[0]:
                    raise ValueError(f"{path}:{lineno}: expected 'ID | display | short'")
                reg.register(parts[0], parts[1], parts[2] if len(parts) == 3 else None)
        return reg


def default_registry():
    """Registry for the twelve stock targets of the benchmark domains."""
    reg = TargetRegistry()
    reg.register("DT", "Donald Trump", "Trump")
    reg.register("JB", "Joe Biden", "Biden")
    reg.register("CQ", "the use of Chloroquine and Hydroxychloroquine for the treatment "
                       "or prevention from the coronavirus or COVID 19", "Chloroquine")
    reg.register("CVS_AET", "merger and acquisition between CVS Health and Aetna", "CVS Aetna")
    reg.register("CI_ESRX", "merger and acquisition between Cigna and Express Scripts", "Cigna Express Scripts")
    reg.register("ANTM_CI", "merger and acquisition between Anthem and Cigna", "Anthem Cigna")
    reg.register("AET_HUM", "merger and acquisition between Aetna and Humana", "Aetna Humana")
    reg.register("DIS_FOXA", "merger and acquisition between Disney and 21st Century Fox", "Disney Fox")
    reg.register("RUS", "Russia", "Russia")
    reg.register("UKR", "Ukraine", "Ukraine")
    reg.register("MOC", "Mainland of China", "Mainland")
    reg.register("TOC", "Taiwan of China", "Taiwan")
    return reg


# Template catalogue: 1 = short alias, 2 = display phrase, 3 = "stance on X",
# 4 = question form, 5 = "the stance on X is:" (the default).
TEMPLATE_IDS = (1, 2, 3, 4, 5)


def prompt_text(target, template_id, registry):
    display, short = registry.phrases(target)
    if template_id == 1:
        return short
    if template_id == 2:
        return display
    if template_id == 3:
        return f"stance on {display}"
    if template_id == 4:
        return f"What is the stance on {display}?"
    if template_id == 5:
        return f"The stance on {display} is:"
    raise ValueError(f"template_id must be one of {TEMPLATE_IDS}, got {template_id!r}")


@dataclass
class TargetedTextualPrompt:
    target: str
    template_id: int
    tokens: list  # token ids, length m
    mode: str = "fixed"  # "fixed" | "tuned_soft"
    soft_embeddings: Tensor | None = None  # (m, d_text), trainable in tuned_soft mode

    @property
    def length(self):
        return len(self.tokens)


def build_textual_prompt(target, template_id, registry, vocab, mode="fixed"):
    """Deterministic prompt token sequence for (target, template)."""
    words = tokenize(prompt_text(target, template_id, registry))
    return TargetedTextualPrompt(target, template_id, vocab.encode(words), mode=mode)


def empty_prompt(target):
    """m=0 prompt: the no-textual-prompt ablation path."""
    return TargetedTextualPrompt(target, 0, [], mode="fixed")


@dataclass
class TextInput:
    ids: np.ndarray  # (max_len,) int64: [CLS] prompt [SEP] text [SEP] [PAD]...
    mask: np.ndarray  # (max_len,) int64, 1 on non-PAD positions
    m: int
    n: int

    @property
    def unpadded_length(self):
        return self.m + self.n + 3


def assemble_text_input(prompt, text_ids, vocab, max_len):
    """Lay out [CLS] prompt [SEP] text [SEP], truncating text from the right,
    then pad. The prompt is never truncated: it carries the target signal."""
    m = prompt.length
    if m + 3 > max_len:
        raise PromptTooLongError(f"prompt of {m} tokens cannot fit max_len={max_len}")
    budget = max_len - m - 3
    text_ids = list(text_ids)[:budget]
    n = len(text_ids)
    ids = [vocab.cls_id, *prompt.tokens, vocab.sep_id, *text_ids, vocab.sep_id]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    ids += [vocab.pad_id] * pad
    mask += [0] * pad
    return TextInput(np.asarray(ids, dtype=np.int64), np.asarray(mask, dtype=np.int64), m, n)


class TextEncoderParams:
    """Token/position embeddings plus a pre-norm transformer stack."""

    def __init__(self, rng, vocab_size, d, n_layers, heads, max_len, ffn_mult=4, dtype=np.float32):
        self.d = d
        self.heads = heads
        self.max_len = max_len
        self.dtype = dtype
        self.tok_emb = Tensor(rng.truncated_normal((vocab_size, d), dtype=dtype), requires_grad=True)
        self.pos_emb = Tensor(rng.truncated_normal((max_len, d), dtype=dtype), requires_grad=True)
        self.layers = [TransformerLayer(rng.child(i), d, heads, ffn_mult, dtype) for i in range(n_layers)]
        self.ln_g = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.ln_b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def parameters(self, prefix="text"):
        out = {f"{prefix}.tok_emb": self.tok_emb, f"{prefix}.pos_emb": self.pos_emb,
               f"{prefix}.ln_g": self.ln_g, f"{prefix}.ln_b": self.ln_b}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.layer{i}"))
        return out


def _splice_soft_prompts(emb, soft_stack, m_per_sample, m_max, dtype):
    """Replace embedding rows 1..m_i with rows from soft_stack (b, m_max, d)."""
    b, s, d = emb.shape
    sel = np.zeros((b, s, 1), dtype=dtype)
    for i, mi in enumerate(m_per_sample):
        sel[i, 1:1 + mi, 0] = 1.0
    placed = T.concat([
        Tensor(np.zeros((b, 1, d), dtype=dtype)),
        soft_stack,
        Tensor(np.zeros((b, s - 1 - m_max, d), dtype=dtype)),
    ], axis=1)
    keep = Tensor(1.0 - sel, dtype=dtype)
    take = Tensor(sel, dtype=dtype)
    return T.add(T.mul(emb, keep), T.mul(placed, take))


def encode_text_batch(ids, mask, params, soft_stack=None, m_per_sample=None):
    """Encode a batch. ids/mask: (b, s) integer arrays.

    soft_stack: optional (b, m_max, d) Tensor of tuned soft prompt rows; when
    given, embedding lookups at prompt positions 1..m_i are replaced.
    Returns (cls (b, d), states (b, s, d)).
    """
    b, s = ids.shape
    emb = T.embedding(params.tok_emb, ids)
    if soft_stack is not None:
        emb = _splice_soft_prompts(emb, soft_stack, m_per_sample, soft_stack.shape[1], params.dtype)
    pos = T.reshape(params.pos_emb[:s], (1, s, params.d))
    x = T.add(emb, pos)
    bias = key_mask_bias(mask, params.heads, params.dtype)
    for layer in params.layers:
        x = layer(x, bias)
    x = T.layer_norm(x, params.ln_g, params.ln_b)
    return x[:, 0], x


def encode_text(inp, params, prompt=None):
    """Single-sample convenience wrapper; honors tuned-soft prompts."""
    soft = None
    m_per = None
    if prompt is not None and prompt.mode == "tuned_soft":
        if prompt.soft_embeddings is None:
            raise ValueError("tuned_soft prompt has no soft_embeddings")
        soft = T.reshape(prompt.soft_embeddings, (1, prompt.length, params.d))
        m_per = [prompt.length]
    cls, states = encode_text_batch(inp.ids[None, :], inp.mask[None, :], params, soft, m_per)
    return cls[0], states[0]
