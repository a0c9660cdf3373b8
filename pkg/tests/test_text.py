import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mmstance.tensor as T
from mmstance.tensor import Rng, Tensor
from mmstance.text import (
    PromptTooLongError,
    TargetRegistry,
    TextEncoderParams,
    UnknownTargetError,
    assemble_text_input,
    build_textual_prompt,
    build_vocab,
    default_registry,
    empty_prompt,
    encode_text,
    encode_text_batch,
    prompt_text,
    tokenize,
)


class TestVocab:
    def test_min_freq_threshold(self):
        vocab = build_vocab(["a a b"], min_freq=2)
        assert "a" in vocab and "b" not in vocab

    def test_specials_always_present(self):
        vocab = build_vocab(["anything"], min_freq=10)
        for tok in ("[pad]", "[unk]", "[cls]", "[sep]"):
            assert tok in vocab
        assert vocab.pad_id == 0 and vocab.unk_id == 1

    def test_prompt_corpus_contains_template_words(self):
        reg = default_registry()
        corpus = [prompt_text("DT", tid, reg) for tid in (1, 2, 3, 4, 5)]
        vocab = build_vocab(corpus, min_freq=1)
        for word in ("stance", "on", "is"):
            assert word in vocab

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([], min_freq=1)

    def test_ordering_freq_desc_then_alpha(self):
        vocab = build_vocab(["b b c a a"], min_freq=1)
        non_special = vocab.tokens[4:]
        assert non_special == ["a", "b", "c"]

    def test_unknown_tokens_map_to_unk(self):
        vocab = build_vocab(["hello world"], min_freq=1)
        assert vocab.encode(["zzz"]) == [vocab.unk_id]


class TestPrompts:
    def test_default_template_realizes_target_phrase(self):
        reg = default_registry()
        assert tokenize(prompt_text("DT", 5, reg)) == ["the", "stance", "on", "donald", "trump", "is", ":"]

    def test_template_one_is_short_alias(self):
        reg = default_registry()
        assert tokenize(prompt_text("DT", 1, reg)) == ["trump"]

    def test_chloroquine_full_template(self):
        reg = default_registry()
        words = tokenize(prompt_text("CQ", 5, reg))
        expect = tokenize("The stance on the use of Chloroquine and Hydroxychloroquine "
                          "for the treatment or prevention from the coronavirus or COVID 19 is:")
        assert words == expect
        assert "treatment" in words and "coronavirus" in words

    def test_prompt_tokens_are_deterministic(self):
        reg = default_registry()
        vocab = build_vocab([prompt_text("DT", 5, reg)], min_freq=1)
        p1 = build_textual_prompt("DT", 5, reg, vocab)
        p2 = build_textual_prompt("DT", 5, reg, vocab)
        assert p1.tokens == p2.tokens
        assert p1.length == 7

    def test_unknown_target_lists_registered(self):
        reg = TargetRegistry()
        reg.register("A", "alpha")
        vocab = build_vocab(["x"], min_freq=1)
        with pytest.raises(UnknownTargetError, match="A"):
            build_textual_prompt("B", 5, reg, vocab)

    def test_registry_file_roundtrip(self, tmp_path):
        reg = default_registry()
        path = tmp_path / "targets.txt"
        reg.save(path)
        loaded = TargetRegistry.load(path)
        assert loaded.targets() == reg.targets()
        assert loaded.phrases("CQ") == reg.phrases("CQ")


class TestAssembly:
    @pytest.fixture
    def vocab(self):
        return build_vocab(["w0 w1 w2 w3 w4 w5 w6 w7 w8 w9 p0 p1 p2 p3 p4 p5 p6"], min_freq=1)

    def _prompt(self, vocab, m):
        return type("P", (), {"tokens": vocab.encode([f"p{i}" for i in range(m)]),
                              "length": m, "mode": "fixed"})()

    def test_length_arithmetic(self, vocab):
        inp = assemble_text_input(self._prompt(vocab, 7), vocab.encode([f"w{i}" for i in range(5)]),
                                  vocab, max_len=32)
        assert inp.unpadded_length == 7 + 5 + 3
        assert inp.mask.sum() == 15
        assert inp.ids.shape == (32,)

    def test_empty_text_is_valid(self, vocab):
        inp = assemble_text_input(self._prompt(vocab, 7), [], vocab, max_len=32)
        assert inp.n == 0
        assert inp.unpadded_length == 10
        assert inp.ids[0] == vocab.cls_id
        assert inp.ids[8] == vocab.sep_id and inp.ids[9] == vocab.sep_id

    def test_truncation_from_the_right(self, vocab):
        text = vocab.encode(["w0"] * 100)
        inp = assemble_text_input(self._prompt(vocab, 7), text, vocab, max_len=32)
        assert inp.n == 32 - 7 - 3

    def test_prompt_never_truncated(self, vocab):
        with pytest.raises(PromptTooLongError):
            assemble_text_input(self._prompt(vocab, 30), [], vocab, max_len=32)

    def test_empty_prompt_ablation_layout(self, vocab):
        inp = assemble_text_input(empty_prompt("t"), vocab.encode(["w0", "w1"]), vocab, max_len=16)
        assert inp.unpadded_length == 2 + 3
        assert inp.ids[0] == vocab.cls_id
        assert inp.ids[1] == vocab.sep_id  # [CLS] [SEP] s [SEP]
        assert inp.ids[4] == vocab.sep_id

    @settings(max_examples=40, deadline=None)
    @given(m=st.integers(0, 7), n=st.integers(0, 40))
    def test_length_identity_property(self, m, n):
        vocab = build_vocab(["w p"], min_freq=1)
        prompt = type("P", (), {"tokens": [vocab.index["p"]] * m, "length": m, "mode": "fixed"})()
        max_len = 32
        inp = assemble_text_input(prompt, [vocab.index["w"]] * n, vocab, max_len=max_len)
        n_kept = min(n, max_len - m - 3)
        assert inp.unpadded_length == m + n_kept + 3
        assert int(inp.mask.sum()) == inp.unpadded_length


class TestEncoder:
    def _setup(self, dtype=np.float32, max_len=16):
        vocab = build_vocab(["alpha beta gamma delta prompt one two"], min_freq=1)
        params = TextEncoderParams(Rng(3), len(vocab), d=16, n_layers=2, heads=2,
                                   max_len=max_len, dtype=dtype)
        return vocab, params

    def test_output_shapes(self):
        vocab, params = self._setup()
        prompt = build_textual_prompt("t", 5, _reg("t"), vocab)
        inp = assemble_text_input(prompt, vocab.encode(["alpha", "beta"]), vocab, 16)
        cls, states = encode_text(inp, params)
        assert cls.shape == (16,)
        assert states.shape == (16, 16)

    def test_pad_region_changes_leave_non_pad_outputs_bit_identical(self):
        vocab, params = self._setup()
        prompt = empty_prompt("t")
        inp = assemble_text_input(prompt, vocab.encode(["alpha", "beta"]), vocab, 16)
        cls1, states1 = encode_text(inp, params)
        ids2 = inp.ids.copy()
        pad_region = np.where(inp.mask == 0)[0]
        ids2[pad_region] = (ids2[pad_region] + 5) % len(vocab)  # scramble pad ids
        inp2 = type(inp)(ids=ids2, mask=inp.mask, m=inp.m, n=inp.n)
        cls2, states2 = encode_text(inp2, params)
        assert np.array_equal(cls1.data, cls2.data)
        non_pad = np.where(inp.mask == 1)[0]
        assert np.array_equal(states1.data[non_pad], states2.data[non_pad])

    def test_tuned_soft_prompt_receives_gradient(self):
        vocab, params = self._setup(dtype=np.float64)
        reg = _reg("t")
        prompt = build_textual_prompt("t", 5, reg, vocab)
        prompt.mode = "tuned_soft"
        prompt.soft_embeddings = Tensor(
            Rng(4).normal((prompt.length, 16), 0.1, np.float64), requires_grad=True)
        inp = assemble_text_input(prompt, vocab.encode(["alpha"]), vocab, 16)
        cls, _ = encode_text(inp, params, prompt)
        T.mean(T.mul(cls, cls)).backward()
        grad = prompt.soft_embeddings.grad
        assert grad is not None and np.abs(grad).max() > 0

    def test_soft_prompt_replaces_token_embedding_path(self):
        vocab, params = self._setup(dtype=np.float64)
        reg = _reg("t")
        prompt = build_textual_prompt("t", 5, reg, vocab)
        inp = assemble_text_input(prompt, vocab.encode(["alpha"]), vocab, 16)
        cls_fixed, _ = encode_text(inp, params, prompt)
        soft = build_textual_prompt("t", 5, reg, vocab)
        soft.mode = "tuned_soft"
        soft.soft_embeddings = Tensor(np.zeros((soft.length, 16)), dtype=np.float64,
                                      requires_grad=True)
        cls_soft, _ = encode_text(inp, params, soft)
        assert not np.array_equal(cls_fixed.data, cls_soft.data)

    def test_batched_matches_single(self):
        vocab, params = self._setup(dtype=np.float64)
        prompt = empty_prompt("t")
        a = assemble_text_input(prompt, vocab.encode(["alpha", "beta"]), vocab, 16)
        b = assemble_text_input(prompt, vocab.encode(["gamma"]), vocab, 16)
        ids = np.stack([a.ids, b.ids])
        mask = np.stack([a.mask, b.mask])
        cls_batch, _ = encode_text_batch(ids, mask, params)
        cls_a, _ = encode_text(a, params)
        assert np.abs(cls_batch.data[0] - cls_a.data).max() < 1e-12


def _reg(*names):
    reg = TargetRegistry()
    for n in names:
        reg.register(n, n)
    return reg
