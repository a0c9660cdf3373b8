"""End-to-end stance model: prompted text encoder + prompted vision encoder
+ fusion head, with batch preparation and checkpoint (de)serialization."""

from __future__ import annotations

import json
import os

import numpy as np

from . import fusion as F
from . import tensor as T
from . import text as X
from . import vision as V
from .config import ModelConfig, config_hash
from .images import load_ppm
from .tensor import Rng, Tensor


class UnseenTargetError(KeyError):
    pass


class StanceModel:
    """Holds every trainable tensor and runs the fused forward pass.

    `targets` is the list of training targets; their visual prompts (and, in
    tuned_soft mode, their textual soft prompts) are the target-conditioned
    parameters. Other targets can still be encoded at evaluation time when
    `allow_unseen` is set: their visual prompt falls back to the mean of the
    trained matrices (or the shared matrix in generic mode) and their textual
    prompt is built fresh from the registry.
    """

    def __init__(self, cfg, vocab, registry, targets, seed):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.registry = registry
        self.targets = list(targets)
        self.seed = int(seed)
        dtype = cfg.dtype
        rng = Rng(seed)
        self.text_params = X.TextEncoderParams(
            rng.child(1), len(vocab), cfg.d_text, cfg.text_layers, cfg.text_heads,
            cfg.max_len, cfg.ffn_mult, dtype)
        patch_dim = cfg.patch_size * cfg.patch_size * 3
        n_patches = V.patch_count(cfg.image_size, cfg.patch_size)
        self.patch_params = V.PatchEmbedParams(rng.child(2), patch_dim, cfg.d_vis, n_patches, dtype)
        self.vis_params = V.VisionEncoderParams(
            rng.child(3), cfg.d_vis, cfg.vis_layers, cfg.vis_heads, cfg.ffn_mult, dtype)
        self.fusion_params = F.FusionParams(
            rng.child(4), cfg.d_text, cfg.d_vis, cfg.d_hidden, cfg.n_labels,
            cfg.fusion_mode, cfg.leaky_alpha, dtype)
        self.prompt_bank = V.VisualPromptBank(
            self.targets, cfg.visual_prompt_len, cfg.d_vis, cfg.visual_prompt_depth,
            cfg.vis_layers, cfg.visual_prompt_init, rng.child(5), dtype,
            shared=(cfg.zero_shot_prompts == "generic"))
        self._prompt_cache = {}
        self.soft_prompts = {}
        if cfg.use_textual_prompt and cfg.textual_prompt_mode == "tuned_soft":
            for t in self.targets:
                prompt = self.textual_prompt_for(t)
                init = self.text_params.tok_emb.data[np.asarray(prompt.tokens, dtype=np.int64)].copy()
                self.soft_prompts[t] = Tensor(init, requires_grad=True, dtype=dtype)
                prompt.mode = "tuned_soft"
                prompt.soft_embeddings = self.soft_prompts[t]

    # -- prompts ---------------------------------------------------------

    def textual_prompt_for(self, target):
        if target not in self._prompt_cache:
            if not self.cfg.use_textual_prompt:
                self._prompt_cache[target] = X.empty_prompt(target)
            else:
                if target not in self.registry:
                    self.registry.register(target, target)
                self._prompt_cache[target] = X.build_textual_prompt(
                    target, self.cfg.template_id, self.registry, self.vocab)
        return self._prompt_cache[target]

    def _visual_prompt_stack(self, target_names, allow_unseen):
        distinct = sorted(set(target_names))
        tensors, slot = [], {}
        fallback = None
        for name in distinct:
            if name in self.prompt_bank.entries:
                tensors.append(self.prompt_bank.entries[name])
            elif allow_unseen:
                if fallback is None:
                    fallback = self.prompt_bank.mean_prompt()
                tensors.append(fallback)
            else:
                raise UnseenTargetError(
                    f"target {name!r} has no trained visual prompt; trained targets: "
                    f"{', '.join(self.targets)} (enable zero-shot evaluation to use the fallback)")
            slot[name] = len(tensors) - 1
        idx = np.asarray([slot[t] for t in target_names], dtype=np.int64)
        return T.stack_gather(tensors, idx)

    def _soft_prompt_stack(self, target_names, m_per):
        """(b, m_max, d) rows for tuned_soft mode; unseen targets keep their
        fixed token embeddings (their m_per entry is zeroed)."""
        m_max = max((p.shape[0] for p in self.soft_prompts.values()), default=0)
        if m_max == 0:
            return None, m_per
        dtype = self.cfg.dtype
        zero = Tensor(np.zeros((m_max, self.cfg.d_text), dtype=dtype))
        padded, slot = [], {}
        m_eff = list(m_per)
        for name in sorted(set(target_names)):
            if name in self.soft_prompts:
                sp = self.soft_prompts[name]
                if sp.shape[0] < m_max:
                    pad = Tensor(np.zeros((m_max - sp.shape[0], self.cfg.d_text), dtype=dtype))
                    padded.append(T.concat([sp, pad], axis=0))
                else:
                    padded.append(sp)
            else:
                padded.append(zero)
                for i, t in enumerate(target_names):
                    if t == name:
                        m_eff[i] = 0
            slot[name] = len(padded) - 1
        idx = np.asarray([slot[t] for t in target_names], dtype=np.int64)
        return T.stack_gather(padded, idx), m_eff

    # -- batch preparation -----------------------------------------------

    def encode_example(self, target, text, image, cot_text=None):
        """One sample -> arrays. image: (H, W, 3) floats in [0, 1]."""
        words = X.tokenize(text)
        if cot_text:
            words = words + X.tokenize(cot_text)
        prompt = self.textual_prompt_for(target)
        inp = X.assemble_text_input(prompt, self.vocab.encode(words), self.vocab, self.cfg.max_len)
        patches = V.patchify(np.asarray(image, dtype=self.cfg.dtype), self.cfg.patch_size)
        return {"ids": inp.ids, "mask": inp.mask, "m": inp.m, "target": target, "patches": patches}

    def encode_samples(self, samples, base_dir):
        """Load and encode a list of manifest samples into stacked arrays."""
        encoded = []
        labels = []
        label_idx = {lab: i for i, lab in enumerate(self.cfg.labels)}
        for s in samples:
            image = load_ppm(os.path.join(base_dir, s.image_path))
            encoded.append(self.encode_example(s.target, s.text, image, s.cot_text))
            labels.append(label_idx[s.label])
        return self.collate(encoded, labels)

    @staticmethod
    def collate(encoded, labels=None):
        batch = {
            "ids": np.stack([e["ids"] for e in encoded]),
            "mask": np.stack([e["mask"] for e in encoded]),
            "m_per": [e["m"] for e in encoded],
            "targets": [e["target"] for e in encoded],
            "patches": np.stack([e["patches"] for e in encoded]),
        }
        if labels is not None:
            batch["labels"] = np.asarray(labels, dtype=np.int64)
        return batch

    @staticmethod
    def take(batch, indices):
        out = {
            "ids": batch["ids"][indices],
            "mask": batch["mask"][indices],
            "m_per": [batch["m_per"][i] for i in indices],
            "targets": [batch["targets"][i] for i in indices],
            "patches": batch["patches"][indices],
        }
        if "labels" in batch:
            out["labels"] = batch["labels"][indices]
        return out

    # -- forward ----------------------------------------------------------

    def forward(self, batch, allow_unseen=False):
        """Batch arrays -> logits Tensor (b, n_labels)."""
        cfg = self.cfg
        soft_stack = None
        m_eff = batch["m_per"]
        if self.soft_prompts:
            soft_stack, m_eff = self._soft_prompt_stack(batch["targets"], batch["m_per"])
        cls_text, _ = X.encode_text_batch(batch["ids"], batch["mask"], self.text_params,
                                          soft_stack, m_eff)
        v0 = V.embed_patches(batch["patches"], self.patch_params)
        stacked = self._visual_prompt_stack(batch["targets"], allow_unseen)
        if cfg.visual_prompt_depth == "deep":
            prompts = [stacked[:, k] for k in range(cfg.vis_layers)]
        else:
            prompts = stacked
        cls_vis = V.encode_image_prompted(v0, prompts, self.vis_params, self.patch_params,
                                          cfg.visual_prompt_depth)
        h_text, h_vis = F.project_modalities(cls_text, cls_vis, self.fusion_params)
        h = F.fuse(h_text, h_vis, self.fusion_params)
        return F.logits(h, self.fusion_params)

    def predict_probs(self, batch, allow_unseen=False):
        return T.softmax(self.forward(batch, allow_unseen), axis=-1)

    # -- parameters --------------------------------------------------------

    def parameters(self):
        out = {}
        out.update(self.text_params.parameters("text"))
        out.update(self.patch_params.parameters("patch"))
        out.update(self.vis_params.parameters("vis"))
        out.update(self.fusion_params.parameters("fusion"))
        out.update(self.prompt_bank.parameters("vprompt"))
        for t, sp in self.soft_prompts.items():
            out[f"tprompt.{t}"] = sp
        return out

    def trainable_parameters(self):
        params = {k: p for k, p in self.parameters().items() if p.size > 0}
        if self.cfg.freeze_text_backbone:
            params = {k: v for k, v in params.items() if not k.startswith("text.")}
        return params

    def param_count(self):
        seen = set()
        total = 0
        for p in self.parameters().values():
            if id(p) not in seen:
                seen.add(id(p))
                total += p.size
        return total

    def snapshot(self):
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def restore(self, snapshot):
        for k, p in self.parameters().items():
            p.data[...] = snapshot[k]

    # -- checkpointing ------------------------------------------------------

    def save(self, path, metrics=None):
        """Self-describing container: every parameter as a named array (the
        npy entries record shape, dtype, and endianness) plus a JSON metadata
        blob with config, vocabulary, targets, and registry phrases."""
        meta = {
            "config": self.cfg.to_mapping(),
            "config_hash": config_hash(self.cfg),
            "vocab": self.vocab.tokens,
            "targets": self.targets,
            "seed": self.seed,
            "registry": {t: list(self.registry.phrases(t)) for t in self.registry.targets()},
            "metrics": metrics or {},
        }
        arrays = {f"param/{k}": p.data for k, p in self.parameters().items()}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
                 **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
            arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        cfg = ModelConfig.from_mapping(meta["config"])
        vocab = X.Vocab(meta["vocab"][len(X.SPECIALS):])
        registry = X.TargetRegistry()
        for t, (display, short) in meta["registry"].items():
            registry.register(t, display, short)
        model = cls(cfg, vocab, registry, meta["targets"], meta.get("seed", 0))
        for k, p in model.parameters().items():
            if k not in arrays:
                raise KeyError(f"checkpoint {path} is missing parameter {k!r}")
            if tuple(arrays[k].shape) != tuple(p.shape):
                raise ValueError(f"checkpoint {path}: parameter {k!r} shape {arrays[k].shape} != {tuple(p.shape)}")
            p.data[...] = arrays[k].astype(cfg.dtype)
        model._metrics = meta.get("metrics", {})
        return model
