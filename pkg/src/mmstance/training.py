"""Mini-batch training with Adam, dev-selection, and evaluation."""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from . import tensor as T
from .metrics import macro_f1
from .model import StanceModel
from .tensor import Rng
from .text import build_vocab, default_registry, prompt_text


class TrainingDivergedError(RuntimeError):
    pass


class Adam:
    """Standard bias-corrected Adam; parameters sharing storage are deduped."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = []
        seen = set()
        for name, p in params.items():
            if id(p) not in seen:
                seen.add(id(p))
                self.named.append((name, p))
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros(p.size, dtype=p.data.dtype) for name, p in self.named}
        self.v = {name: np.zeros(p.size, dtype=p.data.dtype) for name, p in self.named}
        self.t = 0

    def zero_grad(self):
        for _, p in self.named:
            p.grad = None

    def step(self):
        self.t += 1
        for name, p in self.named:
            if p.grad is None:
                continue
            K.adam_step(p.data.reshape(-1), p.grad.reshape(-1),
                        self.m[name], self.v[name], self.t,
                        self.lr, self.beta1, self.beta2, self.eps)


def build_model_for_manifest(cfg, manifest, seed, registry=None):
    """Vocabulary from the training texts plus the realized prompts of the
    training targets; the prompt bank covers training targets only."""
    registry = registry or default_registry()
    if tuple(cfg.labels) != tuple(manifest.labels):
        raise ValueError(f"config label set {tuple(cfg.labels)} does not match "
                         f"manifest label set {tuple(manifest.labels)}")
    train = manifest.of_split("train")
    if not train:
        raise TrainingDivergedError("manifest has no train split")
    targets = sorted({s.target for s in train})
    for t in manifest.targets:
        if t not in registry:
            registry.register(t, t)
    corpus = [s.text for s in train]
    corpus += [s.cot_text for s in train if s.cot_text]
    # prompt-template words join the vocabulary even when the textual prompt
    # is ablated: ablations then differ from the base model only in the
    # documented switch, with identical embedding shapes
    corpus += [prompt_text(t, cfg.template_id, registry) for t in targets]
    vocab = build_vocab(corpus, min_freq=cfg.vocab_min_freq)
    return StanceModel(cfg, vocab, registry, targets, seed)


def _predict_labels(model, batch, cfg, allow_unseen=False):
    preds = []
    n = batch["ids"].shape[0]
    for lo in range(0, n, cfg.batch_size):
        idx = np.arange(lo, min(lo + cfg.batch_size, n))
        logits = model.forward(StanceModel.take(batch, idx), allow_unseen=allow_unseen)
        preds.extend(int(i) for i in np.argmax(logits.data, axis=1))
    return preds


def evaluate(model, manifest, split, base_dir, allow_unseen=False):
    """Per-target macro F1 plus the cross-target aggregate (unweighted mean
    over targets) and the pooled score over all samples. Side-effect free."""
    if tuple(model.cfg.labels) != tuple(manifest.labels):
        raise ValueError(f"checkpoint label set {tuple(model.cfg.labels)} does not match "
                         f"manifest label set {tuple(manifest.labels)}")
    samples = manifest.of_split(split) if split else list(manifest.samples)
    if not samples:
        raise ValueError(f"no samples in split {split!r}")
    cfg = model.cfg
    batch = model.encode_samples(samples, base_dir)
    preds = _predict_labels(model, batch, cfg, allow_unseen)
    golds = [s.label for s in samples]
    pred_labels = [cfg.labels[i] for i in preds]
    per_target = {}
    for target in sorted({s.target for s in samples}):
        pair = [(p, g) for p, g, s in zip(pred_labels, golds, samples) if s.target == target]
        per_target[target] = macro_f1([p for p, _ in pair], [g for _, g in pair], cfg.labels)
    pooled = macro_f1(pred_labels, golds, cfg.labels)
    aggregate = float(np.mean(list(per_target.values())))
    return {"per_target": per_target, "aggregate": aggregate, "pooled": pooled,
            "n_samples": len(samples)}


def train(cfg, manifest, base_dir, seed, registry=None, log=None):
    """Adam on cross-entropy with best-dev-epoch model selection.

    Returns (model, history): the model carries the best-dev parameters;
    history holds per-epoch train loss and dev score plus the best epoch.
    """
    cfg.validate()
    model = build_model_for_manifest(cfg, manifest, seed, registry)
    train_samples = manifest.of_split("train")
    dev_samples = manifest.of_split("dev")
    if not dev_samples:
        raise TrainingDivergedError("manifest has no dev split")
    train_batchset = model.encode_samples(train_samples, base_dir)
    dev_batchset = model.encode_samples(dev_samples, base_dir)
    dev_golds = [s.label for s in dev_samples]

    opt = Adam(model.trainable_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    shuffle_rng = Rng(seed).child(0xBA7C)
    n = len(train_samples)
    history = {"train_loss": [], "dev_score": [], "best_epoch": -1, "best_dev": -1.0}
    best_snapshot = model.snapshot()

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            sub = StanceModel.take(train_batchset, idx)
            opt.zero_grad()
            loss = T.cross_entropy(model.forward(sub), sub["labels"])
            val = loss.item()
            if not np.isfinite(val):
                raise TrainingDivergedError(
                    f"non-finite loss {val!r} at epoch {epoch}, batch {batches} (seed {seed})")
            loss.backward()
            opt.step()
            total += val
            batches += 1
        mean_loss = total / max(batches, 1)
        dev_preds = _predict_labels(model, dev_batchset, cfg)
        dev_score = macro_f1([cfg.labels[i] for i in dev_preds], dev_golds, cfg.labels)
        history["train_loss"].append(mean_loss)
        history["dev_score"].append(dev_score)
        if dev_score > history["best_dev"]:
            history["best_dev"] = dev_score
            history["best_epoch"] = epoch
            best_snapshot = model.snapshot()
        if log:
            log(f"epoch {epoch}: train_loss={mean_loss:.4f} dev_macro_f1={dev_score:.4f}")
    model.restore(best_snapshot)
    return model, history
