"""Whole-model gradient verification: assemble the configured model in
float64 and finite-difference every trainable parameter group."""

from __future__ import annotations

from . import tensor as T
from .gradcheck import grad_check
from .model import StanceModel
from .synthetic import SyntheticConfig, render_image, render_text
from .tensor import Rng
from .text import TargetRegistry, build_vocab, prompt_text


def _probe_batch(model, cfg, targets, rng, batch_size):
    synth = SyntheticConfig(targets=tuple(targets), samples_per_target=1, labels=cfg.labels,
                            image_size=cfg.image_size)
    encoded, labels = [], []
    for i in range(batch_size):
        target = targets[i % len(targets)]
        cue = i % cfg.n_labels
        text = render_text(rng, synth, cue_class=cue)
        image = render_image(rng, synth, cue_class=cue if i % 2 else None)
        encoded.append(model.encode_example(target, text, image))
        labels.append(cue)
    return StanceModel.collate(encoded, labels)


def model_grad_check(cfg, h=1e-5, samples_per_param=3, seed=0, batch_size=4,
                     targets=("alpha", "beta")):
    """Build the model in float64 on a tiny synthetic batch and return
    (max_rel_err, worst_name, per_group) over every trainable group."""
    cfg = cfg.with_updates(precision="float64")
    rng = Rng(seed)
    registry = TargetRegistry()
    for t in targets:
        registry.register(t, t)
    synth = SyntheticConfig(targets=tuple(targets), samples_per_target=1, labels=cfg.labels)
    corpus = [render_text(rng, synth, cue_class=i % cfg.n_labels) for i in range(12)]
    corpus += [prompt_text(t, cfg.template_id, registry) for t in targets]
    vocab = build_vocab(corpus, min_freq=1)
    model = StanceModel(cfg, vocab, registry, list(targets), seed)
    batch = _probe_batch(model, cfg, list(targets), rng.child(1), batch_size)

    def loss_fn():
        return T.cross_entropy(model.forward(batch), batch["labels"])

    params = model.trainable_parameters()
    return grad_check(loss_fn, params, h=h, samples_per_param=samples_per_param,
                      rng=rng.child(2), refine_below=1e-6)
