"""Experiment protocols: multi-seed averaging, ablations, the prompt-length
sweep, the no-prompt baseline, and deterministic results emission.

Metric tables are plain CSV with fixed float formatting so a repeated run
produces byte-identical files; wall-clock times live only in run.json.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from .config import config_hash
from .training import evaluate, train


def derive_seeds(master_seed, n_seeds):
    """Deterministic per-run seeds from one master seed."""
    ss = np.random.SeedSequence(int(master_seed))
    return [int(s) for s in ss.generate_state(n_seeds, dtype=np.uint64)]


def run_averaged(cfg, manifest, base_dir, n_seeds=None, registry=None,
                 eval_split="test", allow_unseen=False, log=None,
                 checkpoint_path=None):
    """Train/evaluate once per derived seed and aggregate mean and std.

    A failing seed run is recorded in its entry instead of aborting the
    whole report. The last successful model is optionally checkpointed.
    """
    cfg.validate()
    n_seeds = cfg.n_seeds if n_seeds is None else n_seeds
    seeds = derive_seeds(cfg.master_seed, n_seeds)
    t0 = time.monotonic()
    runs = []
    last_model = None
    for seed in seeds:
        entry = {"seed": seed}
        try:
            model, history = train(cfg, manifest, base_dir, seed, registry=registry, log=log)
            result = evaluate(model, manifest, eval_split, base_dir, allow_unseen=allow_unseen)
            entry.update({
                "per_target": result["per_target"],
                "aggregate": result["aggregate"],
                "pooled": result["pooled"],
                "dev_best": history["best_dev"],
                "best_epoch": history["best_epoch"],
                "train_loss": history["train_loss"],
                "dev_score": history["dev_score"],
            })
            last_model = model
        except Exception as e:  # partial results survive a failed seed
            entry["error"] = f"{type(e).__name__}: {e}"
        runs.append(entry)
    ok = [r for r in runs if "error" not in r]
    report = {
        "config": cfg.to_mapping(),
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "seeds": seeds,
        "eval_split": eval_split,
        "runs": runs,
        "n_failed": len(runs) - len(ok),
        "wall_clock_s": time.monotonic() - t0,
    }
    if ok:
        targets = sorted(ok[0]["per_target"])
        report["mean"] = {
            "aggregate": float(np.mean([r["aggregate"] for r in ok])),
            "pooled": float(np.mean([r["pooled"] for r in ok])),
            "per_target": {t: float(np.mean([r["per_target"][t] for r in ok])) for t in targets},
        }
        report["std"] = {
            "aggregate": float(np.std([r["aggregate"] for r in ok])),
            "pooled": float(np.std([r["pooled"] for r in ok])),
            "per_target": {t: float(np.std([r["per_target"][t] for r in ok])) for t in targets},
        }
        if last_model is not None:
            report["param_count"] = last_model.param_count()
    if checkpoint_path and last_model is not None:
        last_model.save(checkpoint_path, metrics=report.get("mean"))
        report["checkpoint"] = os.path.basename(checkpoint_path)
    return report


ABLATIONS = ("no_textual_prompt", "no_visual_prompt")


def ablate_config(cfg, which):
    """Pure config delta: each ablation flips exactly one switch."""
    if which == "no_textual_prompt":
        return cfg.with_updates(use_textual_prompt=False)
    if which == "no_visual_prompt":
        return cfg.with_updates(visual_prompt_len=0)
    raise ValueError(f"unknown ablation {which!r}; expected one of {ABLATIONS}")


def baseline_config(cfg):
    """No target conditioning anywhere: both ablation switches at once."""
    return ablate_config(ablate_config(cfg, "no_textual_prompt"), "no_visual_prompt")


def ablate(cfg, which, manifest, base_dir, **kwargs):
    return run_averaged(ablate_config(cfg, which), manifest, base_dir, **kwargs)


def baseline_no_prompt(cfg, manifest, base_dir, **kwargs):
    return run_averaged(baseline_config(cfg), manifest, base_dir, **kwargs)


def sweep_prompt_tokens(cfg, manifest, base_dir, values=(3, 5, 7, 9), **kwargs):
    """One averaged run per visual prompt length, shared master seed."""
    if not values:
        raise ValueError("sweep needs at least one prompt length")
    out = {"values": list(values), "reports": [], "param_counts": []}
    for lam in values:
        report = run_averaged(cfg.with_updates(visual_prompt_len=int(lam)), manifest,
                              base_dir, **kwargs)
        out["reports"].append(report)
        out["param_counts"].append(report.get("param_count"))
    return out


def text_probe(cfg, base_dir, epochs=2, registry=None):
    """Median-split probe: a text-only classifier (word encoder + linear
    head, no prompts, no images) trained briefly and scored by dev macro F1.

    Deliberately unimodal and cheap: scoring 20 candidate splits must not
    cost 20 full multi-modal runs. Any callable(manifest) -> float can be
    passed to select_median_split instead.
    """
    import numpy as np

    from . import tensor as T
    from .metrics import macro_f1
    from .tensor import Rng, Tensor
    from .text import assemble_text_input, build_vocab, empty_prompt, tokenize
    from .text import TextEncoderParams, encode_text_batch
    from .training import Adam

    def probe(split_manifest):
        train_s = split_manifest.of_split("train")
        dev_s = split_manifest.of_split("dev")
        vocab = build_vocab([s.text for s in train_s], min_freq=cfg.vocab_min_freq)
        label_idx = {lab: i for i, lab in enumerate(cfg.labels)}

        def encode(samples):
            ids, mask, labels = [], [], []
            for s in samples:
                inp = assemble_text_input(empty_prompt(s.target),
                                          vocab.encode(tokenize(s.text)), vocab, cfg.max_len)
                ids.append(inp.ids)
                mask.append(inp.mask)
                labels.append(label_idx[s.label])
            return np.stack(ids), np.stack(mask), np.asarray(labels, dtype=np.int64)

        tr_ids, tr_mask, tr_y = encode(train_s)
        dv_ids, dv_mask, dv_y = encode(dev_s)
        rng = Rng(cfg.master_seed)
        params = TextEncoderParams(rng.child(1), len(vocab), cfg.d_text, cfg.text_layers,
                                   cfg.text_heads, cfg.max_len, cfg.ffn_mult)
        head_w = Tensor(rng.child(2).truncated_normal((cfg.d_text, cfg.n_labels)),
                        requires_grad=True)
        head_b = Tensor(np.zeros(cfg.n_labels, dtype=np.float32), requires_grad=True)
        named = dict(params.parameters("text"), head_w=head_w, head_b=head_b)
        opt = Adam(named, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        shuffle = Rng(cfg.master_seed).child(0xBA7C)

        def logits_of(ids, mask):
            cls, _ = encode_text_batch(ids, mask, params)
            return T.add(T.matmul(cls, head_w), head_b)

        n = len(train_s)
        for _ in range(epochs):
            order = shuffle.permutation(n)
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                opt.zero_grad()
                loss = T.cross_entropy(logits_of(tr_ids[idx], tr_mask[idx]), tr_y[idx])
                loss.backward()
                opt.step()
        preds = np.argmax(logits_of(dv_ids, dv_mask).data, axis=1)
        return macro_f1([cfg.labels[i] for i in preds], [cfg.labels[i] for i in dv_y],
                        cfg.labels)

    return probe


# ---------------------------------------------------------------- emission


def _fmt(x):
    return f"{x:.6f}"


def write_metrics_csv(report, path):
    """Per-seed per-target scores plus mean/std rows; byte-deterministic."""
    lines = ["kind,seed,target,macro_f1"]
    for run in report["runs"]:
        if "error" in run:
            lines.append(f"error,{run['seed']},,")
            continue
        for target in sorted(run["per_target"]):
            lines.append(f"per_seed,{run['seed']},{target},{_fmt(run['per_target'][target])}")
        lines.append(f"per_seed,{run['seed']},__aggregate__,{_fmt(run['aggregate'])}")
        lines.append(f"per_seed,{run['seed']},__pooled__,{_fmt(run['pooled'])}")
    if "mean" in report:
        for target in sorted(report["mean"]["per_target"]):
            lines.append(f"mean,,{target},{_fmt(report['mean']['per_target'][target])}")
            lines.append(f"std,,{target},{_fmt(report['std']['per_target'][target])}")
        lines.append(f"mean,,__aggregate__,{_fmt(report['mean']['aggregate'])}")
        lines.append(f"std,,__aggregate__,{_fmt(report['std']['aggregate'])}")
        lines.append(f"mean,,__pooled__,{_fmt(report['mean']['pooled'])}")
        lines.append(f"std,,__pooled__,{_fmt(report['std']['pooled'])}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_losses_csv(report, path):
    lines = ["seed,epoch,train_loss,dev_macro_f1"]
    for run in report["runs"]:
        if "error" in run:
            continue
        for epoch, (tl, dv) in enumerate(zip(run["train_loss"], run["dev_score"])):
            lines.append(f"{run['seed']},{epoch},{_fmt(tl)},{_fmt(dv)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_run_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(sweep, path):
    lines = ["prompt_len,mean_aggregate,std_aggregate,param_count"]
    for lam, report, count in zip(sweep["values"], sweep["reports"], sweep["param_counts"]):
        mean = report.get("mean", {}).get("aggregate")
        std = report.get("std", {}).get("aggregate")
        mtxt = _fmt(mean) if mean is not None else ""
        stxt = _fmt(std) if std is not None else ""
        lines.append(f"{lam},{mtxt},{stxt},{count}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def svg_line_chart(xs, ys, yerr, path, title, xlabel="visual prompt length", ylabel="macro F1"):
    """Minimal hand-rolled SVG line chart with error bars; deterministic bytes."""
    w, h, pad = 480, 320, 48
    lo = min(y - e for y, e in zip(ys, yerr)) if ys else 0.0
    hi = max(y + e for y, e in zip(ys, yerr)) if ys else 1.0
    span = (hi - lo) or 1.0
    lo, hi = lo - 0.1 * span, hi + 0.1 * span
    x_lo, x_hi = min(xs), max(xs)
    x_span = (x_hi - x_lo) or 1.0

    def px(x):
        return pad + (x - x_lo) / x_span * (w - 2 * pad)

    def py(y):
        return h - pad - (y - lo) / (hi - lo) * (h - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{w / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
             f'<text x="{w / 2:.1f}" y="{h - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
             f'<text x="14" y="{h / 2:.1f}" font-size="12" transform="rotate(-90 14 {h / 2:.1f})" '
             f'text-anchor="middle">{ylabel}</text>']
    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>')
    for x, y, e in zip(xs, ys, yerr):
        parts.append(f'<line x1="{px(x):.2f}" y1="{py(y - e):.2f}" x2="{px(x):.2f}" '
                     f'y2="{py(y + e):.2f}" stroke="steelblue"/>')
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="steelblue"/>')
        parts.append(f'<text x="{px(x):.2f}" y="{h - pad + 16}" text-anchor="middle" font-size="11">{x}</text>')
    for frac in (0.0, 0.5, 1.0):
        yv = lo + frac * (hi - lo)
        parts.append(f'<text x="{pad - 6}" y="{py(yv):.2f}" text-anchor="end" font-size="10">{yv:.3f}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def write_sweep_chart(sweep, path, title="visual prompt length sweep"):
    xs, ys, es = [], [], []
    for lam, report in zip(sweep["values"], sweep["reports"]):
        if "mean" in report:
            xs.append(lam)
            ys.append(report["mean"]["aggregate"])
            es.append(report["std"]["aggregate"])
    svg_line_chart(xs, ys, es, path, title)
