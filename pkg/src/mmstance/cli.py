"""Command-line interface.

Every subcommand takes --config (a key = value text file) and --out (an
output directory). Environment overrides are limited to MMSTANCE_OUT
(output directory) and MMSTANCE_THREADS (BLAS thread count, default 1 so
runs are reproducible). Exit status is 0 on success, nonzero on any
contract violation.

Paths inside a config file are resolved relative to the config file.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_env(config_path):
    """Pin BLAS threads before numpy loads. Deterministic mode (the default)
    forces single-threaded reductions; MMSTANCE_THREADS overrides."""
    deterministic = True
    try:
        from .config import _parse_bool, parse_config_file  # stdlib-only module

        raw = parse_config_file(config_path)
        if "deterministic" in raw:
            deterministic = _parse_bool(raw["deterministic"])
    except Exception:
        pass  # bad config paths fail later with a proper message
    if "MMSTANCE_THREADS" in os.environ:
        threads = os.environ["MMSTANCE_THREADS"]
    elif deterministic:
        threads = "1"
    else:
        threads = str(os.cpu_count() or 1)
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _resolve(cfg_path, value):
    if os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(cfg_path)), value))


def _load(args):
    from .config import ModelConfig, parse_config_file

    raw = parse_config_file(args.config)
    return raw, ModelConfig.from_mapping(raw)


def _registry_from(raw, cfg_path):
    from .text import TargetRegistry, default_registry

    if "targets_file" in raw:
        return TargetRegistry.load(_resolve(cfg_path, raw["targets_file"]))
    return default_registry()


def _out_dir(args):
    out = os.environ.get("MMSTANCE_OUT", args.out)
    os.makedirs(out, exist_ok=True)
    return out


def _manifest_and_dir(raw, args, key="manifest"):
    from .manifest import load_manifest

    if key not in raw:
        raise SystemExit(f"config is missing the {key!r} key")
    path = _resolve(args.config, raw[key])
    return load_manifest(path), os.path.dirname(path)


def cmd_generate_data(args):
    from .manifest import write_manifest
    from .synthetic import SyntheticConfig, generate_synthetic

    raw, cfg = _load(args)
    out = _out_dir(args)
    synth = SyntheticConfig(
        targets=tuple(t.strip() for t in raw.get("synth_targets", "alpha,beta").split(",") if t.strip()),
        samples_per_target=int(raw.get("synth_samples_per_target", "200")),
        labels=cfg.labels,
        visual_cue_fraction=float(raw.get("synth_visual_cue_fraction", "0.5")),
        contradiction=raw.get("synth_contradiction", "false").lower() in ("true", "1", "yes", "on"),
        image_size=cfg.image_size,
        seed=int(raw.get("synth_seed", str(cfg.master_seed))),
    )
    manifest = generate_synthetic(synth, out)
    path = os.path.join(out, "manifest.jsonl")
    write_manifest(manifest, path)
    print(f"wrote {len(manifest.samples)} samples to {path}")
    return 0


def cmd_split(args):
    import json

    from .experiments import text_probe
    from .manifest import write_manifest
    from .splits import select_median_split, split_in_target, split_zero_shot

    raw, cfg = _load(args)
    out = _out_dir(args)
    manifest, base_dir = _manifest_and_dir(raw, args)
    method = raw.get("split_method", "in_target")
    seed = int(raw.get("split_seed", str(cfg.master_seed)))
    if method == "in_target":
        ratios = tuple(float(x) for x in raw.get("split_ratios", "0.7,0.1,0.2").split(","))
        result = split_in_target(manifest, ratios=ratios, seed=seed)
    elif method == "zero_shot":
        held = tuple(t.strip() for t in raw.get("held_out_targets", "").split(",") if t.strip())
        result = split_zero_shot(manifest, held, seed=seed)
    elif method == "median":
        k = int(raw.get("median_k", "20"))
        probe = text_probe(cfg, base_dir, epochs=int(raw.get("probe_epochs", "2")),
                           registry=_registry_from(raw, args.config))
        result, report = select_median_split(manifest, k=k, probe=probe, seed=seed)
        with open(os.path.join(out, "median_report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise SystemExit(f"unknown split_method {method!r}")
    path = os.path.join(out, "manifest_split.jsonl")
    write_manifest(result, path)
    counts = {s: sum(1 for x in result.samples if x.split == s) for s in ("train", "dev", "test")}
    print(f"wrote {path} (train={counts['train']} dev={counts['dev']} test={counts['test']})")
    return 0


def _emit_report(report, out, prefix=""):
    from .experiments import write_losses_csv, write_metrics_csv, write_run_json

    write_metrics_csv(report, os.path.join(out, f"{prefix}metrics.csv"))
    write_losses_csv(report, os.path.join(out, f"{prefix}losses.csv"))
    write_run_json(report, os.path.join(out, f"{prefix}run.json"))
    if "mean" in report:
        print(f"{prefix or 'run'}: mean macro_f1 (across targets) = {report['mean']['aggregate']:.4f} "
              f"+/- {report['std']['aggregate']:.4f} over {len(report['seeds'])} seeds")
    if report.get("n_failed"):
        print(f"warning: {report['n_failed']} seed run(s) failed", file=sys.stderr)


def cmd_train(args):
    from .experiments import run_averaged

    raw, cfg = _load(args)
    out = _out_dir(args)
    manifest, base_dir = _manifest_and_dir(raw, args)
    report = run_averaged(cfg, manifest, base_dir, registry=_registry_from(raw, args.config),
                          eval_split=raw.get("eval_split", "test"),
                          allow_unseen=raw.get("zero_shot", "false").lower() in ("true", "1", "yes", "on"),
                          checkpoint_path=os.path.join(out, "checkpoint.npz"))
    _emit_report(report, out)
    return 1 if report["n_failed"] == len(report["runs"]) else 0


def cmd_evaluate(args):
    import json

    from .model import StanceModel
    from .training import evaluate

    raw, _cfg = _load(args)
    out = _out_dir(args)
    if "checkpoint" not in raw:
        raise SystemExit("config is missing the 'checkpoint' key")
    model = StanceModel.load(_resolve(args.config, raw["checkpoint"]))
    manifest, base_dir = _manifest_and_dir(raw, args)
    result = evaluate(model, manifest, raw.get("eval_split", "test"), base_dir,
                      allow_unseen=raw.get("zero_shot", "false").lower() in ("true", "1", "yes", "on"))
    lines = ["target,macro_f1"]
    for t in sorted(result["per_target"]):
        lines.append(f"{t},{result['per_target'][t]:.6f}")
    lines.append(f"__aggregate__,{result['aggregate']:.6f}")
    lines.append(f"__pooled__,{result['pooled']:.6f}")
    with open(os.path.join(out, "eval.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"macro_f1 across targets: {result['aggregate']:.4f} (pooled {result['pooled']:.4f})")
    return 0


def cmd_ablate(args):
    from .experiments import ablate_config, run_averaged

    raw, cfg = _load(args)
    out = _out_dir(args)
    which = args.which or raw.get("ablation")
    if not which:
        raise SystemExit("pass --which or set the 'ablation' config key")
    manifest, base_dir = _manifest_and_dir(raw, args)
    report = run_averaged(ablate_config(cfg, which), manifest, base_dir,
                          registry=_registry_from(raw, args.config))
    _emit_report(report, out, prefix=f"{which}.")
    return 1 if report["n_failed"] == len(report["runs"]) else 0


def cmd_sweep(args):
    from .experiments import sweep_prompt_tokens, write_run_json, write_sweep_chart, write_sweep_csv

    raw, cfg = _load(args)
    out = _out_dir(args)
    values = tuple(int(x) for x in raw.get("sweep_values", "3,5,7,9").split(","))
    manifest, base_dir = _manifest_and_dir(raw, args)
    sweep = sweep_prompt_tokens(cfg, manifest, base_dir, values=values,
                                registry=_registry_from(raw, args.config))
    write_sweep_csv(sweep, os.path.join(out, "sweep.csv"))
    write_sweep_chart(sweep, os.path.join(out, "sweep.svg"))
    for lam, report in zip(sweep["values"], sweep["reports"]):
        write_run_json(report, os.path.join(out, f"sweep_lam{lam}.run.json"))
        if "mean" in report:
            print(f"lam={lam}: {report['mean']['aggregate']:.4f} +/- {report['std']['aggregate']:.4f}")
    return 0


def cmd_gradcheck(args):
    import json

    from .verify import model_grad_check

    raw, cfg = _load(args)
    out = _out_dir(args)
    h = float(raw.get("gradcheck_h", "1e-5"))
    samples = int(raw.get("gradcheck_samples", "3"))
    threshold = float(raw.get("gradcheck_threshold", "1e-5"))
    worst, worst_name, per = model_grad_check(cfg, h=h, samples_per_param=samples,
                                              seed=cfg.master_seed)
    with open(os.path.join(out, "gradcheck.json"), "w", encoding="utf-8") as fh:
        json.dump({"max_rel_err": worst, "worst": worst_name, "threshold": threshold,
                   "per_group": per}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"checked {len(per)} parameter groups; worst offender: {worst_name} "
          f"(rel err {worst:.3e}, threshold {threshold:.1e})")
    if worst >= threshold:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


def cmd_report(args):
    import json

    raw, _cfg = _load(args)
    out = _out_dir(args)
    if "inputs" not in raw:
        raise SystemExit("config is missing the 'inputs' key (comma-separated run.json paths)")
    paths = [_resolve(args.config, p.strip()) for p in raw["inputs"].split(",") if p.strip()]
    lines = ["run,config_hash,mean_aggregate,std_aggregate,n_seeds,n_failed"]
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            rep = json.load(fh)
        mean = rep.get("mean", {}).get("aggregate")
        std = rep.get("std", {}).get("aggregate")
        name = os.path.basename(p)
        lines.append(f"{name},{rep['config_hash']},"
                     f"{'' if mean is None else f'{mean:.6f}'},"
                     f"{'' if std is None else f'{std:.6f}'},"
                     f"{len(rep.get('seeds', []))},{rep.get('n_failed', 0)}")
        print(lines[-1])
    with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mmstance",
                                     description="multi-modal stance detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **extra):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        for flag, kw in extra.items():
            p.add_argument(flag, **kw)
        p.set_defaults(func=func)
        return p

    add("generate-data", cmd_generate_data)
    add("split", cmd_split)
    add("train", cmd_train)
    add("evaluate", cmd_evaluate)
    add("ablate", cmd_ablate, **{"--which": {"choices": ("no_textual_prompt", "no_visual_prompt"),
                                             "default": None}})
    add("sweep", cmd_sweep)
    add("gradcheck", cmd_gradcheck)
    add("report", cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    _apply_thread_env(args.config)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
