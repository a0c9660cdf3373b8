"""Benchmark the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times each hot kernel on shapes representative of training (many short rows,
transformer widths) and prints the speedup of the compiled extension. Also
times one full forward/backward/update step of the tiny stance model under
each backend.
"""

import argparse
import time

import numpy as np

from mmstance import _kernels as K
from mmstance._kernels import _fallback


def _time(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    shapes = [("layer_norm (2048x64)", (2048, 64)), ("layer_norm (256x768)", (256, 768)),
              ("softmax (2048x64)", (2048, 64)), ("softmax (640x204)", (640, 204))]
    rows = []
    if not K.has_native():
        print("compiled extension not available; timing fallback only")
    for name, shape in shapes:
        x = np.ascontiguousarray(rng.normal(size=shape).astype(np.float32))
        gamma = np.ones(shape[1], dtype=np.float32)
        beta = np.zeros(shape[1], dtype=np.float32)
        if name.startswith("layer_norm"):
            fall = _time(lambda: _fallback.layer_norm_fwd(x, gamma, beta, 1e-5), repeats)
            nat = None
            if K.has_native():
                from mmstance._kernels import _native
                nat = _time(lambda: _native.layer_norm_fwd(x, gamma, beta, 1e-5), repeats)
        else:
            fall = _time(lambda: _fallback.softmax_fwd(x), repeats)
            nat = None
            if K.has_native():
                from mmstance._kernels import _native
                nat = _time(lambda: _native.softmax_fwd(x), repeats)
        rows.append((name, fall, nat))

    n = 200_000
    p = rng.normal(size=n).astype(np.float32)
    g = rng.normal(size=n).astype(np.float32)
    m = np.zeros(n, dtype=np.float32)
    v = np.zeros(n, dtype=np.float32)
    fall = _time(lambda: _fallback.adam_step(p.copy(), g, m.copy(), v.copy(), 1, 1e-3, 0.9, 0.999, 1e-8), repeats)
    nat = None
    if K.has_native():
        from mmstance._kernels import _native
        nat = _time(lambda: _native.adam_step(p.copy(), g, m.copy(), v.copy(), 1, 1e-3, 0.9, 0.999, 1e-8), repeats)
    rows.append((f"adam_step ({n})", fall, nat))

    print(f"{'kernel':28s} {'fallback':>12s} {'native':>12s} {'speedup':>8s}")
    for name, fall, nat in rows:
        nat_txt = f"{nat * 1e3:9.3f} ms" if nat is not None else "         --"
        speed = f"{fall / nat:7.2f}x" if nat else "      --"
        print(f"{name:28s} {fall * 1e3:9.3f} ms {nat_txt} {speed}")


def bench_train_step(repeats):
    import mmstance.tensor as T
    from mmstance.config import ModelConfig
    from mmstance.model import StanceModel
    from mmstance.synthetic import SyntheticConfig, render_image, render_text
    from mmstance.tensor import Rng
    from mmstance.text import TargetRegistry, build_vocab
    from mmstance.training import Adam

    cfg = ModelConfig(visual_prompt_len=3, epochs=1)
    rng = Rng(0)
    registry = TargetRegistry()
    registry.register("a", "a")
    registry.register("b", "b")
    synth = SyntheticConfig(targets=("a", "b"), samples_per_target=1, image_size=cfg.image_size)
    corpus = [render_text(rng, synth, cue_class=i % 3) for i in range(16)]
    vocab = build_vocab(corpus)
    model = StanceModel(cfg, vocab, registry, ["a", "b"], 0)
    encoded, labels = [], []
    for i in range(32):
        encoded.append(model.encode_example(("a", "b")[i % 2],
                                            render_text(rng, synth, cue_class=i % 3),
                                            render_image(rng, synth, cue_class=i % 3)))
        labels.append(i % 3)
    batch = StanceModel.collate(encoded, labels)
    opt = Adam(model.trainable_parameters(), cfg.lr)

    def step():
        opt.zero_grad()
        loss = T.cross_entropy(model.forward(batch), batch["labels"])
        loss.backward()
        opt.step()

    results = {}
    for backend in ("fallback", "native") if K.has_native() else ("fallback",):
        K.set_backend(backend)
        results[backend] = _time(step, repeats)
    K.set_backend("native" if K.has_native() else "fallback")
    print()
    print(f"{'train step (batch 32, tiny)':28s} "
          f"{results['fallback'] * 1e3:9.3f} ms "
          + (f"{results['native'] * 1e3:9.3f} ms {results['fallback'] / results['native']:7.2f}x"
             if "native" in results else "         --       --"))


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    print(f"active backend: {K.backend_name()}")
    bench_kernels(args.repeats)
    bench_train_step(args.repeats)
