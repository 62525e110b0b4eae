"""Smoke test for the fnetlab Python extension.

Builds the extension with cargo (release), loads it from a scratch
directory and exercises each exposed entry point.

    python3 python/smoke_test.py
"""

import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_and_load():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "fnetlab-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = os.path.join(ROOT, "target", "release", "libfnetlab_py.so")
    scratch = tempfile.mkdtemp()
    target = os.path.join(scratch, "fnetlab.so")
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("fnetlab", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol * max(1.0, abs(y)) for x, y in zip(a, b))


def main():
    fl = build_and_load()

    re, im = fl.fft([1.0, 2.0, 3.0, 4.0])
    assert close(re, [10.0, -2.0, -2.0, -2.0]) and close(im, [0.0, 2.0, 0.0, -2.0]), (re, im)
    try:
        fl.fft([1.0, 2.0, 3.0])
        raise AssertionError("length 3 accepted")
    except ValueError:
        pass
    assert close(fl.hadamard([1.0, 0.0, 0.0, 0.0]), [1.0] * 4)
    x = [0.3, -1.2, 0.7, 2.0, 0.1]
    h = fl.hartley(fl.hartley(x))
    assert close([v / len(x) for v in h], x)
    c = fl.dct2(x)
    assert abs(sum(v * v for v in c) - sum(v * v for v in x)) < 1e-12

    rows = [[float(i * 3 + j) for j in range(4)] for i in range(8)]
    a = fl.fourier_mix(rows, "fft")
    b = fl.fourier_mix(rows, "matrix")
    assert all(close(p, q) for p, q in zip(a, b))
    assert abs(a[0][0] - sum(map(sum, rows))) < 1e-9

    assert fl.build_layout(12, 2, "mixed") == ["fourier_fft"] * 3 + ["attention"] + ["fourier_fft"] * 5 + [
        "attention"
    ] + ["fourier_fft"] * 2

    base = fl.ModelConfig.preset("base", "bert")
    params = base.param_count()
    assert abs(params["total"] / 1e6 - 111.24) < 0.1, params
    gflops = base.flops()["total"] / 1e9
    assert 88 < gflops < 108, gflops
    fnet = fl.ModelConfig.preset("base", "fnet_fft")
    assert fnet.peak_memory(8) < base.peak_memory(8)

    cfg = fl.ModelConfig(16, 8, 1, "fnet_fft")
    cfg.ff_dim = 16
    cfg.dropout_rate = 0.0
    model = fl.Model(cfg)
    seq, pooled = model.encode([1, 5, 6, 7] + [0] * 12)
    assert len(seq) == 16 and len(seq[0]) == 8 and len(pooled) == 8
    try:
        model.encode([1, 5, 6, 7])
        raise AssertionError("short sequence accepted")
    except ValueError:
        pass
    assert all(math.isfinite(v) for r in seq for v in r)

    rows, trained = fl.train_recall(cfg, total_steps=6, batch_size=4, eval_every=3, seed=1)
    assert [r["step"] for r in rows][-1] == 6, rows
    assert all(math.isfinite(r["loss"]) for r in rows)
    path = os.path.join(tempfile.mkdtemp(), "m.fnt1")
    trained.save(path)
    assert fl.Model.load(path).num_trainable == trained.num_trainable

    worst = max(err for _, err in fl.gradient_suite())
    assert worst <= 1e-4, worst

    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
