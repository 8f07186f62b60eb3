#!/usr/bin/env python3
"""Smoke test for the electrodenet_py extension module.

Builds the cdylib with cargo, copies it next to this script under the
importable name, and exercises the main entry points.
"""

import math
import pathlib
import shutil
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_extension():
    subprocess.run(
        ["cargo", "build", "-p", "electrodenet-py"], cwd=ROOT, check=True
    )
    built = ROOT / "target" / "debug" / "libelectrodenet_py.so"
    if not built.exists():  # macOS
        built = ROOT / "target" / "debug" / "libelectrodenet_py.dylib"
    dest = pathlib.Path(__file__).parent / "electrodenet_py.so"
    shutil.copyfile(built, dest)
    sys.path.insert(0, str(dest.parent))


def speechy(n_samples, f0=220.0):
    out = []
    for n in range(n_samples):
        t = n / 16000.0
        env = 0.6 + 0.4 * math.sin(2 * math.pi * 3.0 * t)
        out.append(env * (math.sin(2 * math.pi * f0 * t)
                          + 0.5 * math.sin(2 * math.pi * 5 * f0 * t)))
    return out


def main():
    build_extension()
    import electrodenet_py as en

    clean = speechy(16000)

    # ACE pipeline: N-of-M sparsity and LGF range.
    elgr = en.ace_encode(clean, num_maxima=8)
    assert len(elgr) == 1000, len(elgr)
    assert elgr.hop == 16 and elgr.sample_rate == 16000
    assert all(c <= 8 for c in elgr.selected_counts())
    assert all(0.0 <= a <= 1.0 for row in elgr.frames for a in row)

    # Electrodogram file roundtrip.
    path = str(pathlib.Path(__file__).parent / "smoke.elgr")
    elgr.save(path)
    again = en.Electrodogram.load(path)
    assert all(
        abs(a - b) < 1e-6
        for ra, rb in zip(again.frames, elgr.frames)
        for a, b in zip(ra, rb)
    )

    # Vocode and score: self-reference STOI/NCM sanity.
    audio = en.vocode(elgr)
    assert len(audio) == 16000
    assert abs(en.stoi(clean, clean) - 1.0) < 1e-9
    assert abs(en.ncm(clean, clean) - 1.0) < 1e-9
    s = en.stoi(clean, audio)
    assert 0.0 < s <= 1.0, s

    # Model: parameter count pinned, forward shape, short training run.
    model = en.Model("dnn", seed=1)
    assert model.count_params() == 729366, model.count_params()
    cs = en.Model("dnn-cs", n_topk=8, seed=1)
    inputs, targets = en.teacher_pairs(clean)
    out = cs.forward(inputs)
    assert len(out) == len(inputs) and len(out[0]) == 22
    losses = cs.train([(inputs, targets)], epochs=2, seed=3)
    assert len(losses) == 2 and losses[1] <= losses[0] * 1.5

    # CS pipeline respects the in-network maxima budget.
    cs_elgr = en.enet_encode(clean, cs)
    assert all(c <= 8 for c in cs_elgr.selected_counts())

    # Model file roundtrip.
    mpath = str(pathlib.Path(__file__).parent / "smoke.enet")
    cs.save(mpath)
    reloaded = en.Model.load(mpath)
    # Weights are serialized as f32, so outputs agree to that precision.
    for ra, rb in zip(reloaded.forward(inputs[:5]), cs.forward(inputs[:5])):
        assert all(abs(a - b) < 1e-4 for a, b in zip(ra, rb))

    # Metrics and corpus helpers.
    noise = en.gen_white(7, 16000)
    noisy = en.mix_at_snr(clean, noise, 0.0)
    assert en.stoi(clean, noisy) < 1.0
    mse, lcc, srcc = en.correlate([1, 2, 3, 4], [4, 3, 2, 1])
    assert abs(lcc + 1.0) < 1e-12 and abs(srcc + 1.0) < 1e-12

    for p in (path, mpath, pathlib.Path(__file__).parent / "electrodenet_py.so"):
        pathlib.Path(p).unlink(missing_ok=True)
    print("smoke test passed")


if __name__ == "__main__":
    main()
