"""Smoke test for the mvq extension module.

Build it first, e.g. ``maturin develop -m crates/python/Cargo.toml`` or
``cargo build -p mvq-py --release --features extension-module`` followed by
copying ``target/release/libmvq.so`` to ``python/mvq.so``.
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import mvq  # noqa: E402


def main():
    for name in ("stable_real", "stable_complex", "unstable_real", "unstable_complex"):
        p = mvq.FreeParams.preset(name)
        assert p.coercive(), name
        assert p.classify() == name, (name, p.classify())
        assert len(p.roots()) == 4
    certified, violated = mvq.FreeParams.preset("stable_real").certify()
    assert certified and not violated

    rows = mvq.mollifier_report(1, [1.0, 0.1, 0.01])
    assert all(abs(r[2] - 1.0) < 1e-8 for r in rows)
    assert rows[0][4] > rows[1][4] > rows[2][4]

    video = mvq.Video.synth(3, 1.0, 0.0, 8, 12, 10)
    assert len(video) == 8 and video.shape == (12, 10, 1)
    assert len(video.frame(0)) == 120

    config = {
        "version": 1,
        "layers": [
            {"n": 3, "k": 3, "activation_frames": 20, "lambda_m": 1e-6, "seed": 1},
            {"n": 2, "k": 3, "activation_frames": 10, "seed": 2},
        ],
    }
    layers = mvq.run_multilayer(json.dumps(config), video)
    assert [l.shape for l in layers] == [(3, 1, 3), (2, 3, 3)]
    assert len(layers[0].q) == mvq.filter_dim(3, 1, 3)
    assert 0.0 <= layers[0].mi(video) <= 1.0 + 1e-9
    assert layers[1].metrics_csv().startswith("frame,t,mi_frame")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "f.mvqf")
        assert mvq.export_features(layers, video, path) == 5
        w, h, f, n, values = mvq.read_features(path)
        assert (w, h, f, n) == (12, 10, 5, 8) and len(values) == 12 * 10 * 5 * 8
        ckpt = os.path.join(d, "l1.mvqs")
        layers[0].save(ckpt)
        assert mvq.Layer.load(ckpt).q == layers[0].q

    try:
        mvq.FreeParams.preset("sideways")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
