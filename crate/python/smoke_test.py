"""Smoke test for the sarjepa_py extension.

Build and run:
    cargo build -p sarjepa-py --release --features extension-module
    cp target/release/libsarjepa_py.so python/sarjepa_py.so
    python3 python/smoke_test.py
"""
import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import sarjepa_py as sj


def main():
    img, label = sj.generate_scene(32, 2, looks=1, seed=7)
    assert (img.height, img.width, label) == (32, 32, 2)
    assert all(v >= 0 for v in img.data())

    # with a negligible epsilon the log-ratio gradients ignore a global gain
    g = sj.gr_single_scale(img, 3, "linear", 1e-12)[2]
    g2 = sj.gr_single_scale(img.scaled(37.5), 3, "linear", 1e-12)[2]
    assert max(abs(a - b) for a, b in zip(g, g2)) < 1e-6

    c, h, w, data = sj.target_feature(img, "grlin", [2, 3], 0.01, 4)
    assert len(data) == c * h * w
    assert len(sj.patch_targets(img, "grlin", [2, 3], 0.01, 4)) == (32 // 4) ** 2

    plan = json.loads(sj.mask_plan(8, 8, 2, 4, 0.5, seed=1))
    assert plan

    images, labels, names = sj.generate_corpus(8, classes=1, image_size=32, seed=0)
    cfg = {
        "epochs": 2, "warmup_epochs": 1, "batch_size": 4, "scales": [2, 3],
        "windows_per_image": 1, "patch_side": 4, "embed_dim": 16,
        "encoder_depth": 1, "predictor_depth": 1, "heads": 2, "mlp_ratio": 2,
        "window_side": 4,
    }
    model, log = sj.pretrain(images, json.dumps(cfg), seed=3)
    assert len(log) == 2 and all(math.isfinite(r[1]) for r in log)
    assert model.num_params > 0

    feats = model.encode(images[:3])
    assert len(feats) == 3 and len(feats[0]) == 16
    dist = model.attention_distance(images[:4])
    assert len(dist) == 2

    lab_imgs, lab_labels, _ = sj.generate_corpus(20, classes=2, image_size=32, seed=1)
    summary = model.evaluate_few_shot(lab_imgs, lab_labels, shots=[2], repeats=2,
                                      config=json.dumps({"epochs": 4}))
    assert summary[0][0] == 2 and 0.0 <= summary[0][1] <= 1.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ckpt")
        model.save(path)
        again = sj.Model.load(path)
        assert again.encode(images[:1]) == model.encode(images[:1])
        assert sj.cli(["gen", "--out", os.path.join(d, "g"), "--bogus"]) == 1

    print("smoke test ok")


if __name__ == "__main__":
    main()
