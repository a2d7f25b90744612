"""Smoke test for the specxplain extension module.

Build and install the module next to this script first:

    cargo build --release -p specxplain-py
    cp target/release/libspecxplain_py.so python/specxplain.so
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import specxplain as sx


def main():
    assert abs(sx.hz_to_mel(700.0) - 2595 * math.log10(2)) < 1e-9
    assert 0.816 <= sx.glorot_limits(4, 5) <= 0.817

    canonical = sx.Model()
    assert canonical.param_count == sx.CANONICAL_PARAM_COUNT == 6_708_450
    assert canonical.input_shape == (128, 820, 3)

    samples = sx.synth_generate(per_class=6, seed=1)
    assert len(samples) == 12
    image, label, mask = samples[0]
    assert (image.height, image.width) == (128, 205)
    assert label in ("covid", "non_covid")
    assert len(mask) == 128 * 205

    model = sx.Model(width=205, seed=1)
    pairs = [(img, lab) for img, lab, _ in samples]
    history = model.fit(pairs[:8], pairs[8:], epochs=2, batch_size=4, patience=2, seed=1)
    assert [h["epoch"] for h in history] == [1, 2]
    probs = model.predict_proba(image)
    assert len(probs) == 2 and abs(sum(probs) - 1.0) < 1e-9

    cam = model.gradcam(image, label)
    assert (cam.height, cam.width) == (128, 205) and cam.min() >= 0.0
    sg = model.smoothgrad(image, 0, n=2, seed=3)
    assert sg.method == "smoothgrad" and sg.class_index == 0
    lime = model.lime(image, "non_covid", n_features=2, n_samples=10, seed=3)
    assert len(lime["selected"]) == 2 and len(lime["segments"]) == 128 * 205

    pixels, objective, initial = model.maximize_filter(1, 16, steps=3)
    assert len(pixels) == 128 * 205 and objective >= initial
    _, objective, initial = model.maximize_class("covid", steps=3)
    assert objective >= initial

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path, epoch=2)
        again = sx.Model.load(path)
        assert again.predict_proba(image) == probs
        png = os.path.join(tmp, "image.png")
        image.save_png(png)
        assert sx.MelImage.load_png(png).pixels() == image.pixels()
        cam.render(image, os.path.join(tmp, "cam.png"))
        cam.save_raw(os.path.join(tmp, "cam.bin"))
        assert os.path.getsize(os.path.join(tmp, "cam.bin")) == 8 + 8 * 128 * 205

    try:
        model.gradcam(image, 2)
    except IndexError:
        pass
    else:
        raise AssertionError("class 2 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
