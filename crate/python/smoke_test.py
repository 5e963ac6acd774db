"""Smoke test for the gbnet Python extension.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import math
import os
import tempfile

import gbnet

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures")


def main():
    # descriptor of the right-triangle example
    rows = gbnet.descriptor([[0, 0, 0], [1, 0, 0], [0, 1, 0]], form=6)
    assert rows[0] == [0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 1], rows[0]
    assert len(gbnet.descriptor_columns(8)) == 24

    assert gbnet.knn([[0.0], [1.0], [2.0], [4.0]], 2)[0] == [1, 2]

    cfg = gbnet.Config(
        points=32, k=4, scales="8,8,8,16", fuse_width=32, head="16,8",
        train_size=24, test_size=12, epochs=2, batch_size=8,
    )
    assert cfg.get("epochs") == "2"
    try:
        cfg.set("epocs", "3")
    except ValueError as e:
        assert "epocs" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    train, test = gbnet.synthetic(cfg)
    assert len(train) == 24 and len(test) == 12

    model = gbnet.Model(cfg, seed=3)
    history = model.fit()
    assert len(history) == 2 and all(math.isfinite(h["loss"]) for h in history)

    clouds = [pts for pts, _ in test]
    logits = model.predict_logits(clouds)
    assert len(logits) == 12 and len(logits[0]) == 6

    metrics = model.evaluate(clouds, [label for _, label in test])
    assert 0.0 <= metrics["overall_acc"] <= 1.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.gbnc")
        model.save(path)
        again = gbnet.Model.load(path)
        assert again.predict_logits(clouds) == logits
        assert again.param_count == model.param_count

        pts = gbnet.sample_off(os.path.join(FIXTURES, "pyramid.off"), 32)
        pack = os.path.join(d, "p.gbpc")
        gbnet.write_pack(pack, [(pts, 1)])
        assert gbnet.read_pack(pack) == [(pts, 1)]

    results = gbnet.gradcheck("softmax")
    assert results and all(r["passed"] for r in results)
    print("smoke test passed")


if __name__ == "__main__":
    main()
