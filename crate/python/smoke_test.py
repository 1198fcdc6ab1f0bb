"""Smoke test for the oaae_py extension module.

Build and install it first, e.g.

    pip install --no-build-isolation -e crates/python
"""

import math
import os
import sys
import tempfile

import oaae_py as oaae


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    a = [[3.0, 0.0], [0.0, -4.0], [0.0, 0.0]]
    u, s, v = oaae.svd(a)
    assert close(s[0], 4.0) and close(s[1], 3.0), s
    assert close(oaae.nuclear_norm(a), 7.0)

    u = [0.5, 0.5, 0.5, 0.5]
    same = [[x, x] for x in u]
    assert close(oaae.ole_loss(same, [0, 1], delta=0.0, threshold=1e-6), 2 - math.sqrt(2))
    zero = [[0.0] * 6 for _ in range(4)]
    assert oaae.ole_loss(zero, [0, 1, 2, 0, 1, 2]) == 3.0
    g = oaae.ole_grad(zero, [0, 1, 2, 0, 1, 2])
    assert all(x == 0.0 for row in g for x in row)

    assert oaae.auroc([1, 3, 2, 4], [False, False, True, True]) == 0.75
    assert close(oaae.angle([1.0, 0.0], [0.0, 2.0]), math.pi / 2)
    try:
        oaae.angle([0.0, 0.0], [1.0, 0.0])
    except RuntimeError:
        pass
    else:
        raise AssertionError("degenerate latent accepted")

    failed = [c for c in oaae.run_checks(0) if not c[3]]
    assert not failed, failed

    train = oaae.Dataset.synthetic(classes=3, per_class=24, side=16, seed=0).restrict([0, 1])
    test = oaae.Dataset.synthetic(classes=3, per_class=24, side=16, seed=0, split="test")
    assert len(train) == 48 and train.image_shape == (1, 16, 16)
    model, losses = oaae.Model.train(train, epochs=2, batch_size=16, seed=1)
    assert len(losses) == 2 and all(math.isfinite(x) for row in losses for x in row)

    scores = model.score(test)
    novel = [label == 2 for label in test.labels]
    assert len(scores) == len(test)
    assert all(0.0 <= x <= math.pi for x in scores)
    print("angle AUROC after 2 epochs: %.3f" % oaae.auroc(scores, novel))
    mse = model.score(test, kind="mse")
    assert all(x >= 0.0 for x in mse)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.oaae")
        model.save(path)
        again = oaae.Model.load(path)
        assert again.score(test) == scores
        with open(path, "r+b") as f:
            f.write(b"XXXX")
        try:
            oaae.Model.load(path)
        except OSError as e:
            assert "m.oaae" in str(e)
        else:
            raise AssertionError("corrupt checkpoint accepted")

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
