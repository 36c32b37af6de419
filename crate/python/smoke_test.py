"""Smoke test for the oodx Python module.

Build and run from the repository root:

    cargo build -p oodx-python --release
    cp target/release/liboodx.so python/oodx.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import oodx  # noqa: E402


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert close(oodx.auroc([1, 2, 3, 4], [0, 1]), 0.9375)
    far, gamma = oodx.far95([float(v) for v in range(1, 21)], [0.0, 1.0, 2.0, 3.0])
    assert (far, gamma) == (0.5, 2.0), (far, gamma)

    logits = oodx.LogitSet([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    p = oodx.msp(logits).values
    assert close(p[0], math.exp(2) / (math.exp(2) + 2)) and close(p[1], 1 / 3)
    assert oodx.scaled_msp(logits, 1.0).values == p
    assert close(oodx.d2u(logits).values[1], 0.0, 1e-12)
    scores, flagged = oodx.energy(logits)
    assert close(scores.values[1], -3.0) and flagged == []
    assert close(oodx.ppl([[math.log(0.5)] * 4]).values[0], 0.5)

    with tempfile.TemporaryDirectory() as tmp:
        pair = oodx.synth(tmp, "shifted-manifold", seed=1,
                          train_per_class=100, eval_per_class=25, ood_count=60)
        assert oodx.validate(pair) == []
        spaces = {}
        for space in ("pre", "ft"):
            train = oodx.FeatureSet.load(os.path.join(tmp, f"{space}_train.oodx"))
            model = oodx.GaussianModel.fit(train)
            path = os.path.join(tmp, f"md_{space}.model")
            model.save(path)
            model = oodx.GaussianModel.load(path)
            spaces[space] = {
                split: model.score(oodx.FeatureSet.load(os.path.join(tmp, f"{space}_{split}.oodx")))
                for split in ("val", "test", "ood")
            }
        stats = {s: oodx.calibrate(spaces[s]["val"]) for s in spaces}
        fused = {
            split: oodx.gnome(spaces["pre"][split], spaces["ft"][split], stats["pre"], stats["ft"])
            for split in ("test", "ood")
        }
        report = oodx.evaluate(fused["test"], fused["ood"], pair="synth")
        assert report.auroc > 0.95, report
        pre = oodx.auroc(spaces["pre"]["test"].values, spaces["pre"]["ood"].values)
        assert report.auroc >= pre - 0.02, (report.auroc, pre)

        ft_train = oodx.FeatureSet.load(os.path.join(tmp, "ft_train.oodx"))
        ft_test = oodx.FeatureSet.load(os.path.join(tmp, "ft_test.oodx"))
        knn = oodx.KnnIndex.fit(ft_train, k=5)
        lof = oodx.LofModel.fit(ft_train, k=10)
        for det in (knn, lof):
            path = os.path.join(tmp, "det.model")
            det.save(path)
            again = type(det).load(path)
            assert again.score(ft_test).values == det.score(ft_test).values

        ids, lps = oodx.read_tokens(os.path.join(tmp, "tokens_test.jsonl"))
        assert len(oodx.ppl(lps, ids)) == len(ft_test)

    try:
        oodx.calibrate(oodx.ScoreVector.from_distances("md", [1.0, 1.0]))
    except oodx.OodxError as e:
        assert "DegenerateCalibration" in str(e)
    else:
        raise AssertionError("degenerate calibration accepted")

    print(report.table_row)
    print("smoke test passed")


if __name__ == "__main__":
    main()
