"""Smoke test for the Python bindings. Build first:

    pip install --no-build-isolation -e crates/python
"""

import json
import math
import os
import tempfile

import preddir


def main():
    data, tau = preddir.Dataset.simulate(
        n=800, p=4, seed=11, effect="linear", beta=[1.0, 0.0, 0.0, 0.0], sigma=0.5
    )
    assert len(data) == 800 and data.p == 4 and len(tau) == 800
    assert data.outcome == "continuous"

    model = preddir.train(data, method="linear", seed=3, n_trees=100)
    direction = model.direction
    assert abs(direction[0]) > 0.9, direction
    assert model.assign([2.0, 0.0, 0.0, 0.0]) and not model.assign([-2.0, 0.0, 0.0, 0.0])

    test, _ = preddir.Dataset.simulate(
        n=800, p=4, seed=12, effect="linear", beta=[1.0, 0.0, 0.0, 0.0], sigma=0.5
    )
    report = model.evaluate(test)
    assert report["status"] == "ok" and report["measure"] == "mean_difference", report
    assert report["estimate"] > 0

    restored = preddir.Model.from_json(model.to_json())
    assert math.isclose(restored.score([0.3, 1.0, -1.0, 0.5]), model.score([0.3, 1.0, -1.0, 0.5]))
    json.loads(model.to_json())

    surv, _ = preddir.Dataset.simulate(
        n=400, p=3, seed=5, effect="linear", outcome="survival", base_rate=0.5
    )
    kmodel = preddir.train(surv, method="kernel", seed=1, n_trees=50)
    assert kmodel.method == "kernel" and kmodel.direction is None
    assert len(kmodel.training_scores) == 400

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "s.csv")
        surv.save(path)
        again = preddir.Dataset.load(path)
        assert again.outcome == "survival" and len(again) == 400

    studies = [
        preddir.Dataset.simulate(n=300, p=3, seed=s, study=f"s{s}")[0] for s in range(3)
    ]
    rows = preddir.meta(studies, method="linear", seed=2, n_trees=50)
    assert [r["study"] for r in rows] == ["s0", "s1", "s2"]

    try:
        model.evaluate(surv)
    except ValueError:
        pass
    else:
        raise AssertionError("schema mismatch should raise")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
