"""Smoke test for the simplexsm_py extension.

Build first:  cargo build --release -p simplexsm-python --features extension-module
then run:     python3 python/smoke_test.py
"""

import glob
import json
import os
import shutil
import sys
import tempfile


def load():
    try:
        import simplexsm_py
        return simplexsm_py
    except ImportError:
        pass
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    built = sorted(
        glob.glob(os.path.join(root, "target", "*", "libsimplexsm_py.so")),
        key=os.path.getmtime,
    )
    if not built:
        sys.exit("libsimplexsm_py.so not found; build the extension first")
    tmp = tempfile.mkdtemp()
    shutil.copy(built[-1], os.path.join(tmp, "simplexsm_py.so"))
    sys.path.insert(0, tmp)
    import simplexsm_py
    return simplexsm_py


def main():
    sm = load()

    w = sm.WeightSpec("capped-min", 0.1)
    assert w.kind == "capped-min" and w.a_c == 0.1
    assert abs(sm.WeightSpec("min").h_sq([0.1 ** 0.5, 0.2 ** 0.5, 0.7 ** 0.5]) - 0.1) < 1e-12

    model = sm.ModelSpec.preset(3)
    assert model.labels == ["a11", "a22", "a12", "b1", "b2"]
    rows = sm.sample(model, 5000, seed=1)
    assert len(rows) == 5000 and all(abs(sum(r) - 1) < 1e-9 for r in rows)
    assert rows == sm.sample(model, 5000, seed=1)

    fit = sm.fit_continuous(rows, model, w)
    for label, truth in [("a11", -26.3678), ("a22", -35.8885), ("a12", 5.9598)]:
        est, se = fit.estimate(label), fit.se(label)
        assert abs(est - truth) < 5 * se, (label, est, se)
    assert fit.se("b1") is None
    assert json.loads(fit.to_json())["family"] == "truncated-gaussian"
    assert sm.ModelSpec.from_json(fit.model.to_json()).p == 3

    counts = sm.sample_multinomial(rows[:200], 2000, seed=1)
    fac = sm.fit_counts(counts, model, sm.WeightSpec("product"), estimator="factorial")
    assert len(fac.estimates) == 5

    stat, p, ties = sm.ks_compare([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    assert stat == 0.0 and ties
    assert sm.round_to_grid([0.0123], 2000) == [25 / 2000]

    beta = sm.dirichlet_moment_fit(sm.sample(sm.ModelSpec.dirichlet([1.0, 2.0, 0.5]), 20000, seed=2))
    assert all(abs(b - t) < 0.3 for b, t in zip(beta, [1.0, 2.0, 0.5])), beta

    report = json.loads(sm.marginal_report(rows[:100], model, 10000, seed=3))
    assert len(report["categories"]) == 3

    cells = sm.run_study(3, 200, 5, [1], seed=4)
    assert {c["parameter"] for c in cells} == {"a11", "a22", "a12"}

    try:
        sm.fit_continuous([[0.2, 0.3, 0.5]], model, sm.WeightSpec("min"))
    except sm.SimplexsmError as e:
        assert "singular-system" in str(e)
    else:
        raise AssertionError("expected a singular system")

    print("smoke test passed")


if __name__ == "__main__":
    main()
