"""Smoke test for the cfeval_py extension module.

Build the module first, e.g. `maturin develop -m crates/py/Cargo.toml`, or
copy `target/release/libcfeval_py.so` to `cfeval_py.so` on the import path.
"""

import math
import os
import tempfile

import cfeval_py as cf


def main():
    ds = cf.Dataset.generate(n=20_000, seed=7)
    assert len(ds) == 20_000 and ds.has_oracle
    summary = ds.summary()
    assert abs(summary["mean_y0"] - 0.40) < 0.02, summary

    train, test = ds.split(0.5, seed=7)
    fitted = cf.Nuisances.fit(train, test)
    oracle = cf.Nuisances.oracle(test)
    assert len(fitted) == len(test)

    dr = cf.estimate_mean_y0(test, fitted, method="dr", winsorize=True)
    assert abs(dr["value"] - 0.40) < 4 * dr["stderr"] + 0.01, dr

    scores = fitted.cf_scores
    tpr_dr = cf.evaluate(test, scores, "tpr", mode="dr", nuisances=fitted, winsorize=True)
    tpr_or = cf.evaluate(test, scores, "tpr", mode="oracle")
    assert abs(tpr_dr["value"] - tpr_or["value"]) < 0.05, (tpr_dr, tpr_or)

    curves = cf.curve_family(test, scores, modes=["dr", "oracle"], nuisances=oracle, threshold_steps=20, winsorize=True)
    assert {c["kind"] for c in curves} == {"pr", "roc", "calibration"}, curves[0].keys()

    report = cf.audit(test, scores, threshold=0.5, balance=True, resamples=20)
    assert len(report["residuals"]) == 16
    assert len(report["independence"]["entries"]) == 8

    plan = cf.kamiran_weights(test)
    weights = cf.row_weights(test)
    assert math.isclose(sum(weights), len(test), rel_tol=1e-9), plan

    adjusted, mixed, policy = cf.postprocess(test, scores, seed=1)
    assert len(adjusted) == len(test) and len(mixed) == len(test)
    assert all(0.0 <= lam <= 1.0 for lam in policy["lambda"])

    model = cf.fit_logistic([[z] for z in test.z], ["z"], test.y)
    assert model["feature_spec"] == ["z"]

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ds.csv")
        test.write_csv(path)
        back = cf.Dataset.read_csv(path)
        assert back.y == test.y and back.a == test.a

    try:
        cf.estimate_mean_y0(test, fitted, method="bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    print("smoke test ok: dr mean_y0 = %.4f +/- %.4f" % (dr["value"], dr["stderr"]))


if __name__ == "__main__":
    main()
