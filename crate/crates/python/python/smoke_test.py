"""Smoke test for the listener_scale_py extension.

Build the module first:

    cargo build --release -p listener-scale-py --features extension-module
    cp target/release/liblistener_scale_py.so crates/python/python/listener_scale_py.so

then run `python3 crates/python/python/smoke_test.py` from the workspace root.
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import listener_scale_py as ls  # noqa: E402


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)
    print(f"ok  {msg}")


def main():
    check(ls.comparison_function(2.0, 2.0) == 0.0, "comparison of equal scores is 0")
    check(abs(ls.comparison_function(3.0, 2.0) - math.tanh(0.5)) < 1e-12, "comparison is tanh of half the gap")
    check(abs(ls.ccc([1, 2, 3], [2, 3, 4]) - 4 / 7) < 1e-12, "ccc of shifted series is 4/7")
    s = ls.summarize([1, 2, 3, 4], [1, 3, 2, 4])
    check(s["n"] == 4 and abs(s["lcc"] - 0.8) < 1e-12, "summarize returns lcc and n")

    sim = ls.simulate("sqa", seed=3, overrides=json.dumps({"n_systems": 6, "utterances_per_system": 5}))
    ds = sim.dataset
    check(len(ds.system_ids()) == 6 and len(ds.utterance_ids()) == 30, "simulated topology")
    aug = ds.augment_mean_listener()
    check(aug.n_ratings == ds.n_ratings + 30, "augmentation adds one rating per utterance")
    check(aug.system_ground_truth() == ds.system_ground_truth(), "augmentation keeps system truth")

    settings = json.dumps({"epochs": 5})
    cl = ls.Scorer.fit(ds, "CL", settings=settings, seed=1)
    check(len(cl.loss_curve) == 5 and not cl.uses_listener_embedding, "CL trains on the unified scale")
    emb = ls.Scorer.fit(ds, "DAS", mean_listener=True, listener_embedding=True, settings=settings, seed=1)
    check(emb.uses_listener_embedding, "embedding model scores through the mean listener")
    try:
        ls.Scorer.fit(ds, "CL", listener_embedding=True, settings=settings)
        check(False, "embedding without mean listener is rejected")
    except ValueError:
        check(True, "embedding without mean listener is rejected")

    scores = cl.score_systems(ds, pairs_per_system_pair=5, seed=0)
    check(sorted(scores) == ds.system_ids(), "one score per system")
    check(sum(scores.values()) == 0, "differential counts sum to zero")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        emb.save(path)
        back = ls.Scorer.load(path)
        x = ds.feature(ds.utterance_ids()[0])
        check(back.predict(x) == emb.predict(x), "checkpoint round trip is exact")
        ds.save(os.path.join(d, "ratings.csv"), os.path.join(d, "features.csv"))
        re = ls.Dataset.load(os.path.join(d, "ratings.csv"), os.path.join(d, "features.csv"))
        check(re.checksum() == ds.checksum(), "csv round trip keeps the checksum")

    config = {
        "repeats": 2,
        "sim": {"n_systems": 6, "utterances_per_system": 5},
        "scorer": {"epochs": 3},
        "regimes": [
            {"model": "DAS", "mean_listener": True, "listener_embedding": True},
            {"model": "CL", "mean_listener": False, "listener_embedding": False},
        ],
    }
    report = ls.run_matrix(json.dumps(config))
    check(report.labels == ["DAS+mean+emb", "CL"], "matrix regimes in config order")
    runs = report.srcc_runs("CL")
    check(abs(report.summary("CL")["srcc_mean"] - sum(runs) / 2) < 1e-12, "summary mean matches runs")
    again = ls.run_matrix(json.dumps(config), jobs=2)
    check(again.to_json() == report.to_json(), "matrix is deterministic across job counts")
    check(report.to_markdown().startswith("| Model |"), "markdown table")
    print("smoke test passed")


if __name__ == "__main__":
    main()
