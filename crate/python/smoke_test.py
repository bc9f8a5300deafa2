"""Smoke test of the Python bindings.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import json
import math
import os
import random
import tempfile

import sambg


def check(cond, what):
    if not cond:
        raise AssertionError(what)
    print(f"ok  {what}")


def main():
    check(sambg.SCHEMA_VERSION == 1, "schema version exposed")

    cfg = sambg.Config(json.dumps({
        "seeds": [0], "folds": 2,
        "data": {"synth": {"n_subjects": 40}},
        "pretrain": {"optim": {"epochs": 2}},
        "ssl": {"optim": {"epochs": 2}},
        "probe": {"epochs": 20},
    }))
    check(cfg.folds == 2 and cfg.schema_version == 1, "config parses")
    try:
        sambg.Config('{"betta": 1}')
        check(False, "unknown keys rejected")
    except sambg.SambgError as e:
        check("betta" in str(e), "unknown keys rejected")

    ds = sambg.load_dataset(cfg)
    check(len(ds) == 40 and len(ds.motif_edges) == 10, "synthetic cohort generated")
    adj = ds.adjacency(0)
    check(len(adj) == 20 and all(adj[i][i] == 0.0 for i in range(20)), "adjacency has zero diagonal")

    rng = random.Random(0)
    series = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(30)]
    c = sambg.pearson_connectivity(series)
    check(all(abs(c[i][j] - c[j][i]) == 0 for i in range(4) for j in range(4)), "pearson symmetric")

    for b in (2, 4, 8, 16):
        eye = [[1.0 / b if i == j else 0.0 for j in range(b)] for i in range(b)]
        check(abs(sambg.renyi_entropy(eye, 2.0) - math.log2(b)) < 1e-12, f"uniform entropy log2 {b}")

    x = [[rng.gauss(0, 1) for _ in range(3)] for _ in range(16)]
    y = [[rng.gauss(0, 1) for _ in range(3)] for _ in range(16)]
    check(sambg.mutual_information(x, y) == sambg.mutual_information(y, x), "mi symmetric")
    check(sambg.cca_loss(x, x) < sambg.cca_loss(x, y), "cca prefers aligned views")
    check(sambg.auc([0.1, 0.4, 0.4, 0.9], [0, 0, 1, 1]) == 0.875, "auc with ties")

    metrics, state, log = sambg.run_fold(cfg, "full", 0, 0)
    check(dict(metrics).keys() == {"acc", "auc", "recall", "f1"}, "run_fold metrics")
    check([r[1] for r in log] == ["pretrain"] * 2 + ["ssl"] * 2, "train log phases")
    check(state.stage == "ssl" and state.has_masker, "state after self-supervision")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        state.save(path)
        check(sambg.ModelState.load(path) == state, "checkpoint round trip")

    z = state.embed(ds.adjacency(1), ds.features(1))
    check(len(z) == 32 and all(math.isfinite(v) for v in z), "embedding")

    a = json.loads(sambg.run_cv(cfg, "vanilla"))
    b = json.loads(sambg.run_cv(cfg, "vanilla"))
    check(a == b and len(a["metrics"]["acc"]["raw"]) == 2, "cross-validation deterministic")

    checks = sambg.gradcheck(2, 0)
    check(all(ok for _, _, ok in checks), f"{len(checks)} gradient checks pass")
    print("smoke test passed")


if __name__ == "__main__":
    main()
