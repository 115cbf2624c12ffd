"""Smoke test for the fastab extension module.

Build and install first, e.g. ``pip install ./crates/python``, then run
``python python/smoke_test.py``.
"""

import json
import math
import tempfile

import fastab


def check(label, ok):
    print(("PASS " if ok else "FAIL ") + label)
    return ok


def main():
    results = []

    model = fastab.Model([[-1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]])
    results.append(check("model dimensions", (model.state_dim, model.obs_dim) == (2, 2 - 1)))
    results.append(check("unstable-only pair is detectable", model.is_detectable()))

    prior = fastab.Gaussian([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    path = fastab.simulate_from_prior(model, prior, 1e-2, 5.0, 7)
    results.append(check("path length", len(path) == 501 and len(path.times) == 501))
    again = fastab.simulate_from_prior(model, prior, 1e-2, 5.0, 7)
    results.append(check("simulation is deterministic", path.checksum() == again.checksum()))

    kb = fastab.kalman_bucy(path, prior, model)
    pf = fastab.particle_filter(path, prior, model, 2000, 3)
    rel = math.dist(kb["means"][-1], pf["means"][-1]) / (1.0 + math.hypot(*kb["means"][-1]))
    results.append(check("particle mean tracks Kalman-Bucy", rel < 0.02))

    are = fastab.solve_are(model)
    p22 = are["p_inf"][1][1]
    results.append(check("ARE scalar root", abs(p22 - (1.0 + math.sqrt(2.0))) < 1e-8))

    a = fastab.Gaussian([0.0], [[1.0]])
    b = fastab.Gaussian([3.0], [[4.0]])
    results.append(check("1-D Gaussian W2", abs(fastab.w2_gaussian(a, b) - math.sqrt(10.0)) < 1e-12))
    pts = [[float(i)] for i in range(8)]
    shifted = [[x + 0.5] for (x,) in pts]
    results.append(check("empirical W2 of a shift", abs(fastab.w2_empirical(pts, shifted) - 0.5) < 1e-12))

    report = fastab.app2d("unstable_only", t_end=10.0, dt=1e-2, seed=1)
    results.append(check("app2d unstable_only stabilizes", report["stabilized"]))
    report = fastab.app2d("stable_only", t_end=10.0, dt=1e-2, seed=1)
    results.append(check("app2d stable_only does not", not report["stabilized"]))

    times, values = fastab.error_growth_curve("leith", 5.0, 1e-2)
    fit = fastab.fit_error_model("leith", times, values)
    results.append(check("Leith fit recovers alpha", abs(fit["params"]["alpha"] - 1.0) < 1e-2))

    cfg = fastab.parse_config(json.dumps({"experiment": "app2d", "numerics": {"seed": 1}}))
    results.append(check("config defaults", cfg["numerics"]["dt"] == 1e-3 and cfg["numerics"]["T"] == 30.0))
    try:
        fastab.parse_config(json.dumps({"experiment": "app2d"}))
        results.append(check("missing seed rejected", False))
    except fastab.FastabError as e:
        results.append(check("missing seed rejected", "seed" in str(e)))

    with tempfile.TemporaryDirectory() as d:
        code, files = fastab.run_config(json.dumps({"experiment": "error-growth", "numerics": {"seed": 1, "T": 5}}), d)
        results.append(check("run_config writes a manifest", code == 0 and "manifest.json" in files))

    print(f"{sum(results)}/{len(results)} checks passed")
    raise SystemExit(0 if all(results) else 1)


if __name__ == "__main__":
    main()
