"""Smoke test for the pyhdwalk extension module.

Build and install first, e.g. ``pip install --no-build-isolation ./crates/py``.
"""

import json
import math

import pyhdwalk as hw


def check_lattices():
    x = hw.Lattice([[2.0, -1.0], [0.0, 0.5]])
    vec, length = x.shortest_vector("euclidean")
    assert abs(length - 1.0) < 1e-12, length
    assert x.same_lattice(x.reduced())
    assert hw.Lattice.standard(2).siegel_counts([1.0, 1.5]) == [4, 8]


def check_exponents():
    diag = hw.Chain.preset("diag-2-half")
    spec = hw.lyapunov_spectrum(diag, steps=200, replicas=2, seed=0)
    est = spec["exponent_estimates"]
    assert abs(est[0] - math.log(2)) < 1e-12 and abs(est[1] + math.log(2)) < 1e-12
    sl3 = hw.Chain.preset("sl3-example")
    v = [0.0] * 8
    v[1] = 1.0  # coordinate line E_13
    rate, se = hw.vector_growth_rate(sl3, v, steps=500, replicas=2, seed=1, representation="adjoint")
    assert abs(rate - math.log(18)) < 1e-9 and se == 0.0, (rate, se)
    verdict = hw.expansion_check(hw.Chain.preset("identity-2"), k=1, steps=200, samples=20, seed=0)
    assert verdict["verdict"] == "counterexample"


def check_groups():
    g = hw.aku_compose(0.7, [[1.0]], [[1.0]], [[0.25]])
    p = hw.aku_decompose(g, 1, 1)
    assert abs(p["t"] - 0.7) < 1e-12 and abs(p["alpha"][0][0] - 0.25) < 1e-12
    w = hw.wedge_power([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]], 2)
    assert len(w) == 3


def check_walk():
    chain = hw.Chain.preset("block-two-state")
    out = hw.walk(chain, steps=2000, replicas=2, seed=3)
    assert out["accumulator"]["step_count"] == 4000
    assert len(out["report"]["siegel"]) == 3


def check_fractals():
    cantor = hw.Gdifs.preset("cantor-middle-thirds")
    assert abs(cantor.hausdorff_dimension() - math.log(2) / math.log(3)) < 1e-9
    golden = hw.Gdifs.preset("two-vertex-golden")
    assert abs(golden.hausdorff_dimension() - math.log2((1 + 5 ** 0.5) / 2)) < 1e-9
    pts = cantor.wang_cf_digits(4, 10, seed=0)
    assert len(pts) == 4 and all(len(d) == 10 for _, d in pts)
    res = cantor.magic_formula(5, 20, seed=0)
    assert max(r["residual"] for r in res) < 1e-6
    assert hw.cf_digits("2/7", 10) == [3, 2]
    curve = hw.direct_dioph_search([["1/2"]], 16)
    assert curve[-1][1] == 0.0
    rep = hw.trajectory_report([["13/21"]], t_max=5.0)
    assert rep["trajectory_min_shortest"] > 0


def check_runner():
    config = {
        "schema_version": 1,
        "kind": "lyapunov",
        "spec": {"preset": "diag-2-half"},
        "seed": 1,
        "replicas": 2,
        "steps": 100,
        "thresholds": {"exponents": [math.log(2), -math.log(2)]},
    }
    doc = hw.run_config(json.dumps(config))
    assert doc["passed"] is True
    assert doc == hw.run_config(json.dumps(config))
    try:
        hw.run_config(json.dumps({**config, "seed": None}))
    except ValueError:
        pass
    else:
        raise AssertionError("missing seed accepted")
    assert "cantor-middle-thirds" in hw.preset_names()


if __name__ == "__main__":
    for check in (check_lattices, check_exponents, check_groups, check_walk, check_fractals, check_runner):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
