import json
import math
import os

import numpy as np
import pytest

import psmp


def test_grid_and_measures():
    g = psmp.build_grid(1.0, 0.25, 16)
    assert g.n_delay == 4
    assert g.dt == pytest.approx(1 / 16)
    assert len(g.nodes()) == 16 + 2 * 4 + 1
    mu = psmp.measure_from_offsets(g, [-4, 0], [0.3, 0.7])
    assert mu.total_mass() == pytest.approx(1.0)
    assert len(psmp.trapezoid_lebesgue(g)) == 5
    with pytest.raises(ValueError):
        psmp.build_grid(1.0, 0.3, 16)


def test_kernel_duality_and_transpose():
    g = psmp.build_grid(1.0, 0.25, 12)
    mu = psmp.measure_from_offsets(g, [-3, -1, 0], [0.5, 1.0, 0.25])
    k = psmp.Kernel(g, mu, 2, 3, 0, 12)
    rng = np.random.default_rng(3)
    for n in range(13):
        for a in range(3):
            k.set(n, a, rng.standard_normal((2, 3)))
    Z = rng.standard_normal((3, 13 - k.in_first))
    Q = rng.standard_normal((2, 13))
    lhs, rhs, r = psmp.duality_residual(k, Z, k.in_first, Q, 0)
    assert r <= 1e-12
    assert lhs == pytest.approx(rhs, rel=1e-12)
    star = k.apply_star(Q, 0)
    dense = k.dense()
    assert np.allclose(star.flatten(order="F"), dense.T @ Q.flatten(order="F"), rtol=1e-12, atol=1e-12)


def test_config_validation_and_hash():
    cfg = psmp.normalize_config({"scenario": "nonlinear_delay"})
    assert cfg["scenario"] == "nonlinear_delay"
    assert psmp.config_hash(cfg) == psmp.config_hash({"scenario": "nonlinear_delay"})
    with pytest.raises(psmp.ValidationError, match="measures.mu1"):
        psmp.normalize_config({"measures": {"mu1": [[0.0, -1.0]]}})
    with pytest.raises(ValueError, match="unknown key"):
        psmp.normalize_config({"bogus": 1})


def test_identity_suites():
    rows = psmp.identity_suites(5)
    assert {r["name"] for r in rows} >= {"duality", "change_of_variables", "adjoint_vs_transpose"}
    assert all(r["pass"] for r in rows)


def test_deterministic_gradient_check():
    cfg = {"scenario": "lq_basic", "grid": {"n_steps": 16}, "coefficients": {"noise": False},
           "checks": {"rhos": [1e-3]}}
    rep = psmp.grad_check(cfg)
    row = rep["rows"][0]
    assert abs(row["central"] - row["pairing"]) <= 1e-6 * abs(row["pairing"])
    assert abs(row["yhat0"] - row["pairing"]) <= 1e-8 * abs(row["pairing"])


def test_run_writes_artifacts(tmp_path):
    cfg = {"scenario": "lq_basic", "grid": {"n_steps": 16}, "coefficients": {"noise": False},
           "optimizer": {"tol": 1e-6, "max_iter": 500}}
    s = psmp.run(cfg, str(tmp_path))
    assert s["converged"]
    assert s["J"] <= s["J0"]
    assert s["qp_gap"] is not None and s["qp_gap"] <= 1e-4
    for name in ("trace.csv", "control.csv", "gradcheck.csv", "identities.csv", "manifest.json", "plot_long.csv"):
        assert os.path.exists(tmp_path / name)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == psmp.config_hash(cfg)
    assert math.isfinite(manifest["summary"]["J"])
