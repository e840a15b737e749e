import csv
import json
import math

import numpy as np
import pytest

import hfl


def test_sphere_and_gegenbauer():
    X = hfl.sample_sphere(8, 100, 0)
    assert X.shape == (100, 8)
    assert np.allclose(np.linalg.norm(X, axis=1), math.sqrt(8))
    assert hfl.gegenbauer(2, 4, 0.0) == pytest.approx(-1.0 / 3.0)
    assert np.allclose(hfl.gegenbauer(3, 8, np.array([8.0, -8.0])), [1.0, -1.0])
    assert hfl.harmonic_dim(8, 2) == 35
    terms = dict(hfl.linearize_product(1, 1, 8))
    assert terms[0] == pytest.approx(1 / 8)
    assert terms[2] == pytest.approx(7 / 8)


def test_errors_are_typed():
    with pytest.raises(hfl.OverflowError):
        hfl.harmonic_dim(10**6, 16)
    with pytest.raises(ValueError):
        hfl.make_sign_features(6)
    spec = hfl.ActivationSpec.q2(8)
    V = hfl.sample_sphere(8, 16, 0)
    with pytest.raises(hfl.SingularHessian) as info:
        hfl.build_Bstar(hfl.make_sign_features(8), np.zeros((3, 3)), V, spec)
    assert isinstance(info.value, hfl.HflError)


def test_features_and_target():
    F = hfl.make_sign_features(8)
    assert F.r == 3 and F.is_diagonal
    assert np.allclose(F.gram(), np.eye(3), atol=1e-12)
    X = hfl.sample_sphere(8, 2000, 1)
    P = F(X)
    assert P.shape == (2000, 3)
    g = hfl.LinkPolynomial.power_sum(3, 4)
    H, se = hfl.expected_hessian(g)
    assert np.allclose(H, 12 * np.eye(3))
    f = hfl.make_standard_target(8, 4, F, n_cal=1 << 14, seed=0)
    y = f(X)
    assert abs(y.mean()) < 0.2 and abs(y.std() - 1) < 0.2


def test_network_and_training():
    d, m1, m2 = 8, 32, 64
    spec = hfl.ActivationSpec.q2(d)
    eps = hfl.default_epsilon(spec, 256, m1, m2)
    theta = hfl.init_network(d, m1, m2, eps, 3, spec)
    X = hfl.sample_sphere(d, 50, 4)
    assert np.max(np.abs(hfl.forward(theta, X))) < 1e-12

    F = hfl.make_sign_features(d)
    f = hfl.make_standard_target(d, 2, F, n_cal=1 << 14, seed=0)
    D1 = hfl.make_dataset(f, 256, 5)
    state = hfl.stage1_step(theta, D1)
    assert state.W1_unit.shape == (m1, m2)
    h1 = hfl.compute_h1(state, X)
    assert h1.shape == (50, m2)

    cfg = hfl.TrainConfig()
    cfg.lambda2 = 1e-4
    D2 = hfl.make_dataset(f, 256, 6)
    b = hfl.reinit_bias(m1, 7)
    model = hfl.stage2_train(state, b, D2, cfg, f)
    assert model.method == "alg1"
    assert np.allclose(model.predict(X), hfl.forward(model.as_network(theta), X), atol=1e-10)
    err = hfl.test_error(model, f, 500, 8)
    assert err["n"] == 500 and err["mse"] > 0


def test_reconstruction_and_universality():
    d, m2 = 8, 256
    spec = hfl.ActivationSpec.q2(d)
    theta = hfl.init_network(d, 16, m2, 0.01, 0, spec)
    F = hfl.make_sign_features(d)
    B = hfl.build_Bstar(F, 2 * np.eye(3), theta.V, spec)
    assert B.Bstar.shape == (3, m2)
    W = np.diag(np.arange(d, dtype=float) - (d - 1) / 2)
    assert hfl.t_star(F, np.eye(3), W).shape == (d, d)
    assert hfl.analytic_kernel(float(d), spec) == pytest.approx(1 / hfl.harmonic_dim(d, 2))
    rng = np.random.default_rng(0)
    assert hfl.w1_to_standard_normal(list(rng.standard_normal(20000))) < 0.03
    r = hfl.sliced_w1(F, 4000, L=8, seed=1)
    assert r["features"] > 0 and r["floor"] > 0


def test_experiment_outputs(tmp_path):
    overlay = """
d_grid: [8]
n_grid: [64, 128]
m1: 16
m2: 32
seeds: [0]
n_test: 200
n_cal: 4096
timing: false
"""
    out = tmp_path / "compare"
    hfl.run_experiment("compare", str(out), overlay)
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} == {"alg1", "rf"}
    assert len(rows) == 4
    for r in rows:
        assert float(r["test_mae"]) > 0
        assert r["config_hash"] == hfl.config_hash("compare", overlay)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == hfl.config_hash("compare", overlay)
    assert (out / "trace.csv").exists()

    defaults = json.loads(hfl.config_defaults("universality"))
    assert defaults["experiment"] == "universality"


def test_verify_checks():
    results = hfl.run_verify()
    assert results and all(ok for _, ok, _ in results)
