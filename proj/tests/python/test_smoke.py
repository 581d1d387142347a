import json

import numpy as np
import pytest

import odebayes as ob


def test_version_and_models():
    assert ob.__version__
    assert "example1" in ob.builtin_models()
    info = ob.model_info("example2")
    assert info["state_dim"] == 2 and info["param_dim"] == 2 and info["has_solution"]


def test_basis_partition_of_unity():
    kv = ob.KnotVector(8, 5)
    assert kv.dimension == 12
    for t in np.linspace(0.0, 1.0, 101):
        assert abs(ob.eval_basis(kv, t).sum() - 1.0) < 1e-12
    X = ob.design_matrix(kv, ob.midpoint_design(50))
    assert X.shape == (50, 12)


def test_psi_identity():
    eta = np.array([0.7, -1.3])
    assert np.allclose(ob.psi_solution("example2", eta), eta, atol=1e-6)


def test_coeff_posterior_matches_numpy():
    kv = ob.KnotVector(5, 4)
    x = ob.midpoint_design(40)
    rng = np.random.default_rng(0)
    Y = np.sin(3 * np.asarray(x))[:, None] + 0.1 * rng.standard_normal((40, 1))
    mean, cov = ob.coeff_posterior(kv, x, Y, 0.5)
    X = ob.design_matrix(kv, x)
    # conjugate update with prior N(0, (n/k) (X^T X)^{-1}), k = k_n
    prec = X.T @ X / 0.5 + (5 / 40) * X.T @ X
    post_cov = np.linalg.inv(prec)
    assert np.allclose(cov, post_cov, rtol=1e-9)
    assert np.allclose(mean, post_cov @ X.T @ Y / 0.5, rtol=1e-9, atol=1e-12)


def test_intervals_and_two_step():
    cfg = {"n": [200], "draws": 200, "bootstrap": 50}
    x, Y = ob.simulate_data(cfg, 200, 1)
    assert len(x) == 200 and Y.shape == (200, 1)
    theta = ob.frequentist_two_step(cfg, x, Y)
    bayes = ob.bayes_interval(cfg, x, Y, seed=5)
    boot = ob.bootstrap_interval(cfg, x, Y, seed=5)
    assert bayes["valid"] and boot["valid"]
    assert bayes["draws"].shape == (200, 1)
    lo, hi = bayes["intervals"][0]
    assert lo < hi
    assert abs(theta[0] - 1.0) < 2.0
    again = ob.bayes_interval(json.dumps(cfg), x, Y, seed=5)
    assert np.array_equal(again["draws"], bayes["draws"])


def test_run_study_is_deterministic():
    cfg = {"n": [50, 100], "replications": 4, "draws": 50, "bootstrap": 30}
    a, meta = ob.run_study(cfg)
    b, _ = ob.run_study(cfg, jobs=2)
    assert a == b
    assert a.splitlines()[0] == "model,case,n,method,coord,coverage,coverage_se,length,length_se,R_valid"
    assert len(a.splitlines()) == 1 + 2 * 2
    assert meta["reduced_scale"] is True
    assert meta["config_hash"] == ob.config_hash(cfg)


def test_asymptotics_report():
    r = ob.asymptotics({"sigma2": {"mode": "fixed", "value": 1.0}, "draws": 500}, 500)
    assert r["covariance"].shape == (1, 1) and r["covariance"][0, 0] > 0
    assert 0.0 <= r["tv"] <= 1.0


def test_dataset_round_trip(tmp_path):
    x, Y = ob.simulate_data({"model": "example2"}, 30, 2)
    path = str(tmp_path / "d.csv")
    ob.write_dataset(path, x, Y)
    x2, Y2 = ob.read_dataset(path)
    assert list(x2) == list(x) and np.array_equal(Y2, Y)


def test_errors_carry_categories(tmp_path):
    with pytest.raises(ob.Error) as e:
        ob.canonical_config('{"bogus": 1}')
    assert e.value.category == "parse"
    bad = tmp_path / "bad.csv"
    bad.write_text("t,y1\n0.5,x\n")
    with pytest.raises(ob.Error) as e:
        ob.read_dataset(str(bad))
    assert e.value.category == "parse" and ":2:" in str(e.value.args[0])
    with pytest.raises(ob.Error) as e:
        ob.KnotVector(0, 5)
    assert e.value.category == "invalid-argument"
