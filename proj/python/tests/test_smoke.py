import os
from pathlib import Path

import numpy as np
import pytest

import dmhe

DATA = Path(os.environ.get("DMHE_DATA_DIR", Path(__file__).resolve().parents[2] / "configs"))


def test_fusion_identity():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=3), rng.normal(size=2)
    G = rng.normal(size=(3, 3))
    A = G @ G.T + 0.5 * np.eye(3)
    B = np.diag([0.4, 0.7])
    C = rng.normal(size=(2, 3))
    f = dmhe.fuse_quadratics(a, A, C, b, B)
    x = rng.normal(size=3)
    lhs = (x - a) @ np.linalg.solve(A, x - a) + (C @ x - b) @ np.linalg.solve(B, C @ x - b)
    rhs = (x - f.sigma) @ np.linalg.solve(f.H, x - f.sigma) + f.pi
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_woodbury_matches_inverse():
    A = np.diag([2.0, 3.0])
    B = np.array([[1.0], [0.5]])
    C = np.array([[0.2, 1.0]])
    D = np.array([[1.5]])
    np.testing.assert_allclose(dmhe.woodbury_inverse(A, B, C, D),
                               np.linalg.inv(A + B @ D @ C), atol=1e-12)


def test_linear_run_converges_and_ledger_is_monotone():
    model = dmhe.load_linear_model(str(DATA / "linear_model.yaml"))
    assert model.partition.n == 2
    x0 = np.array([1.0, -0.5, 0.8, 0.3])
    states, ys = dmhe.simulate_linear(model, x0, 60)
    assert states.shape == (60, 4)
    coord = dmhe.Coordinator(model, np.zeros(4), dmhe.Variant.proposed, 4)
    est = np.array([coord.advance(y) for y in ys])
    assert coord.instant == 60
    assert np.linalg.norm(est[-1] - states[-1]) < 1e-4 * np.linalg.norm(est[0] - states[0])
    assert np.all(np.diff(coord.ledger) >= -1e-8)
    assert dmhe.compute_rmse(states, states) == 0.0


def test_stability_report():
    model = dmhe.load_linear_model(str(DATA / "linear_model.yaml"))
    rep = dmhe.stability_report(model, 4)
    assert rep.rho_available and rep.rho < 1.0
    assert rep.assumption1_holds_at_prior
    assert "rho" in str(rep)


def test_experiment_writes_reports(tmp_path):
    cfg = dmhe.load_experiment_config(str(DATA / "linear_experiment.yaml"))
    cfg.T = 20
    cfg.seeds = [1]
    cfg.output_dir = str(tmp_path)
    runs = dmhe.run_experiment(cfg)
    assert len(runs) == 1 and runs[0].error == "" and runs[0].completed == 20
    assert (tmp_path / "rmse.csv").exists()
    rows = dmhe.run_comparison(cfg)
    assert [r.label for r in rows] == ["proposed", "dmhe1", "dmhe2", "fie"]


def test_errors_surface_as_python_exceptions():
    with pytest.raises(dmhe.ConfigError):
        dmhe.parse_experiment_config("plant: linear\nN: 0\nplant_file: x.yaml\n").validate()
    with pytest.raises(ValueError):
        dmhe.parse_variant("nonsense")
    model = dmhe.load_linear_model(str(DATA / "linear_model.yaml"))
    coord = dmhe.Coordinator(model, np.zeros(4))
    with pytest.raises(ValueError):
        coord.advance(np.zeros(5))
