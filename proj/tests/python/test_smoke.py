import itertools
import json
import os
import subprocess

import numpy as np
import pytest

import nioc


def test_enumerate_indices_order():
    assert nioc.enumerate_indices(2, 1) == [[0, 0], [0, 1], [1, 0]]
    assert len(nioc.enumerate_indices(3, 4)) == 35


def test_monomials():
    v = nioc.monomials(2, np.array([2.0, 3.0]))
    np.testing.assert_allclose(v, [1, 3, 2, 9, 6, 4])


def test_deconv_matrix():
    D = nioc.deconv_matrix(1, 2, 0.05)
    np.testing.assert_allclose(D, [[1, 0, 0], [0, 1, 0], [0.0025, 0, 1]], atol=1e-15)
    E = nioc.deconv_matrix(2, 6, 0.3)
    assert np.allclose(np.diag(E), 1.0)
    assert np.allclose(np.triu(E, 1), 0.0)


def test_riccati_matches_scipy():
    scipy_linalg = pytest.importorskip("scipy.linalg")
    theta = np.array([0.3, 0.5, 0.8])
    alpha = 0.9
    P, K = nioc.linear_riccati(theta, alpha)
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    Q = np.diag(theta[:2])
    R = np.array([[theta[2]]])
    ref = scipy_linalg.solve_discrete_are(np.sqrt(alpha) * A, np.sqrt(alpha) * B, Q, R)
    np.testing.assert_allclose(P, ref, rtol=1e-8)
    K_ref = np.linalg.solve(R + alpha * B.T @ ref @ B, alpha * B.T @ ref @ A)
    np.testing.assert_allclose(K, K_ref, rtol=1e-8)


def test_grid_program_matches_cvxpy():
    cp = pytest.importorskip("cvxpy")
    theta = np.array([0.5, 0.5, 0.7])
    m, _ = nioc.oracle_moments("linear", theta, 2, 2, N=10, M=500, seed=3)
    prog = nioc.Program("linear", 2, 2, m, mode="grid", grid_points=5)
    ours = prog.solve()
    assert ours["status"] == "optimal"

    axes = [np.linspace(lo, hi, 5) for lo, hi in zip(prog.lower, prog.upper)]
    pts = np.array(list(itertools.product(*axes)))
    Xi, E = prog.Xi, prog.eval_basis(pts)
    n_ell = prog.n_ell
    t = cp.Variable(Xi.shape[1])
    cons = [
        cp.norm1(t[:n_ell]) <= 10.0,
        cp.norm1(t[n_ell:]) <= 100.0,
        prog.d @ Xi @ t >= 1.0,
        E @ Xi @ t >= 0.0,
    ]
    problem = cp.Problem(cp.Minimize(prog.m_hat @ Xi @ t), cons)
    problem.solve()
    assert problem.status == "optimal"
    assert abs(problem.value - ours["objective"]) <= 1e-5 * max(1.0, abs(problem.value))


def test_sos_program_recovers_cost():
    theta = np.array([0.5, 0.5, 0.7])
    m, _ = nioc.oracle_moments("linear", theta, 2, 2, N=10, M=1000, seed=4)
    sol = nioc.Program("linear", 2, 2, m).solve()
    assert sol["status"] == "optimal"
    assert abs(sol["objective"]) < 1e-3
    np.testing.assert_allclose(sol["theta_ell_normalized"], theta / np.linalg.norm(theta), atol=0.05)


def test_pipeline_from_python(tmp_path):
    cfg = nioc.Config()
    cfg.system = "linear"
    cfg.M = 64
    cfg.seed = 2
    cfg.output_dir = str(tmp_path)
    data = nioc.simulate(cfg)
    moments = nioc.estimate(data, cfg)
    sol = json.loads(open(nioc.solve(moments, cfg)).read())
    assert sol["status"] == "optimal"
    assert len(sol["theta_ell"]) == 3
    with pytest.raises(ValueError):
        cfg.mode = "lp"


@pytest.mark.skipif("NIOC_CLI" not in os.environ, reason="NIOC_CLI not set")
def test_cli_chain(tmp_path):
    cli = os.environ["NIOC_CLI"]
    common = ["--system", "linear", "--seed", "3", "--M", "32", "--out", str(tmp_path)]
    out = subprocess.run([cli, "simulate", *common], check=True, capture_output=True, text=True)
    data = out.stdout.strip()
    header = open(data).readline().strip()
    assert header == "traj,t,y_0,y_1,y_2"
    out = subprocess.run([cli, "estimate", data, *common], check=True, capture_output=True, text=True)
    mom = json.loads(open(out.stdout.strip()).read())
    assert mom["basis"] == {"dim": 3, "degree": 2, "order": "grlex-rightmost"}
    out = subprocess.run([cli, "solve", out.stdout.strip(), *common, "--mode", "grid"],
                         check=True, capture_output=True, text=True)
    sol = json.loads(open(out.stdout.strip()).read())
    assert sol["status"] == "optimal"
    bad = subprocess.run([cli, "simulate", "--system", "pendulum"], capture_output=True, text=True)
    assert bad.returncode != 0
