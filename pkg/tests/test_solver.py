import csv

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from oracles import active_set_optimum, grid_search_min, objective
from vcd.forward import EyeModel, PrefilterMatrix, SceneGeometry, build_prefilter_matrix
from vcd.optics import LightField4D, LightFieldGrid
from vcd.solver import (PrefilterResult, SolverOptions, initial_guess, projected_gradient_norm,
                        solve_prefilter, spectral_norm, write_residual_csv)

TIGHT = SolverOptions(max_iterations=20000, relative_residual_tolerance=1e-12)


def tiny(A):
    """Operator with ``A``'s weights, one retinal column, one angular axis."""
    A = np.atleast_2d(np.asarray(A, float))
    rows, cols = A.shape
    grid = LightFieldGrid(1, 1, 1, cols, 1e-3, 0.1)
    return PrefilterMatrix(sp.csr_matrix(A), (rows, 1), grid, np.ones(rows, int), 1)


def solve_tiny(A, b, opts=TIGHT, **kw):
    b = np.asarray(b, float)
    return solve_prefilter(tiny(A), b.reshape(-1, 1), opts, **kw)


# examples -----------------------------------------------------------------

def test_permutation_is_solved_exactly():
    rng = np.random.default_rng(1)
    perm = rng.permutation(16)
    A = np.eye(16)[perm]
    grid = LightFieldGrid(2, 2, 2, 2, 1e-3, 0.1)
    P = PrefilterMatrix(sp.csr_matrix(A), (4, 4), grid, np.ones(16, int), 1)
    target = rng.random((4, 4, 1))
    res = solve_prefilter(P, target)
    assert res.converged and res.iterations_used <= 5
    expected = np.empty(16)
    expected[perm] = target.reshape(-1)
    assert np.allclose(res.L_d.radiance.reshape(-1), expected, atol=1e-4)
    assert res.final_residual <= 1e-4 * np.linalg.norm(target)


def test_underdetermined_pair():
    res = solve_tiny([[0.5, 0.5]], [0.25])
    assert res.final_residual <= 1e-6
    assert res.L_d.radiance.sum() == pytest.approx(0.5, abs=1e-5)
    assert grid_search_min([[0.5, 0.5]], [0.25]) <= 1e-12


def test_infeasible_target_clamps():
    res = solve_tiny([[1.0]], [1.5])
    assert res.L_d.radiance.reshape(-1)[0] == 1.0
    assert res.final_residual == pytest.approx(0.5, abs=1e-12)


def test_initial_guess_examples():
    grid = LightFieldGrid(2, 2, 3, 3, 1e-3, 0.1)
    assert np.all(initial_guess(np.full((2, 2), 0.5), grid).radiance == 0.5)
    assert np.all(initial_guess(np.zeros((2, 2)), grid).radiance == 0)
    img = np.array([[0.1, 0.2], [0.3, 0.4]])
    L = initial_guess(img, grid)
    for a in range(3):
        for b in range(3):
            assert np.array_equal(L.radiance[:, :, a, b, 0], img)


def test_initial_guess_resamples_target():
    grid = LightFieldGrid(2, 2, 1, 1, 1e-3, 0.1)
    L = initial_guess(np.kron(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 2))), grid)
    assert np.allclose(L.radiance[..., 0, 0, 0], [[0, 1], [1, 0]])


def test_input_validation():
    P = tiny([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        solve_prefilter(P, np.zeros((3, 1)))
    with pytest.raises(ValueError):
        solve_prefilter(P, np.array([[np.nan], [0.0]]))
    with pytest.raises(ValueError):
        solve_prefilter(tiny([[0.0, 0.0]]), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)
    with pytest.raises(ValueError):
        SolverOptions(relative_residual_tolerance=0)


def test_spectral_norm_matches_svd():
    A = np.random.default_rng(2).random((6, 4))
    assert spectral_norm(tiny(A), 200) == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)


def test_multichannel_history_is_root_sum_square():
    A = np.random.default_rng(4).random((5, 3))
    P = PrefilterMatrix(sp.csr_matrix(A), (5, 1), LightFieldGrid(1, 1, 1, 3, 1e-3, 0.1),
                        np.ones(5, int), 1)
    b = np.random.default_rng(5).random((5, 1, 3))
    res = solve_prefilter(P, b, SolverOptions(max_iterations=5))
    per = [solve_prefilter(P, b[..., c:c + 1], SolverOptions(max_iterations=5)).residual_history
           for c in range(3)]
    assert res.residual_history[0] == pytest.approx(np.sqrt(sum(h[0] ** 2 for h in per)))
    assert res.L_d.channels == 3


def test_residual_csv(tmp_path):
    path = tmp_path / "r.csv"
    write_residual_csv(path, [3.0, 2.0, 1.5])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "residual"]
    assert [float(r[1]) for r in rows[1:]] == [3.0, 2.0, 1.5]


def test_hyperopic_operator_solve_is_feasible_and_descends():
    eye = EyeModel(0.38, 0.025, 0.006)
    grid = LightFieldGrid(16, 16, 5, 5, 5e-4, 5e-4 * 5 / 3e-3)
    geom = SceneGeometry.matched(eye, 0.25, grid, aperture_samples=(7, 7))
    P = build_prefilter_matrix(eye, geom, grid)
    target = np.random.default_rng(0).random((16, 16, 1))
    seen = []
    res = solve_prefilter(P, target, SolverOptions(max_iterations=100),
                          callback=lambda c, k, x: seen.append((x.min(), x.max())))
    assert all(lo >= 0 and hi <= 1 for lo, hi in seen)
    assert np.all(np.diff(res.residual_history) <= 1e-12)
    assert res.final_residual < res.residual_history[0]


def test_momentum_stall_against_the_box_is_not_convergence():
    # extrapolated steps keep landing on the corner (0, 0, 1); the optimum has x3 < 1
    rng = np.random.default_rng(248685)
    A = rng.random((3, 3))
    b = rng.random(3) * 1.4 - 0.2
    x_star, f_star = active_set_optimum(A, b)
    assert x_star[2] < 0.995
    res = solve_tiny(A, b)
    assert res.converged
    assert objective(A, b, res.L_d.radiance.reshape(-1)) == pytest.approx(f_star, abs=1e-8)


# properties ---------------------------------------------------------------

def small_problem(n_max=4):
    return st.tuples(st.integers(1, 4), st.integers(1, n_max), st.integers(0, 2**32 - 1))


@given(small_problem(), st.booleans())
def test_descent_and_feasibility(shape, momentum):
    rows, cols, seed = shape
    rng = np.random.default_rng(seed)
    A = rng.random((rows, cols)) * (rng.random((rows, cols)) < 0.8)
    if not A.any():
        A[0, 0] = 1.0
    b = rng.random(rows) * 1.5
    iterates = []
    res = solve_tiny(A, b, SolverOptions(max_iterations=300, momentum=momentum),
                     callback=lambda c, k, x: iterates.append(x.copy()))
    hist = np.array(res.residual_history)
    assert np.all(np.diff(hist) <= 1e-12 * max(1.0, hist[0]))
    for x in iterates:
        assert x.min() >= 0.0 and x.max() <= 1.0
    assert isinstance(res, PrefilterResult)


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_kkt_on_solvable_instances(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((n + 2, n)) + np.eye(n + 2, n)
    x_true = rng.random(n)
    res = solve_tiny(A, A @ x_true, SolverOptions(max_iterations=5000))
    x = res.L_d.radiance.reshape(-1)
    assert projected_gradient_norm(tiny(A), A @ x_true, x) <= 1e-3 * np.sqrt(n)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_matches_grid_search_small(cols, rows, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((rows, cols))
    b = rng.random(rows) * 1.4 - 0.2
    res = solve_tiny(A, b)
    f_solver = objective(A, b, res.L_d.radiance.reshape(-1))
    assert abs(f_solver - grid_search_min(A, b)) <= 1e-4


@given(st.integers(4, 6), st.integers(0, 2**32 - 1))
def test_matches_grid_search_four_unknowns(rows, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((rows, 4)) + 0.5 * np.eye(rows, 4)
    b = rng.random(rows) * 2.0 - 0.3
    res = solve_tiny(A, b)
    f_solver = objective(A, b, res.L_d.radiance.reshape(-1))
    assert abs(f_solver - grid_search_min(A, b)) <= 1e-4
    assert f_solver == pytest.approx(active_set_optimum(A, b)[1], abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_grid_oracle_agrees_with_brute_force(seed):
    rng = np.random.default_rng(seed)
    A = rng.random((5, 4)) + 0.5 * np.eye(5, 4)
    b = rng.random(5) * 2.0 - 0.3
    step = 0.05
    t = np.arange(0, 1 + step / 2, step)
    pts = np.stack(np.meshgrid(t, t, t, t, indexing="ij"), -1).reshape(-1, 4)
    brute = (((b - pts @ A.T)) ** 2).sum(axis=1).min()
    assert grid_search_min(A, b, step) == pytest.approx(brute, abs=1e-12)
