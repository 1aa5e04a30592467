import math

import numpy as np
import pytest
import scipy.sparse as sp

from ulamflow.cocycle import rolling_windows, truncated_svd, window_product
from ulamflow.diagnostics import (animate_mode, coherence_curve, coherence_log,
                                  equivariance_mismatch, equivariance_series, evolve_mode,
                                  fsm_normalize, read_grid_csv, read_pgm, render_frame, to_grey,
                                  write_equivariance, write_frames)
from ulamflow.tracking import track_by_values, track_by_vectors
from ulamflow.ulam import BinPartition, UlamMatrix

from conftest import dense_matrix, perm_matrix


def test_evolve_zero_steps_is_identity():
    u = np.array([0.6, 0.8, 0.0])
    vec, idx = evolve_mode(u, [perm_matrix([1, 2, 0])], 0, 0)
    assert np.array_equal(vec, u)
    assert list(idx) == [0, 1, 2]


def test_evolve_through_permutation():
    u = np.array([1.0, 0.0, 0.0])
    mats = [perm_matrix([1, 2, 0], float(t)) for t in range(2)]
    vec, _ = evolve_mode(u, mats, 0, 2)
    assert np.array_equal(vec, [0.0, 0.0, 1.0])


def test_evolve_doubly_stochastic_keeps_uniform():
    A = np.full((4, 4), 0.25)
    u = np.full(4, 0.5)
    vec, _ = evolve_mode(u, [dense_matrix(A)] * 3, 0, 3)
    assert np.allclose(vec, u)


def test_evolve_zero_norm_warns():
    with pytest.warns(RuntimeWarning):
        vec, _ = evolve_mode(np.ones(2), [dense_matrix(np.zeros((2, 2)))], 0, 1)
    assert np.all(vec == 0)


def test_coherence_log_permutation_is_zero():
    mats = [perm_matrix([2, 0, 1], float(t)) for t in range(4)]
    assert coherence_log(np.eye(3)[0], mats, 0, 4) == pytest.approx(0.0, abs=1e-15)


def test_coherence_log_scaled():
    c = 0.7
    mats = [dense_matrix(np.eye(3) * c) for _ in range(5)]
    u = np.ones(3) / math.sqrt(3)
    for nt in (1, 3, 5):
        assert coherence_log(u, mats, 0, nt) == pytest.approx(math.log(c), abs=1e-12)
    assert np.allclose(coherence_curve(u, mats, 0, 5), math.log(c))


def test_coherence_log_all_escaped():
    assert coherence_log(np.ones(2), [dense_matrix(np.zeros((2, 2)))], 0, 1) == -math.inf


def test_coherence_log_matches_singular_value():
    rng = np.random.default_rng(0)
    mats = []
    for t in range(4):
        A = rng.random((12, 12)) * (rng.random((12, 12)) < 0.4)
        A = np.floor(A / np.maximum(A.sum(axis=1, keepdims=True), 1.0) * 1000) / 1000
        mats.append(dense_matrix(A, t=float(t)))
    svd = truncated_svd(window_product(mats, 0, 4), 3, n=4)
    for j in range(3):
        rate = coherence_log(svd.U[:, j], mats, 0, 4)
        assert rate == pytest.approx(math.log(svd.s[j]) / 4, abs=1e-10)


def test_mismatch_examples():
    e = np.eye(3)
    assert equivariance_mismatch(e[0], e[0]) == 0.0
    assert equivariance_mismatch(e[0], -e[0]) == 0.0
    assert equivariance_mismatch(e[0], e[1]) == pytest.approx(1.0)
    v = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    assert equivariance_mismatch(v, e[0]) == pytest.approx(math.sqrt(2 - math.sqrt(2)) / math.sqrt(2))


def test_mismatch_on_index_intersection():
    v = np.array([0.0, 3.0, 4.0])
    u = np.array([4.0, 3.0])
    # shared ids 11 and 12 carry (3, 4) and (4, 3)
    val = equivariance_mismatch(v, u, np.array([10, 11, 12]), np.array([11, 12]))
    a = np.array([3.0, 4.0]) / 5
    b = np.array([4.0, 3.0]) / 5
    assert val == pytest.approx(np.linalg.norm(a - b) / math.sqrt(2))
    assert equivariance_mismatch(v, u, np.array([1, 2, 3]), np.array([4, 5])) == 1.0


def test_evolved_left_vector_is_right_vector():
    rng = np.random.default_rng(1)
    mats = []
    for t in range(3):
        A = rng.random((10, 10))
        A = np.floor(A / A.sum(axis=1, keepdims=True) * 1000) / 1000
        mats.append(dense_matrix(A, t=float(t)))
    svd = truncated_svd(window_product(mats, 0, 3), 3, n=3)
    for j in range(3):
        w, _ = evolve_mode(svd.U[:, j], mats, 0, 3)
        assert equivariance_mismatch(w, svd.V[:, j]) <= 1e-6


def test_random_vectors_are_nearly_orthogonal():
    rng = np.random.default_rng(2)
    m = 1024
    vals = []
    for _ in range(500):
        a, b = rng.standard_normal(m), rng.standard_normal(m)
        vals.append(equivariance_mismatch(a / np.linalg.norm(a), b / np.linalg.norm(b)))
    assert np.mean(vals) > 0.98


@pytest.mark.parametrize("diag", [np.ones(6), np.array([1.0, 0.9, 0.8, 0.7, 0.6, 0.5])])
def test_stationary_chain_gives_zero_series(tmp_path, diag):
    mats = [dense_matrix(np.diag(diag), t=float(t), Q=10) for t in range(5)]
    W = rolling_windows(mats, 0.0, 5.0, 2, 3)
    paths = track_by_values(W)
    series = equivariance_series(W, paths, 2)
    assert series.sigma.shape == (3, 2)
    p = tmp_path / "eq.csv"
    write_equivariance(p, series, "abc")
    lines = p.read_text().splitlines()
    assert lines[1] == "method,mode,k,sigma"
    assert len(lines) == 2 + 6
    assert all(float(line.split(",")[-1]) <= 1e-12 for line in lines[2:])


def test_fsm_normalize():
    out, masked = fsm_normalize([1.0, -2.0, 0.0, 3.0], [1.0, 1.0, 0.0, 2.0])
    assert np.allclose(out, [0.5, -1.0, 0.0, 0.75])
    assert not masked.any()
    out, masked = fsm_normalize([1.0, 1.0], [0.5, 0.0])
    assert np.allclose(out, [1.0, 0.0])
    assert masked.tolist() == [False, True]
    out, _ = fsm_normalize(np.zeros(3), np.ones(3))
    assert np.all(out == 0)


def test_render_and_grey():
    part = BinPartition.grid((0, 0), (3, 2), (3, 2))
    grid, lim = render_frame(np.zeros(6), part)
    assert grid.shape == (2, 3)
    assert np.all(to_grey(grid, 1.0) == 128)
    onehot = np.eye(6)[4]
    grid, lim = render_frame(onehot, part)
    g = to_grey(grid, lim)
    assert g[1, 1] == 255
    assert np.count_nonzero(g != 128) == 1
    grid, _ = render_frame(np.array([-1.0, 1.0]), part, limit=1.0, index=np.array([0, 5]))
    assert np.isnan(grid[0, 1])
    g = to_grey(grid, 1.0)
    assert g[0, 0] == 0 and g[1, 2] == 255


def test_animate_and_write(tmp_path):
    part = BinPartition.grid((0, 0), (2, 2), (2, 2))
    mats = [perm_matrix([1, 3, 0, 2], float(t)) for t in range(3)]
    svd = truncated_svd(window_product(mats, 0, 3), 2, n=3)
    frames = animate_mode(svd, mats, 0, 0)
    assert len(frames.frames) == 4
    paths = write_frames(tmp_path, frames, part, k_label=0, j_label=1, config_hash="beef")
    assert paths[0].read_text().startswith("# config_hash beef\n")
    assert [p.name for p in paths] == [f"frame_0_1_{i}.csv" for i in range(4)]
    grid = read_grid_csv(paths[2])
    assert np.allclose(grid.ravel()[frames.indices[2]], frames.frames[2])
    pgm = read_pgm(paths[2].with_suffix(".pgm"))
    assert pgm.shape == (2, 2)
    assert np.array_equal(pgm, to_grey(grid, frames.colour_limit))


def test_animate_growing_domain():
    part = BinPartition.grid((0, 0), (4, 1), (4, 1))
    shift = sp.csr_matrix((np.ones(3, dtype=np.int64), (np.arange(3), np.arange(1, 4))), shape=(4, 4))
    mats = [UlamMatrix(float(t), 1.0, 1, np.arange(4), np.arange(4), shift) for t in range(2)]
    W = rolling_windows(mats, 0.0, 2.0, 2, 1, seed_rows=np.array([0]))
    frames = animate_mode(W[0], mats, 0, 0, growing=True)
    assert [list(i) for i in frames.indices] == [[0], [0, 1], [0, 1, 2]]
    grid, _ = render_frame(frames.frames[2], part, 1.0, frames.indices[2])
    assert grid[0, 2] == pytest.approx(1.0) and np.isnan(grid[0, 3])


def test_vector_tracking_growing_domain():
    rng = np.random.default_rng(3)
    A = rng.random((9, 9)) * (rng.random((9, 9)) < 0.3)
    A = np.floor(A / np.maximum(A.sum(axis=1, keepdims=True), 1.0) * 100)
    A[np.arange(9), np.arange(9)] += 1
    mats = [UlamMatrix(float(t), 1.0, 100, np.arange(9), np.arange(9),
                       sp.csr_matrix(A.astype(np.int64))) for t in range(5)]
    seed = np.array([0, 1, 2, 3])
    W = rolling_windows(mats, 0.0, 5.0, 2, 2, seed_rows=seed)
    T = track_by_vectors(W, mats, seed_rows=seed)
    assert T.ranks.shape == (2, 4)
    series = equivariance_series(W, T, 2)
    assert np.all((series.sigma >= 0) & (series.sigma <= 1))


@pytest.mark.slow
def test_window_75_is_most_coherent(periodic_model, periodic_w50):
    # tracked mode 4 at windows 62, 75 and 90: 75 decays slowest for most n_t
    T = track_by_values(periodic_w50)
    curves = np.array([coherence_curve(periodic_w50[k].U[:, T.ranks[3, k]], periodic_model, k, 50)
                       for k in (62, 75, 90)])
    best = np.argmax(curves[:, 9:], axis=0)
    assert np.count_nonzero(best == 1) > len(best) / 2
