import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulamflow.fields import AnalyticField, ConstantField
from ulamflow.integrate import Domain, FlowSpec
from ulamflow.ulam import (BinPartition, MatrixFileError, build_ulam, growing_chain, read_ulam,
                           restrict, seed_points, write_ulam)


def unit_square(n, periodic=()):
    return BinPartition.grid((0.0, 0.0), (1.0, 1.0), (n, n), periodic)


def test_bin_numbering_first_axis_fastest():
    part = BinPartition.grid((0, 0), (4, 2), (4, 2))
    pts = [[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [3.5, 1.5]]
    assert list(part.bin_of(pts)) == [0, 1, 4, 7]
    assert np.allclose(part.centres([5]), [[1.5, 1.5]])


def test_bin_of_faces_and_outside():
    part = unit_square(4)
    ids = part.bin_of([[0.25, 0.0], [1.0, 1.0], [0.0, 0.0], [-1e-12, 0.5], [0.5, 1.0 + 1e-12]])
    assert list(ids) == [1, 15, 0, -1, -1]


def test_bin_of_periodic_axis_wraps():
    part = unit_square(4, periodic=(True, False))
    assert part.bin_of([[1.1, 0.1]])[0] == part.bin_of([[0.1, 0.1]])[0]
    assert part.bin_of([[-0.1, 0.1]])[0] == 3


def test_lattice_seeds_are_centred():
    part = unit_square(2)
    pts = seed_points(part, 3, 4)
    assert np.allclose(sorted(map(tuple, pts)), [(0.625, 0.625), (0.625, 0.875),
                                                  (0.875, 0.625), (0.875, 0.875)])
    assert set(part.bin_of(seed_points(part, 2, 100))) == {2}


def test_lattice_needs_square_q():
    with pytest.raises(ValueError):
        seed_points(unit_square(2), 0, 10)


def test_rng_seeding_is_reproducible_per_bin():
    part = unit_square(3)
    a = seed_points(part, 4, 50, scheme="rng", seed=7)
    b = seed_points(part, 4, 50, scheme="rng", seed=7)
    c = seed_points(part, 5, 50, scheme="rng", seed=7)
    assert np.array_equal(a, b)
    assert not np.allclose(a - part.lower_corner([4]), c - part.lower_corner([5]))
    assert set(part.bin_of(a)) == {4}


def test_identity_map_gives_identity():
    part = unit_square(5)
    M = build_ulam(FlowSpec(0.0, ConstantField((1.0, 0.0))), part, 0.0, Q=9)
    assert np.array_equal(M.P.toarray(), np.eye(25))


def test_shift_by_one_bin_is_a_permutation():
    part = unit_square(4, periodic=(True, True))
    M = build_ulam(FlowSpec(1.0, ConstantField((0.25, 0.0))), part, 0.0, Q=16)
    D = M.P.toarray()
    expected = np.zeros((16, 16))
    for b in range(16):
        ix, iy = b % 4, b // 4
        expected[b, (ix + 1) % 4 + 4 * iy] = 1.0
    assert np.allclose(D, expected)


def test_everything_escapes_gives_zero_matrix():
    part = unit_square(3)
    M = build_ulam(FlowSpec(1.0, ConstantField((5.0, 0.0))), part, 0.0, Q=4)
    assert M.P.nnz == 0
    assert np.all(M.row_sums() == 0)


def test_half_bin_shift_splits_mass():
    part = unit_square(4)
    M = build_ulam(FlowSpec(1.0, ConstantField((0.125, 0.0))), part, 0.0, Q=16)
    D = M.P.toarray()
    assert D[0, 0] == pytest.approx(0.5) and D[0, 1] == pytest.approx(0.5)
    # right column bins lose half their mass
    assert M.row_sums()[3] == pytest.approx(0.5)


def test_double_well_matrix_properties(dw_partition, periodic_flow):
    M = build_ulam(periodic_flow, dw_partition, 3.0, Q=100)
    rs = M.row_sums()
    assert np.all((rs >= 0) & (rs <= 1 + 1e-15))
    w = M.P.data * 100
    assert np.allclose(w, np.rint(w))
    assert M.P.nnz <= M.shape[0] * 100
    assert np.all(M.counts.data > 0)


def test_double_well_column_sums_near_one(periodic_flow):
    # area preservation: bins that receive mass get about one bin's worth
    part = BinPartition.grid((-np.pi, -np.pi), (np.pi, np.pi), (32, 32))
    M = build_ulam(periodic_flow, part, 0.0, Q=100)
    cs = np.asarray(M.P.sum(axis=0)).ravel()
    hit = cs > 0
    assert np.mean(np.abs(cs[hit] - 1.0)) < 0.1


def test_refinement_is_consistent(periodic_flow):
    # coarse-graining the fine matrix reproduces mass leaving each coarse bin
    coarse = BinPartition.grid((-np.pi, -np.pi), (np.pi, np.pi), (8, 8))
    fine = BinPartition.grid((-np.pi, -np.pi), (np.pi, np.pi), (16, 16))
    Mc = build_ulam(periodic_flow, coarse, 0.0, Q=100)
    Mf = build_ulam(periodic_flow, fine, 0.0, Q=100)
    parent = coarse.bin_of(fine.centres())
    fine_mass = np.bincount(parent, weights=Mf.row_sums(), minlength=64) / 4
    assert np.max(np.abs(fine_mass - Mc.row_sums())) < 0.15


def test_growing_columns_cover_rows_and_hits():
    part = unit_square(4).seeded([b == 5 for b in range(16)])
    M = build_ulam(FlowSpec(1.0, ConstantField((0.25, 0.25))), part, 0.0, Q=4)
    assert list(M.row_index) == [5]
    assert list(M.col_index) == [5, 10]
    assert M.P.toarray().tolist() == [[0.0, 1.0]]


def test_restrict_matches_seeded_build(dw_partition, periodic_flow):
    full = build_ulam(periodic_flow, dw_partition, 0.0, Q=16)
    seeded = dw_partition.seeded_below(1, -1.0)
    direct = build_ulam(periodic_flow, seeded, 0.0, Q=16)
    view = restrict(full, seeded.active_rows)
    assert np.array_equal(direct.row_index, view.row_index)
    assert np.array_equal(direct.col_index, view.col_index)
    assert (direct.counts != view.counts).nnz == 0


def test_growing_chain_links_index_sets(dw_partition, periodic_flow):
    mats = [build_ulam(periodic_flow, dw_partition, float(t), Q=16) for t in range(3)]
    rows = dw_partition.seeded_below(1, -2.0).active_rows
    chain = growing_chain(mats, rows)
    assert np.array_equal(chain[0].row_index, rows)
    for a, b in zip(chain[:-1], chain[1:]):
        assert np.array_equal(a.col_index, b.row_index)
        assert set(a.row_index) <= set(a.col_index)


def test_restrict_rejects_unknown_rows(dw_partition, periodic_flow):
    full = build_ulam(periodic_flow, dw_partition, 0.0, Q=4)
    sub = restrict(full, [0, 1])
    with pytest.raises(ValueError):
        restrict(sub, [2])


def test_file_roundtrip(tmp_path, dw_partition, periodic_flow):
    M = build_ulam(periodic_flow, dw_partition, 2.0, Q=100)
    p = tmp_path / "m.txt"
    write_ulam(p, M, config_hash="abc")
    text = p.read_text().splitlines()
    assert text[0] == "# config_hash abc"
    assert text[1].startswith("ULAM 256 256 100 2.0 1.0")
    R = read_ulam(p)
    assert R.t == 2.0 and R.Q == 100
    assert (R.counts != M.counts).nnz == 0
    write_ulam(tmp_path / "again.txt", R, config_hash="abc")
    assert (tmp_path / "again.txt").read_bytes() == p.read_bytes()


def test_growing_file_keeps_indices(tmp_path):
    part = unit_square(4).seeded([b in (5, 6) for b in range(16)])
    M = build_ulam(FlowSpec(1.0, ConstantField((0.25, 0.0))), part, 0.0, Q=4)
    write_ulam(tmp_path / "g.txt", M)
    R = read_ulam(tmp_path / "g.txt")
    assert list(R.row_index) == [5, 6] and list(R.col_index) == [5, 6, 7]


def test_corrupted_file_is_rejected(tmp_path, dw_partition, periodic_flow):
    M = build_ulam(periodic_flow, dw_partition, 0.0, Q=100)
    p = tmp_path / "m.txt"
    write_ulam(p, M)
    lines = p.read_text().splitlines()
    i = 5
    a, b, w = lines[i].split()
    lines[i] = f"{a} {b} {float(w) + 0.01:.12g}"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(MatrixFileError, match="checksum"):
        read_ulam(p)


def test_truncated_file_is_rejected(tmp_path, dw_partition, periodic_flow):
    M = build_ulam(periodic_flow, dw_partition, 0.0, Q=100)
    p = tmp_path / "m.txt"
    write_ulam(p, M)
    p.write_text("\n".join(p.read_text().splitlines()[:20]) + "\n")
    with pytest.raises(MatrixFileError):
        read_ulam(p)


def test_bad_weights_are_rejected(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("ULAM 2 2 4 0.0 1.0\n0 0 0.3\n")
    with pytest.raises(MatrixFileError, match="multiples"):
        read_ulam(p)
    p.write_text("ULAM 2 2 4 0.0 1.0\n0 0 0.75\n0 1 0.5\n")
    with pytest.raises(MatrixFileError, match="row sum"):
        read_ulam(p)
    p.write_text("ULAM 2 2 4 0.0 1.0\n0 5 0.25\n")
    with pytest.raises(MatrixFileError, match="out of range"):
        read_ulam(p)


@settings(max_examples=25, deadline=None)
@given(dx=st.floats(-0.6, 0.6), dy=st.floats(-0.6, 0.6), Q=st.sampled_from([1, 4, 9, 25]))
def test_rows_substochastic_for_any_shift(dx, dy, Q):
    part = unit_square(5)
    M = build_ulam(FlowSpec(1.0, ConstantField((dx, dy))), part, 0.0, Q=Q)
    rs = M.row_sums()
    assert np.all((rs >= 0) & (rs <= 1))
    assert np.all(M.counts.data >= 1)


def test_backends_build_identical_matrices(dw_partition):
    flow = FlowSpec(1.0, AnalyticField("quasi_periodic_double_well", 0.1))
    a = build_ulam(flow, dw_partition, 7.0, Q=25, backend="python")
    b = build_ulam(flow, dw_partition, 7.0, Q=25)
    assert (a.counts != b.counts).nnz == 0


def test_domain_validation():
    with pytest.raises(ValueError):
        BinPartition(Domain((0.0, 0.0), (1.0, 1.0)), (0, 3))
    with pytest.raises(ValueError):
        unit_square(2).seeded([False] * 4)
