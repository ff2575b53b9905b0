import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csgtopo.fem import build_mesh
from csgtopo.scenarios import (DamageModel, LoadPositionModel, apply_damage, build_point_load,
                               damage_indicator, enumerate_damage_grid, generate_load_sequence,
                               load_dataset, matlab_round, mirror_positions, oversample_boundary,
                               reduced_damage_grid, sample_damage_sequence,
                               symmetric_damage_distance, synthesize_load_dataset, write_dataset)


@pytest.mark.parametrize("args,count", [((180, 45, 20, 5), 3381), ((21, 21, 20, 0), 4),
                                        ((30, 30, 30, 0), 1), ((10, 12, 10, 2), 1)])
def test_grid_size_examples(args, count):
    assert enumerate_damage_grid(*args).size == count


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 15), st.integers(0, 5))
def test_grid_size_closed_form(nelx, nely, L, non_d):
    expected = (nelx - L + 1) * (nely - L + 1 - non_d)
    if nelx - L + 1 < 1 or nely - L + 1 - non_d < 1:
        with pytest.raises(ValueError):
            enumerate_damage_grid(nelx, nely, L, non_d)
        return
    g = enumerate_damage_grid(nelx, nely, L, non_d)
    assert g.size == expected
    assert g.weights.sum() == pytest.approx(1.0)
    assert np.unique(g.points, axis=0).shape[0] == expected


def test_grid_excludes_right_columns():
    g = enumerate_damage_grid(180, 60, 22, 0, non_r=10)
    assert g.size == 149 * 39
    assert g.points[:, 0].max() == 149


def test_damage_block_location_on_small_mesh():
    model = DamageModel(L=2, non_d=0)
    d = damage_indicator((2, 1), model, 6, 6).reshape(6, 6, order="F")
    expected = np.zeros((6, 6))
    expected[4:6, 1:3] = 1  # bottom two rows (top row is row 0), columns 2-3
    np.testing.assert_array_equal(d, expected)
    d = damage_indicator((5, 5), model, 6, 6).reshape(6, 6, order="F")
    expected = np.zeros((6, 6))
    expected[0:2, 4:6] = 1
    np.testing.assert_array_equal(d, expected)


def test_damage_removes_exactly_l_squared():
    model = DamageModel(L=4, non_d=1)
    x = np.ones(12 * 10)
    for pos in enumerate_damage_grid(12, 10, 4, 1).points:
        assert np.sum(apply_damage(x, pos, model, 12, 10) == 0) == 16


def test_zero_damage_and_idempotence():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=80)
    np.testing.assert_array_equal(apply_damage(x, (2, 3), DamageModel(3, 0, 0.0), 10, 8), x)
    model = DamageModel(3, 0, 1.0)
    once = apply_damage(x, (2, 3), model, 10, 8)
    np.testing.assert_array_equal(apply_damage(once, (2, 3), model, 10, 8), once)
    partial = apply_damage(x, (2, 3), DamageModel(3, 0, 0.25), 10, 8)
    assert np.all(partial >= 0) and np.all(partial <= x)


def test_damage_model_validation():
    with pytest.raises(ValueError):
        DamageModel(dmg_fac=1.5)
    with pytest.raises(ValueError):
        DamageModel(L=0)
    with pytest.raises(ValueError):
        sample_damage_sequence(np.random.default_rng(0), 3, DamageModel(20, 5), 30, 20)


def test_sequence_is_admissible_reproducible_and_uniform():
    model = DamageModel(20, 5)
    seq = sample_damage_sequence(np.random.default_rng(7), 100_000, model, 180, 45)
    again = sample_damage_sequence(np.random.default_rng(7), 100_000, model, 180, 45)
    np.testing.assert_array_equal(seq, again)
    assert seq[:, 0].min() == 1 and seq[:, 0].max() == 161
    assert seq[:, 1].min() == 1 and seq[:, 1].max() == 21
    for col, m in ((0, 161), (1, 21)):
        counts = np.bincount(seq[:, col], minlength=m + 1)[1:]
        p = 1 / m
        sigma = np.sqrt(seq.shape[0] * p * (1 - p))
        assert np.all(np.abs(counts - seq.shape[0] * p) < 4 * sigma)


def test_mirror_is_an_involution_with_fixed_center():
    x = np.array([[1, 3], [161, 2], [81, 5]])
    m = mirror_positions(x, 180, 20)
    np.testing.assert_array_equal(m[:, 0], [161, 1, 81])
    np.testing.assert_array_equal(mirror_positions(m, 180, 20), x)


def test_symmetric_distance_examples():
    y = np.array([[1, 4], [81, 2]])
    x = np.array([[161, 4], [81, 2]])
    d = symmetric_damage_distance(y, x, 180, 20)
    assert d[0, 0] == 0 and d[1, 1] == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetric_distance_brute_force_and_invariance(seed):
    rng = np.random.default_rng(seed)
    y = np.column_stack([rng.integers(1, 162, 15), rng.integers(1, 22, 15)])
    x = np.column_stack([rng.integers(1, 162, 9), rng.integers(1, 22, 9)])
    d = symmetric_damage_distance(y, x, 180, 20)
    raw = np.empty((15, 9))
    for t in range(15):
        for j in range(9):
            xm = 180 - 20 + 2 - x[j, 0]
            raw[t, j] = min(np.hypot(*(y[t] - x[j])), np.hypot(y[t, 0] - xm, y[t, 1] - x[j, 1]))
    np.testing.assert_allclose(d, raw / max(raw.max(), 1e-10), rtol=1e-14)
    np.testing.assert_array_equal(d, symmetric_damage_distance(y, mirror_positions(x, 180, 20),
                                                               180, 20))


def test_vertical_mirror_axis():
    y = np.array([[5, 1]])
    x = np.array([[5, 39]])
    assert symmetric_damage_distance(y, x, 60, 22, axis=1)[0, 0] == 0


def test_oversampling_strides():
    x = np.full((40, 2), 7)
    o = oversample_boundary(x)
    np.testing.assert_array_equal(np.flatnonzero(o[:, 0] == 1), [0, 15, 30])
    np.testing.assert_array_equal(np.flatnonzero(o[:, 1] == 1), [0, 10, 20, 30])
    assert np.sum(o != x) == 7


def test_reduced_grid_is_sixty_admissible_cases_covering_region():
    model = DamageModel(22, 0, 1.0, non_r=10)
    g = reduced_damage_grid(model, 180, 60)
    assert g.size == 60 and np.unique(g.points, axis=0).shape[0] == 60
    assert g.points[:, 0].min() >= 1 and g.points[:, 0].max() <= model.x_max(180)
    assert g.points[:, 1].min() >= 1 and g.points[:, 1].max() <= model.y_max(60)
    cover = np.zeros(180 * 60)
    for p in g.points:
        cover += damage_indicator(p, model, 180, 60)
    cover = cover.reshape(60, 180, order="F")
    assert np.all(cover[:, : 180 - model.non_r] > 0)


def test_load_dataset_counting(tmp_path):
    m = LoadPositionModel.from_dataset([1, 1, 2])
    np.testing.assert_array_equal(m.support, [1, 2])
    np.testing.assert_allclose(m.probs, [2 / 3, 1 / 3])
    write_dataset(tmp_path / "d.txt", np.array([3, 1, 1]))
    assert load_dataset(tmp_path / "d.txt").probs.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        LoadPositionModel.from_dataset([0, 1])
    with pytest.raises(ValueError):
        LoadPositionModel.from_dataset([5], nelx=3)


def test_synthetic_dataset_properties(tmp_path):
    data = synthesize_load_dataset(np.random.default_rng(0), 360, tmp_path / "d.txt")
    again = synthesize_load_dataset(np.random.default_rng(0), 360)
    np.testing.assert_array_equal(data, again)
    assert data.size == 400_000
    assert data.min() >= 1 and data.max() <= 361
    model = load_dataset(tmp_path / "d.txt", 360)
    assert model.support.size == 361
    # bin counts near the peak differ by less than their noise, so smooth first
    smooth = np.convolve(model.probs, np.ones(21) / 21, mode="same")
    assert abs(model.support[np.argmax(smooth)] - (round(0.25 * 360) + 1)) <= 3
    np.testing.assert_array_equal(model.probs, LoadPositionModel.from_dataset(data).probs)


def test_load_sequences():
    rng = np.random.default_rng(1)
    m = LoadPositionModel.from_dataset([1, 1, 2])
    dist = generate_load_sequence(m, "distribution", rng, 30_000)
    uni = generate_load_sequence(m, "uniform", rng, 30_000)
    assert abs(np.mean(dist == 1) - 2 / 3) < 0.01
    assert abs(np.mean(uni == 1) - 1 / 2) < 0.01
    assert set(np.unique(dist)) <= {1, 2} and set(np.unique(uni)) <= {1, 2}
    with pytest.raises(ValueError):
        generate_load_sequence(m, "other", rng, 3)


def test_point_load():
    mesh = build_mesh(6, 3)
    f = build_point_load(mesh, 1)
    assert np.count_nonzero(f) == 1 and f[1] == -1.0
    f = build_point_load(mesh, 7)
    assert f[2 * mesh.node_nrs[0, 6] + 1] == -1.0 and f.sum() == -1.0
    with pytest.raises(ValueError):
        build_point_load(mesh, 8)


def test_matlab_round_halves_away_from_zero():
    np.testing.assert_array_equal(matlab_round([0.5, 1.5, 2.5, -0.5, 2.4]), [1, 2, 3, -1, 2])
