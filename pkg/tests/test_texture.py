import numpy as np
import pytest

from cuefuse.feature_io import MultiScaleFeatures
from cuefuse.texture import (MemoryBank, build_patch_features, coreset_subsample,
                             greedy_coreset_indices, image_score, load_bank, localize,
                             nn_distances, save_bank)


def make_bank(entries, f=1.0, seed=0):
    entries = np.asarray(entries, dtype=np.float64)
    return MemoryBank(entries=entries, coreset_fraction=f,
                      source_count=entries.shape[0], projection_seed=seed)


def bilinear_oracle(values, out_h, out_w):
    in_h, in_w = values.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = (i + 0.5) * in_h / out_h - 0.5
            x = (j + 0.5) * in_w / out_w - 0.5
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            wy, wx = y - y0, x - x0
            y0c, y1c = np.clip([y0, y0 + 1], 0, in_h - 1)
            x0c, x1c = np.clip([x0, x0 + 1], 0, in_w - 1)
            out[i, j] = (values[y0c, x0c] * (1 - wy) * (1 - wx)
                         + values[y0c, x1c] * (1 - wy) * wx
                         + values[y1c, x0c] * wy * (1 - wx)
                         + values[y1c, x1c] * wy * wx)
    return out


def aligner_oracle(layers, th, tw):
    """Loop-based 3x3 zero-padded averaging + per-channel bilinear + concat."""
    parts = []
    for grid in layers:
        h, w, c = grid.shape
        smoothed = np.zeros(grid.shape)
        for i in range(h):
            for j in range(w):
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ii, jj = i + di, j + dj
                        if 0 <= ii < h and 0 <= jj < w:
                            smoothed[i, j] += grid[ii, jj]
        smoothed /= 9.0
        parts.append(np.stack(
            [bilinear_oracle(smoothed[:, :, ch], th, tw) for ch in range(c)], axis=2))
    return np.concatenate(parts, axis=2).reshape(th * tw, -1)


def ms_from(layers, tags=None):
    tags = tags or tuple(f"layer{i}" for i in range(len(layers)))
    return MultiScaleFeatures(image_id="x", layers=tuple(layers), layer_tags=tuple(tags),
                              backbone_tag="cnn", input_resolution=64)


# -- patch representation aggregation ---------------------------------------


def test_constant_layer_unchanged_inside():
    ms = ms_from([np.full((5, 5, 2), 3.0, dtype=np.float32)])
    feats, grid = build_patch_features(ms)
    assert grid == (5, 5)
    # zero padding shrinks border averages; interior cells keep the constant
    inner = feats.reshape(5, 5, 2)[1:4, 1:4]
    assert np.allclose(inner, 3.0)


def test_two_layer_shapes_and_values_match_oracle():
    rng = np.random.default_rng(0)
    layers = [rng.normal(size=(4, 4, 2)).astype(np.float32),
              rng.normal(size=(2, 2, 3)).astype(np.float32)]
    ms = ms_from(layers)
    feats, grid = build_patch_features(ms)
    assert grid == (4, 4)
    assert feats.shape == (16, 5)
    expected = aligner_oracle([np.asarray(l, dtype=np.float64) for l in layers], 4, 4)
    assert np.abs(feats - expected).max() < 1e-10


def test_impulse_becomes_ninth_plateau():
    grid = np.zeros((7, 7, 1), dtype=np.float32)
    grid[3, 3, 0] = 1.0
    feats, _ = build_patch_features(ms_from([grid]))
    plane = feats.reshape(7, 7)
    assert np.allclose(plane[2:5, 2:5], 1.0 / 9.0)
    assert np.allclose(plane[0, :], 0.0)


# -- coreset subsampling ------------------------------------------------------


def test_full_fraction_keeps_everything():
    rng = np.random.default_rng(1)
    features = rng.normal(size=(37, 4))
    bank = coreset_subsample(features, f=1.0)
    assert bank.size == 37
    assert np.array_equal(np.sort(bank.selected_indices), np.arange(37))


def greedy_oracle(features, n_select, start):
    """Exhaustive farthest-point selection; first index wins ties."""
    selected = [start]
    remaining = [i for i in range(len(features)) if i != start]
    for _ in range(n_select - 1):
        best, best_d = None, -1.0
        for i in remaining:
            d = min(np.linalg.norm(features[i] - features[s]) for s in selected)
            if d > best_d:
                best, best_d = i, d
        selected.append(best)
        remaining.remove(best)
    return selected


def test_greedy_matches_exhaustive_oracle():
    rng = np.random.default_rng(2)
    features = rng.normal(size=(200, 2))
    bank = coreset_subsample(features, f=0.05, seed=22)
    start = int(bank.selected_indices[0])
    assert bank.selected_indices.tolist() == greedy_oracle(features, 10, start)
    assert np.array_equal(bank.entries, features[bank.selected_indices])


def test_each_pick_is_a_farthest_point():
    rng = np.random.default_rng(3)
    features = rng.normal(size=(60, 3))
    idx = greedy_coreset_indices(features, 12, seed=5, eps=None)
    for step in range(1, 12):
        chosen = idx[step]
        prev = idx[:step]
        min_d = np.min(np.linalg.norm(features[:, None] - features[prev][None], axis=2), axis=1)
        candidates = np.setdiff1d(np.arange(60), prev)
        assert min_d[chosen] == pytest.approx(min_d[candidates].max(), rel=0, abs=1e-12)


def test_tiny_fraction_clamps_to_one():
    rng = np.random.default_rng(4)
    bank = coreset_subsample(rng.normal(size=(50, 3)), f=0.01)
    assert bank.size == 1


def test_coreset_determinism():
    rng = np.random.default_rng(5)
    features = rng.normal(size=(300, 40))
    b1 = coreset_subsample(features, f=0.1, eps=0.9, seed=22)
    b2 = coreset_subsample(features, f=0.1, eps=0.9, seed=22)
    assert np.array_equal(b1.selected_indices, b2.selected_indices)


def test_projection_kicks_in_for_wide_features():
    # JL dim for (400, eps=0.9) is ~140, below D'=256, so selection projects;
    # the bank must still hold original-space rows
    rng = np.random.default_rng(6)
    features = rng.normal(size=(400, 256))
    bank = coreset_subsample(features, f=0.05, eps=0.9, seed=22)
    assert bank.entries.shape == (20, 256)
    assert np.array_equal(bank.entries, features[bank.selected_indices])


def test_invalid_fraction_rejected():
    with pytest.raises(ValueError, match="fraction"):
        coreset_subsample(np.ones((5, 2)), f=0.0)
    with pytest.raises(ValueError, match="fraction"):
        coreset_subsample(np.ones((5, 2)), f=1.5)


# -- nearest-neighbor distances ---------------------------------------------


def test_bank_member_has_zero_distance():
    rng = np.random.default_rng(7)
    entries = rng.normal(size=(20, 5))
    bank = make_bank(entries)
    d = nn_distances(bank, entries[[3, 11]])
    assert np.allclose(d, 0.0)


def test_one_dimensional_hand_case():
    bank = make_bank([[0.0, 0.0], [10.0, 0.0]])
    assert nn_distances(bank, np.array([[3.0, 0.0]]))[0] == pytest.approx(3.0)


def test_nn_matches_bruteforce():
    rng = np.random.default_rng(8)
    bank = make_bank(rng.normal(size=(500, 32)))
    queries = rng.normal(size=(1000, 32))
    got = nn_distances(bank, queries)
    brute = np.sqrt(((queries[:, None, :] - bank.entries[None]) ** 2).sum(axis=2)).min(axis=1)
    assert np.abs(got - brute).max() < 1e-6


def test_growing_bank_never_increases_distances():
    rng = np.random.default_rng(9)
    base = rng.normal(size=(50, 6))
    queries = rng.normal(size=(30, 6))
    d_small = nn_distances(make_bank(base), queries)
    d_large = nn_distances(make_bank(np.vstack([base, rng.normal(size=(25, 6))])), queries)
    assert (d_large <= d_small + 1e-12).all()


def test_nn_dimension_mismatch():
    with pytest.raises(ValueError):
        nn_distances(make_bank(np.ones((3, 4))), np.ones((2, 5)))


# -- localization ---------------------------------------------------------------


def test_all_in_bank_gives_zero_map():
    rng = np.random.default_rng(10)
    entries = rng.normal(size=(16, 4))
    amap = localize(make_bank(entries), entries, (4, 4), 16, 16, sigma=2.0)
    assert amap.provenance == "pc"
    assert np.allclose(amap.values, 0.0)


def test_outlier_patch_peaks_nearby():
    rng = np.random.default_rng(11)
    bank = make_bank(rng.normal(size=(100, 4)))
    test = rng.normal(size=(36, 4))
    test[14] += 40.0  # grid position (2, 2) in a 6x6 grid
    amap = localize(bank, test, (6, 6), 48, 48, sigma=1.0)
    peak = np.unravel_index(np.argmax(amap.values), amap.values.shape)
    cell = (peak[0] // 8, peak[1] // 8)
    assert max(abs(cell[0] - 2), abs(cell[1] - 2)) <= 1


def test_sigma_zero_map_is_pure_upsample():
    rng = np.random.default_rng(12)
    bank = make_bank(rng.normal(size=(30, 3)))
    test = rng.normal(size=(9, 3))
    amap = localize(bank, test, (3, 3), 9, 9, sigma=0.0)
    d = nn_distances(bank, test).reshape(3, 3)
    assert np.abs(amap.values - bilinear_oracle(d, 9, 9)).max() < 1e-12


def test_grid_mismatch_rejected():
    bank = make_bank(np.ones((4, 2)))
    with pytest.raises(ValueError, match="grid"):
        localize(bank, np.ones((6, 2)), (2, 2), 8, 8)


# -- image score -------------------------------------------------------------------


def test_k1_score_collapses_to_zero():
    rng = np.random.default_rng(13)
    bank = make_bank(rng.normal(size=(20, 4)))
    assert image_score(bank, rng.normal(size=(10, 4)) * 5, k=1) == 0.0


def test_hand_case_matches_formula():
    bank = make_bank([[0.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    test = np.array([[0.0, 0.5]])
    # d = 0.5 to both near entries; argmin ties to the first, m* = (0, 0);
    # its 2-neighborhood is {(0,0), (0,1)}, both at 0.5 from the test point
    w = 1.0 - np.exp(0.5) / (np.exp(0.5) + np.exp(0.5))
    assert image_score(bank, test, k=2) == pytest.approx(w * 0.5, rel=1e-12)
    assert image_score(bank, test, k=2) == pytest.approx(0.25, rel=1e-12)


def test_duplicate_in_bank_scores_zero():
    rng = np.random.default_rng(14)
    entries = rng.normal(size=(10, 3))
    bank = make_bank(entries)
    assert image_score(bank, entries[[4]], k=3) == 0.0


def test_weight_bounds_for_k_at_least_two():
    rng = np.random.default_rng(15)
    for _ in range(10):
        bank = make_bank(rng.normal(size=(30, 4)))
        test = rng.normal(size=(12, 4)) * 3
        d_star = nn_distances(bank, test).max()
        score = image_score(bank, test, k=3)
        assert 0.0 <= score < d_star


def test_k_clamps_to_bank_size_with_warning():
    rng = np.random.default_rng(16)
    bank = make_bank(rng.normal(size=(2, 3)))
    with pytest.warns(UserWarning, match="clamping"):
        score = image_score(bank, rng.normal(size=(4, 3)), k=5)
    assert score >= 0.0


# -- persistence ----------------------------------------------------------------------


def test_bank_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    bank = coreset_subsample(rng.normal(size=(120, 8)), f=0.1, seed=22,
                             layer_tags=("stage2", "stage3"))
    save_bank(bank, tmp_path / "bank")
    loaded = load_bank(tmp_path / "bank")
    assert np.array_equal(loaded.entries, bank.entries)
    assert loaded.coreset_fraction == bank.coreset_fraction
    assert loaded.source_count == bank.source_count
    assert loaded.projection_seed == bank.projection_seed
    assert loaded.layer_tags == ("stage2", "stage3")
