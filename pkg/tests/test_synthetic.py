import numpy as np

from cuefuse.feature_io import load_bundle, load_dataset_manifest, load_mask
from cuefuse.synthetic import ATTR_TAG, OBJ_TAG, PC_TAG, SyntheticConfig, generate_dataset


def small_cfg(**kw):
    kw.setdefault("n_train", 6)
    kw.setdefault("n_test_normal", 3)
    kw.setdefault("n_test_anomalous", 3)
    return SyntheticConfig(**kw)


def test_dataset_layout(tmp_path):
    manifest = generate_dataset(small_cfg(), tmp_path)
    assert len(manifest.train_normal) == 6
    assert len(manifest.test_normal) == 3
    assert len(manifest.test_anomalous) == 3
    reloaded = load_dataset_manifest(tmp_path / "dataset.json")
    assert [e.image_id for e in reloaded.test_anomalous] \
        == [e.image_id for e in manifest.test_anomalous]


def test_bundles_have_expected_shapes(tmp_path):
    cfg = small_cfg()
    manifest = generate_dataset(cfg, tmp_path)
    entry = manifest.train_normal[0]
    obj = load_bundle(manifest.bundle_path(entry, OBJ_TAG))
    attr = load_bundle(manifest.bundle_path(entry, ATTR_TAG))
    pc = load_bundle(manifest.bundle_path(entry, PC_TAG))
    n = cfg.grid * cfg.grid
    assert obj.patches.shape == (n, cfg.dims[OBJ_TAG])
    assert obj.global_vec is not None
    assert attr.patches.shape == (n, cfg.dims[ATTR_TAG])
    assert attr.global_vec is None
    assert pc.patches.shape == (n, cfg.dims[PC_TAG])


def test_masks_cover_the_anomaly_fraction(tmp_path):
    cfg = small_cfg()
    manifest = generate_dataset(cfg, tmp_path)
    for entry in manifest.test_anomalous:
        mask = load_mask(manifest.mask_path(entry), cfg.image_size, cfg.image_size)
        frac = mask.values.mean()
        assert 0.05 <= frac <= 0.15  # ~10% of cells, quantized to a square block
    for entry in manifest.train_normal + manifest.test_normal:
        assert entry.mask is None


def test_anomalous_tokens_deviate_inside_the_mask(tmp_path):
    cfg = small_cfg()
    manifest = generate_dataset(cfg, tmp_path)
    entry = manifest.test_anomalous[0]
    pc = load_bundle(manifest.bundle_path(entry, PC_TAG))
    mask = load_mask(manifest.mask_path(entry), cfg.image_size, cfg.image_size)
    scale = cfg.image_size // cfg.grid
    cell_mask = mask.values[::scale, ::scale].reshape(-1).astype(bool)

    normal_pool = np.concatenate([
        np.asarray(load_bundle(manifest.bundle_path(e, PC_TAG)).patches, dtype=np.float64)
        for e in manifest.train_normal])
    centroid = normal_pool.mean(axis=0)
    d = np.linalg.norm(np.asarray(pc.patches, dtype=np.float64) - centroid, axis=1)
    assert d[cell_mask].mean() > d[~cell_mask].mean()


def test_generation_is_deterministic(tmp_path):
    generate_dataset(small_cfg(), tmp_path / "a")
    generate_dataset(small_cfg(), tmp_path / "b")
    a = (tmp_path / "a" / "bundles" / "train_0000" / OBJ_TAG / "patches.npy").read_bytes()
    b = (tmp_path / "b" / "bundles" / "train_0000" / OBJ_TAG / "patches.npy").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "dataset.json").read_bytes() \
        == (tmp_path / "b" / "dataset.json").read_bytes()
