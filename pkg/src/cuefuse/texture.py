"""Texture branch: non-parametric matching against a coreset memory bank.

Local CNN patch representations from normal images are subsampled with
greedy k-center selection into a memory bank; test patches are scored by
their exact nearest-neighbor distance to the bank.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial.distance import cdist
from sklearn.random_projection import SparseRandomProjection, johnson_lindenstrauss_min_dim

from .feature_io import MultiScaleFeatures, _read_kv, _write_kv
from .maps import AnomalyMap, bilinear_resize, grid_to_map

_NN_CHUNK = 4096


@dataclass(frozen=True)
class MemoryBank:
    """Coreset of normal local patch features (original feature space)."""

    entries: np.ndarray
    coreset_fraction: float
    source_count: int
    projection_seed: int
    selected_indices: np.ndarray | None = None
    layer_tags: tuple = ()

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise ValueError("memory bank needs at least one (M, D) entry row")
        if not np.all(np.isfinite(entries)):
            raise ValueError("memory bank entries contain non-finite values")
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def build_patch_features(ms: MultiScaleFeatures, target_grid: tuple[int, int] | None = None):
    """Aggregate multi-scale grids into one (N', D') patch matrix.

    Each layer is averaged over a zero-padded 3x3 neighborhood (stride 1),
    bilinearly resized to the target grid (default: the highest-resolution
    layer's grid), and channel-concatenated. Rows come out in row-major grid
    order. Returns (features, (h, w)).
    """
    if target_grid is None:
        areas = [g.shape[0] * g.shape[1] for g in ms.layers]
        best = int(np.argmax(areas))
        target_grid = (ms.layers[best].shape[0], ms.layers[best].shape[1])
    th, tw = target_grid
    if th < 1 or tw < 1:
        raise ValueError("target grid must be positive")

    aligned = []
    for grid in ms.layers:
        grid = np.asarray(grid, dtype=np.float64)
        smoothed = uniform_filter(grid, size=(3, 3, 1), mode="constant", cval=0.0)
        aligned.append(bilinear_resize(smoothed, th, tw))
    stacked = np.concatenate(aligned, axis=2)
    return stacked.reshape(th * tw, stacked.shape[2]), (th, tw)


def greedy_coreset_indices(features: np.ndarray, n_select: int, seed: int,
                           eps: float | None = 0.90) -> np.ndarray:
    """Greedy k-center (farthest-point) selection of n_select row indices.

    Min-distances to the selected set are maintained incrementally; the first
    center comes deterministically from the seed. When the feature dimension
    exceeds the Johnson-Lindenstrauss bound for (n_rows, eps), selection
    distances are computed in a sparse random projection of that dimension
    (the caller keeps original-space features). Pass eps=None to force
    original-space selection.
    """
    features = np.asarray(features, dtype=np.float64)
    n_rows = features.shape[0]
    if not 1 <= n_select <= n_rows:
        raise ValueError(f"n_select={n_select} out of range for {n_rows} rows")

    work = features
    if eps is not None and n_rows > 1:
        jl_dim = int(johnson_lindenstrauss_min_dim(n_samples=n_rows, eps=eps))
        if jl_dim < features.shape[1]:
            projector = SparseRandomProjection(n_components=jl_dim, random_state=seed)
            work = projector.fit_transform(features)

    rng = np.random.default_rng(seed)
    start = int(rng.integers(n_rows))
    selected = np.empty(n_select, dtype=np.intp)
    selected[0] = start
    min_d2 = np.sum((work - work[start]) ** 2, axis=1)
    min_d2[start] = -1.0  # selected rows leave the candidate pool
    for i in range(1, n_select):
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        d2 = np.sum((work - work[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -1.0
    return selected


def coreset_subsample(features: np.ndarray, f: float, eps: float = 0.90,
                      seed: int = 22, layer_tags: tuple = ()) -> MemoryBank:
    """Build a memory bank of ~floor(f * P') greedily selected rows (min 1)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a non-empty (P', D') matrix")
    if not 0.0 < f <= 1.0:
        raise ValueError(f"coreset fraction must be in (0, 1], got {f}")
    n_rows = features.shape[0]
    n_select = max(1, int(f * n_rows))
    if n_select == n_rows:
        indices = np.arange(n_rows, dtype=np.intp)
    else:
        indices = greedy_coreset_indices(features, n_select, seed=seed, eps=eps)
    return MemoryBank(entries=features[indices], coreset_fraction=f,
                      source_count=n_rows, projection_seed=seed,
                      selected_indices=indices, layer_tags=tuple(layer_tags))


def _nn_search(bank_entries: np.ndarray, x: np.ndarray):
    """Exact 1-NN over the bank: (distances, indices), chunked over queries."""
    dists = np.empty(x.shape[0])
    idx = np.empty(x.shape[0], dtype=np.intp)
    for lo in range(0, x.shape[0], _NN_CHUNK):
        hi = min(lo + _NN_CHUNK, x.shape[0])
        d = cdist(x[lo:hi], bank_entries)
        idx[lo:hi] = np.argmin(d, axis=1)
        dists[lo:hi] = d[np.arange(hi - lo), idx[lo:hi]]
    return dists, idx


def nn_distances(bank: MemoryBank, test_features: np.ndarray) -> np.ndarray:
    """Exact Euclidean nearest-neighbor distance per test row."""
    test_features = np.asarray(test_features, dtype=np.float64)
    if test_features.ndim != 2 or test_features.shape[1] != bank.dim:
        raise ValueError(f"expected (N', {bank.dim}) test features, "
                         f"got shape {test_features.shape}")
    return _nn_search(bank.entries, test_features)[0]


def localize(bank: MemoryBank, test_features: np.ndarray, grid: tuple[int, int],
             out_h: int, out_w: int, sigma: float = 4.0) -> AnomalyMap:
    """NN distances reshaped to the patch grid, upsampled, and smoothed."""
    d = nn_distances(bank, test_features)
    gh, gw = grid
    if gh * gw != d.shape[0]:
        raise ValueError(f"grid {gh}x{gw} does not match {d.shape[0]} features")
    return grid_to_map(d.reshape(gh, gw), out_h, out_w, sigma, "pc")


def image_score(bank: MemoryBank, test_features: np.ndarray, k: int = 3) -> float:
    """Re-weighted max NN distance.

    The peak patch response is down-weighted when its nearest bank entry m*
    sits in a dense neighborhood: with N_k(m*) the k nearest bank entries to
    m* (m* included), w = 1 - exp(||p*-m*||) / sum_{m in N_k} exp(||p*-m||),
    and the score is w * max_i d_i. With k=1 the weight is identically zero.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    test_features = np.asarray(test_features, dtype=np.float64)
    d, nn_idx = _nn_search(bank.entries, test_features)
    i_star = int(np.argmax(d))
    d_star = d[i_star]
    p_star = test_features[i_star]
    m_star = int(nn_idx[i_star])

    k_eff = min(k, bank.size)
    if k_eff < k:
        warnings.warn(f"k={k} exceeds bank size {bank.size}; clamping to {k_eff}",
                      stacklevel=2)
    bank_d = np.linalg.norm(bank.entries - bank.entries[m_star], axis=1)
    neighborhood = np.argsort(bank_d, kind="stable")[:k_eff]
    dp = np.linalg.norm(bank.entries[neighborhood] - p_star, axis=1)
    shift = dp.max()  # softmax-style shift: the exponentials stay bounded
    w = 1.0 - np.exp(d_star - shift) / np.sum(np.exp(dp - shift))
    return float(w * d_star)


def save_bank(bank: MemoryBank, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.save(path / "bank.npy", bank.entries, allow_pickle=False)
    _write_kv(path / "meta.txt", {
        "coreset_fraction": repr(bank.coreset_fraction),
        "projection_seed": bank.projection_seed,
        "source_count": bank.source_count,
        "layer_tags": ",".join(bank.layer_tags),
    })


def load_bank(path: str | os.PathLike) -> MemoryBank:
    path = Path(path)
    meta = _read_kv(path / "meta.txt")
    tags = tuple(t for t in meta.get("layer_tags", "").split(",") if t)
    return MemoryBank(
        entries=np.load(path / "bank.npy", allow_pickle=False),
        coreset_fraction=float(meta["coreset_fraction"]),
        source_count=int(meta["source_count"]),
        projection_seed=int(meta["projection_seed"]),
        layer_tags=tags,
    )
