import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bronchograde.augment import reflect, rotate
from bronchograde.classify.model import ClassifierConfig, build_classifier
from bronchograde.interpret import (
    Heatmap,
    cam_from_maps,
    channel_histograms,
    frequency_spectrum,
    grad_cam,
    mean_intensity_table,
    normalize_map,
    pca_project,
    separability_score,
)
from bronchograde.interpret.gradcam import format_intensity_table, read_intensity_csv, write_intensity_csv
from oracles import dft2, silhouette_oracle

rgb = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).integers(0, 256, (8, 6, 3), dtype=np.uint8))


# -- histograms -------------------------------------------------------------------

def test_uniform_image_is_a_unit_spike():
    h = channel_histograms([np.full((5, 5, 3), 128, np.uint8)])
    for curve in h.as_dict().values():
        assert curve.shape == (256,) and curve[128] == 1.0 and curve.sum() == 1.0


def test_half_black_half_white():
    img = np.zeros((4, 4, 3), np.uint8)
    img[:, 2:] = 255
    for curve in channel_histograms([img]).as_dict().values():
        assert curve[0] == 0.5 and curve[255] == 0.5 and np.count_nonzero(curve) == 2


@settings(max_examples=40, deadline=None)
@given(rgb)
def test_histograms_sum_to_one_and_ignore_pixel_order(img):
    a = channel_histograms([img])
    for other in (reflect(img, "x"), rotate(img, 90), img.reshape(-1, 3)[::-1].reshape(img.shape)):
        b = channel_histograms([other])
        for k, v in a.as_dict().items():
            assert np.array_equal(v, b.as_dict()[k])
    assert all(abs(v.sum() - 1) < 1e-12 for v in a.as_dict().values())


def test_histogram_rejects_empty():
    with pytest.raises(ValueError):
        channel_histograms([])


# -- spectra ----------------------------------------------------------------------

def test_constant_image_puts_all_energy_at_dc():
    s = frequency_spectrum(np.full((16, 16, 3), 90, np.uint8))
    mag = s.magnitude.copy()
    assert mag[8, 8] == pytest.approx(90 * 256)
    mag[8, 8] = 0
    assert np.all(mag < 1e-9)
    assert s.high_band_energy < 1e-12 and s.high_fraction == 0.0


def test_sinusoid_peaks_match_definition_oracle():
    n, k = 32, 5
    x = np.arange(n)
    gray = np.tile(127.5 + 100 * np.cos(2 * np.pi * k * x / n), (n, 1))
    img = np.repeat(gray[..., None], 3, axis=2)
    s = frequency_spectrum(img)
    oracle = np.fft.fftshift(np.abs(np.array(dft2(gray.tolist()))))
    assert np.allclose(s.magnitude, oracle, atol=1e-6 * oracle.max())
    ac = s.magnitude.copy()
    ac[n // 2, n // 2] = 0
    peaks = {tuple(p) for p in np.argwhere(ac > 0.5 * ac.max())}
    assert peaks == {(n // 2, n // 2 - k), (n // 2, n // 2 + k)}


@settings(max_examples=30, deadline=None)
@given(rgb)
def test_parseval_and_band_partition(img):
    s = frequency_spectrum(img)
    gray = img.astype(np.float64).mean(axis=2)
    power = (s.magnitude**2).sum()
    assert power == pytest.approx(gray.size * (gray**2).sum(), rel=1e-6)
    assert s.total_energy == pytest.approx(power, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(8, 8), (9, 7), (16, 10)]))
def test_half_turn_keeps_magnitude_grid(seed, shape):
    img = np.random.default_rng(seed).integers(0, 256, (*shape, 3), dtype=np.uint8)
    a = frequency_spectrum(img).magnitude
    b = frequency_spectrum(rotate(img, 180)).magnitude
    assert np.allclose(a, b, rtol=1e-12, atol=1e-9 * a.max())


def test_spectrum_rejects_degenerate_input():
    with pytest.raises(ValueError):
        frequency_spectrum(np.zeros((1, 5, 3), np.uint8))
    with pytest.raises(ValueError):
        frequency_spectrum(np.zeros((8, 8, 3), np.uint8), low_radius_fraction=0)


# -- PCA and separability ---------------------------------------------------------------

def test_pca_recovers_planted_plane():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0].T
    x = rng.normal(size=(200, 2)) * [5, 2] @ basis + rng.normal(size=10)
    emb = pca_project(x)
    assert emb.explained_variance_ratio.sum() >= 0.999
    assert np.allclose(emb.components @ emb.components.T, np.eye(2), atol=1e-8)
    # the recovered plane is the planted one
    assert np.allclose(emb.components @ basis.T @ basis, emb.components, atol=1e-8)
    for c in emb.components:
        assert c[np.argmax(np.abs(c))] > 0


def test_pca_isotropic_cloud_splits_variance_evenly():
    x = np.random.default_rng(1).normal(size=(10_000, 4))
    emb = pca_project(x, n_components=4)
    assert np.all(np.abs(emb.explained_variance_ratio - 0.25) <= 0.03)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pca_full_rank_reconstruction(seed):
    x = np.random.default_rng(seed).normal(size=(12, 5))
    emb = pca_project(x, n_components=5)
    assert np.allclose(emb.components @ emb.components.T, np.eye(5), atol=1e-8)
    assert np.allclose(emb.reconstruct(), x, atol=1e-6)


def test_pca_errors():
    with pytest.raises(ValueError, match="zero variance"):
        pca_project(np.ones((2, 3)))
    with pytest.raises(ValueError):
        pca_project(np.ones((1, 3)))
    with pytest.raises(ValueError):
        pca_project(np.random.default_rng(0).normal(size=(5, 1)))


def test_silhouette_on_separated_clusters_matches_oracle():
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.normal(0, 1, (15, 2)), rng.normal(100, 1, (15, 2))])
    lab = [0] * 15 + [1] * 15
    score = separability_score(pts, lab)
    assert score > 0.9
    assert score == pytest.approx(silhouette_oracle(pts.tolist(), lab), abs=1e-12)


def test_silhouette_shuffled_labels_near_zero():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(400, 2))
    assert abs(separability_score(pts, rng.integers(0, 2, 400))) <= 0.1


def test_silhouette_degenerate_and_errors():
    assert separability_score(np.zeros((4, 2)), [0, 0, 1, 1]) == 0.0
    with pytest.raises(ValueError):
        separability_score(np.zeros((4, 2)), [0, 0, 0, 0])
    with pytest.raises(ValueError):
        separability_score(np.random.default_rng(0).normal(size=(3, 2)), [0, 0, 1])


# -- Grad-CAM ---------------------------------------------------------------------

def test_hand_computed_heatmap():
    raw, hm = cam_from_maps(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones((2, 2)))
    assert raw.tolist() == [[1, 2], [3, 4]]
    assert hm.grid.tolist() == [[0, 85], [170, 255]]
    assert hm.mean_intensity == 127.5


def test_negative_and_uniform_maps():
    _, neg = cam_from_maps(np.array([[1.0, 2.0], [3.0, 4.0]]), -np.ones((2, 2)))
    assert not neg.grid.any() and neg.mean_intensity == 0
    _, flat = cam_from_maps(np.full((3, 3), 2.0), np.ones((3, 3)))
    assert np.all(flat.grid == 255) and flat.mean_intensity == 255


def test_normalize_rounds_half_up():
    # 1/510 * 255 = 0.5 and 5/510 * 255 = 2.5; banker's rounding would give 0 and 2
    assert normalize_map(np.array([0.0, 1.0, 5.0, 510.0])).tolist() == [0, 1, 3, 255]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cam_range_and_mean(seed):
    rng = np.random.default_rng(seed)
    a, g = rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3, 3))
    raw, hm = cam_from_maps(a, g, out_size=(12, 12))
    assert np.all(raw >= 0)
    assert hm.grid.dtype == np.uint8 and hm.grid.shape == (12, 12)
    assert abs(hm.mean_intensity - sum(int(v) for v in hm.grid.ravel()) / 144) <= 1e-9


def test_cam_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        cam_from_maps(np.ones((2, 3, 3)), np.ones((2, 3, 2)))


@pytest.fixture(scope="module")
def tiny_model():
    m = build_classifier(ClassifierConfig(pretrained=False, image_size=32, trainable_scope="full"))
    m.trained = True
    return m


def test_grad_cam_on_model(tiny_model):
    img = np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    hm = grad_cam(tiny_model, img, target_class=3)
    assert hm.grid.shape == (32, 32) and hm.target_class == 3
    assert 0 <= hm.mean_intensity <= 255
    assert grad_cam(tiny_model, img).target_class in range(1, 7)
    with pytest.raises(ValueError):
        grad_cam(tiny_model, img, target_class=7)


def test_grad_cam_needs_flag_for_token_grid():
    vit = build_classifier(ClassifierConfig(backbone="vit", pretrained=False, image_size=32))
    vit.trained = True
    img = np.zeros((32, 32, 3), np.uint8)
    with pytest.raises(ValueError):
        grad_cam(vit, img, target_class=1)
    assert grad_cam(vit, img, target_class=1, allow_token_grid=True).grid.shape == (32, 32)


# -- mean-intensity table -------------------------------------------------------------

def test_intensity_table_cells_and_layout(tmp_path):
    full = Heatmap(np.full((2, 2), 255, np.uint8), 255.0)
    groups = {(g, m): [100.0, 200.0] for g in range(1, 7) for m in ("original", "transform", "cyclegan", "cut")}
    groups[(1, "original")] = [full]
    rows = mean_intensity_table(groups)
    assert len(rows) == 6 and list(rows[0]) == ["grade", "Original", "Transformations", "CycleGAN", "CUT"]
    assert rows[0]["Original"] == 255.0 and rows[3]["CUT"] == 150.0
    path = tmp_path / "t.csv"
    write_intensity_csv(path, rows)
    assert read_intensity_csv(path) == rows
    assert "Transformations" in format_intensity_table(rows)


def test_empty_group_leaves_blank_cell():
    with pytest.warns(UserWarning, match="grade 2"):
        rows = mean_intensity_table({(g, "original"): [1.0] for g in (1, 3, 4, 5, 6)}, methods=("original",))
    assert rows[1]["Original"] is None and math.isclose(rows[0]["Original"], 1.0)
