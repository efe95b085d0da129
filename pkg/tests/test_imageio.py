import numpy as np
import pytest

from supergraph.imageio import (
    SOBEL_X,
    SOBEL_Y,
    Image,
    PixelFeatureMap,
    PpmError,
    boundary_mask,
    convolve2d,
    default_pos_scale,
    filter_bank_features,
    load_ppm,
    read_pgm16,
    render_labels,
    resize_nearest,
    srgb_to_lab,
    synthetic_scene,
    to_gray_features,
    to_lab,
    write_pgm16,
    write_ppm,
)

from conftest import constant_image


def test_load_p6_single_pixel(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    img = load_ppm(p)
    assert (img.width, img.height, img.channels) == (1, 1, 3)
    assert img.data.ravel().tolist() == [255, 0, 0]


def test_load_p5_ramp_with_comment(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# ramp\n2 2\n255\n" + bytes([0, 85, 170, 255]))
    img = load_ppm(p)
    assert img.channels == 1
    assert img.data.ravel().tolist() == [0, 85, 170, 255]


def test_truncated_payload(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(9))
    with pytest.raises(PpmError, match="truncated payload"):
        load_ppm(p)


@pytest.mark.parametrize(
    "blob",
    [b"P3\n1 1\n255\n1 2 3", b"P6\n1 1\n65535\n" + bytes(6), b"P6\n1\n", b"P6\nx 1\n255\n\x00\x00\x00"],
)
def test_rejects_malformed(tmp_path, blob):
    p = tmp_path / "bad.ppm"
    p.write_bytes(blob)
    with pytest.raises(PpmError):
        load_ppm(p)


def test_ppm_roundtrip(tmp_path):
    img = synthetic_scene(9, 7, seed=1)
    write_ppm(tmp_path / "x.ppm", img)
    back = load_ppm(tmp_path / "x.ppm")
    assert np.array_equal(back.data, img.data)


def test_pgm16_roundtrip(tmp_path):
    labels = np.array([[0, 1, 300], [65535, 2, 2]])
    write_pgm16(tmp_path / "l.pgm", labels)
    assert np.array_equal(read_pgm16(tmp_path / "l.pgm"), labels)
    assert (tmp_path / "l.pgm").read_bytes().startswith(b"P5")


def test_lab_reference_values():
    white = srgb_to_lab(np.array([255, 255, 255]))
    assert white[0] == pytest.approx(100, abs=1e-3)
    assert abs(white[1]) < 0.01 and abs(white[2]) < 0.01
    assert np.all(np.abs(srgb_to_lab(np.array([0, 0, 0]))) < 1e-6)
    red = srgb_to_lab(np.array([255, 0, 0]))
    assert red == pytest.approx([53.24, 80.09, 67.20], abs=0.1)


def test_to_lab_feature_map():
    img = Image.from_array(np.full((3, 4, 3), 255))
    fm = to_lab(img, pos_scale=2.0)
    assert fm.n_features == 3 and fm.dim == 5
    assert fm.positions[2, 3].tolist() == [4.0, 6.0]
    with pytest.raises(ValueError):
        to_lab(Image.from_array(np.zeros((2, 2))))
    assert to_gray_features(Image.from_array(np.zeros((2, 2)))).n_features == 1


def naive_convolve(x, k):
    kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    h, w = x.shape

    def px(i, j):  # reflect without repeating the edge sample
        i = -i if i < 0 else (2 * (h - 1) - i if i >= h else i)
        j = -j if j < 0 else (2 * (w - 1) - j if j >= w else j)
        return x[i, j]

    out = np.zeros_like(x, dtype=float)
    for i in range(h):
        for j in range(w):
            s = 0.0
            for a in range(kh):
                for b in range(kw):
                    s += k[a, b] * px(i - (a - ph), j - (b - pw))
            out[i, j] = s
    return out


@pytest.mark.parametrize("k", [SOBEL_X, SOBEL_Y])
def test_convolution_matches_loop_oracle(rng, k):
    x = rng.normal(size=(3, 3))
    assert np.max(np.abs(convolve2d(x, k) - naive_convolve(x, k))) < 1e-12
    x = rng.normal(size=(6, 5))
    assert np.max(np.abs(convolve2d(x, k) - naive_convolve(x, k))) < 1e-12


def test_convolution_kernel_too_large():
    with pytest.raises(ValueError):
        convolve2d(np.zeros((2, 2)), np.ones((3, 3)))


@pytest.mark.parametrize("v", [0, 77, 255])
def test_filter_bank_constant_is_zero(v):
    fm = filter_bank_features(Image.from_array(np.full((5, 6, 3), v)))
    assert fm.n_features == 5
    assert np.all(fm.features[:, :, 3:] == 0.0)


def test_filter_bank_step_edge_support():
    arr = np.zeros((6, 8, 3))
    arr[:, 4:] = 255
    resp = filter_bank_features(Image.from_array(arr)).features[:, :, 3]
    cols = np.flatnonzero(np.any(resp != 0, axis=0))
    assert cols.tolist() == [3, 4]


def test_render_single_label_uniform():
    img = render_labels(np.zeros((4, 5), dtype=int), seed=3)
    assert np.all(img.data == img.data[0, 0])


def test_render_vertical_split():
    labels = np.zeros((4, 6), dtype=int)
    labels[:, 3:] = 1
    img = render_labels(labels, seed=0)
    assert boundary_mask(labels).sum(axis=0).tolist() == [0, 0, 4, 4, 0, 0]
    colours = {tuple(c) for c in img.data.reshape(-1, 3)}
    assert len(colours) == 4  # two fills plus two darkened boundary shades
    assert np.array_equal(img.data[:, 2], img.data[:, 0] // 2)
    assert np.array_equal(render_labels(labels, 0).data, img.data)


def test_resize_and_pos_scale():
    img = synthetic_scene(8, 6, seed=0)
    small = resize_nearest(img, 4, 3)
    assert (small.width, small.height) == (4, 3)
    assert np.array_equal(small.data[1, 2], img.data[2, 4])
    assert default_pos_scale(100, 100, 100, 10) == pytest.approx(1.0)


def test_pixel_feature_map_validation():
    with pytest.raises(ValueError):
        PixelFeatureMap(np.zeros((2, 2, 1)), 1.0)
    fm = PixelFeatureMap.from_features(np.zeros((2, 3, 1)), 1.0)
    assert (fm.height, fm.width) == (2, 3)
