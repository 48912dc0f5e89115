import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from fpkrylov.exceptions import ImageLoadError, ValidationError
from fpkrylov.grid import DiffusionParams, make_grid
from fpkrylov.io import (
    channels_of,
    load_image,
    read_embedded,
    read_scores,
    save_pgm,
    write_embedded,
    write_scores,
    write_system,
)
from fpkrylov.stencil import assemble_rhs, compute_coefficients, to_banded
from fpkrylov.grid import LogDensityField


def _pgm(path, pixels):
    h, w = pixels.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.astype(np.uint8).tobytes())


def test_pgm_black_white_mid(tmp_path):
    px = np.array([[0, 255, 128], [128, 0, 255], [255, 128, 0]])
    _pgm(tmp_path / "a.pgm", px)
    img = load_image(tmp_path / "a.pgm")
    assert img.shape == (3, 3)
    assert img[0, 0] == 0.0 and img[0, 1] == 1.0
    assert abs(img[0, 2] - 128 / 255) < 1e-15


def test_pgm_roundtrip(tmp_path, rng):
    img = np.round(rng.uniform(size=(8, 8)) * 255) / 255
    save_pgm(tmp_path / "r.pgm", img)
    assert np.allclose(load_image(tmp_path / "r.pgm"), img, atol=1e-15)


def test_png_gray_and_rgb(tmp_path):
    gray = np.arange(16, dtype=np.uint8).reshape(4, 4) * 16
    Image.fromarray(gray, mode="L").save(tmp_path / "g.png")
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    rgb[..., 2] = 51
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "c.png")
    g = load_image(tmp_path / "g.png")
    c = load_image(tmp_path / "c.png")
    assert g.shape == (4, 4) and np.allclose(g, gray / 255)
    assert c.shape == (4, 4, 3)
    chans = channels_of(c)
    assert len(chans) == 3
    assert np.all(chans[0] == 1.0) and np.all(chans[1] == 0.0) and np.allclose(chans[2], 0.2)


def test_grid_mismatch_rejected(tmp_path):
    _pgm(tmp_path / "a.pgm", np.zeros((4, 4)))
    load_image(tmp_path / "a.pgm", make_grid(4, 4, 10))
    with pytest.raises(ImageLoadError):
        load_image(tmp_path / "a.pgm", make_grid(8, 8, 10))


def test_unsupported_inputs(tmp_path):
    Image.new("RGB", (4, 4)).save(tmp_path / "a.bmp")
    with pytest.raises(ImageLoadError):
        load_image(tmp_path / "a.bmp")
    (tmp_path / "junk.pgm").write_bytes(b"not an image")
    with pytest.raises(ImageLoadError):
        load_image(tmp_path / "junk.pgm")
    with pytest.raises(ImageLoadError):
        load_image(tmp_path / "missing.png")
    Image.new("RGBA", (4, 4)).save(tmp_path / "a.png")
    with pytest.raises(ImageLoadError):
        load_image(tmp_path / "a.png")
    Image.new("RGB", (4, 4)).save(tmp_path / "a.ppm")
    with pytest.raises(ImageLoadError):
        load_image(tmp_path / "a.ppm")


def test_channels_of_rejects_bad_rank():
    with pytest.raises(ValidationError):
        channels_of(np.zeros(4))


def test_score_file_layout(tmp_path):
    s = np.arange(2 * 1 * 3 * 3 * 2, dtype=float).reshape(2, 1, 3, 3, 2)
    man = write_scores(tmp_path / "s.bin", s, {"mode": "direct"})
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:4] == b"SCRT"
    assert np.frombuffer(raw[4:24], dtype="<u4").tolist() == [1, 2, 3, 3, 1]
    assert np.frombuffer(raw[24:], dtype="<f8").tolist() == s.ravel().tolist()
    side = json.loads((tmp_path / "s.bin.json").read_text())
    assert side["checksum"] == man["checksum"] and side["mode"] == "direct"


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 2), st.just(3), st.just(3), st.just(2)),
              elements=st.floats(-1e6, 1e6)))
def test_score_file_roundtrip(tmp_path_factory, s):
    p = tmp_path_factory.mktemp("s") / "s.bin"
    write_scores(p, s)
    assert np.array_equal(read_scores(p), s)


def test_score_file_corruption_detected(tmp_path):
    p = tmp_path / "s.bin"
    write_scores(p, np.zeros((1, 1, 3, 3, 2)))
    data = bytearray(p.read_bytes())
    data[-1] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(ValidationError, match="checksum"):
        read_scores(p)
    read_scores(p, verify=False)
    p.write_bytes(bytes(data[:-8]))
    with pytest.raises(ValidationError):
        read_scores(p, verify=False)
    p.write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(ValidationError):
        read_scores(p, verify=False)


def test_write_scores_rejects_bad_shape(tmp_path):
    with pytest.raises(ValidationError):
        write_scores(tmp_path / "s.bin", np.zeros((2, 3, 3, 2)))


def test_embedded_roundtrip(tmp_path, rng):
    v = rng.normal(size=(4, 3, 3))
    write_embedded(tmp_path / "e.npz", v, "x")
    back, rule = read_embedded(tmp_path / "e.npz")
    assert np.array_equal(back, v) and rule == "x"


def test_write_system(tmp_path, rng):
    spec = make_grid(4, 4, 10)
    m = LogDensityField(rng.normal(size=(4, 4)), 0)
    params = DiffusionParams(g=0.5)
    c = compute_coefficients(m, params, spec, 1)
    system = to_banded(c, assemble_rhs(m, params, spec, 1))
    write_system(tmp_path / "sys.npz", system)
    with np.load(tmp_path / "sys.npz") as z:
        assert z["offsets"].tolist() == [-4, -1, 0, 1, 4]
        assert np.array_equal(z["rhs"], system.rhs)
        assert np.array_equal(z["bands"][2], system.bands[0])
