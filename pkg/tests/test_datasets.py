import gzip
import math
import struct
from pathlib import Path

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqrnn.datasets import (
    SERIES_KINDS,
    ImageDataset,
    downsample,
    generate_series,
    load_mnist,
    make_windows,
    read_idx,
    repeat_last_baseline,
    bessel_j0,
    write_idx,
    write_series_csv,
)
from cvqrnn.errors import FormatError

DATA = Path(__file__).parent / "data"
IMAGES = DATA / "mnist36-images-idx3-ubyte.gz"
LABELS = DATA / "mnist36-labels-idx1-ubyte.gz"


class TestBessel:
    def test_origin(self):
        assert bessel_j0(0.0) == 1.0

    def test_first_zero(self):
        assert abs(bessel_j0(2.404825557695773)) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(x=st.floats(-40, 40))
    def test_even(self, x):
        assert bessel_j0(-x) == bessel_j0(x)

    def test_against_high_precision(self):
        mpmath.mp.dps = 30
        xs = np.concatenate([np.linspace(0, 40, 4001), [7.999, 8.0, 11.999, 12.0, 12.001]])
        ref = np.array([float(mpmath.besselj(0, mpmath.mpf(float(x)))) for x in xs])
        assert np.abs(bessel_j0(xs) - ref).max() <= 1e-10

    def test_vectorized_shape(self):
        assert bessel_j0(np.zeros((2, 3))).shape == (2, 3)


class TestSeries:
    def test_values_at_points(self):
        assert generate_series("sine", 200, (0, math.pi)).values[-1] == pytest.approx(0, abs=1e-15)
        s = generate_series("sine", 201, (0, math.pi))
        assert s.values[100] == pytest.approx(1.0)
        assert generate_series("two_sine").values[0] == 0.0
        assert generate_series("damped_cosine").values[0] == 1.0
        tri = generate_series("triangle", 401, (0, 2 * math.pi))
        assert tri.values[100] == pytest.approx(1.0)
        assert tri.values[50] == pytest.approx(0.5)
        assert tri.values[300] == pytest.approx(-1.0)

    @pytest.mark.parametrize("kind", SERIES_KINDS)
    def test_grid_and_range(self, kind):
        s = generate_series(kind)
        assert s.xs[0] == 0.0 and s.xs[-1] == pytest.approx(8 * math.pi)
        steps = np.diff(s.xs)
        assert np.abs(steps - steps[0]).max() < 1e-12
        assert np.all(np.abs(s.values) <= 1.0)

    def test_split_and_window_counts(self):
        s = generate_series("bessel", 200, window=4)
        assert s.train_inputs.shape == (96, 4) and s.test_inputs.shape == (96, 4)
        np.testing.assert_array_equal(s.train_inputs[0], s.values[:4])
        assert s.train_targets[-1] == s.values[99]
        np.testing.assert_array_equal(s.test_inputs[0], s.values[100:104])
        assert s.test_target_x[0] == s.xs[104]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_series("square")

    def test_too_short(self):
        with pytest.raises(ValueError):
            generate_series("sine", 6, window=4)

    def test_csv(self, tmp_path):
        s = generate_series("sine", 10)
        write_series_csv(tmp_path / "s.csv", s)
        lines = (tmp_path / "s.csv").read_bytes().split(b"\n")
        assert lines[0] == b"x,value" and lines[1] == b"0.0,0.0" and len(lines) == 12


class TestWindows:
    def test_single(self):
        (inp, tgt), = make_windows([1, 2, 3, 4, 5], 4)
        np.testing.assert_array_equal(inp, [1, 2, 3, 4])
        assert tgt == 5

    def test_constant(self):
        assert all(t == 2.0 for _, t in make_windows(np.full(10, 2.0), 3))

    def test_count(self):
        assert len(make_windows(np.arange(100.0), 4)) == 96

    def test_too_short(self):
        with pytest.raises(ValueError):
            make_windows([1, 2, 3], 3)

    def test_repeat_last(self):
        assert repeat_last_baseline([1, 2, 3, 4]) == 4
        assert repeat_last_baseline([0.5] * 3) == 0.5
        with pytest.raises(ValueError):
            repeat_last_baseline([])
        windows = make_windows(np.full(8, 0.3), 4)
        assert sum((repeat_last_baseline(i) - t) ** 2 for i, t in windows) == 0.0


class TestIdx:
    @settings(max_examples=20, deadline=None)
    @given(shape=st.lists(st.integers(1, 5), min_size=1, max_size=3), compress=st.booleans(), seed=st.integers(0, 99))
    def test_round_trip(self, tmp_path_factory, shape, compress, seed):
        arr = np.random.default_rng(seed).integers(0, 256, shape, dtype=np.uint8)
        path = tmp_path_factory.mktemp("idx") / "a.idx"
        write_idx(path, arr, compress=compress)
        np.testing.assert_array_equal(read_idx(path), arr)

    def test_header_bytes(self, tmp_path):
        write_idx(tmp_path / "l", np.array([3, 6], dtype=np.uint8))
        assert (tmp_path / "l").read_bytes() == bytes.fromhex("00000801 00000002 03 06".replace(" ", ""))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(struct.pack(">II", 0x00000901, 1) + b"\x00")
        with pytest.raises(FormatError):
            read_idx(tmp_path / "x")
        write_idx(tmp_path / "l", np.zeros(2, dtype=np.uint8))
        with pytest.raises(FormatError):
            read_idx(tmp_path / "l", expected_magic=0x00000803)

    def test_truncated(self, tmp_path):
        raw = struct.pack(">IIII", 0x00000803, 2, 28, 28) + bytes(28 * 28)
        (tmp_path / "t").write_bytes(raw)
        with pytest.raises(FormatError):
            read_idx(tmp_path / "t")
        (tmp_path / "h").write_bytes(raw[:6])
        with pytest.raises(FormatError):
            read_idx(tmp_path / "h")


def synthetic_mnist(tmp_path, labels, images=None):
    labels = np.asarray(labels, dtype=np.uint8)
    if images is None:
        images = np.zeros((len(labels), 28, 28), dtype=np.uint8)
    write_idx(tmp_path / "img", images)
    write_idx(tmp_path / "lab", labels)
    return tmp_path / "img", tmp_path / "lab"


class TestMnist:
    def test_pooling(self):
        img = np.zeros((28, 28))
        img[8:12, 20:24] = 255
        pooled = downsample(img / 255)
        assert pooled[2, 5] == 1.0 and pooled.sum() == 1.0
        np.testing.assert_array_equal(downsample(np.zeros((28, 28))), np.zeros((7, 7)))

    def test_filter_and_mapping(self, tmp_path):
        images = np.zeros((6, 28, 28), dtype=np.uint8)
        images[1, :4, :4] = 255
        paths = synthetic_mnist(tmp_path, [1, 3, 6, 7, 3, 6], images)
        ds = load_mnist(*paths, n_images=4)
        np.testing.assert_array_equal(ds.labels, [0, 1, 0, 1])
        assert ds.sequences.shape == (4, 49)
        assert ds.sequences[0, 0] == 1.0 and ds.sequences[0, 1:].sum() == 0.0
        assert ds.warnings == []

    def test_row_major(self, tmp_path):
        images = np.zeros((1, 28, 28), dtype=np.uint8)
        images[0, 4:8, 0:4] = 255
        ds = load_mnist(*synthetic_mnist(tmp_path, [6], images), n_images=1)
        assert ds.sequences[0, 7] == 1.0

    def test_shortfall_warns(self, tmp_path, caplog):
        ds = load_mnist(*synthetic_mnist(tmp_path, [3, 6, 0]), n_images=10)
        assert len(ds.labels) == 2 and len(ds.warnings) == 1
        assert "only 2" in caplog.text

    def test_split(self, tmp_path):
        ds = load_mnist(*synthetic_mnist(tmp_path, [3, 6] * 5), n_images=10)
        assert len(ds.train_targets) == 8 and len(ds.test_targets) == 2

    def test_mismatched_files(self, tmp_path):
        write_idx(tmp_path / "img", np.zeros((2, 28, 28), dtype=np.uint8))
        write_idx(tmp_path / "lab", np.zeros(3, dtype=np.uint8))
        with pytest.raises(FormatError):
            load_mnist(tmp_path / "img", tmp_path / "lab")
        with pytest.raises(FormatError):
            load_mnist(tmp_path / "lab", tmp_path / "img")

    def test_fixture(self):
        ds = load_mnist(IMAGES, LABELS, n_images=200)
        assert ds.class_counts == {"3": 100, "6": 100}
        assert ds.sequences.min() >= 0 and ds.sequences.max() <= 1
        assert len(ds.train_inputs) == 160

    def test_fixture_is_gzip(self):
        assert gzip.decompress(IMAGES.read_bytes())[:4] == bytes.fromhex("00000803")

    def test_image_dataset_validation(self):
        with pytest.raises(ValueError):
            ImageDataset(np.zeros((2, 48)), [0, 1])
        with pytest.raises(ValueError):
            ImageDataset(np.zeros((2, 49)), [0, 2])
