import numpy as np
import pytest

from octgate.features import (
    BuiltinPyramidExtractor,
    ExportedNetworkExtractor,
    FeatureSet,
    builtin_level_features,
    builtin_pyramid_levels,
    extract,
    extractor_for_descriptor,
)
from octgate.preprocess import PreppedImage

torch = pytest.importorskip("torch")


def make_prepped(grid: np.ndarray) -> PreppedImage:
    return PreppedImage(np.stack([grid, grid, grid]))


def naive_level_features(grid: np.ndarray) -> np.ndarray:
    """Brute-force per-pixel oracle for the six pooled statistics."""
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape
    mean = g.sum() / (h * w)
    std = np.sqrt(((g - mean) ** 2).sum() / (h * w))
    dx = [abs(g[i, j + 1] - g[i, j]) for i in range(h) for j in range(w - 1)]
    dy = [abs(g[i + 1, j] - g[i, j]) for i in range(h - 1) for j in range(w)]
    lap = [
        abs(g[i + 1, j] + g[i - 1, j] + g[i, j + 1] + g[i, j - 1] - 4 * g[i, j])
        for i in range(1, h - 1)
        for j in range(1, w - 1)
    ]
    contrast = []
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ii = min(max(i + di, 0), h - 1)
                    jj = min(max(j + dj, 0), w - 1)
                    acc += g[ii, jj]
            contrast.append(abs(g[i, j] - acc / 9.0))
    return np.array(
        [
            mean,
            std,
            float(np.mean(dx)),
            float(np.mean(dy)),
            float(np.mean(lap)) if lap else 0.0,
            float(np.mean(contrast)),
        ]
    )


class TestPyramid:
    def test_level_shapes_halve(self):
        prepped = make_prepped(np.zeros((64, 224)))
        levels = builtin_pyramid_levels(prepped, 4)
        assert [lv.shape for lv in levels] == [
            (64, 224),
            (32, 112),
            (16, 56),
            (8, 28),
        ]

    def test_constant_input_all_levels_constant(self):
        prepped = make_prepped(np.full((16, 16), 3.25))
        for lv in builtin_pyramid_levels(prepped, 3):
            np.testing.assert_allclose(lv, 3.25, atol=1e-12)

    def test_impulse_matches_direct_convolution(self):
        # Level 1 must equal the explicit 3x3 binomial convolution of the
        # impulse, decimated at even indices.
        grid = np.zeros((8, 8))
        grid[4, 4] = 1.0
        prepped = make_prepped(grid)
        level1 = builtin_pyramid_levels(prepped, 2)[1]
        kernel = np.outer([0.25, 0.5, 0.25], [0.25, 0.5, 0.25])
        smoothed = np.zeros((8, 8))
        for i in range(8):
            for j in range(8):
                acc = 0.0
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ii = min(max(i + di, 0), 7)
                        jj = min(max(j + dj, 0), 7)
                        acc += kernel[di + 1, dj + 1] * grid[ii, jj]
                smoothed[i, j] = acc
        np.testing.assert_allclose(level1, smoothed[::2, ::2], atol=1e-12)
        assert level1.sum() == pytest.approx(
            smoothed[::2, ::2].sum(), abs=1e-12
        )

    def test_too_deep_rejected(self):
        prepped = make_prepped(np.zeros((8, 8)))
        with pytest.raises(ValueError, match="too deep"):
            builtin_pyramid_levels(prepped, 4)


class TestLevelFeatures:
    def test_constant_grid(self):
        feats = builtin_level_features(np.full((5, 7), 4.5))
        np.testing.assert_allclose(feats, [4.5, 0, 0, 0, 0, 0], atol=1e-12)

    def test_horizontal_ramp_analytic(self):
        slope = -1.75
        grid = np.tile(slope * np.arange(9.0), (6, 1))
        feats = builtin_level_features(grid)
        assert feats[2] == pytest.approx(abs(slope), abs=1e-12)
        assert feats[3] == pytest.approx(0.0, abs=1e-12)

    def test_random_grid_matches_naive_oracle(self, rng):
        grid = rng.normal(size=(6, 9))
        np.testing.assert_allclose(
            builtin_level_features(grid), naive_level_features(grid), atol=1e-9
        )

    def test_spatial_pooling_equals_arithmetic_mean(self, rng):
        grid = rng.normal(size=(12, 17))
        total = 0.0
        for i in range(12):
            for j in range(17):
                total += grid[i, j]
        assert builtin_level_features(grid)[0] == pytest.approx(
            total / (12 * 17), abs=1e-9
        )


class TestBuiltinExtractor:
    def test_dims_and_determinism(self, rng):
        ext = BuiltinPyramidExtractor(4)
        prepped = make_prepped(rng.normal(size=(64, 224)))
        a = extract(prepped, ext)
        b = extract(prepped, ext)
        assert a.dims == [6, 6, 6, 6]
        for va, vb in zip(a.vectors, b.vectors):
            assert va.tobytes() == vb.tobytes()

    def test_constant_input_features(self):
        ext = BuiltinPyramidExtractor(3)
        fs = extract(make_prepped(np.full((32, 32), 2.5)), ext)
        for v in fs.vectors:
            assert v[0] == pytest.approx(2.5, abs=1e-9)
            np.testing.assert_allclose(v[1:], 0.0, atol=1e-9)

    def test_descriptor_digest_stable(self):
        a = BuiltinPyramidExtractor(4).descriptor
        b = BuiltinPyramidExtractor(4).descriptor
        c = BuiltinPyramidExtractor(5).descriptor
        assert a == b
        assert a.config_digest != c.config_digest

    def test_descriptor_roundtrip_reconstruction(self):
        ext = BuiltinPyramidExtractor(3)
        again = extractor_for_descriptor(ext.descriptor)
        assert again.levels == 3

    def test_coarse_level_translation_tolerance(self):
        # Smooth fixture; a true one-pixel shift (two offset crops of one
        # wider field, no wrap seam) must move coarse features < 10%.
        y, x = np.mgrid[0:64, 0:225]
        field = 100 + 50 * np.sin(x / 30.0) + 30 * np.cos(y / 15.0)
        ext = BuiltinPyramidExtractor(4)
        f0 = extract(make_prepped(field[:, 0:224]), ext).vectors[3]
        f1 = extract(make_prepped(field[:, 1:225]), ext).vectors[3]
        rel = np.abs(f1 - f0) / np.maximum(np.abs(f0), 1e-9)
        assert rel.max() < 0.10


class _TwoTap(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = torch.nn.Conv2d(3, 32, 3, padding=1)
        self.conv2 = torch.nn.Conv2d(32, 96, 3, stride=2, padding=1)

    def forward(self, x):
        a = torch.relu(self.conv1(x))
        b = torch.relu(self.conv2(a))
        return {"block1": a, "block2": b}


@pytest.fixture(scope="module")
def two_tap_model(tmp_path_factory):
    torch.manual_seed(7)
    path = tmp_path_factory.mktemp("models") / "two_tap.pt"
    torch.jit.save(torch.jit.script(_TwoTap().eval()), str(path))
    return path


class TestExportedNetwork:
    def test_tap_dims_match_channel_widths(self, two_tap_model, rng):
        ext = ExportedNetworkExtractor(two_tap_model, ["block1", "block2"])
        fs = ext.extract(make_prepped(rng.normal(size=(16, 24))))
        assert fs.dims == [32, 96]

    def test_pooling_is_spatial_mean(self, two_tap_model, rng):
        ext = ExportedNetworkExtractor(two_tap_model, ["block1"])
        prepped = make_prepped(rng.normal(size=(16, 24)))
        fs = ext.extract(prepped)
        with torch.no_grad():
            raw = torch.jit.load(str(two_tap_model))(
                torch.from_numpy(prepped.pixels.astype(np.float32)).unsqueeze(0)
            )["block1"]
        expected = raw[0].mean(dim=(1, 2)).double().numpy()
        np.testing.assert_allclose(fs.vectors[0], expected, atol=1e-7)

    def test_deterministic(self, two_tap_model, rng):
        ext = ExportedNetworkExtractor(two_tap_model, ["block1", "block2"])
        prepped = make_prepped(rng.normal(size=(16, 24)))
        a = ext.extract(prepped)
        b = ext.extract(prepped)
        for va, vb in zip(a.vectors, b.vectors):
            assert va.tobytes() == vb.tobytes()

    def test_missing_tap_lists_available(self, two_tap_model, rng):
        ext = ExportedNetworkExtractor(two_tap_model, ["nonexistent"])
        with pytest.raises(KeyError, match="block1"):
            ext.extract(make_prepped(rng.normal(size=(16, 24))))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ExportedNetworkExtractor(tmp_path / "nope.pt", ["a"])

    def test_descriptor_after_probe(self, two_tap_model):
        ext = ExportedNetworkExtractor(two_tap_model, ["block1", "block2"])
        ext.probe(16, 24)
        desc = ext.descriptor
        assert desc.kind == "exported_network"
        assert desc.dims == (32, 96)


def test_feature_set_validation():
    with pytest.raises(ValueError, match="at least one"):
        FeatureSet(())
    with pytest.raises(ValueError, match="finite"):
        FeatureSet((np.array([1.0, np.inf]),))
    fs = FeatureSet((np.array([1.0, 2.0]), np.array([3.0])))
    assert fs.k == 2
    assert fs.dims == [2, 1]
    np.testing.assert_array_equal(fs.concatenated(), [1.0, 2.0, 3.0])
