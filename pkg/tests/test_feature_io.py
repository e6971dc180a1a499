"""Feature/token container formats, manifest loading, and CLS enhancement."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protomatch.errors import FormatError, ValidationError
from protomatch.feature_io import (
    CoordAnswer,
    FeatureMap,
    QAExample,
    TextAnswer,
    TokenEmbeddings,
    enhance,
    load_dataset,
    load_features,
    load_tokens,
    save_features,
    save_tokens,
)
from protomatch.geometry import Box, GridSpec


def small_map(n_rows=2, n_cols=1, d=3, seed=0):
    rng = np.random.default_rng(seed)
    grid = GridSpec(n_rows * 16, n_cols * 16, 16)
    return FeatureMap(
        cls=rng.standard_normal(d).astype(np.float32),
        patches=rng.standard_normal((grid.n_patches, d)).astype(np.float32),
        grid=grid,
    )


class TestEnhance:
    def test_self_subtraction_zeroes(self):
        grid = GridSpec(32, 32, 16)
        v = np.arange(5, dtype=np.float32)
        f = FeatureMap(cls=v, patches=np.tile(v, (4, 1)), grid=grid)
        assert np.all(enhance(f).patches == 0.0)

    def test_zero_cls_is_identity(self):
        f = small_map(d=4)
        f.cls = np.zeros(4, dtype=np.float32)
        assert np.array_equal(enhance(f).patches, f.patches.astype(np.float64))

    def test_matches_elementwise_subtraction(self):
        rng = np.random.default_rng(3)
        grid = GridSpec(32, 32, 16)
        cls = rng.standard_normal(4)
        patches = rng.standard_normal((4, 4))
        f = FeatureMap(cls=cls, patches=patches, grid=grid)
        got = enhance(f).patches
        for n in range(4):
            for i in range(4):
                assert got[n, i] == patches[n, i] - cls[i]

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=50)
    def test_subtraction_inverse_is_exact(self, seed):
        # float32 values in a bounded range subtract exactly in float64
        rng = np.random.default_rng(seed)
        f = FeatureMap(
            cls=(rng.uniform(-1e4, 1e4, 6)).astype(np.float32),
            patches=(rng.uniform(-1e4, 1e4, (4, 6))).astype(np.float32),
            grid=GridSpec(32, 32, 16),
        )
        enhanced = enhance(f).patches
        restored = enhanced + f.cls.astype(np.float64)
        assert np.array_equal(restored, f.patches.astype(np.float64))


class TestFeatureRoundTrip:
    def test_round_trip_identical_bytes(self, tmp_path):
        f = small_map()
        p1, p2 = tmp_path / "a.pvf", tmp_path / "b.pvf"
        save_features(f, p1)
        save_features(load_features(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_round_trip_preserves_bit_patterns(self, tmp_path):
        f = small_map(seed=9)
        path = tmp_path / "f.pvf"
        save_features(f, path)
        loaded = load_features(path)
        assert loaded.cls.tobytes() == f.cls.tobytes()
        assert loaded.patches.tobytes() == f.patches.tobytes()
        assert loaded.grid == f.grid

    def test_truncated_payload_names_field(self, tmp_path):
        f = small_map()
        path = tmp_path / "f.pvf"
        save_features(f, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="payload length"):
            load_features(path)

    def test_full_scale_header(self, tmp_path):
        # 196 patches of dimension 768 load back with a 14x14 grid
        path = tmp_path / "big.pvf"
        payload = np.zeros((197, 768), dtype="<f4")
        payload[0, 0] = 1.5
        with open(path, "wb") as fh:
            fh.write(b"PVF1")
            fh.write(struct.pack("<5I", 196, 768, 14, 14, 16))
            fh.write(payload.tobytes())
        loaded = load_features(path)
        assert loaded.grid == GridSpec(224, 224, 16)
        assert loaded.n == 196 and loaded.d == 768
        assert loaded.cls[0] == 1.5

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.pvf"
        path.write_bytes(b"NOPE" + b"\0" * 40)
        with pytest.raises(FormatError, match="magic"):
            load_features(path)

    def test_grid_mismatch(self, tmp_path):
        path = tmp_path / "f.pvf"
        with open(path, "wb") as fh:
            fh.write(b"PVF1")
            fh.write(struct.pack("<5I", 5, 2, 2, 2, 16))  # N=5 but rows*cols=4
            fh.write(np.zeros((6, 2), dtype="<f4").tobytes())
        with pytest.raises(FormatError, match="N"):
            load_features(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "f.pvf"
        payload = np.zeros((5, 3), dtype="<f4")
        payload[2, 1] = np.nan
        with open(path, "wb") as fh:
            fh.write(b"PVF1")
            fh.write(struct.pack("<5I", 4, 3, 2, 2, 16))
            fh.write(payload.tobytes())
        with pytest.raises(FormatError, match="non-finite"):
            load_features(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            load_features(tmp_path / "absent.pvf")


class TestTokenRoundTrip:
    def test_round_trip(self, tmp_path):
        t = TokenEmbeddings(tokens=np.random.default_rng(1)
                            .standard_normal((5, 7)).astype(np.float32))
        path = tmp_path / "q.pvt"
        save_tokens(t, path)
        loaded = load_tokens(path)
        assert loaded.tokens.tobytes() == t.tokens.tobytes()

    def test_zero_tokens_rejected(self, tmp_path):
        path = tmp_path / "q.pvt"
        with open(path, "wb") as fh:
            fh.write(b"PVT1")
            fh.write(struct.pack("<2I", 0, 4))
        with pytest.raises(FormatError, match="L"):
            load_tokens(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "q.pvt"
        save_features(small_map(), path)  # a PVF file is not a PVT file
        with pytest.raises(FormatError, match="magic"):
            load_tokens(path)


def write_manifest(tmp_path, entries):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"examples": entries}), encoding="utf-8")
    return path


def write_example_files(tmp_path, image_id="ex0", d=3, seed=0):
    save_features(small_map(d=d, seed=seed), tmp_path / f"{image_id}.pvf")
    tokens = TokenEmbeddings(tokens=np.random.default_rng(seed + 1)
                             .standard_normal((4, 5)).astype(np.float32))
    save_tokens(tokens, tmp_path / f"{image_id}_q.pvt")
    return {
        "image_id": image_id,
        "features_path": f"{image_id}.pvf",
        "question_path": f"{image_id}_q.pvt",
    }


class TestManifest:
    def test_empty_manifest(self, tmp_path):
        assert load_dataset(write_manifest(tmp_path, [])) == []

    def test_grounding_example(self, tmp_path):
        entry = write_example_files(tmp_path)
        entry["candidates"] = [
            {"box": {"x_min": 0, "y_min": 0, "x_max": 16, "y_max": 16}}
            for _ in range(4)
        ]
        entry["correct_index"] = 2
        entry["evidence_box"] = {"x_min": 0, "y_min": 0, "x_max": 16, "y_max": 16}
        examples = load_dataset(write_manifest(tmp_path, [entry]))
        assert len(examples) == 1
        assert examples[0].pathway == "coord"
        assert examples[0].evidence_box == Box(0, 0, 16, 16)

    def test_correct_index_out_of_range(self, tmp_path):
        entry = write_example_files(tmp_path)
        entry["candidates"] = [{"box": {"x_min": 0, "y_min": 0, "x_max": 4, "y_max": 4}}] * 4
        entry["correct_index"] = 4
        with pytest.raises(ValidationError, match="correct_index"):
            load_dataset(write_manifest(tmp_path, [entry]))

    def test_mixed_pathways_rejected(self, tmp_path):
        entry = write_example_files(tmp_path)
        save_tokens(TokenEmbeddings(tokens=np.ones((2, 5), dtype=np.float32)),
                    tmp_path / "c.pvt")
        entry["candidates"] = [
            {"box": {"x_min": 0, "y_min": 0, "x_max": 4, "y_max": 4}},
            {"text_path": "c.pvt"},
        ]
        entry["correct_index"] = 0
        with pytest.raises(ValidationError, match="pathway"):
            load_dataset(write_manifest(tmp_path, [entry]))

    def test_missing_feature_file(self, tmp_path):
        entry = write_example_files(tmp_path)
        entry["features_path"] = "gone.pvf"
        entry["candidates"] = [{"box": {"x_min": 0, "y_min": 0, "x_max": 4, "y_max": 4}}]
        entry["correct_index"] = 0
        with pytest.raises(ValidationError, match="ex0"):
            load_dataset(write_manifest(tmp_path, [entry]))

    def test_manifest_not_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_bytes(b"\xff\xfe not json")
        with pytest.raises(FormatError):
            load_dataset(path)


class TestFormatFuzzSmoke:
    """Random corruption never escapes the structured error types."""

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=80, deadline=None)
    def test_corrupted_pvf(self, seed, tmp_path_factory):
        rng = np.random.default_rng(seed)
        tmp_path = tmp_path_factory.mktemp("fuzz")
        path = tmp_path / "f.pvf"
        save_features(small_map(), path)
        raw = bytearray(path.read_bytes())
        mode = rng.integers(3)
        if mode == 0:
            raw = raw[: rng.integers(len(raw))]
        elif mode == 1:
            for _ in range(int(rng.integers(1, 8))):
                raw[int(rng.integers(len(raw)))] = int(rng.integers(256))
        else:
            raw += bytes(rng.integers(0, 256, int(rng.integers(1, 64)), dtype=np.uint8))
        path.write_bytes(bytes(raw))
        try:
            load_features(path)
        except (FormatError, ValidationError):
            pass
