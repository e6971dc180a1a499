"""Export pipeline tests, including the 100-QA-pair integration run that
validates every emitted file against the consumer's own loaders via its CLI.

Pretrained checkpoints are not fetchable in this environment, so the tests
run the same model architectures at tiny width with deterministic random
weights ("tiny:<seed>" specs); the file contracts they exercise are identical.
"""

import json
import shutil
import struct
import subprocess
import sys

import numpy as np
import pytest

from feature_export.cli import main
from feature_export.export import AnnotationError, ExportJob, run_export
from feature_export.formats import ExportFormatError
from feature_export.sample_data import make_sample_dataset

CONSUMER = shutil.which("protomatch")
needs_consumer = pytest.mark.skipif(CONSUMER is None,
                                    reason="consumer CLI not installed")

TINY = {"vision_spec": "tiny:0", "text_spec": "tiny:1"}


def run_consumer(*args) -> subprocess.CompletedProcess:
    return subprocess.run([CONSUMER, *args], capture_output=True, text=True)


@pytest.fixture(scope="module")
def exported_hundred(tmp_path_factory):
    """25 scenes x 4 QA pairs = 100 QA pairs, exported with the tiny backbones."""
    root = tmp_path_factory.mktemp("export100")
    src = root / "src"
    out = root / "out"
    make_sample_dataset(str(src), n_images=25, qa_per_image=4, seed=3,
                        drop_grounding_every=10)
    job = ExportJob(images_dir=str(src), qa_json=str(src / "qa.json"),
                    out_dir=str(out), **TINY)
    manifest = run_export(job)
    return src, out, manifest


class TestExport:
    def test_emits_one_pvf_per_image_and_pvt_per_text(self, exported_hundred):
        _, out, manifest = exported_hundred
        doc = json.loads(open(manifest).read())
        assert len(doc["examples"]) == 100
        assert len(list(out.glob("*.pvf"))) == 25
        # 100 questions + 400 text candidates
        assert len(list(out.glob("*.pvt"))) == 500
        assert doc["coordinate_convention"]["converted"] == "half_open_xyxy"

    def test_pvf_header_matches_backbone_grid(self, exported_hundred):
        _, out, _ = exported_hundred
        raw = next(iter(sorted(out.glob("*.pvf")))).read_bytes()
        n, d, rows, cols, patch = struct.unpack("<5I", raw[4:24])
        assert (n, rows, cols, patch) == (196, 14, 14, 16)
        assert d == 32  # tiny backbone hidden size
        assert len(raw) == 24 + (n + 1) * d * 4

    def test_missing_grounding_becomes_no_evidence_box(self, exported_hundred):
        _, _, manifest = exported_hundred
        doc = json.loads(open(manifest).read())
        without = [e for e in doc["examples"] if "evidence_box" not in e]
        assert len(without) == 10  # every 10th QA pair had its box dropped

    def test_deterministic_repeat_export(self, tmp_path):
        src = tmp_path / "src"
        make_sample_dataset(str(src), n_images=1, qa_per_image=1, seed=5)
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run_export(ExportJob(images_dir=str(src), qa_json=str(src / "qa.json"),
                                 out_dir=str(out), **TINY))
            outputs.append({p.name: p.read_bytes() for p in out.iterdir()})
        assert outputs[0] == outputs[1]

    def test_empty_question_errors(self, tmp_path):
        src = tmp_path / "src"
        make_sample_dataset(str(src), n_images=1, qa_per_image=1, seed=6)
        doc = json.loads((src / "qa.json").read_text())
        doc["qa_pairs"][0]["question"] = "   "
        (src / "qa.json").write_text(json.dumps(doc))
        with pytest.raises(AnnotationError, match="no tokens"):
            run_export(ExportJob(images_dir=str(src), qa_json=str(src / "qa.json"),
                                 out_dir=str(tmp_path / "out"), **TINY))

    def test_single_word_text_has_tokens(self, tmp_path):
        src = tmp_path / "src"
        make_sample_dataset(str(src), n_images=1, qa_per_image=1, seed=7)
        doc = json.loads((src / "qa.json").read_text())
        doc["qa_pairs"][0]["question"] = "boat"
        (src / "qa.json").write_text(json.dumps(doc))
        out = tmp_path / "out"
        run_export(ExportJob(images_dir=str(src), qa_json=str(src / "qa.json"),
                             out_dir=str(out), **TINY))
        qa_id = doc["qa_pairs"][0]["qa_id"]
        raw = (out / f"{qa_id}_q.pvt").read_bytes()
        length, _ = struct.unpack("<2I", raw[4:12])
        assert length >= 1

    def test_declared_dimension_mismatch(self, tmp_path):
        src = tmp_path / "src"
        make_sample_dataset(str(src), n_images=1, qa_per_image=1, seed=8)
        with pytest.raises(ExportFormatError, match="expect-d"):
            run_export(ExportJob(images_dir=str(src), qa_json=str(src / "qa.json"),
                                 out_dir=str(tmp_path / "out"), expect_d=768, **TINY))

    def test_coordinate_candidates_pathway(self, tmp_path):
        src = tmp_path / "src"
        make_sample_dataset(str(src), n_images=1, qa_per_image=1, seed=9)
        doc = json.loads((src / "qa.json").read_text())
        doc["qa_pairs"][0]["candidates"] = [
            {"x": 0, "y": 0, "width": 32, "height": 32},
            {"x": 64, "y": 64, "width": 32, "height": 32},
            {"x": 128, "y": 0, "width": 32, "height": 32},
            {"x": 0, "y": 128, "width": 32, "height": 32},
        ]
        (src / "qa.json").write_text(json.dumps(doc))
        out = tmp_path / "out"
        manifest = run_export(ExportJob(images_dir=str(src),
                                        qa_json=str(src / "qa.json"),
                                        out_dir=str(out), **TINY))
        entry = json.loads(open(manifest).read())["examples"][0]
        assert all("box" in c for c in entry["candidates"])
        assert entry["candidates"][0]["box"] == {"x_min": 0, "y_min": 0,
                                                 "x_max": 32, "y_max": 32}


class TestCli:
    def test_sample_and_export_commands(self, tmp_path):
        src = tmp_path / "src"
        out = tmp_path / "out"
        assert main(["sample", "--out", str(src), "--n-images", "1",
                     "--qa-per-image", "1", "--seed", "2"]) == 0
        assert main(["export", "--images", str(src),
                     "--qa-json", str(src / "qa.json"), "--out", str(out),
                     "--vision-model", "tiny:0", "--text-model", "tiny:1"]) == 0
        assert (out / "manifest.json").is_file()

    def test_unloadable_backbone_exit_code(self, tmp_path):
        src = tmp_path / "src"
        make_sample_dataset(str(src), n_images=1, qa_per_image=1, seed=2)
        code = main(["export", "--images", str(src),
                     "--qa-json", str(src / "qa.json"),
                     "--out", str(tmp_path / "out"),
                     "--vision-model", "does/not-exist-anywhere",
                     "--text-model", "tiny:1"])
        assert code == 3


@needs_consumer
class TestConsumerIntegration:
    """The emitted files must pass the consumer's loaders with zero
    validation errors, end to end through its CLI."""

    def test_vlas_runs_over_all_hundred(self, exported_hundred, tmp_path):
        _, _, manifest = exported_hundred
        report_path = tmp_path / "vlas.json"
        result = run_consumer("vlas", "--manifest", manifest, "--vlas-k", "3",
                              "--m", "4", "--out", str(report_path))
        assert result.returncode == 0, result.stderr
        report = json.loads(report_path.read_text())
        assert report["n_qa"] == 90  # 10 QA pairs have no grounding box
        assert report["skipped_no_gt"] == 10

    def test_match_on_exported_pair(self, exported_hundred, tmp_path):
        _, out, manifest = exported_hundred
        entry = json.loads(open(manifest).read())["examples"][0]
        match_path = tmp_path / "m.json"
        result = run_consumer("match",
                              "--features", str(out / entry["features_path"]),
                              "--question", str(out / entry["question_path"]),
                              "--m", "4", "--k", "3", "--r", "3",
                              "--out", str(match_path))
        assert result.returncode == 0, result.stderr
        doc = json.loads(match_path.read_text())
        assert len(doc["results"]) == 4
        assert all(len(r["selections"]) == 3 for r in doc["results"])

    def test_train_and_eval_complete(self, exported_hundred, tmp_path):
        _, _, manifest = exported_hundred
        ckpt = tmp_path / "ckpt"
        result = run_consumer("train", "--manifest", manifest, "--out", str(ckpt),
                              "--epochs", "1", "--m", "4", "--seed", "0")
        assert result.returncode == 0, result.stderr
        out = tmp_path / "eval.json"
        result = run_consumer("eval", "--manifest", manifest,
                              "--checkpoint", str(ckpt), "--out", str(out))
        assert result.returncode == 0, result.stderr
        doc = json.loads(out.read_text())
        assert doc["n"] == 100 and 0.0 <= doc["accuracy"] <= 1.0

    def test_explain_on_exported_example(self, exported_hundred, tmp_path):
        _, _, manifest = exported_hundred
        svg = tmp_path / "overlay.svg"
        result = run_consumer("explain", "--manifest", manifest, "--index", "0",
                              "--m", "4", "--vlas-k", "3", "--out", str(svg))
        assert result.returncode == 0, result.stderr
        assert svg.read_text().count("<rect") == 4
