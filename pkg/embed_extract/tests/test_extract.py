import json
import os

import numpy as np
import pytest

from embed_extract.extract import ExtractionError, extract
from embed_extract.records import RecordError, read_jsonl

from conftest import run_xproto


class TestRecords:
    def test_reads_valid_jsonl(self, corpus_jsonl):
        records = read_jsonl(corpus_jsonl)
        assert len(records) == 50
        assert all(r.domain == "source" for r in records)

    def test_malformed_json_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text("not json\n")
        with pytest.raises(RecordError, match="invalid JSON"):
            read_jsonl(str(p))

    def test_missing_field(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"text": "alice", "head": [0, 5], "tail": [0, 2]}\n')
        with pytest.raises(RecordError, match="missing field"):
            read_jsonl(str(p))

    def test_span_out_of_bounds(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        rec = {"text": "alice", "head": [0, 99], "tail": [0, 2],
               "relation": "r", "domain": "source"}
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(RecordError, match="out of bounds"):
            read_jsonl(str(p))

    def test_overlapping_spans(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        rec = {"text": "alice works", "head": [0, 7], "tail": [3, 11],
               "relation": "r", "domain": "source"}
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(RecordError, match="overlap"):
            read_jsonl(str(p))

    def test_empty_input(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        with pytest.raises(RecordError, match="no records"):
            read_jsonl(str(p))


class TestExtract:
    def test_count_and_labels_preserved(self, tiny_jsonl, model_dir, tmp_path):
        out = tmp_path / "ds"
        summary = extract(tiny_jsonl, model_dir, "entity-marker", str(out))
        assert summary["count"] == 3
        assert summary["relations"] == 2
        meta = json.loads((out / "meta.json").read_text())
        assert meta["count"] == 3
        assert meta["relations"] == ["birthplace", "employer"]
        labels = np.fromfile(out / "labels.u32", dtype="<u4")
        assert labels.tolist() == [1, 1, 0]

    def test_dim_matches_model_hidden_size(self, tiny_jsonl, model_dir, tmp_path):
        summary = extract(tiny_jsonl, model_dir, "cls-token", str(tmp_path / "d"))
        assert summary["dim"] == 32

    def test_repeated_runs_byte_identical(self, tiny_jsonl, model_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        extract(tiny_jsonl, model_dir, "entity-marker", str(a))
        extract(tiny_jsonl, model_dir, "entity-marker", str(b))
        for name in ("meta.json", "embeddings.f32", "labels.u32"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_poolings_differ(self, tiny_jsonl, model_dir, tmp_path):
        extract(tiny_jsonl, model_dir, "cls-token", str(tmp_path / "cls"))
        extract(tiny_jsonl, model_dir, "entity-marker-concat",
                str(tmp_path / "ent"))
        cls_vecs = np.fromfile(tmp_path / "cls" / "embeddings.f32", dtype="<f4")
        ent_vecs = np.fromfile(tmp_path / "ent" / "embeddings.f32", dtype="<f4")
        assert cls_vecs.shape == ent_vecs.shape
        assert not np.array_equal(cls_vecs, ent_vecs)

    def test_entity_pooling_is_mean_of_entity_tokens(self, model_dir, tmp_path):
        # a record whose two entities are single tokens at known positions
        rec = {"text": "alice founded acme", "head": [0, 5], "tail": [14, 18],
               "relation": "founder", "domain": "source"}
        p = tmp_path / "one.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        from embed_extract.extract import embed_records
        from embed_extract.records import read_jsonl as rj
        records = rj(str(p))
        pooled = embed_records(records, model_dir, "entity-marker")
        import torch
        from transformers import AutoModel, AutoTokenizer
        tok = AutoTokenizer.from_pretrained(model_dir)
        model = AutoModel.from_pretrained(model_dir)
        model.eval()
        enc = tok([rec["text"]], return_tensors="pt")
        with torch.no_grad():
            hidden = model(**enc).last_hidden_state[0]
        # tokens: [CLS] alice founded acme [SEP]
        want = ((hidden[1] + hidden[3]) / 2).numpy()
        np.testing.assert_allclose(pooled[0], want, atol=1e-6)

    def test_mixed_domains_rejected(self, tmp_path, model_dir):
        recs = [
            {"text": "alice founded acme", "head": [0, 5], "tail": [14, 18],
             "relation": "r", "domain": "source"},
            {"text": "bob founded acme", "head": [0, 3], "tail": [12, 16],
             "relation": "r", "domain": "target"},
        ]
        p = tmp_path / "mixed.jsonl"
        p.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
        with pytest.raises(RecordError, match="mix domains"):
            extract(str(p), model_dir, "cls-token", str(tmp_path / "out"))

    def test_bad_model_path(self, tiny_jsonl, tmp_path):
        with pytest.raises(ExtractionError, match="cannot load model"):
            extract(tiny_jsonl, str(tmp_path / "no-model"), "cls-token",
                    str(tmp_path / "out"))

    def test_unlabeled_flag(self, tiny_jsonl, model_dir, tmp_path):
        out = tmp_path / "ds"
        extract(tiny_jsonl, model_dir, "cls-token", str(out), labeled=False)
        meta = json.loads((out / "meta.json").read_text())
        assert meta["labeled"] is False

    def test_truncated_span_alignment_fails_cleanly(self, model_dir, tmp_path):
        long_text = "alice " + "again " * 120 + "acme"
        rec = {"text": long_text, "head": [0, 5],
               "tail": [len(long_text) - 4, len(long_text)],
               "relation": "r", "domain": "source"}
        p = tmp_path / "long.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ExtractionError, match="no aligned token"):
            extract(str(p), model_dir, "entity-marker", str(tmp_path / "out"),
                    max_length=16)

    def test_output_passes_engine_validator(self, tiny_jsonl, model_dir, tmp_path):
        out = tmp_path / "ds"
        extract(tiny_jsonl, model_dir, "entity-marker", str(out))
        result = run_xproto("validate-data", str(out))
        assert result.returncode == 0, result.stdout + result.stderr


class TestCli:
    def test_extract_command(self, tiny_jsonl, model_dir, tmp_path, capsys):
        from embed_extract.cli import main
        code = main(["--in", tiny_jsonl, "--model", model_dir,
                     "--pooling", "entity-marker", "--out", str(tmp_path / "d")])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["count"] == 3

    def test_record_error_exit_2(self, tmp_path, model_dir, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("nope\n")
        from embed_extract.cli import main
        assert main(["--in", str(bad), "--model", model_dir,
                     "--out", str(tmp_path / "d")]) == 2

    def test_model_error_exit_1(self, tiny_jsonl, tmp_path):
        from embed_extract.cli import main
        assert main(["--in", tiny_jsonl, "--model", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "d")]) == 1
