"""File formats, run configuration, and the command line front end.

The loss golden in tests/fixtures/expected_loss.jsonl was produced once by
the direct-formula evaluator in naive_reference.py (see fixtures/generate.py),
so the CLI is checked against an independent route, not against itself.
"""

import dataclasses
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from rca.cli import main
from rca.errors import ConfigError, DimensionError, ParseError, ValidationError
from rca.io import (
    InstanceRecord,
    RunConfig,
    env_seed,
    read_instances,
    read_run_config,
    read_state,
    read_vocab,
    to_json,
    write_instances,
    write_vocab,
)
from rca.trainer import SyntheticConfig, TrainerConfig

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")
VOCAB = os.path.join(FIXTURES, "vocab.jsonl")
INSTANCES = os.path.join(FIXTURES, "instances.jsonl")
UNTAGGED = os.path.join(FIXTURES, "instances_untagged.jsonl")
MALFORMED = os.path.join(FIXTURES, "malformed.jsonl")
WRONGDIM = os.path.join(FIXTURES, "wrongdim.jsonl")
RUN_CFG = os.path.join(FIXTURES, "run.cfg")


def run_cli(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------------------
# JSON serialization


class TestToJson:
    def test_seventeen_digit_floats(self):
        assert to_json(0.1) == "0.10000000000000001"

    def test_floats_round_trip_exactly(self):
        rng = np.random.default_rng(0)
        for x in rng.standard_normal(200) * 10.0 ** rng.integers(-8, 8, size=200):
            assert float(to_json(float(x))) == x

    def test_scalar_and_container_forms(self):
        obj = {"a": True, "b": None, "c": [1, 2.5], "d": "x"}
        assert to_json(obj) == '{"a": true, "b": null, "c": [1, 2.5], "d": "x"}'

    def test_ndarray_nests_like_lists(self):
        assert to_json(np.array([[1.0, 2.0]])) == "[[1, 2]]"
        assert to_json(np.int64(3)) == "3"
        assert to_json(np.bool_(True)) == "true"

    def test_nonfinite_rejected(self):
        for bad in (float("nan"), float("inf"), -float("inf")):
            with pytest.raises(ValidationError):
                to_json({"v": bad})

    def test_unserializable_type_rejected(self):
        with pytest.raises(ValidationError):
            to_json({"v": {1, 2}})


# ---------------------------------------------------------------------------
# vocabulary files


class TestVocabIO:
    def test_fixture_loads(self):
        vocab, dim = read_vocab(VOCAB)
        assert dim == 4
        assert [tid for tid, _ in vocab] == [f"t{i:02d}" for i in range(10)]
        for _, emb in vocab:
            assert emb.shape == (4,) and emb.dtype == np.float64

    def test_write_read_write_is_byte_identical(self, tmp_path):
        vocab, dim = read_vocab(VOCAB)
        out = tmp_path / "v.jsonl"
        write_vocab(out, vocab, dim)
        assert out.read_bytes() == open(VOCAB, "rb").read()

    def test_duplicate_tag_id_rejected(self, tmp_path):
        p = tmp_path / "v.jsonl"
        p.write_text(
            '{"format": "rca-vocab", "version": 1, "dim": 2}\n'
            '{"tag_id": "a", "embedding": [1, 0]}\n'
            '{"tag_id": "a", "embedding": [0, 1]}\n'
        )
        with pytest.raises(ParseError, match="line 3"):
            read_vocab(p)

    def test_missing_header_rejected(self, tmp_path):
        p = tmp_path / "v.jsonl"
        p.write_text('{"tag_id": "a", "embedding": [1, 0]}\n')
        with pytest.raises(ParseError, match="line 1"):
            read_vocab(p)

    def test_wrong_version_rejected(self, tmp_path):
        p = tmp_path / "v.jsonl"
        p.write_text('{"format": "rca-vocab", "version": 9, "dim": 2}\n')
        with pytest.raises(ParseError, match="version"):
            read_vocab(p)

    def test_non_numeric_embedding_rejected(self, tmp_path):
        p = tmp_path / "v.jsonl"
        p.write_text(
            '{"format": "rca-vocab", "version": 1, "dim": 2}\n'
            '{"tag_id": "a", "embedding": [1, "x"]}\n'
        )
        with pytest.raises(ParseError, match="line 2"):
            read_vocab(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "v.jsonl"
        p.write_text("\n\n")
        with pytest.raises(ParseError):
            read_vocab(p)


# ---------------------------------------------------------------------------
# instance files


class TestInstanceIO:
    def test_fixture_loads(self):
        records, dim = read_instances(INSTANCES)
        assert dim == 4
        assert [r.image_id for r in records] == ["img-a", "img-b", "img-c"]
        a = records[0]
        assert a.regions.shape == (2, 4)
        assert a.tags is not None and len(a.tags) == 4
        assert [t.score for t in a.tags] == sorted(
            (t.score for t in a.tags), reverse=True
        )
        nouns = a.caption_noun_matrix()
        assert nouns.shape[1] == 4 and nouns.shape[0] >= 1

    def test_untagged_fixture_has_no_tags(self):
        records, _ = read_instances(UNTAGGED)
        assert all(r.tags is None for r in records)

    def test_write_read_write_is_byte_identical(self, tmp_path):
        for src in (INSTANCES, UNTAGGED):
            records, dim = read_instances(src)
            out = tmp_path / os.path.basename(src)
            write_instances(out, records, dim)
            assert out.read_bytes() == open(src, "rb").read()

    def test_malformed_line_five(self):
        with pytest.raises(ParseError, match="line 5") as exc_info:
            read_instances(MALFORMED)
        assert exc_info.value.line == 5

    def test_region_dimension_mismatch(self):
        with pytest.raises(DimensionError, match="dim 3"):
            read_instances(WRONGDIM)

    def test_is_noun_must_be_boolean(self, tmp_path):
        p = tmp_path / "i.jsonl"
        p.write_text(
            '{"format": "rca-instances", "version": 1, "dim": 2}\n'
            '{"image_id": "x", "image_embedding": [1, 0], "regions": [[1, 0]],'
            ' "caption_tokens": [{"text": "a", "is_noun": 1, "embedding": [0, 1]}]}\n'
        )
        with pytest.raises(ParseError, match="is_noun"):
            read_instances(p)

    def test_regions_must_be_non_empty(self, tmp_path):
        p = tmp_path / "i.jsonl"
        p.write_text(
            '{"format": "rca-instances", "version": 1, "dim": 2}\n'
            '{"image_id": "x", "image_embedding": [1, 0], "regions": [],'
            ' "caption_tokens": []}\n'
        )
        with pytest.raises(ParseError, match="regions"):
            read_instances(p)

    def test_tag_score_must_be_numeric(self, tmp_path):
        p = tmp_path / "i.jsonl"
        p.write_text(
            '{"format": "rca-instances", "version": 1, "dim": 2}\n'
            '{"image_id": "x", "image_embedding": [1, 0], "regions": [[1, 0]],'
            ' "caption_tokens": [], "tags": [{"tag_id": "a", "score": "hi"}]}\n'
        )
        with pytest.raises(ParseError, match="score"):
            read_instances(p)


# ---------------------------------------------------------------------------
# run configuration


class TestRunConfig:
    def test_defaults_match_component_configs(self):
        cfg = RunConfig()
        assert cfg.trainer_config() == TrainerConfig()
        assert cfg.synthetic_config() == SyntheticConfig()
        assert cfg.M == 50

    def test_fixture_parses(self):
        cfg = read_run_config(RUN_CFG)
        assert cfg.steps == 12
        assert cfg.learning_rate == 0.5
        assert cfg.n_images == 16
        assert cfg.n_concepts == 6
        assert cfg.d == 8
        assert cfg.regions_per_image == 3
        assert cfg.enable_subsample is False
        assert cfg.seed == 7
        # untouched keys keep their defaults
        assert cfg.batch_size == RunConfig().batch_size

    def test_overlay_does_not_mutate_base(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("learning_rate = 0.25\n")
        base = RunConfig(steps=99)
        cfg = read_run_config(p, base=base)
        assert cfg.steps == 99 and cfg.learning_rate == 0.25
        assert base.learning_rate == RunConfig().learning_rate

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("steps = 5\nbetas = 0.9\n")
        with pytest.raises(ParseError, match="line 2.*unknown config key"):
            read_run_config(p)

    def test_bad_value_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("steps = many\n")
        with pytest.raises(ParseError, match="steps"):
            read_run_config(p)

    def test_missing_equals_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("steps 5\n")
        with pytest.raises(ParseError, match="key = value"):
            read_run_config(p)

    def test_boolean_spellings(self, tmp_path):
        p = tmp_path / "c.cfg"
        for raw, expected in (
            ("true", True), ("1", True), ("yes", True), ("on", True),
            ("false", False), ("0", False), ("no", False), ("off", False),
        ):
            p.write_text(f"enable_uasr = {raw}\n")
            assert read_run_config(p).enable_uasr is expected
        p.write_text("enable_uasr = maybe\n")
        with pytest.raises(ParseError):
            read_run_config(p)

    def test_env_seed(self, monkeypatch):
        monkeypatch.delenv("RCA_SEED", raising=False)
        assert env_seed(5) == 5
        monkeypatch.setenv("RCA_SEED", "123")
        assert env_seed(5) == 123
        monkeypatch.setenv("RCA_SEED", "abc")
        with pytest.raises(ConfigError):
            env_seed()


# ---------------------------------------------------------------------------
# rank / uasr / loss subcommands


class TestCliRank:
    def test_deterministic_output(self, capsys):
        code1, out1, _ = run_cli(["rank", VOCAB, UNTAGGED, "--M", "4"], capsys)
        code2, out2, _ = run_cli(["rank", VOCAB, UNTAGGED, "--M", "4"], capsys)
        assert code1 == code2 == 0
        assert out1 == out2
        lines = [json.loads(ln) for ln in out1.splitlines()]
        assert [ln["image_id"] for ln in lines] == ["img-a", "img-b"]
        for ln in lines:
            assert ln["K"] == 2
            sides = [t["side"] for t in ln["tags"]]
            assert sides == ["P", "P", "N", "N"]
            scores = [t["score"] for t in ln["tags"]]
            assert scores == sorted(scores, reverse=True)

    def test_out_file_feeds_loss(self, tmp_path, capsys):
        out = tmp_path / "augmented.jsonl"
        code, _, _ = run_cli(
            ["rank", VOCAB, UNTAGGED, "--M", "4", "--out", str(out)], capsys
        )
        assert code == 0
        records, dim = read_instances(out)
        assert dim == 4 and all(len(r.tags) == 4 for r in records)
        code, out_text, _ = run_cli(["loss", VOCAB, str(out)], capsys)
        assert code == 0
        summary = json.loads(out_text.splitlines()[-1])
        assert summary["n_images"] == 2

    def test_vocabulary_too_small_for_default_width(self, capsys):
        # default M is 50 but the fixture vocabulary has 10 tags
        code, _, err = run_cli(["rank", VOCAB, UNTAGGED], capsys)
        assert code == 1
        assert "vocabulary" in err.lower()


class TestCliUasr:
    def test_shapes_and_determinism(self, capsys):
        code1, out1, _ = run_cli(["uasr", VOCAB, INSTANCES], capsys)
        code2, out2, _ = run_cli(["uasr", VOCAB, INSTANCES], capsys)
        assert code1 == code2 == 0 and out1 == out2
        for ln in map(json.loads, out1.splitlines()):
            assert len(ln["positives"]) == len(ln["negatives"]) == 2
            assert len(ln["weights"]) == 2
            assert all(w > 0 for w in ln["weights"])
            assert math.isclose(sum(ln["weights"]) / 2, 1.0, rel_tol=1e-12)
            assert isinstance(ln["positive_fallback"], bool)

    def test_unnormalized_weights(self, capsys):
        code, out, _ = run_cli(["uasr", VOCAB, INSTANCES, "--no-normalize"], capsys)
        assert code == 0
        means = [sum(ln["weights"]) / 2 for ln in map(json.loads, out.splitlines())]
        assert any(not math.isclose(m, 1.0, rel_tol=1e-9) for m in means)


class TestCliLoss:
    def test_matches_naive_golden(self, capsys):
        code, out, _ = run_cli(["loss", VOCAB, INSTANCES], capsys)
        assert code == 0
        got = [json.loads(ln) for ln in out.splitlines()]
        expected = [
            json.loads(ln)
            for ln in open(os.path.join(FIXTURES, "expected_loss.jsonl"))
        ]
        assert len(got) == len(expected) == 4
        for g, e in zip(got, expected):
            assert g.keys() == e.keys()
            for key, val in e.items():
                if isinstance(val, str):
                    assert g[key] == val
                else:
                    assert math.isclose(g[key], val, rel_tol=1e-10, abs_tol=1e-12)

    def test_byte_identical_across_runs(self, capsys):
        args = ["loss", VOCAB, INSTANCES, "--enable_uasr"]
        code1, out1, _ = run_cli(args, capsys)
        code2, out2, _ = run_cli(args, capsys)
        assert code1 == code2 == 0
        assert out1.encode() == out2.encode()

    def test_lambda_scaling(self, capsys):
        _, out_base, _ = run_cli(["loss", VOCAB, INSTANCES], capsys)
        _, out_scaled, _ = run_cli(
            ["loss", VOCAB, INSTANCES, "--lambda_cross", "2"], capsys
        )
        base = json.loads(out_base.splitlines()[-1])
        scaled = json.loads(out_scaled.splitlines()[-1])
        assert math.isclose(
            scaled["mean_total"],
            2 * base["mean_cross"] + base["mean_inner"],
            rel_tol=1e-12,
        )

    def test_malformed_file_exit_two_names_line(self, capsys):
        code, _, err = run_cli(["loss", VOCAB, MALFORMED], capsys)
        assert code == 2
        assert "line 5" in err

    def test_dimension_mismatch_exit_three(self, capsys):
        code, _, err = run_cli(["loss", VOCAB, WRONGDIM], capsys)
        assert code == 3
        assert "dim" in err

    def test_unknown_tag_exit_one(self, tmp_path, capsys):
        records, dim = read_instances(INSTANCES)
        records[0].tags[0] = dataclasses.replace(records[0].tags[0], tag_id="zz")
        bad = tmp_path / "bad.jsonl"
        write_instances(bad, records, dim)
        code, _, err = run_cli(["loss", VOCAB, str(bad)], capsys)
        assert code == 1
        assert "zz" in err

    def test_odd_tag_count_exit_one(self, tmp_path, capsys):
        records, dim = read_instances(INSTANCES)
        records[0].tags = records[0].tags[:3]
        bad = tmp_path / "odd.jsonl"
        write_instances(bad, records, dim)
        code, _, err = run_cli(["loss", VOCAB, str(bad)], capsys)
        assert code == 1

    def test_missing_file_exit_two(self, capsys):
        code, _, _ = run_cli(["loss", VOCAB, "/nonexistent.jsonl"], capsys)
        assert code == 2


class TestCliGradcheck:
    def test_passes_at_default_tolerance(self, capsys):
        code, out, _ = run_cli(["gradcheck", "--seed", "3"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["passed"] is True
        assert report["max_error"] < 1e-4
        assert set(report["errors"]) == {
            "regions", "positives", "negatives", "caption_nouns"
        }
        assert report["worst"]["table"] in report["errors"]

    def test_unreachable_tolerance_exits_one(self, capsys):
        code, out, _ = run_cli(
            ["gradcheck", "--seed", "3", "--tolerance", "1e-18"], capsys
        )
        assert code == 1
        assert json.loads(out)["passed"] is False

    def test_step_size_out_of_range_exits_two(self, capsys):
        code, _, err = run_cli(["gradcheck", "--h", "1.0"], capsys)
        assert code == 2
        assert "h" in err


# ---------------------------------------------------------------------------
# train / eval subcommands


class TestCliTrainEval:
    def test_round_trip_with_config_file(self, tmp_path, capsys):
        state_path = tmp_path / "state.jsonl"
        metrics_path = tmp_path / "metrics.jsonl"
        code, out, _ = run_cli(
            [
                "train",
                "--config", RUN_CFG,
                "--state_out", str(state_path),
                "--metrics_out", str(metrics_path),
            ],
            capsys,
        )
        assert code == 0
        assert metrics_path.read_text() == out
        steps = [json.loads(ln)["step"] for ln in out.splitlines()]
        assert steps[0] == 0 and steps[-1] == 12

        state, syn, cfg = read_state(state_path)
        assert state.step == 12
        assert syn.n_images == 16 and syn.seed == 7
        assert cfg.steps == 12 and cfg.learning_rate == 0.5

        code, out, _ = run_cli(["eval", str(state_path)], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["step"] == 12
        assert report["n_images"] == 16
        assert 0.0 <= report["retrieval_accuracy"] <= 1.0

    def test_aligned_init_scores_perfectly(self, tmp_path, capsys):
        state_path = tmp_path / "state.jsonl"
        code, _, _ = run_cli(
            [
                "train",
                "--config", RUN_CFG,
                "--init", "aligned",
                "--steps", "0",
                "--state_out", str(state_path),
            ],
            capsys,
        )
        assert code == 0
        code, out, _ = run_cli(["eval", str(state_path)], capsys)
        assert code == 0
        assert json.loads(out)["retrieval_accuracy"] == 1.0

    def test_flags_override_config_file(self, tmp_path, capsys):
        state_path = tmp_path / "state.jsonl"
        code, _, _ = run_cli(
            [
                "train",
                "--config", RUN_CFG,
                "--steps", "3",
                "--no-enable_uasr",
                "--state_out", str(state_path),
            ],
            capsys,
        )
        assert code == 0
        state, _, cfg = read_state(state_path)
        assert state.step == 3 and cfg.steps == 3
        assert cfg.enable_uasr is False

    def test_seed_defaults_from_environment(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("RCA_SEED", "41")
        state_path = tmp_path / "state.jsonl"
        code, _, _ = run_cli(
            [
                "train",
                "--config", RUN_CFG,
                "--state_out", str(state_path),
            ],
            capsys,
        )
        assert code == 0
        _, syn, _ = read_state(state_path)
        # the config file sets seed = 7, which outranks the environment
        assert syn.seed == 7

        cfg_free = tmp_path / "nofileseed.cfg"
        cfg_free.write_text("steps = 2\nn_images = 8\nn_concepts = 4\nd = 4\n"
                            "regions_per_image = 2\n")
        code, _, _ = run_cli(
            ["train", "--config", str(cfg_free), "--state_out", str(state_path)],
            capsys,
        )
        assert code == 0
        _, syn, _ = read_state(state_path)
        assert syn.seed == 41

    def test_byte_identical_state_and_metrics(self, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            state_path = tmp_path / f"{name}.jsonl"
            code, out, _ = run_cli(
                ["train", "--config", RUN_CFG, "--state_out", str(state_path)],
                capsys,
            )
            assert code == 0
            outs.append((out, state_path.read_bytes()))
        assert outs[0][0] == outs[1][0]
        assert outs[0][1] == outs[1][1]

    def test_invalid_config_value_exits_two(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("steps = -5\n")
        code, _, err = run_cli(
            ["train", "--config", str(cfg), "--state_out", str(tmp_path / "s.jsonl")],
            capsys,
        )
        assert code == 2
        assert "steps" in err

    def test_eval_missing_state_exits_two(self, capsys):
        code, _, _ = run_cli(["eval", "/nonexistent-state.jsonl"], capsys)
        assert code == 2

    def test_tampered_state_dimension_exits_three(self, tmp_path, capsys):
        state_path = tmp_path / "state.jsonl"
        run_cli(
            ["train", "--config", RUN_CFG, "--steps", "1",
             "--state_out", str(state_path)],
            capsys,
        )
        obj = json.loads(state_path.read_text())
        obj["synthetic_config"]["n_concepts"] += 1
        state_path.write_text(json.dumps(obj) + "\n")
        code, _, err = run_cli(["eval", str(state_path)], capsys)
        assert code == 3


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "rca", "loss", VOCAB, INSTANCES],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout.splitlines()[-1])["n_images"] == 3
