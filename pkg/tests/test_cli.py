import csv
import json
import subprocess
import sys

import pytest

from tagqa.cli import EXIT_LEAKAGE, EXIT_USAGE, git_hash, main
from tagqa.config import ConfigError, ModelConfig, format_config, parse_config

TINY_CONFIG = """\
# desk-test settings
d=16
layers=1
heads=2
k_cap=24
m_cap=4
n_cap=10
t_cap=6
max_iters=12
batch_size=8
lr_decay_steps=8,10
seed=0
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY_CONFIG)
    assert main(["synth", "--seed", "3", "--scenes", "60", "--out", str(root / "data")]) == 0
    return root


def run(work, *argv):
    return main([*argv, "--config", str(work / "tiny.cfg")])


@pytest.fixture(scope="module")
def pipeline(work):
    data, tag, aug = work / "data", work / "tag", work / "aug"
    assert run(work, "train-tag", "--corpus", str(data / "train.jsonl"), "--out", str(tag)) == 0
    assert run(work, "augment", "--checkpoint", str(tag / "tag.ckpt"), "--corpus", str(data / "train.jsonl"),
               "--strategy", "largest", "--out", str(aug)) == 0
    for name, corpus in (("orig", data / "train.jsonl"), ("augm", aug / "augmented.jsonl")):
        assert run(work, "train-vqa", "--corpus", str(corpus), "--out", str(work / name)) == 0
        assert run(work, "eval", "--checkpoint", str(work / name / "vqa.ckpt"), "--corpus",
                   str(data / "val.jsonl"), "--label", name, "--out", str(work / name)) == 0
    return work


def test_config_round_trip_and_errors():
    cfg = parse_config(TINY_CONFIG)
    assert (cfg.d, cfg.lr_decay_steps) == (16, (8, 10))
    assert parse_config(format_config(cfg)) == cfg
    with pytest.raises(ConfigError, match="'width'"):
        parse_config("width=3")
    with pytest.raises(ConfigError, match="'lr'"):
        parse_config("lr=fast")
    with pytest.raises(ConfigError, match="divisible"):
        ModelConfig(d=10, heads=3)


def test_synth_outputs_and_manifest(work):
    data = work / "data"
    assert {p.name for p in data.iterdir()} >= {"train.jsonl", "val.jsonl", "test.jsonl", "stats.json",
                                                "synth.manifest.json"}
    stats = json.loads((data / "stats.json").read_text())
    assert stats["train"]["mean_ocr_per_image"] >= 5
    man = json.loads((data / "synth.manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 3
    assert man["outputs"][str(data / "train.jsonl")] == git_hash(data / "train.jsonl")
    assert set(man) >= {"command", "config", "inputs", "outputs", "duration_s"}


def test_synth_is_reproducible(work, tmp_path):
    assert main(["synth", "--seed", "3", "--scenes", "60", "--out", str(tmp_path)]) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "stats.json"):
        assert git_hash(tmp_path / name) == git_hash(work / "data" / name)


def test_git_hash_matches_git_blob_id(tmp_path):
    (tmp_path / "f").write_bytes(b"hello\n")
    assert git_hash(tmp_path / "f") == "ce013625030ba8dba906f756967f9e9ca394464a"


@pytest.mark.parametrize("verb", ["train-tag", "train-vqa"])
@pytest.mark.parametrize("split", ["val", "test"])
def test_training_on_held_out_is_refused(work, tmp_path, capsys, verb, split):
    code = run(work, verb, "--corpus", str(work / "data" / f"{split}.jsonl"), "--out", str(tmp_path))
    assert code == EXIT_LEAKAGE
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "LeakageError" and split in record["message"]
    assert json.loads((tmp_path / f"{verb}.error.json").read_text()) == record
    assert not (tmp_path / "tag.ckpt").exists() and not (tmp_path / "vqa.ckpt").exists()


def test_renamed_held_out_needs_declared_split(work, tmp_path):
    copy = tmp_path / "mine.jsonl"
    copy.write_bytes((work / "data" / "val.jsonl").read_bytes())
    code = run(work, "train-tag", "--corpus", str(copy), "--split", "val", "--out", str(tmp_path))
    assert code == EXIT_LEAKAGE


def test_augment_refuses_held_out(pipeline, tmp_path):
    code = run(pipeline, "augment", "--checkpoint", str(pipeline / "tag" / "tag.ckpt"),
               "--corpus", str(pipeline / "data" / "test.jsonl"), "--out", str(tmp_path))
    assert code == EXIT_LEAKAGE


def test_unknown_config_key_names_the_key(work, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("d=16\nwidth=3\n")
    code = main(["train-tag", "--corpus", str(work / "data" / "train.jsonl"), "--config", str(bad),
                 "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "width" in json.loads(capsys.readouterr().err)["message"]


def test_missing_artifact_names_the_path(work, tmp_path, capsys):
    code = run(work, "eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--corpus",
               str(work / "data" / "val.jsonl"), "--out", str(tmp_path))
    assert code == EXIT_USAGE
    assert "nope.ckpt" in json.loads(capsys.readouterr().err)["message"]


def test_train_tag_artifacts(pipeline):
    tag = pipeline / "tag"
    rows = list(csv.reader(open(tag / "tag_loss_curve.csv")))
    assert rows[0] == ["iteration", "loss", "lr"]
    assert [int(r[0]) for r in rows[1:]] == [0, 11]
    assert (tag / "tag.vocab").read_text().startswith("<pad>\t0\n")
    man = json.loads((tag / "train-tag.manifest.json").read_text())
    assert man["config"]["d"] == 16 and "d=16" in man["config_text"]


def test_augment_artifacts(pipeline):
    aug = pipeline / "aug"
    m = json.loads((aug / "augment_manifest.json").read_text())
    assert m["augmented_pairs"] == 2 * m["original_pairs"] - m["rejected_empty"] - m["rejected_duplicate"]
    dump = [json.loads(line) for line in (aug / "generations.jsonl").read_text().splitlines()]
    assert len(dump) == min(20, m["generated"])
    assert all(r["answer"] and r["generated_question"] and r["rejected"] is None for r in dump)


def test_train_vqa_scales_iterations(pipeline):
    orig = json.loads((pipeline / "orig" / "vqa_train.json").read_text())
    augm = json.loads((pipeline / "augm" / "vqa_train.json").read_text())
    m = json.loads((pipeline / "aug" / "augment_manifest.json").read_text())
    assert orig["max_iters"] == 12
    assert augm["max_iters"] == round(12 * m["augmented_pairs"] / m["original_pairs"])


def test_eval_twice_is_identical(pipeline, tmp_path):
    before = (pipeline / "orig" / "eval.json").read_bytes()
    assert run(pipeline, "eval", "--checkpoint", str(pipeline / "orig" / "vqa.ckpt"), "--corpus",
               str(pipeline / "data" / "val.jsonl"), "--label", "orig", "--out", str(tmp_path)) == 0
    assert (tmp_path / "eval.json").read_bytes() == before
    body = json.loads(before)
    assert 0.0 <= body["accuracy"] <= 1.0 and body["label"] == "orig"


def test_report_rows_and_best_marks(pipeline, tmp_path):
    evals = [str(pipeline / n / "eval.json") for n in ("orig", "augm")]
    assert run(pipeline, "report", *evals, "--out", str(tmp_path)) == 0
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert sorted(r["corpus"] for r in rows) == ["augm", "orig"]
    md = (tmp_path / "report.md").read_text()
    assert md.count("(best)") == 2


def test_reruns_are_hash_identical(pipeline, tmp_path):
    assert run(pipeline, "train-tag", "--corpus", str(pipeline / "data" / "train.jsonl"),
               "--out", str(tmp_path)) == 0
    for name in ("tag.ckpt", "tag.vocab", "tag_loss_curve.csv"):
        assert git_hash(tmp_path / name) == git_hash(pipeline / "tag" / name)


def test_unknown_ablation_is_a_usage_error(capsys):
    assert main(["ablate", "--which", "colour"]) == 2


def test_module_entry_point_reports_version():
    out = subprocess.run([sys.executable, "-m", "tagqa", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.1.0"
