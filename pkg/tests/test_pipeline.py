import csv
import json

import pytest
import yaml

from bronchograde.pipeline import cli
from bronchograde.pipeline.config import ConfigError, load_config
from bronchograde.pipeline.report import broken_links, strip_timestamp
from bronchograde.pipeline.stages import IsolationError, run_stage
from bronchograde.pipeline.workspace import Workspace
from bronchograde.synthetic import write_toy_corpus

# A deliberately tiny run: two grades of GANs, one backbone, one epoch everywhere.
SMALL = [
    "--quiet",
    "--gan.epochs", "1", "--gan.max_steps_per_epoch", "2", "--gan.grades", "[1, 2]",
    "--classifier.backbones", "[inception_cnn]", "--classifier.epochs", "1",
    "--interpret.max_images_per_group", "2",
]


@pytest.fixture(scope="module")
def toy_config(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    write_toy_corpus(root / "corpus", patients_per_grade=3, images_per_patient=2, size=32)
    cfg = root / "config.yaml"
    cfg.write_text(yaml.safe_dump({"paths": {"manifest": "corpus/manifest.csv", "workspace": "ws"}}))
    return cfg


@pytest.fixture(scope="module")
def finished(toy_config):
    assert cli.main(["all", "--config", str(toy_config), *SMALL]) == 0
    return Workspace(toy_config.parent / "ws")


# -- configuration --------------------------------------------------------------------

def test_profile_file_and_override_layering(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"seed": 4, "classifier": {"epochs": 3}, "paths": {"workspace": "w"}}))
    cfg = load_config(path, {"classifier.lr": 0.5})
    assert cfg.seed == 4 and cfg.classifier.epochs == 3 and cfg.classifier.lr == 0.5
    assert cfg.data.image_size == 32  # desk default survives
    assert cfg.workspace == tmp_path / "w"
    assert load_config(path, profile="paper").data.image_size == 256


def test_config_hash_ignores_paths_only(tmp_path):
    a = load_config(None, {"paths.workspace": "x"})
    b = load_config(None, {"paths.workspace": "y"})
    assert a.hash() == b.hash()
    assert a.hash() != load_config(None, {"seed": 1}).hash()


@pytest.mark.parametrize("override", [
    {"classifier.nonsense": 1},
    {"split.ratio": 1.5},
    {"gan.variants": ["pix2pix"]},
    {"augment.factor": 0.5},
    {"profile": "laptop"},
])
def test_bad_config_is_rejected(override):
    with pytest.raises(ConfigError):
        load_config(None, override)


@pytest.mark.parametrize("argv", [
    ["nonsense-stage"],
    ["split", "--config", "/no/such/file.yaml"],
    ["split", "--classifier.epochs"],
    ["split", "stray"],
    ["make-toy"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2


def test_report_without_inputs_names_the_missing_artifact(tmp_path, capsys):
    assert cli.main(["report", "--workspace", str(tmp_path / "empty"), "--quiet"]) == 2
    assert "data/records.csv" in capsys.readouterr().err


def test_broken_link_checker(tmp_path):
    (tmp_path / "a.png").write_bytes(b"x")
    doc = tmp_path / "r.md"
    doc.write_text("![ok](a.png)\n![gone](b.png)\n[site](https://example.org)\n")
    assert broken_links(doc) == ["b.png"]


# -- end to end ----------------------------------------------------------------------------

def test_layout_and_manifests(finished):
    for rel in ("data/records.csv", "data/split.csv", "augmented/counts.csv", "eval/metrics.csv",
                "interpret/mean_intensity.csv", "report/report.md", "config.resolved.yaml"):
        assert finished.path(rel).is_file(), rel
    for stage in ("ingest", "split", "augment", "train-gan", "generate", "train-classifier", "evaluate",
                  "interpret", "report"):
        m = finished.read_manifest(stage)
        assert m and m["seed"] == 0 and m["config_hash"]
    assert finished.path("generated", "cut", "grade_1").is_dir()


def test_isolation_and_report(finished):
    iso = json.loads(finished.path("eval", "isolation.json").read_text())
    assert iso["disjoint"] and all(v["overlap"] == 0 for v in iso["models"].values())
    assert broken_links(finished.path("report", "report.md")) == []
    with finished.path("eval", "metrics.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and {r["method"] for r in rows} == {"original", "transform", "cut", "cyclegan"}


def test_split_is_patient_disjoint(finished):
    with finished.path("data", "split.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    by_patient = {}
    for r in rows:
        by_patient.setdefault(r["patient_id"], set()).add(r["split"])
    assert all(len(s) == 1 for s in by_patient.values())


def test_rerun_is_reproducible(finished, toy_config):
    ws2 = toy_config.parent / "ws2"
    for stage in ("ingest", "split", "augment"):
        assert cli.main([stage, "--config", str(toy_config), "--workspace", str(ws2), *SMALL]) == 0
    second = Workspace(ws2)
    for rel in ("data/split.csv", "augmented/records.csv"):
        assert finished.path(rel).read_text() == second.path(rel).read_text()
    assert finished.hash_tree(["augmented"]) == second.hash_tree(["augmented"])


def test_report_regeneration_differs_only_in_timestamp(finished, toy_config):
    before = strip_timestamp(finished.path("report", "report.md").read_text())
    assert cli.main(["report", "--config", str(toy_config), *SMALL]) == 0
    assert strip_timestamp(finished.path("report", "report.md").read_text()) == before


def test_evaluate_detects_leakage(finished, toy_config, tmp_path):
    cfg = load_config(toy_config, {"classifier.backbones": ["inception_cnn"]})
    test_table = finished.path("data", "test.csv")
    original = test_table.read_text()
    train_rows = finished.path("data", "train.csv").read_text().splitlines()
    try:
        test_table.write_text(original + "\n".join(train_rows[1:2]) + "\n")
        with pytest.raises(IsolationError):
            run_stage("evaluate", cfg, finished)
    finally:
        test_table.write_text(original)
