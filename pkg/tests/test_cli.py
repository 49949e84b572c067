import numpy as np
import pytest
import yaml

from activepc import config as cfgmod
from activepc.cli import main
from activepc.config import ConfigError


def tiny_config(tmp_path, **sections):
    cfg = {
        "seed": 1,
        "output": str(tmp_path / "out"),
        "data": {"root": str(tmp_path / "data"), "samples_per_class": 2, "subjects_train": 2, "subjects_test": 1,
                 "points_per_frame": 96, "duration": 6, "distance_range": [8.0, 20.0]},
        "model": {"widths": [8, 8, 8], "depth": 1, "heads": 2, "tube_hidden": 8, "k_max": 8},
        "train": {"epochs": 2, "batch_size": 6, "clip_frames": 4, "points_per_frame": 64},
        "eval": {"ablation_epochs": 1},
    }
    for k, v in sections.items():
        if isinstance(v, dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    path = tiny_config(tmp)
    assert main(["generate", str(path)]) == 0
    return tmp, path


def test_defaults_describe_the_reference_setting():
    cfg = cfgmod.from_dict({})
    assert cfg.train_config().milestones == (20, 30) and cfg.train_config().epochs == 50
    assert cfg.dataset_config().points_per_frame == 768
    assert cfg.model_config().num_classes == 6


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="model.widthz"):
        cfgmod.from_dict({"model": {"widthz": [1, 2, 3]}})
    with pytest.raises(ConfigError, match="'colour'"):
        cfgmod.from_dict({"colour": "red"})


def test_type_errors_are_named():
    with pytest.raises(ConfigError, match="train.epochs"):
        cfgmod.from_dict({"train": {"epochs": "many"}})


def test_shortened_budget_scales_milestones():
    assert cfgmod.from_dict({}).train_config(epochs=5).milestones == (2, 3)


def test_invalid_class_is_a_config_error(tmp_path, capsys):
    path = tiny_config(tmp_path, data={"classes": ["stand+juggle"]})
    assert main(["generate", str(path)]) == 1
    assert "data.classes[0]" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert main(["train"]) == 1


def test_generate_counts_and_seed(dataset, tmp_path, capsys):
    root, path = dataset
    manifest = (root / "data" / "manifest.tsv").read_text().splitlines()
    assert len(manifest) == 12
    assert (root / "data" / "resolved_config.yaml").exists()
    other = tmp_path / "other"
    cfg = yaml.safe_load(path.read_text())
    cfg["data"]["root"] = str(other)
    alt = tmp_path / "alt.yaml"
    alt.write_text(yaml.safe_dump(cfg))
    assert main(["generate", str(alt), "--seed", "9"]) == 0
    assert len((other / "manifest.tsv").read_text().splitlines()) == 12
    first = (root / "data" / "clips" / "00000.ptvc").read_bytes()
    assert (other / "clips" / "00000.ptvc").read_bytes() != first


def test_env_seed_and_flag_precedence(tmp_path, monkeypatch):
    path = tiny_config(tmp_path)
    monkeypatch.setenv("PTV_SEED", "5")
    from activepc.cli import _load, build_parser

    args = build_parser().parse_args(["eval", str(path)])
    assert _load(args).seed == 5
    args = build_parser().parse_args(["eval", str(path), "--seed", "7", "--frames", "12", "--points", "768"])
    cfg = _load(args)
    assert (cfg.seed, cfg.train.clip_frames, cfg.train.points_per_frame) == (7, 12, 768)


def test_train_without_dataset_fails_fast(tmp_path, capsys):
    path = tiny_config(tmp_path, data={"root": str(tmp_path / "missing")})
    assert main(["train", str(path)]) == 2
    assert "manifest" in capsys.readouterr().err
    assert not (tmp_path / "out" / "metrics.tsv").exists()


def test_train_eval_and_resume(dataset, tmp_path):
    root, path = dataset
    out = tmp_path / "run"
    assert main(["train", str(path), "--out", str(out)]) == 0
    metrics = (out / "metrics.tsv").read_text().splitlines()
    assert len(metrics) == 2
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["seed"] == 1 and resolved["output"] == str(out)

    cfg = yaml.safe_load(path.read_text())
    cfg["train"]["epochs"] = 1
    one = tmp_path / "one.yaml"
    one.write_text(yaml.safe_dump(cfg))
    assert main(["train", str(one), "--out", str(tmp_path / "half")]) == 0
    resume = tmp_path / "resumed"
    resume.mkdir()
    (resume / "metrics.tsv").write_text((tmp_path / "half" / "metrics.tsv").read_text())
    assert main(["train", str(path), "--out", str(resume), "--from-checkpoint",
                 str(tmp_path / "half" / "checkpoint.ptvw")]) == 0
    assert (resume / "metrics.tsv").read_text() == (out / "metrics.tsv").read_text()
    assert (resume / "checkpoint.ptvw").read_bytes() == (out / "checkpoint.ptvw").read_bytes()

    assert main(["eval", str(path), "--out", str(out)]) == 0
    summary = dict(line.split("=", 1) for line in (out / "eval_summary.txt").read_text().splitlines())
    assert int(summary["videos"]) == 4
    conf = np.array([line.split("\t")[1:] for line in (out / "eval_confusion.tsv").read_text().splitlines()[1:]],
                    int)
    assert float(summary["accuracy"]) == pytest.approx(100 * np.trace(conf) / conf.sum(), abs=1e-4)


def test_ablate_emits_component_grid(dataset, tmp_path):
    _, path = dataset
    assert main(["ablate", str(path), "--out", str(tmp_path)]) == 0
    rows = [line.split("\t")[:3] for line in (tmp_path / "ablation.tsv").read_text().splitlines()[1:]]
    assert rows == [["off", "off", "off"], ["on", "off", "off"], ["on", "on", "off"], ["on", "off", "on"],
                    ["on", "on", "on"]]


def test_sweep_emits_six_radii(dataset, tmp_path):
    _, path = dataset
    assert main(["sweep", str(path), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "sweep.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["eeq", "0.1", "0.2", "0.5", "1", "1.5", "2", "variance"]
    assert [line.split("\t")[0] for line in lines[1:]] == ["off", "on"]
    summary = (tmp_path / "sweep_summary.txt").read_text()
    assert "variance_ratio=" in summary


def test_inspect(dataset, capsys):
    root, _ = dataset
    assert main(["inspect", str(root / "data")]) == 0
    out = capsys.readouterr().out
    assert out.count("frames=6") == 12 and "distinct points per frame" in out
