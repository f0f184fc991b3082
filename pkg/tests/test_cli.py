import json

import pytest

from ldsb.cli import build_parser, config_hash, resolve_config, run


@pytest.fixture(scope="module")
def run1(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run1"
    assert run(["gen", "--preset", "ifm-basic", "--out", str(out)]) == 0
    return out


def _cfg(*argv):
    return resolve_config(build_parser().parse_args(list(argv)))


def test_gen_outputs(run1):
    for name in ("train.csv", "val.csv", "test.csv", "meta.json", "manifest.json"):
        assert (run1 / name).exists()
    meta = json.loads((run1 / "meta.json").read_text())
    assert meta["family"] == "ifm" and meta["sizes"]["train"] == 1000
    assert meta["coord_roles"][0] == "linear"


def test_ntk_command(tmp_path, capsys):
    assert run(["ntk", "--d", "100000", "--gamma", "7", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "ntk.json").read_text())
    assert rep["neg_values"]["at_0.73"] > 0
    assert rep["neg_values"]["at_0"] < 0
    assert capsys.readouterr().out.count("\n") == 1


def test_train_is_byte_deterministic(run1, tmp_path):
    data = str(run1 / "train.csv")
    before = (run1 / "train.csv").read_bytes()
    for name in ("a", "b"):
        assert run(["train", "--data", data, "--regime", "rich", "--steps", "300", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()
    assert (tmp_path / "a" / "trainlog.csv").read_text().startswith("step,train_loss")
    assert (run1 / "train.csv").read_bytes() == before


def test_analyze_orthop_robustness(run1, tmp_path):
    ck = tmp_path / "t" / "checkpoint.json"
    assert run(["train", "--data", str(run1 / "train.csv"), "--out", str(tmp_path / "t")]) == 0
    assert run(["analyze", "--model", str(ck), "--data", str(run1 / "test.csv"), "--out", str(tmp_path / "an")]) == 0
    rep = json.loads((tmp_path / "an" / "sbreport.json").read_text())
    assert rep["pperp_ra"] >= 0.95 and rep["percent"]["pperp_ra"] == round(100 * rep["pperp_ra"], 2)
    assert (tmp_path / "an" / "boundary_grid.csv").exists()
    argv = ["orthop", "--model", str(ck), "--data", str(run1 / "train.csv"), "--steps", "500", "--out", str(tmp_path / "op")]
    assert run(argv) == 0
    proj = tmp_path / "op" / "f_proj.json"
    argv = [
        "robustness", "--data", str(run1 / "test.csv"), "--model", f"f={ck}", "--model", f"g={proj}",
        "--ensemble", "e=f+g", "--sigmas", "0,0.5", "--trials", "2", "--out", str(tmp_path / "rb"),
    ]
    assert run(argv) == 0
    lines = (tmp_path / "rb" / "robustness.csv").read_text().splitlines()
    assert lines[0] == "sigma,model,accuracy" and len(lines) == 1 + 2 * 3


def test_pipeline_reproducible(tmp_path):
    argv = ["pipeline", "--preset", "collage-xor", "--steps", "400", "--trials", "1"]
    assert run(argv + ["--out", str(tmp_path / "a")]) == 0
    assert run(argv + ["--out", str(tmp_path / "b")]) == 0
    for name in ("f.json", "f_proj.json", "f_ind.json", "sbreport.json", "diversity.json", "robustness.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert {"config_hash", "versions", "outputs", "config"} <= set(man)


def test_config_hash_tracks_config():
    a = _cfg("pipeline", "--preset", "collage-xor")
    b = _cfg("pipeline", "--preset", "collage-xor")
    c = _cfg("pipeline", "--preset", "collage-xor", "--seed", "1")
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_config_layers(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"preset": "collage-sphere", "train": {"steps": 10}, "analysis": {"rank": "auto"}}))
    cfg = _cfg("pipeline", "--config", str(cfg_file), "--steps", "20", "--lambda", "0.5")
    assert cfg["family"] == "collage-sphere"
    assert cfg["train"]["steps"] == 20 and cfg["analysis"]["rank"] == "auto" and cfg["analysis"]["lambda"] == 0.5
    lazy = _cfg("train", "--preset", "lazy-lr05")
    assert lazy["regime"] == "lazy" and lazy["train_preset"] == "lazy-lr05"


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--bogus"],
        ["frobnicate"],
        ["gen", "--rank", "0"],
        ["gen", "--preset", "imagenet"],
        ["train", "--data", "/nonexistent.csv"],
        ["train"],
        ["gen", "--seed", "-3"],
        ["robustness", "--data", "x.csv", "--model", "broken"],
    ],
)
def test_validation_errors_exit_1(argv, tmp_path):
    assert run(argv + ["--out", str(tmp_path)]) == 1


def test_unknown_config_keys(tmp_path):
    for bad in ({"train": {"foo": 1}}, {"colour": "red"}, {"dataset": {"size": 3}}, {"analysis": 3}):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(bad))
        assert run(["gen", "--config", str(p), "--out", str(tmp_path)]) == 1


def test_malformed_dataset_exit_1(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not a dataset\n")
    assert run(["train", "--data", str(bad), "--out", str(tmp_path)]) == 1


def test_runtime_error_exit_2(tmp_path, run1, capsys):
    # a giant learning rate diverges during training
    argv = ["train", "--data", str(run1 / "train.csv"), "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]
    (tmp_path / "c.json").write_text(json.dumps({"regime": "lazy", "train": {"peak_lr": 1e30, "steps": 50}}))
    with pytest.warns(RuntimeWarning):
        assert run(argv) == 2
    assert "DivergenceError" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pipeline_stage_named_on_failure(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"regime": "lazy", "train": {"peak_lr": 1e30, "steps": 50}}))
    assert run(["pipeline", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
    assert "stage train" in capsys.readouterr().err
