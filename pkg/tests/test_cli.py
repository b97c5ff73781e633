import json

import pytest

from rcirl import __version__
from rcirl.cli import main, sha256_file
from rcirl.errors import ContractViolation, MalformedInputError, NonFiniteLossError
from rcirl.scenario import default_time_grid
from rcirl.valuenet import init_model, save_model

SMALL_SUITE = {"counts": {"cruise": 2, "follow": 3, "stop": 3, "nudge": 2, "crossing": 2}}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "suite_cfg.json").write_text(json.dumps(SMALL_SUITE))
    (d / "frames_cfg.json").write_text(json.dumps({"sampler": {"n_samples": 30}}))
    (d / "train_cfg.json").write_text(json.dumps({"epochs": 3}))
    p = {k: str(d / v) for k, v in dict(suite="suite.json", frames="frames.jsonl", rcirl="rcirl.json",
                                        gan="gan.json", eval="eval.json", cmp="cmp.csv").items()}
    assert main(["suite", "--config", str(d / "suite_cfg.json"), "--out", p["suite"], "--seed", "3"]) == 0
    assert main(["frames", "--suite", p["suite"], "--config", str(d / "frames_cfg.json"), "--holdout", "4",
                 "--out", p["frames"], "--seed", "3"]) == 0
    for method in ("rcirl", "gan"):
        assert main(["train", "--frames", p["frames"], "--suite", p["suite"], "--method", method,
                     "--config", str(d / "train_cfg.json"), "--out", p[method], "--seed", "3"]) == 0
    assert main(["eval", "--model", p["rcirl"], "--suite", p["suite"], "--frames", p["frames"],
                 "--out", p["eval"], "--seed", "3"]) == 0
    assert main(["compare", "--model", f"rcirl={p['rcirl']}", "--model", f"gan={p['gan']}", "--suite", p["suite"],
                 "--frames", p["frames"], "--out", p["cmp"], "--seed", "3"]) == 0
    p["dir"] = d
    return p


def test_every_artifact_has_a_manifest(pipeline):
    for key in ("suite", "frames", "rcirl", "gan", "eval", "cmp"):
        man = json.loads(open(pipeline[key] + ".manifest.json").read())
        assert man["version"] == __version__ and man["seed"] == 3
        assert pipeline[key] in man["outputs"]
    man = json.loads(open(pipeline["rcirl"] + ".manifest.json").read())
    assert man["inputs"][pipeline["frames"]] == sha256_file(pipeline["frames"])
    assert man["config"]["method"] == "rcirl" and man["config"]["train"]["epochs"] == 3


def test_eval_report_contents(pipeline):
    doc = json.loads(open(pipeline["eval"]).read())
    assert doc["n_scenarios"] == 4 and doc["expert_rank"]["n_frames"] <= 4
    assert open(pipeline["eval"] + ".csv").readline().strip() == "metric,value,numerator,denominator"
    header = open(pipeline["cmp"]).readline().strip()
    assert header == "metric,rcirl,gan"


def test_train_is_byte_identical_and_inputs_untouched(pipeline, tmp_path):
    before = {k: sha256_file(pipeline[k]) for k in ("suite", "frames")}
    again = tmp_path / "again.json"
    assert main(["train", "--frames", pipeline["frames"], "--suite", pipeline["suite"],
                 "--config", str(pipeline["dir"] / "train_cfg.json"), "--out", str(again), "--seed", "3"]) == 0
    assert sha256_file(again) == sha256_file(pipeline["rcirl"])
    assert {k: sha256_file(pipeline[k]) for k in ("suite", "frames")} == before


def test_manifest_rederives_suite(pipeline, tmp_path):
    man = json.loads(open(pipeline["suite"] + ".manifest.json").read())
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(man["config"]))
    out = tmp_path / "suite.json"
    assert main(["suite", "--config", str(cfg), "--out", str(out), "--seed", str(man["seed"])]) == 0
    assert sha256_file(out) == sha256_file(pipeline["suite"])


def test_usage_errors_exit_1(capsys):
    assert main(["train", "--frames", "x"]) == 1
    assert main(["nonsense"]) == 1
    assert main(["--help"]) == 0


def test_malformed_input_exit_2(tmp_path, pipeline):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["eval", "--model", str(bad), "--suite", pipeline["suite"], "--out", str(tmp_path / "r.json")]) == 2
    assert main(["suite", "--out", str(tmp_path / "s.json"), "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["compare", "--model", "noequals", "--suite", pipeline["suite"], "--out", str(tmp_path / "c")]) == 2


def test_grid_mismatch_exit_3(tmp_path, pipeline):
    m = tmp_path / "half.json"
    save_model(init_model(0, time_grid=default_time_grid(dt=0.25)), m)
    assert main(["eval", "--model", str(m), "--suite", pipeline["suite"], "--out", str(tmp_path / "r.json")]) == 3


def test_exit_code_categories():
    assert MalformedInputError.exit_code == 2
    assert ContractViolation.exit_code == 3
    assert NonFiniteLossError.exit_code == 4


def test_shiftdemo_and_version(tmp_path, capsys):
    assert main(["shiftdemo", "--out", str(tmp_path / "demo")]) == 0
    for name in ("points.csv", "directions.csv", "shift_report.json", "shift_report.json.manifest.json"):
        assert (tmp_path / "demo" / name).exists()
    assert json.loads((tmp_path / "demo" / "shift_report.json").read_text())["seed"] == 7
    assert main(["version"]) == 0
    assert f"rcirl {__version__}" in capsys.readouterr().out
