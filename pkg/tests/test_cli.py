import os

import pytest
from hydra.errors import HydraException

from conftest import dx_model
from tdvsm.build_tdvsm import build_case, load_settings, resolve_case_path
from tdvsm.coord.cli import EXIT_DATA, EXIT_USAGE, main
from tdvsm.errors import ConfigError
from tdvsm.mlpvsm.model import save_model
from tdvsm.netmodel.case_io import bundled_case
from tdvsm.utils.misc import read_text, text_digest, write_text


def test_seed_override_propagates():
    settings = load_settings("default.yaml", ["++seed=3"])
    assert settings.seed == 3
    assert settings.dataset.master_seed == 3
    assert settings.train.seed == 3
    assert settings.dx_train.seed == 3
    assert settings.coord.target is None


def test_desk_profile_composes_over_defaults():
    settings = load_settings("desk.yaml")
    assert settings.case == "desk"
    assert settings.dataset.n_scenarios == 60
    assert settings.dataset.contingencies == "none"
    assert settings.train.hidden_units == 10
    assert settings.coord.load_scale == pytest.approx(1.2)
    # untouched keys keep their defaults
    assert settings.margin.step == pytest.approx(0.05)
    assert settings.scenario.profiles[0]["name"] == "windy"


def test_invalid_section_value():
    with pytest.raises((ConfigError, HydraException)):
        load_settings("default.yaml", ["++powerflow.ibr_mode=droop"])


def test_case_resolution():
    assert resolve_case_path("desk") == bundled_case("desk.case")
    assert resolve_case_path(bundled_case("two_bus.case")) == bundled_case("two_bus.case")
    settings = load_settings("default.yaml", ["++case=five_bus"])
    net, feeders = build_case(settings)
    assert net.name == "five_bus" and feeders == []


def test_unknown_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["train", "--bogus"])
    assert err.value.code == EXIT_USAGE


def test_missing_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == EXIT_USAGE


def test_train_on_empty_dataset(tmp_path, capsys):
    path = str(tmp_path / "empty.csv")
    write_text(path, "seed,contingency,Pg_1,lambda_max,vsm_mw\n")
    code = main(["train", "--dataset", path, "--out", str(tmp_path)])
    assert code == EXIT_DATA
    assert "≥ 50 samples required" in capsys.readouterr().err


def test_missing_target(tmp_path, desk_vsm_model):
    path = str(tmp_path / "vsm.json")
    save_model(path, desk_vsm_model)
    code = main(["run-loop", "--case", "desk", "--model", path, "--weights", "equal", "--out", str(tmp_path)])
    assert code == EXIT_DATA


def test_model_for_another_case(tmp_path, desk_vsm_model):
    path = str(tmp_path / "vsm.json")
    save_model(path, desk_vsm_model)
    code = main(["run-loop", "--case", "five_bus", "--model", path, "--target", "55", "--out", str(tmp_path)])
    assert code == EXIT_DATA


def test_run_loop_writes_outputs(tmp_path, desk_vsm_model):
    vsm_path = str(tmp_path / "vsm.json")
    dx_path = str(tmp_path / "dx_desk7.json")
    save_model(vsm_path, desk_vsm_model)
    save_model(dx_path, dx_model(4, [1.0, 0.4, 0.8, 0.6]))
    out = str(tmp_path / "run")
    code = main(
        [
            "run-loop",
            "--case", "desk",
            "--model", vsm_path,
            "--dx-model", dx_path,
            "--target", "55",
            "--set", "tso.use_voltage_controls=false",
            "--out", out,
        ]
    )
    assert code == 0
    for name in ("trace.txt", "vsm_iterations.csv", "dispatch_tx.csv", "dispatch_dx_desk7.csv", "report.md"):
        assert os.path.exists(os.path.join(out, name)), name
    assert "## Coordination summary" in read_text(os.path.join(out, "report.md"))


def test_optimize_runs_one_iteration(tmp_path, desk_vsm_model):
    vsm_path = str(tmp_path / "vsm.json")
    save_model(vsm_path, desk_vsm_model)
    out = str(tmp_path / "once")
    code = main(
        [
            "optimize",
            "--case", "desk",
            "--model", vsm_path,
            "--weights", "equal",
            "--target", "60",
            "--set", "tso.use_voltage_controls=false",
            "--out", out,
        ]
    )
    assert code == 0
    assert '"iterations": 1' in read_text(os.path.join(out, "trace.txt"))


@pytest.mark.slow
def test_dataset_train_validate_pipeline(tmp_path):
    out = str(tmp_path)
    dataset = os.path.join(out, "dataset.csv")
    common = ["--config", "desk.yaml", "--out", out, "--jobs", "2"]
    assert main(["gen-dataset", "--dataset", dataset, *common]) == 0
    assert main(["train", "--dataset", dataset, *common]) == 0
    model = os.path.join(out, "vsm_model.json")
    assert main(["validate", "--dataset", dataset, "--model", model, "--folds", "3", *common]) == 0
    assert os.path.exists(os.path.join(out, "validation.json"))
    assert main(["train", "--feeder", "desk7", *common]) == 0
    assert os.path.exists(os.path.join(out, "dx_model_desk7.json"))


def _digests(out, names):
    return {name: text_digest(read_text(os.path.join(out, name))) for name in names}


def test_run_loop_is_reproducible(tmp_path, desk_vsm_model):
    vsm_path = str(tmp_path / "vsm.json")
    dx_path = str(tmp_path / "dx_desk7.json")
    save_model(vsm_path, desk_vsm_model)
    save_model(dx_path, dx_model(4, [1.0, 0.4, 0.8, 0.6]))
    names = ("trace.txt", "vsm_iterations.csv", "dispatch_tx.csv", "dispatch_dx_desk7.csv", "report.md")
    runs = []
    for run in ("a", "b"):
        out = str(tmp_path / run)
        argv = ["run-loop", "--case", "desk", "--model", vsm_path, "--dx-model", dx_path, "--target", "55"]
        assert main([*argv, "--set", "tso.use_voltage_controls=false", "--out", out]) == 0
        runs.append(_digests(out, names))
    assert runs[0] == runs[1]


@pytest.mark.slow
def test_gen_dataset_is_reproducible(tmp_path):
    digests = []
    for run, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        path = str(tmp_path / f"{run}.csv")
        argv = ["gen-dataset", "--config", "desk.yaml", "--scenarios", "6", "--seed", "4", "--jobs", jobs]
        assert main([*argv, "--dataset", path, "--out", str(tmp_path)]) == 0
        digests.append(text_digest(read_text(path)))
    assert digests[0] == digests[1] == digests[2]
