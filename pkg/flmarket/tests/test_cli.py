import numpy as np
import pandas as pd
import pytest

from flmarket import cli
from flmarket.core import constants
from flmarket.schemas.market import MarketConfig
from flmarket.schemas.scenario import MarketInstance
from flmarket.services import market_model as mm
from flmarket.services.fedsim_service import quality_curve
from flmarket.utils.csv_io import read_table
from flmarket.utils.instance_io import read_instances, write_instances


@pytest.fixture
def instance_file(tmp_path):
    path = tmp_path / "instances.txt"
    assert cli.main(["gen", "--seed", "7", "--count", "3", "--n-owners", "5", "--out", str(path)]) == 0
    return path


def test_gen_writes_reproducible_instances(tmp_path, instance_file):
    instances = read_instances(instance_file)
    assert len(instances) == 3
    assert all(inst.n_owners == 5 for inst in instances)

    again = tmp_path / "again.txt"
    assert cli.main(["gen", "--seed", "7", "--count", "3", "--n-owners", "5", "--out", str(again)]) == 0
    assert again.read_text() == instance_file.read_text()


def test_run_rma_writes_outcomes(tmp_path, instance_file, capsys):
    out = tmp_path / "rma.csv"
    assert cli.main(["run-rma", "--instances", str(instance_file), "--seed", "3", "--out", str(out)]) == 0
    assert "payments" in capsys.readouterr().out
    frame = read_table(out, ["seed", "owner", "winner", "bid", "payment", "group", "branch"])
    assert len(frame) == 15
    winners = frame[frame["winner"]]
    assert (winners["payment"] >= winners["bid"] - 1e-9).all()
    assert (frame[~frame["winner"]]["payment"] == 0.0).all()


def test_run_rma_needs_a_seed(instance_file):
    assert cli.main(["run-rma", "--instances", str(instance_file)]) == constants.EXIT_ERROR


def test_unknown_config_key_is_an_error(tmp_path):
    out = tmp_path / "instances.txt"
    assert cli.main(["gen", "--seed", "1", "--set", "BOGUS=1", "--out", str(out)]) == constants.EXIT_ERROR
    assert not out.exists()


def test_missing_required_flag_exits():
    with pytest.raises(SystemExit):
        cli.main(["gen", "--out", "instances.txt"])


def test_config_file(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("N_OWNERS=4\nCHANNEL_COUNT_RANGE=2,2\n")
    out = tmp_path / "instances.txt"
    assert cli.main(["gen", "--seed", "2", "--count", "2", "--config", str(config), "--out", str(out)]) == 0
    for instance in read_instances(out):
        assert instance.n_owners == 4
        assert all(o.channel_count == 2 for o in instance.owners)


def test_oracle_comparison(tmp_path):
    out = tmp_path / "compare.csv"
    argv = ["oracle", "--seed", "3", "--count", "2", "--set", "N_OWNERS=6",
            "--compare", "rma,benchmark", "--out", str(out)]
    assert cli.main(argv) == 0
    frame = read_table(out, ["seed", "mechanism", "welfare", "workers", "ratio"])
    assert set(frame["mechanism"]) == {"rma", "benchmark", "oracle"}
    assert (frame["ratio"].dropna() <= 1.0).all()


def test_oracle_alone(tmp_path, instance_file):
    out = tmp_path / "oracle.csv"
    assert cli.main(["oracle", "--instances", str(instance_file), "--out", str(out)]) == 0
    frame = read_table(out, ["seed", "best_welfare", "best_set", "evaluated"])
    assert len(frame) == 3
    assert (frame["best_welfare"] >= 0.0).all()


def test_properties_pass_for_rma(tmp_path):
    out = tmp_path / "report.csv"
    argv = ["properties", "--mechanism", "rma", "--seed", "5", "--count", "3", "--n-owners", "5",
            "--trials", "4", "--out", str(out)]
    assert cli.main(argv) == constants.EXIT_OK
    frame = read_table(out, ["check", "failures"])
    assert frame["check"].tolist() == ["ir", "ic_bid", "ic_quality", "criticality", "feasibility", "accounting"]
    assert (frame["failures"] == 0).all()


def test_properties_flag_pay_your_bid(tmp_path):
    owner = mm.truthful_owner(0, 10.0, 0.6, range(1, 7), 1e6, 0.1, 0.0, 0.0, MarketConfig())
    path = write_instances(tmp_path / "lone.txt", [MarketInstance(seed=41, owners=[owner])])
    argv = ["properties", "--mechanism", "pay_your_bid", "--instances", str(path),
            "--checks", "ic_bid", "--trials", "4"]
    assert cli.main(argv) == constants.EXIT_PROPERTY_FAILURE


def test_run_drla_needs_a_parameter_file(tmp_path, instance_file):
    argv = ["run-drla", "--instances", str(instance_file), "--params", str(tmp_path / "absent.json")]
    assert cli.main(argv) == constants.EXIT_ERROR


def test_train_then_run_drla(tmp_path):
    params, log = tmp_path / "params.json", tmp_path / "log.csv"
    shape = ["--set", "EMBEDDING_DIM=4", "--set", "MONOTONE_GROUPS=2", "--set", "MONOTONE_UNITS=2"]
    argv = ["train-drla", "--seed", "4", "--n-owners", "4", "--episodes", "3", "--out", str(params),
            "--log", str(log), "--set", "BATCH_SIZE=8", "--set", "TRAIN_COUNT=3",
            "--set", "VALIDATION_COUNT=2"] + shape
    assert cli.main(argv) == 0
    assert params.exists()
    assert len(read_table(log, constants.TRAINING_LOG_COLUMNS)) >= 1

    out = tmp_path / "drla.csv"
    argv = ["run-drla", "--params", str(params), "--seed", "9", "--count", "2",
            "--set", "N_OWNERS=4", "--out", str(out)]
    assert cli.main(argv) == 0
    frame = read_table(out, ["winner", "payment", "bid"])
    winners = frame[frame["winner"]]
    assert (winners["payment"] >= winners["bid"] - 1e-6).all()


def test_sweep_csv(tmp_path):
    out = tmp_path / "sweep.csv"
    argv = ["sweep", "--kind", "G", "--values", "2,5", "--mechanisms", "rma,benchmark", "--count", "3",
            "--n-owners", "6", "--seed", "1", "--out", str(out)]
    assert cli.main(argv) == 0
    frame = read_table(out, constants.SWEEP_COLUMNS)
    assert len(frame) == 4
    assert sorted(frame["value"].unique()) == [2.0, 5.0]


def test_fedsim_fit_from_grid(tmp_path, capsys):
    data_sizes = np.array([0, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000], dtype=float)
    D, delta = [a.ravel() for a in np.meshgrid(data_sizes, np.linspace(0.0, 1.2, 13))]
    kappas = [constants.KAPPA_1, constants.KAPPA_2, constants.KAPPA_3,
              constants.KAPPA_4, constants.KAPPA_5, constants.KAPPA_6]
    grid = tmp_path / "grid.csv"
    pd.DataFrame({"D": D, "Delta": delta, "accuracy": quality_curve(D, delta, kappas)}).to_csv(grid, index=False)

    assert cli.main(["fedsim-fit", "--grid", str(grid), "--fix", "kappa3=0.001"]) == 0
    printed = capsys.readouterr().out
    assert "R^2=" in printed
    assert "kappa3" in printed


def test_fedsim_fit_needs_a_grid_or_seed():
    assert cli.main(["fedsim-fit"]) == constants.EXIT_ERROR
