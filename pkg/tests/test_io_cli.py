import json
import os

import numpy as np
import pytest

from pricefusion import io
from pricefusion.cli import cmd_fit, cmd_simulate, load_datasets, main
from pricefusion.config import RunConfig, preset, stage_seed
from pricefusion.model import GLOBAL_NAMES, DEMOGRAPHIC_NAMES

TINY = {
    "population": {"size": 50000},
    "market": {"n0": 40, "horizon": 6},
    "conjoint": {"participants_per_group": 10},
    "sampler": {"chains": 2, "iterations": 120, "warmup": 60, "thinning": 2},
    "decision": {"truth_replications": 10},
}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory, tiny_config):
    root = tmp_path_factory.mktemp("run")
    assert main(["simulate", "--preset", "desk", "--config", str(tiny_config), "--seed", "3",
                 "--out", str(root / "data")]) == 0
    code = main(["fit", "--data", str(root / "data"), "--out", str(root / "fit"), "--allow-nonconverged"])
    assert code == 0
    assert main(["optimize", "--data", str(root / "data"), "--fit", str(root / "fit"), "--out", str(root / "fit")]) == 0
    return root


def test_config_roundtrip_and_presets():
    cfg = preset("desk")
    assert cfg.market.n0 == 100 and cfg.conjoint.participants_per_group == 50
    assert (cfg.sampler.chains, cfg.sampler.iterations, cfg.sampler.warmup, cfg.sampler.thinning) == (4, 3000, 1000, 10)
    back = RunConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back.to_json() == cfg.to_json()
    paper = preset("paper")
    assert paper.market.price_schedule()[-1] == 17.0 and paper.sampler.chains == 12
    assert paper.truth.as_dict()["kappa"] == 0.75


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="section"):
        RunConfig.from_json({"bogus": {}})
    with pytest.raises(ValueError, match="market"):
        RunConfig.from_json({"market": {"n1": 3}})
    with pytest.raises(ValueError, match="truth"):
        RunConfig.from_json({"truth": {"gamma": 1.0}})


def test_stage_seeds_are_distinct():
    seeds = RunConfig(seed=5).seeds()
    assert len(set(seeds.values())) == len(seeds)
    assert stage_seed(5, "history") == seeds["history"] != stage_seed(6, "history")


def test_default_simulation_counts(tmp_path):
    sim = cmd_simulate(preset("paper"), tmp_path)
    h = io.read_history(tmp_path / "purchase_history.csv")
    assert sorted(set(h.time.tolist())) == list(range(1, 25))
    assert len(io.read_conjoint(tmp_path / "conjoint.csv", 25)) == 6000
    truth = io.read_ground_truth(tmp_path / "ground_truth.csv")
    assert len(truth["price"]) == 17 and truth["price"][0] == 14.0 and truth["price"][-1] == 18.0
    assert len(h) == len(sim.state.history)


def test_single_period_history(tmp_path):
    cfg = RunConfig.from_json({"market": {"horizon": 1, "n0": 300}, "population": {"size": 10000},
                               "conjoint": {"participants_per_group": 5}, "decision": {"truth_replications": 2}})
    cmd_simulate(cfg, tmp_path)
    assert len(io.read_history(tmp_path / "purchase_history.csv")) == 300


def test_simulate_is_byte_identical(tmp_path, tiny_config):
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(tiny_config), "--seed", "9", "--out", str(tmp_path / name)]) == 0
    for f in ("purchase_history.csv", "conjoint.csv", "ground_truth.csv", "population.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert b"\r\n" not in (tmp_path / "a" / "conjoint.csv").read_bytes()


def test_schema_roundtrip(tmp_path, tiny_config):
    cfg = RunConfig.load(tiny_config, base=preset("desk"))
    sim = cmd_simulate(cfg, tmp_path)
    history, conjoint, manifest = load_datasets(tmp_path)
    for name in ("customer_id", "time", "price", "s_periods", "conjoint", "domain", "outcome", "age", "gender",
                 "location", "group", "task_index"):
        np.testing.assert_array_equal(getattr(history, name), getattr(sim.state.history, name), err_msg=name)
        np.testing.assert_array_equal(getattr(conjoint, name), getattr(sim.conjoint, name), err_msg=name)
    assert manifest["config"] == cfg.to_json()


def test_schema_errors_name_file_row_column(tmp_path, tiny_config):
    cmd_simulate(RunConfig.load(tiny_config), tmp_path)
    path = tmp_path / "purchase_history.csv"
    lines = path.read_text().splitlines()
    fields = lines[3].split(",")
    fields[4] = "suburban"
    lines[3] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(io.SchemaError) as err:
        io.read_history(path)
    assert err.value.row == 4 and err.value.column == "location" and "purchase_history.csv" in str(err.value)

    bad_header = tmp_path / "conjoint.csv"
    text = bad_header.read_text().replace("choice", "chosen", 1)
    bad_header.write_text(text)
    with pytest.raises(io.SchemaError, match="header"):
        io.read_conjoint(bad_header, 7)


def test_fit_outputs(tiny_run):
    fit = tiny_run / "fit"
    summary = io.read_json(fit / "summary.json")
    assert [r["parameter"] for r in summary["parameters"]] == list(GLOBAL_NAMES)
    draws = io.read_draws(fit / "draws.csv")
    assert draws.draws.shape == (2, 30, 11)
    assert draws.individual_names and all(n.startswith("u[") for n in draws.individual_names)
    assert (draws.column("tau") > 0).all()
    diag = io.read_json(fit / "diagnostics.json")
    assert {"parameters", "chains", "divergence_rate", "max_rhat"} <= set(diag)
    header = (fit / "draws.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["chain", "iteration"]
    first_iter = int((fit / "draws.csv").read_text().splitlines()[1].split(",")[1])
    assert first_iter == 62


def test_fit_is_reproducible(tiny_run, tmp_path):
    assert main(["fit", "--data", str(tiny_run / "data"), "--out", str(tmp_path), "--allow-nonconverged"]) == 0
    assert (tmp_path / "draws.csv").read_bytes() == (tiny_run / "fit" / "draws.csv").read_bytes()


def test_optimize_outputs(tiny_run):
    curve = io.read_profit_curve(tiny_run / "fit" / "profit_curve.csv")
    assert len(curve["price"]) == 17 and "profit_true" in curve
    assert abs(curve["p_optimal"].sum() - 1) < 1e-12
    result = io.read_json(tiny_run / "fit" / "optimal_price.json")
    assert result["modal_price"] in curve["price"]
    text = (tiny_run / "fit" / "profit_curve.csv").read_text().splitlines()
    assert text[0] == "price,mean_profit,lo95,hi95,p_optimal,profit_true"
    assert text[1].startswith("14.00,")


def test_nonconverged_fit_exits_nonzero(tiny_run, tmp_path):
    code = main(["fit", "--data", str(tiny_run / "data"), "--out", str(tmp_path), "--seed", "4",
                 "--config", str(_short_sampler(tmp_path))])
    report = io.read_json(tmp_path / "diagnostics.json")
    assert (code == 2) == (report["max_rhat"] >= 1.05)


def _short_sampler(tmp_path):
    path = tmp_path / "short.json"
    path.write_text(json.dumps({"sampler": {"chains": 2, "iterations": 40, "warmup": 20, "thinning": 1}}))
    return path


def test_variant_and_no_conjoint(tiny_run, tmp_path, caplog):
    cfg = RunConfig.from_json({"variant": "no_demographics"}, base=RunConfig.from_json(
        io.read_json(tiny_run / "data" / "manifest.json")["config"]))
    cfg = RunConfig.from_json({"sampler": {"chains": 2, "iterations": 40, "warmup": 20, "thinning": 1}}, base=cfg)
    with caplog.at_level("WARNING", logger="pricefusion"):
        cmd_fit(cfg, tiny_run / "data", tmp_path, use_conjoint=False, allow_nonconverged=True)
    names = [r["parameter"] for r in io.read_json(tmp_path / "summary.json")["parameters"]]
    assert not set(DEMOGRAPHIC_NAMES) & set(names) and len(names) == 6
    assert any("unidentifiable" in r.message for r in caplog.records)
    assert io.read_json(tmp_path / "fit.json")["identifiability_warning"] is True


def test_optimize_without_draws(tiny_run, tmp_path, capsys):
    assert main(["optimize", "--data", str(tiny_run / "data"), "--fit", str(tmp_path), "--out", str(tmp_path)]) == 1
    assert "no draws" in capsys.readouterr().err


@pytest.mark.skipif(os.geteuid() == 0, reason="root can write anywhere")
def test_unwritable_output(tmp_path, tiny_config):
    locked = tmp_path / "locked"
    locked.mkdir(mode=0o500)
    assert main(["simulate", "--config", str(tiny_config), "--out", str(locked / "x")]) == 1


def test_unwritable_output_path_is_a_file(tmp_path, tiny_config, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", str(tiny_config), "--out", str(blocker / "sub")]) == 1
    assert "not writable" in capsys.readouterr().err


def test_diagnose(tiny_run, capsys):
    assert main(["diagnose", "--fit", str(tiny_run / "fit")]) == 0
    out = capsys.readouterr().out
    assert "beta0" in out and "max R-hat" in out


def test_scenario_outputs(tiny_run, tmp_path, tiny_config):
    short = _short_sampler(tmp_path)
    assert main(["scenario", "--data", str(tiny_run / "data"), "--out", str(tmp_path / "sc"),
                 "--config", str(short)]) == 0
    headers = set()
    for v in ("no_demographics", "multiplicative_kappa", "no_history"):
        path = tmp_path / "sc" / v / "profit_curve.csv"
        headers.add(path.read_text().splitlines()[0])
    assert headers == {(tiny_run / "fit" / "profit_curve.csv").read_text().splitlines()[0]}
