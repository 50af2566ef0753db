import numpy as np
import pytest

from advtst.cli import evaluate_checks
from advtst.experiment import (
    ConfigError,
    ExperimentConfig,
    attack_weights,
    config_from_dict,
    config_hash,
    fit_suite,
    list_presets,
    load_config,
    make_sampler,
    rep_seeds,
    summarize,
)


def test_every_preset_loads():
    names = list_presets()
    assert {"quick", "blob-table2", "blob-table3", "blob-table8"} <= set(names)
    for name in names:
        cfg = load_config(name)
        assert cfg.tests


def test_default_train_section_merges():
    cfg = config_from_dict({"tests": ["MMD-G", "ME"], "train": {"default": {"epochs": 7}, "ME": {"lr": 0.1}}})
    assert cfg.train_config("MMD-G").epochs == 7
    assert cfg.train_config("ME").epochs == 7 and cfg.train_config("ME").lr == 0.1


@pytest.mark.parametrize("raw, msg", [
    ({"tests": ["MMD-X"]}, "unknown test"),
    ({"bogus": 1}, "unknown top-level"),
    ({"dataset": {"name": "mnist"}}, "unknown dataset"),
    ({"dataset": {"name": "table"}}, "needs a path"),
    ({"train": {"ME": {"epochs": 0}}, "tests": ["ME"]}, "train.ME"),
    ({"train": {"ME": {"warmup": 3}}, "tests": ["ME"]}, "unknown keys"),
    ({"attack": {"epsilon": -1}}, "epsilon"),
    ({"attack": {"weights": "greedy"}}, "weights"),
    ({"attack": {"location_scale": "log"}}, "location_scale"),
    ({"inference": {"alpha": 2}}, "alpha"),
    ({"n_te": 1}, "n_te"),
    ({"checks": [{"quantity": "benign", "method": "ME", "op": "eq", "value": 1}]}, "op"),
    ({"checks": [{"quantity": "benign", "op": "ge"}]}, "needs"),
])
def test_config_errors(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(raw)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="no preset"):
        load_config("does-not-exist")
    bad = tmp_path / "bad.yaml"
    bad.write_text("tests: [MMD-G\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_hash_tracks_content():
    a = load_config("quick")
    assert config_hash(a) == config_hash(load_config("quick"))
    assert config_hash(a) != config_hash(a.replace(seed=1))


def test_rep_seeds_are_distinct_and_stable():
    a, b = rep_seeds(0, 0), rep_seeds(0, 1)
    assert a == rep_seeds(0, 0) and a != b
    assert len({a.train_pair, a.fit, a.evaluation}) == 3


def test_attack_weights_strategies():
    cfg = load_config("quick")
    names = ["MMD-D", "MMD-G", "ME"]
    w, auto = attack_weights(cfg, names)
    assert not auto and sum(w.values()) == pytest.approx(1.0)
    assert w["MMD-D"] == pytest.approx(5 / 7)
    assert attack_weights(cfg, names, "auto") == ({}, True)
    w, _ = attack_weights(cfg, names, "naive")
    assert all(v == pytest.approx(1 / 3) for v in w.values())
    w, _ = attack_weights(cfg, ["MMD-D", "MMD-RoD"])
    assert w == {"MMD-D": 0.5, "MMD-RoD": 0.5}
    w, _ = attack_weights(cfg, names, {"ME": 2.0, "MMD-G": 2.0})
    assert w == {"MMD-D": 0.0, "MMD-G": 0.5, "ME": 0.5}
    with pytest.raises(ConfigError):
        attack_weights(cfg, names, {"SCF": 1.0})


def test_table_sampler_from_config(tmp_path):
    rng = np.random.default_rng(0)
    rows = np.column_stack([np.repeat([0.0, 1.0], 50), rng.standard_normal((100, 3))])
    path = tmp_path / "t.csv"
    np.savetxt(path, rows, delimiter=",")
    cfg = config_from_dict({"dataset": {"name": "table", "path": str(path), "columns": [0, 2]}})
    sp, sq = make_sampler(cfg)(10, rng)
    assert sp.shape == sq.shape == (10, 2)
    cfg = config_from_dict({"dataset": {"name": "table", "path": str(path), "q_label": 5.0}})
    with pytest.raises(ConfigError, match="no rows"):
        make_sampler(cfg)


def test_fit_suite_shares_classifier_and_resumes(tmp_path):
    cfg = load_config("quick").replace(tests=("C2ST-S", "C2ST-L", "MMD-G"))
    sp, sq = make_sampler(cfg)(cfg.n_tr, np.random.default_rng(0))
    models, traces = fit_suite(cfg, sp, sq, 1, model_dir=tmp_path)
    assert models["C2ST-S"].net is models["C2ST-L"].net
    assert models["C2ST-S"].sign and not models["C2ST-L"].sign
    assert sorted(p.name for p in tmp_path.iterdir()) == ["C2ST-L.json", "C2ST-S.json", "MMD-G.json"]
    again, traces2 = fit_suite(cfg, sp, sq, 999, model_dir=tmp_path)
    assert traces2 == {}
    assert again["MMD-G"].log_sigma == models["MMD-G"].log_sigma


def test_summarize():
    out = summarize([{"A": 0.2}, {"A": 0.4}])
    assert out["A"] == (pytest.approx(0.3), pytest.approx(0.1))


def test_checks_evaluation():
    cfg = ExperimentConfig(
        tests=("MMD-G",),
        reference=[{"quantity": "benign", "MMD-G": 1.0}],
        checks=[{"quantity": "benign", "method": "MMD-G", "op": "ge", "value": 0.85},
                {"quantity": "attacked", "method": "MMD-G", "op": "le", "ref": "benign", "offset": -0.1},
                {"quantity": "type1", "method": "MMD-G", "op": "between", "value": [0.02, 0.09]}])
    summary = {"benign": {"MMD-G": (0.9, 0.0)}, "attacked": {"MMD-G": (0.85, 0.0)}}
    rows = {(r[0], r[1]): r for r in evaluate_checks(cfg, summary)}
    assert rows[("benign", "MMD-G")][2] == 1.0 and rows[("benign", "MMD-G")][5] == "pass"
    assert rows[("attacked", "MMD-G")][5] == "fail"
    assert rows[("type1", "MMD-G")][5] == "missing"
    summary["attacked"]["MMD-G"] = (0.8, 0.0)
    rows = {(r[0], r[1]): r for r in evaluate_checks(cfg, summary)}
    assert rows[("attacked", "MMD-G")][5] == "pass"
