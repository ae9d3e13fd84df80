import json
import os

import numpy as np
import pytest

from thavolt import io as tio
from thavolt.cli import main
from thavolt.features import DataSet, SystemConfig, regressor_matrix
from thavolt.tt import random_tt, tt_predict_batch


def test_dataset_roundtrip_exact(tmp_path, rng):
    d = DataSet(rng.standard_normal((7, 3)) * 1e-3, rng.standard_normal((7, 2)) * 1e5)
    path = tmp_path / "d.csv"
    tio.write_dataset(path, d)
    assert path.read_text().splitlines()[0] == "u1,u2,u3,y1,y2"
    back = tio.read_dataset(path)
    np.testing.assert_array_equal(back.inputs, d.inputs)
    np.testing.assert_array_equal(back.outputs, d.outputs)


def test_dataset_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(tio.FormatError):
        tio.read_dataset(path)
    path.write_text("u1,y1\n1,x\n")
    with pytest.raises(tio.FormatError):
        tio.read_dataset(path)


def test_model_roundtrip_exact(tmp_path, rng):
    cfg = SystemConfig(p=2, M=1, d=3, l=2)
    B = random_tt(cfg.q, 3, 2, (2, 3), rng)
    tio.save_model(tmp_path / "m.json", B, cfg)
    B2, cfg2 = tio.load_model(tmp_path / "m.json")
    assert cfg2 == cfg and B2.ranks == B.ranks
    for a, b in zip(B.cores, B2.cores):
        np.testing.assert_array_equal(a, b)


def test_model_corrupt(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(tio.FormatError):
        tio.load_model(p)
    p.write_text(json.dumps({"format": "thavolt-tt", "cores": [{"shape": [1, 2, 2], "data": [0] * 4}],
                             "ranks": [1, 2]}))
    with pytest.raises(tio.FormatError):
        tio.load_model(p)


CONFIG = {
    "system": {"p": 3, "M": 2, "d": 2, "l": 2},
    "solver": {"max_rank": 4, "max_sweeps": 8},
    "tha": {"K": 3, "k": 2},
    "generator": {"sizes": {"train": 400, "val": 100}, "snr_db": 20},
    "probe": {"n_perm": 5},
}


def run(tmp_path, cmd, cfg=CONFIG, extra=()):
    cpath = tmp_path / "config.json"
    cpath.write_text(json.dumps(cfg))
    return main([cmd, "--config", str(cpath), "--out", str(tmp_path / "out"), *extra])


@pytest.fixture
def pipeline(tmp_path):
    for cmd in ("gen", "train-full", "train-tha"):
        assert run(tmp_path, cmd) == 0
    return tmp_path


def test_pipeline_files(pipeline):
    out = pipeline / "out"
    for name in ("train.csv", "val.csv", "truth_model.json", "full_model.json",
                 "full_trace.csv", "ensemble.json", "tha_traces.csv"):
        assert (out / name).exists(), name
    assert run(pipeline, "diagnose") == 0
    rep = json.loads((out / "diagnostics.json").read_text())
    assert rep["violations"] == []
    assert (out / "diagnostics.csv").read_text().startswith("name,value\n")


@pytest.mark.parametrize("cmd", ["train-full", "train-tha", "diagnose", "probe", "cost"])
def test_rerun_byte_identical(pipeline, cmd):
    out = pipeline / "out"
    assert run(pipeline, cmd) in (0, 1)
    snap = {f: (out / f).read_bytes() for f in sorted(os.listdir(out))}
    assert run(pipeline, cmd) in (0, 1)
    for f, data in snap.items():
        assert (out / f).read_bytes() == data, f


def test_jobs_do_not_change_output(pipeline):
    out = pipeline / "out"
    before = (out / "ensemble.json").read_bytes()
    assert run(pipeline, "train-tha", extra=("--jobs", "3")) == 0
    assert (out / "ensemble.json").read_bytes() == before


def test_noiseless_gen_matches_truth(tmp_path):
    cfg = dict(CONFIG, generator={"sizes": {"train": 40}, "snr_db": None})
    assert run(tmp_path, "gen", cfg) == 0
    out = tmp_path / "out"
    data = tio.read_dataset(out / "train.csv")
    truth, sysc = tio.load_model(out / "truth_model.json")
    np.testing.assert_array_equal(data.outputs, tt_predict_batch(truth, regressor_matrix(data, sysc)))


def test_full_subset_tha_equals_full(pipeline):
    cfg = dict(CONFIG, tha={"strategy": "explicit", "subsets": [[0, 1, 2]]},
               models={"ensemble": "ens1.json"})
    assert run(pipeline, "train-tha", cfg) == 0
    out = pipeline / "out"
    ens, sysc = tio.load_ensemble(out / "ens1.json")
    B, _ = tio.load_model(out / "full_model.json")
    data = tio.read_dataset(out / "val.csv")
    X = regressor_matrix(data, sysc)
    np.testing.assert_allclose(ens.heads[0].predict(X), tt_predict_batch(B, X), atol=1e-9)
    assert ens.weights.tolist() == [1.0]


def test_seed_flag_overrides(pipeline):
    out = pipeline / "out"
    first = (out / "train.csv").read_bytes()
    assert run(pipeline, "gen", extra=("--seed", "99")) == 0
    assert (out / "train.csv").read_bytes() != first
    assert json.loads((out / "gen_summary.json").read_text())["seed"] == 99


def test_missing_data_exit_2(tmp_path, capsys):
    code = run(tmp_path, "train-full")
    assert code == 2
    assert "train.csv" in capsys.readouterr().err


def test_corrupted_model_exit_2(pipeline, capsys):
    (pipeline / "out" / "full_model.json").write_text("garbage")
    assert run(pipeline, "diagnose") == 2
    assert "full_model.json" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main(["nonsense"]) == 2
    assert main(["cost", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["cost", "--out", str(tmp_path), "--jobs", "0"]) == 2


def test_cost_equal_at_full_subset(tmp_path):
    cfg = {"cost": {"K": 1, "k": 6, "head_width": "kM+1",
                    "system": {"p": 6, "M": 2, "d": 3, "l": 1}}}
    assert run(tmp_path, "cost", cfg) == 0
    est = json.loads((tmp_path / "out" / "cost.json").read_text())
    assert est["full"] == est["tha"]


def test_time_split_when_no_val_file(tmp_path):
    cfg = dict(CONFIG, generator={"sizes": {"train": 500}, "snr_db": 20})
    assert run(tmp_path, "gen", cfg) == 0
    assert run(tmp_path, "train-tha", cfg) == 0


PROBE_SYS = {"p": 4, "M": 1, "d": 2, "l": 1}


@pytest.mark.parametrize("scenario,expect", [
    ({"input_model": "shared-latent", "gamma": 0.6}, True),
    ({"groups": [[0, 1], [2, 3]]}, False),
])
def test_probe_flags(tmp_path, scenario, expect):
    gen = {"sizes": {"train": 800}, "snr_db": 20, "seed": 2}
    gen.update(scenario)
    cfg = {"system": PROBE_SYS, "solver": {"max_rank": 6},
           "tha": {"strategy": "explicit", "subsets": [[0, 1], [2, 3]]},
           "generator": gen, "probe": {"n_perm": 10}}
    for cmd in ("gen", "train-full", "probe"):
        assert run(tmp_path, cmd, cfg) == 0
    rep = json.loads((tmp_path / "out" / "probe.json").read_text())
    assert rep["incentive"] is expect
    assert ("true_noise" in rep["residual_parts"])


def test_solver_failure_exit_1(pipeline, monkeypatch):
    import thavolt.cli as cli
    from thavolt.exceptions import ConvergenceError

    def boom(*a, **kw):
        raise ConvergenceError("did not converge")

    monkeypatch.setattr(cli, "fit", boom)
    assert run(pipeline, "train-full") == 1
    err = json.loads((pipeline / "out" / "error.json").read_text())
    assert err["error"] == "ConvergenceError" and err["command"] == "train-full"
