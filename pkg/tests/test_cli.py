import csv
import json

import numpy as np
import pytest
from sklearn.base import clone

from srlfi import cli
from srlfi.cli import emit_report, main, run_experiment
from srlfi.config import ConfigError, ExperimentConfig, load_config
from srlfi.estimators import GANPosterior, ScoringRulePosterior
from srlfi.io import load_checkpoint
from srlfi.simulators import ConjugateGaussian, generate_dataset
from srlfi.training import NonFiniteLossError

TINY = """
[experiment]
model = conjugate_gaussian
method = {methods}
n_train = 200
m = 4
seeds = {seeds}

[network]
hidden = 8
critic_hidden = 8

[training]
max_epochs = 2
batch_size = 50

[evaluation]
n_test = 20
n_post = 50
sbc_priors = 20
sbc_draws = 10
"""


def _config(tmp_path, methods="energy", seeds="0", name="c.ini"):
    path = tmp_path / name
    path.write_text(TINY.format(methods=methods, seeds=seeds))
    return path


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- config ------------------------------------------------------------------


def test_config_parses(tmp_path):
    cfg = load_config(_config(tmp_path, "energy, gan", "0 1"))
    assert cfg.methods == ("energy", "gan") and cfg.seeds == (0, 1)
    assert cfg.hidden == (8,) and cfg.max_epochs == 2


@pytest.mark.parametrize("body, path", [
    ("[experiment]\nn_train = ten\n", "experiment.n_train"),
    ("[experiment]\nmethod = energy, bogus\n", "experiment.method"),
    ("[training]\nlearning_rat = 0.1\n", "training.learning_rat"),
    ("[scoring]\nbeta = 2.5\n", "scoring.beta"),
    ("[experiment]\nmodel = nope\n", "experiment.model"),
    ("[experiment]\nm = 1\n", "experiment.m"),
    ("[experiment]\nmethod = patched-energy\n", "scoring.patch_size"),
])
def test_config_errors_name_the_field(tmp_path, body, path):
    p = tmp_path / "bad.ini"
    p.write_text(body)
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        load_config(p)


def test_kernel_without_gamma_or_data(tmp_path):
    p = tmp_path / "k.ini"
    p.write_text("[experiment]\nmethod = kernel\nn_train = 1\n")
    with pytest.raises(ConfigError, match="scoring.gamma"):
        load_config(p)
    p.write_text("[experiment]\nmethod = kernel\nn_train = 1\n[scoring]\ngamma = 1.0\n")
    with pytest.raises(ConfigError, match="experiment.n_train"):
        load_config(p)


def test_config_dict_roundtrip():
    cfg = ExperimentConfig(methods=("energy", "gan"), hidden=(4, 4)).validate()
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.digest() == cfg.digest()


# --- report ------------------------------------------------------------------


def _row(method, value, metric="nrmse"):
    return {"method": method, "model": "m", "n_train": 10, "m": 2, "metric": metric,
            "component": "mean", "value": value}


def test_report_single_run_sd_zero(tmp_path):
    summary = emit_report([_row("energy", 0.25)], tmp_path / "metrics.csv")
    assert summary[0]["mean"] == 0.25 and summary[0]["sd"] == 0.0 and summary[0]["n_runs"] == 1


def test_report_three_seeds_and_ordering(tmp_path):
    rows = [_row("kernel", v) for v in (1.0, 2.0, 4.0)] + [_row("energy", 0.5)]
    summary = emit_report(rows, tmp_path / "metrics.csv")
    assert [s["method"] for s in summary] == ["energy", "kernel"]
    k = summary[1]
    assert k["mean"] == pytest.approx(7 / 3)
    assert k["sd"] == pytest.approx(np.std([1.0, 2.0, 4.0], ddof=1))
    written = _read(tmp_path / "summary.csv")
    assert [r["method"] for r in written] == ["energy", "kernel"]
    assert float(written[1]["sd"]) == k["sd"]


def test_report_empty_raises(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path / "metrics.csv")


# --- end to end ----------------------------------------------------------------


def test_run_layout_and_determinism(tmp_path, capsys):
    cfg = _config(tmp_path, "energy, gan", "0 1")
    a = run_experiment(cfg, out=str(tmp_path / "a"))
    b = run_experiment(cfg, out=str(tmp_path / "b"), threads=2)
    for rel in ("metrics.csv", "summary.csv", "energy/seed1/generator.ckpt",
                "gan/seed0/sbc_ranks.csv", "data/seed0_train.bin"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    rows = _read(a / "metrics.csv")
    assert list(rows[0]) == ["method", "model", "n_train", "m", "metric", "component", "value"]
    assert {r["m"] for r in rows if r["method"] == "gan"} == {"1"}
    assert {r["method"] for r in rows} == {"energy", "gan"}
    manifest = json.loads((a / "manifest.json").read_text())
    assert len(manifest["cells"]) == 4 and "numpy" in manifest["versions"]
    assert "energy" in capsys.readouterr().out


def test_manifest_reruns_identically(tmp_path):
    a = run_experiment(_config(tmp_path), out=str(tmp_path / "a"))
    b = run_experiment(a / "manifest.json", out=str(tmp_path / "b"))
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_seed_override_changes_data(tmp_path):
    cfg = _config(tmp_path)
    a = run_experiment(cfg, seed=5, out=str(tmp_path / "a"))
    assert (a / "data" / "seed5_train.bin").exists()
    assert not (a / "data" / "seed0_train.bin").exists()


def test_subcommands(tmp_path, capsys):
    cfg = str(_config(tmp_path))
    out = str(tmp_path / "o")
    assert main(["simulate", "--config", cfg, "--out", out, "--csv"]) == 0
    assert (tmp_path / "o" / "data" / "seed0_train.csv").exists()
    assert main(["train", "--config", cfg, "--out", out]) == 0
    g, header = load_checkpoint(tmp_path / "o" / "energy" / "seed0" / "generator.ckpt")
    assert header["summary"]["epochs"] == 2
    assert main(["evaluate", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "o" / "energy" / "seed0" / "metrics.csv").exists()
    assert main(["sbc", "--config", cfg, "--out", out]) == 0
    assert main(["c2st", "--config", cfg, "--out", out]) == 0
    assert "c2st_accuracy" in capsys.readouterr().out
    metrics = str(tmp_path / "o" / "energy" / "seed0" / "metrics.csv")
    assert main(["report", metrics, "--out", str(tmp_path / "r.csv")]) == 0
    assert (tmp_path / "summary.csv").exists()


def test_c2st_from_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    for name, shift in (("a", 0.0), ("b", 5.0)):
        np.savetxt(tmp_path / f"{name}.csv", rng.normal(shift, 1, (200, 2)), delimiter=",",
                   header="x0,x1", comments="")
    assert main(["c2st", "--samples-a", str(tmp_path / "a.csv"),
                 "--samples-b", str(tmp_path / "b.csv")]) == 0
    acc = float(capsys.readouterr().out.split()[-1])
    assert acc > 0.95


def test_exit_code_config(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nmodel = nope\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_exit_code_numeric(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NonFiniteLossError(1, 0, float("nan"))
    monkeypatch.setattr(cli, "step_train", boom)
    assert main(["run", "--config", str(_config(tmp_path)), "--out", str(tmp_path / "o")]) == 3


def test_exit_code_corrupt_checkpoint(tmp_path):
    cfg = str(_config(tmp_path))
    out = tmp_path / "o"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    ckpt = out / "energy" / "seed0" / "generator.ckpt"
    ckpt.write_bytes(ckpt.read_bytes()[:30])
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 1


# --- estimators ----------------------------------------------------------------


def test_estimator_params_and_clone():
    est = ScoringRulePosterior(scoring="kernel", m=3, hidden_layer_sizes=(5,))
    params = est.get_params()
    assert params["scoring"] == "kernel" and params["m"] == 3
    c = clone(est).set_params(m=7)
    assert c.m == 7 and est.m == 3
    assert GANPosterior(critic_steps=2).get_params()["critic_steps"] == 2


@pytest.mark.parametrize("est", [
    ScoringRulePosterior(m=3, hidden_layer_sizes=(6,), max_epochs=2, random_state=1),
    GANPosterior(hidden_layer_sizes=(6,), critic_hidden_layer_sizes=(6,), max_epochs=2,
                 random_state=1),
])
def test_estimator_fit_sample_shapes(est):
    d = generate_dataset(ConjugateGaussian(), 100, 0)
    est.fit(d.y, d.theta)
    assert len(est.history_) == 2
    draws = est.sample(d.y[:4], n_samples=7, random_state=0)
    assert draws.shape == (4, 7, 1)
    np.testing.assert_array_equal(draws, est.sample(d.y[:4], n_samples=7, random_state=0))
    assert est.predict(d.y[:4], n_samples=7, random_state=0).shape == (4, 1)
    assert np.isfinite(est.score(d.y, d.theta))
    with pytest.raises(ValueError):
        est.sample(np.zeros((2, 3)))
