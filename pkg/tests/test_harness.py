import json
from collections import Counter

import numpy as np
import pytest
import yaml

from fastamc import dataset as D
from fastamc import models
from fastamc.channel import SNR_GRID
from fastamc.harness import cli, runtime
from fastamc.harness.config import (
    ConfigError, ExperimentConfig, PreprocessSpec, SnrPolicy, dump_config, load_config,
)
from fastamc.harness.evaluate import (
    EvalReport, ReportError, evaluate, read_report, report_from_predictions, write_report,
)
from fastamc.harness.pipeline import Preprocessor, fit_preprocessor, normalize_power
from fastamc.harness.sweep import epoch_time, sweep_reduction, sweep_snr_selection
from fastamc.harness.train import (
    TrainedModel, TrainingError, _batches, fit, rotate_phase, select_training, train_model,
)
from fastamc.nn import LayerSpec, Network, NetworkSpec, TrainConfig
from fastamc.preprocess import PreprocessError


@pytest.fixture(scope="module")
def data():
    return D.generate_dataset(D.GenerationConfig(total_examples=2000, seed=11))


@pytest.fixture(scope="module")
def splits(data):
    return D.split(data, 0.5, seed=0)


def _fast_cfg(**kw):
    base = {"arch": "resnet3", "preprocess": "uniform:8", "train": {"epochs": 2, "batch_size": 128}}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize("text", ["none", "pca:8", "uniform:2", "random:4", "random:4:9", "magrank:16", "polar"])
def test_preprocess_spec_roundtrip(text):
    spec = PreprocessSpec.parse(text)
    assert PreprocessSpec.parse(str(spec)) == spec


@pytest.mark.parametrize("text", ["uniform:3", "none:2", "wavelet:2", "pca:0", "uniform:x"])
def test_preprocess_spec_rejects(text):
    with pytest.raises(ConfigError):
        PreprocessSpec.parse(text)


@pytest.mark.parametrize("text", ["all", "single:10", "pair:18,0", "fraction:0.5", "fraction:0.25:3"])
def test_snr_policy_roundtrip(text):
    policy = SnrPolicy.parse(text)
    assert SnrPolicy.parse(str(policy)) == policy


def test_snr_policy_off_grid_message():
    with pytest.raises(ConfigError, match="not on the grid"):
        SnrPolicy.parse("single:11")
    with pytest.raises(ConfigError):
        SnrPolicy.parse("pair:10")
    with pytest.raises(ConfigError):
        SnrPolicy.parse("fraction:1.5")


def test_single_policy_filters(splits):
    train, _ = splits
    chosen = select_training(_fast_cfg(snr_policy="single:10"), train)
    assert set(chosen.snrs.tolist()) == {10}
    assert len(chosen) == int(np.sum(train.snrs == 10))
    pair = select_training(_fast_cfg(snr_policy="pair:18,0"), train)
    assert set(pair.snrs.tolist()) == {0, 18}


def test_fraction_policy_halves_cells(splits):
    train, _ = splits
    chosen = select_training(_fast_cfg(snr_policy="fraction:0.5:1"), train)
    before, after = train.cell_counts(), chosen.cell_counts()
    assert set(after) == set(before)
    assert all(abs(after[c] - before[c] / 2) <= 1 for c in before)


def test_missing_snr_error_names_policy(splits):
    train, _ = splits
    no10 = train.subset(np.flatnonzero(train.snrs != 10))
    with pytest.raises(TrainingError, match="single:10"):
        train_model(_fast_cfg(snr_policy="single:10"), no10)


def test_config_yaml_roundtrip(tmp_path):
    cfg = _fast_cfg(snr_policy="pair:18,0", dataset="d.bin", split_seed=4)
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert yaml.safe_load(path.read_text())["preprocess"] == "uniform:8"


def test_config_digest_ignores_paths_and_replay():
    a = _fast_cfg()
    assert a.digest == _fast_cfg(dataset="x.bin", output="o", replay=True).digest
    assert a.digest != _fast_cfg(split_seed=1).digest
    assert a.digest != a.with_overrides(train={"learning_rate": 0.01}).digest


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.from_dict({"arhc": "cnn4"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"arch": "vgg"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"train": {"batch": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"train_fraction": 1.0})


def test_training_defaults_per_arch():
    assert (ExperimentConfig().train.batch_size, ExperimentConfig().train.learning_rate) == (1024, 1e-3)
    lstm = ExperimentConfig.from_dict({"arch": "lstm2"}).train
    assert (lstm.batch_size, lstm.learning_rate) == (400, 0.0018)


# ------------------------------------------------------------------ pipeline


def test_normalize_power():
    x = np.random.default_rng(0).standard_normal((5, 2, 32)) * np.arange(1, 6)[:, None, None]
    y = normalize_power(x)
    assert np.allclose(np.mean(np.sum(y.astype(float) ** 2, axis=1), axis=1), 1, atol=1e-5)
    assert np.array_equal(normalize_power(np.zeros((1, 2, 8))), np.zeros((1, 2, 8), np.float32))


def test_rotate_phase_is_complex_rotation():
    x = np.random.default_rng(1).standard_normal((4, 2, 16)).astype(np.float32)
    y = rotate_phase(x, np.random.default_rng(5))
    theta = np.random.default_rng(5).uniform(0, 2 * np.pi, 4)
    z = (x[:, 0] + 1j * x[:, 1]) * np.exp(1j * theta)[:, None]
    assert np.allclose(y[:, 0], z.real, atol=1e-5) and np.allclose(y[:, 1], z.imag, atol=1e-5)
    assert np.allclose(np.sum(y**2, axis=(1, 2)), np.sum(x**2, axis=(1, 2)), rtol=1e-5)


@pytest.mark.parametrize("method,length", [("none", 128), ("pca:8", 16), ("uniform:4", 32), ("random:2:3", 64),
                                           ("magrank:8", 16), ("polar", 128)])
def test_preprocessor_shapes_and_record(splits, method, length):
    train, test = splits
    pre = fit_preprocessor(PreprocessSpec.parse(method), train.frames, "resnet3")
    out = pre.transform(test.frames[:7])
    assert out.shape == (7, 1, 2, length) and out.dtype == np.float32
    assert pre.output_len == length
    back = Preprocessor.from_record(*pre.to_record())
    assert np.array_equal(back.transform(test.frames[:7]), out)


def test_lstm2_reads_polar_after_reduction(splits):
    train, _ = splits
    pre = fit_preprocessor(PreprocessSpec.parse("uniform:4"), train.frames, "lstm2")
    out = pre.transform(train.frames[:3])[:, 0]
    assert pre.polar and np.all(out[:, 0] >= 0) and np.all(np.abs(out[:, 1]) <= 1)


def test_preprocessor_rejects_wrong_length(splits):
    train, _ = splits
    pre = fit_preprocessor(PreprocessSpec.parse("pca:4"), train.frames)
    with pytest.raises(PreprocessError, match="frame length"):
        pre.transform(np.zeros((2, 2, 64)))


# ------------------------------------------------------------------ training


def test_batches_fold_single_tail():
    assert [(s.start, s.stop) for s in _batches(9, 4)] == [(0, 4), (4, 9)]
    assert [(s.start, s.stop) for s in _batches(10, 4)] == [(0, 4), (4, 8), (8, 10)]
    assert [(s.start, s.stop) for s in _batches(1, 4)] == [(0, 1)]


def test_overfit_fixture_cnn4(data):
    # 64 examples memorised by CNN4 (on 16-sample frames to keep the test quick)
    idx = np.random.default_rng(0).choice(len(data), 64, replace=False)
    pre = fit_preprocessor(PreprocessSpec.parse("uniform:8"), data.frames)
    x = pre.transform(data.frames[idx])
    y = data.mods[idx].astype(np.int64)
    net = Network(models.build_cnn4(16), seed=0)
    res = fit(net, x, y, TrainConfig(batch_size=64, epochs=200, learning_rate=1e-3))
    assert len(res.epoch_times) == 200
    assert np.mean(net.predict(x) == y) >= 0.95


def test_early_stopping_restores_best(splits):
    train, _ = splits
    cfg = _fast_cfg(train={"epochs": 6, "batch_size": 64, "patience": 2, "learning_rate": 0.02})
    model = train_model(cfg, train)
    f = model.fit
    assert f.best_epoch == int(np.argmin(f.val_loss))
    assert len(f.epoch_times) <= 6
    assert len(f.val_loss) == len(f.train_loss) == len(f.epoch_times)


def test_training_deterministic_and_checkpoint(tmp_path, splits):
    train, test = splits
    cfg = _fast_cfg()
    a, b = train_model(cfg, train), train_model(cfg, train)
    for k, v in a.network.named_params().items():
        assert np.array_equal(v, b.network.named_params()[k])
    a.save(tmp_path / "m.ckpt")
    back = TrainedModel.load(tmp_path / "m.ckpt")
    assert back.config == cfg
    assert back.epoch_times == a.epoch_times
    assert np.array_equal(back.predict(test.frames), a.predict(test.frames))
    a.save(tmp_path / "m2.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


# ------------------------------------------------------------------ evaluate


def _constant_net(L=128, cls=0):
    spec = NetworkSpec((1, 2, L), (LayerSpec("flatten"), LayerSpec("dense", {"units": 10}), LayerSpec("softmax")))
    net = Network(spec)
    net.set_param("1.dense.W", np.zeros((2 * L, 10), np.float32))
    b = np.zeros(10, np.float32)
    b[cls] = 5
    net.set_param("1.dense.b", b)
    return net


def test_constant_model_scores_chance(splits):
    _, test = splits
    rep = evaluate(_constant_net(), test)
    assert all(a == pytest.approx(0.1) for a in rep.per_snr_accuracy.values())
    assert rep.overall_accuracy == pytest.approx(0.1)


def test_report_order_invariant(splits):
    _, test = splits
    net = Network(models.build_resnet3(128), seed=4)
    pre = Preprocessor(PreprocessSpec(), 128)
    perm = np.random.default_rng(0).permutation(len(test))
    a = evaluate(net, test, pre)
    b = evaluate(net, test.subset(perm), pre)
    assert a.to_json(include_timing=False) == b.to_json(include_timing=False)


def test_untrained_near_chance(data):
    assert len(data) >= 2000
    net = Network(models.build_resnet3(128), seed=9)
    rep = evaluate(net, data, Preprocessor(PreprocessSpec(), 128))
    assert 0.06 <= rep.overall_accuracy <= 0.14


def test_confusion_rows_match_counts(splits):
    _, test = splits
    rep = evaluate(Network(models.build_resnet3(128), seed=1), test, Preprocessor(PreprocessSpec(), 128))
    for s, m in rep.confusion.items():
        cells = Counter(test.mods[test.snrs == s].tolist())
        assert m.sum(axis=1).tolist() == [cells[c] for c in range(10)]
        assert m.sum() == rep.per_snr_count[s]
    assert rep.confusion_pooled.sum() == len(test)


def test_evaluate_artifact_mismatch(splits):
    train, test = splits
    pre = fit_preprocessor(PreprocessSpec.parse("uniform:4"), train.frames)
    with pytest.raises(PreprocessError, match="expects"):
        evaluate(Network(models.build_resnet3(16)), test, pre)


def test_report_json_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    snrs = np.repeat(SNR_GRID, 30)
    rep = report_from_predictions(rng.integers(0, 10, snrs.size), rng.integers(0, 10, snrs.size), snrs,
                                  [1.5, 1.25], "abc")
    write_report(rep, tmp_path / "r.json")
    back = read_report(tmp_path / "r.json")
    assert back.to_json() == rep.to_json()
    d = json.loads((tmp_path / "r.json").read_text())
    assert list(d)[:3] == ["schema_version", "config_digest", "labels"]
    assert "epoch_times" not in rep.to_dict(include_timing=False)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "snr_db,accuracy" and len(lines) == 21
    with pytest.raises(ReportError):
        EvalReport.from_dict({**d, "schema_version": 2})
    with pytest.raises(ReportError):
        read_report(tmp_path / "missing.json")


def test_report_write_is_atomic(tmp_path, monkeypatch):
    rep = report_from_predictions([0, 1], [0, 0], [0, 0])
    path = tmp_path / "r.json"
    write_report(rep, path)
    before = path.read_bytes()
    monkeypatch.setattr(D.os, "replace", lambda *a: (_ for _ in ()).throw(OSError("no space")))
    with pytest.raises(OSError):
        write_report(report_from_predictions([0, 1], [1, 1], [0, 0]), path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["r.json"]


# ------------------------------------------------------------------ sweeps


def test_reduction_sweep_table(splits):
    train, test = splits
    cfg = _fast_cfg(preprocess="none", train={"epochs": 1, "batch_size": 256})
    sweep = sweep_reduction(cfg, ("uniform",), (1, 2, 4), train, test)
    assert sweep.baseline.method == "none"
    assert [(c.method, c.factor) for c in sweep.cells] == [("uniform", 2), ("uniform", 4)]
    assert set(sweep.timing_ratios()) == {("uniform", 2), ("uniform", 4)}
    assert sweep.to_csv().splitlines()[0] == "method,factor,overall_accuracy,epoch_time,time_ratio"
    assert len(sweep.table()) == 3


def test_snr_sweep_curves(splits):
    train, test = splits
    cfg = _fast_cfg(train={"epochs": 1, "batch_size": 64})
    sweep = sweep_snr_selection(cfg, ["single:18", "pair:18,0"], train, test)
    assert list(sweep.reports) == ["single:18", "pair:18,0"]
    assert all(len(c) == 20 for c in sweep.curves().values())
    assert len(sweep.to_csv().splitlines()) == 1 + 40


def test_epoch_time_median():
    assert epoch_time([10.0, 1.0, 1.2, 1.1]) == pytest.approx(1.15)
    assert np.isnan(epoch_time([]))


# ------------------------------------------------------------------ runtime


def test_thread_count(monkeypatch):
    monkeypatch.delenv(runtime.THREADS_ENV, raising=False)
    assert runtime.thread_count(replay=True) == 1
    assert runtime.thread_count(replay=False) is None
    monkeypatch.setenv(runtime.THREADS_ENV, "3")
    assert runtime.thread_count(replay=False) == 3
    assert runtime.thread_count(replay=True) == 1
    monkeypatch.setenv(runtime.THREADS_ENV, "zero")
    with pytest.raises(ValueError):
        runtime.thread_count(replay=False)
    with runtime.compute_threads(replay=True) as n:
        assert n == 1


# ------------------------------------------------------------------ CLI


def test_cli_generate_deterministic(tmp_path):
    for name in ("a.bin", "b.bin"):
        assert cli.main(["generate", "--examples", "200", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_cli_missing_snr_names_policy(tmp_path, capsys, splits):
    train, _ = splits
    D.save(train.subset(np.flatnonzero(train.snrs != 10)), tmp_path / "tr.bin")
    D.save(splits[1], tmp_path / "te.bin")
    code = cli.main(["train", "--arch", "resnet3", "--snr", "single:10", "--data", str(tmp_path / "tr.bin"),
                     "--test-data", str(tmp_path / "te.bin"), "--checkpoint", str(tmp_path / "m.ckpt")])
    assert code == 2
    assert "single:10" in capsys.readouterr().err
    assert not (tmp_path / "m.ckpt").exists()


def test_cli_report_csv_rows(tmp_path):
    snrs = np.repeat(SNR_GRID, 10)
    write_report(report_from_predictions(snrs % 10, np.zeros_like(snrs), snrs), tmp_path / "run.json")
    assert cli.main(["report", "--in", str(tmp_path / "run.json"), "--csv", str(tmp_path / "curve.csv")]) == 0
    rows = (tmp_path / "curve.csv").read_text().splitlines()
    assert rows[0] == "snr_db,accuracy" and len(rows) - 1 == 20


def test_cli_pipeline_end_to_end(tmp_path):
    d = tmp_path
    assert cli.main(["generate", "--examples", "400", "--seed", "3", "--out", str(d / "all.bin")]) == 0
    assert cli.main(["split", "--in", str(d / "all.bin"), "--train-out", str(d / "tr.bin"),
                     "--test-out", str(d / "te.bin")]) == 0
    assert cli.main(["preprocess", "--data", str(d / "tr.bin"), "--method", "pca:8", "--out", str(d / "pca.bin")]) == 0
    assert cli.main(["train", "--arch", "resnet3", "--preprocess", "uniform:8", "--data", str(d / "tr.bin"),
                     "--test-data", str(d / "te.bin"), "--epochs", "1", "--batch-size", "64", "--quiet",
                     "--checkpoint", str(d / "m.ckpt")]) == 0
    assert (d / "m.ckpt.timing.json").exists()
    assert cli.main(["eval", "--checkpoint", str(d / "m.ckpt"), "--report", str(d / "r.json"),
                     "--csv", str(d / "r.csv")]) == 0
    rep = read_report(d / "r.json")
    assert sum(rep.per_snr_count.values()) == 200
    assert len(rep.epoch_times) == 1


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--report", str(tmp_path / "r.json")]) == 2
    assert cli.main(["train", "--arch", "resnet3", "--preprocess", "uniform:3", "--data", "x"]) == 2
    assert cli.main(["report", "--in", str(tmp_path / "missing.json")]) == 2
    err = capsys.readouterr().err
    assert err.count("error:") == 3
    assert not (tmp_path / "r.json").exists()
