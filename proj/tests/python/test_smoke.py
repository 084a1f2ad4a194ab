"""End-to-end smoke tests for the python bindings."""

import math

import pytest

import tidsit

TINY = {
    "pad_len": "16",
    "hidden": "8",
    "encoder_heads": "2",
    "ffn_dim": "16",
    "history_window": "4",
    "dropout": "0",
    "epochs": "2",
    "batch_size": "8",
    "val_fraction": "0.25",
    "seed": "9",
}


def test_compute_soh():
    assert tidsit.compute_soh(2.0, 2.0) == 1.0
    assert tidsit.compute_soh(1.4, 2.0) == pytest.approx(0.7)
    with pytest.raises(tidsit.DataError):
        tidsit.compute_soh(1.0, 0.0)


def test_metrics():
    assert tidsit.rmse([0.0, 0.0], [0.3, 0.4]) == pytest.approx(
        math.sqrt(0.125)
    )
    assert tidsit.rmse_percent([0.808], [0.8]) == pytest.approx(1.0)
    with pytest.raises(tidsit.NumericError):
        tidsit.rmse([], [])


def test_synth_is_deterministic(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    tidsit.synth(str(a), n=16, seed=5, t_min=4, t_max=12)
    tidsit.synth(str(b), n=16, seed=5, t_min=4, t_max=12)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.meta").exists()


def test_train_evaluate_predict(tmp_path):
    data = tmp_path / "data.csv"
    ckpt = tmp_path / "model.ckpt"
    tidsit.synth(str(data), n=24, seed=3, t_min=4, t_max=14)

    info = tidsit.train(str(data), str(ckpt), TINY)
    assert ckpt.exists()
    assert info["epochs"] == 2
    assert math.isfinite(info["best_val_rmse"])

    report = tidsit.evaluate(str(ckpt), str(data))
    assert report["history_mode"] == "ground_truth"
    assert len(report["rows"]) == 24
    assert math.isfinite(report["rmse"])
    rows = report["rows"]
    manual = math.sqrt(
        sum((p - t) ** 2 for (_, _, t, p) in rows) / len(rows)
    )
    assert report["rmse"] == pytest.approx(manual, abs=1e-12)

    auto = tidsit.evaluate(str(ckpt), str(data), history_mode="autoregressive")
    assert auto["history_mode"] == "autoregressive"

    pred = tidsit.predict(str(ckpt), str(data))
    assert math.isfinite(pred)
    assert pred == tidsit.predict(str(ckpt), str(data))


def test_gradcheck_toy():
    assert tidsit.gradcheck(seed=1) < 1e-4


def test_default_config_is_the_reference_setup():
    cfg = tidsit.default_config()
    assert cfg["pad_len"] == "371"
    assert cfg["hidden"] == "42"
    assert cfg["encoder_heads"] == "8"
    assert cfg["ffn_dim"] == "168"
    assert cfg["history_window"] == "10"


def test_error_mapping(tmp_path):
    with pytest.raises(tidsit.IoError):
        tidsit.evaluate(str(tmp_path / "missing.ckpt"), "nope.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("battery_id,nope\n")
    with pytest.raises(tidsit.DataError):
        tidsit.train(str(bad), str(tmp_path / "x.ckpt"), TINY)
