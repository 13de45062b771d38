import json
from dataclasses import replace

import numpy as np
import pytest

import numprog.training as training
from numprog.data import SynthConfig, bind_record, generate_synthetic
from numprog.encoder import build_vocab
from numprog.ir import default_constants, default_registry
from numprog.training import (
    ChecksumError,
    CheckpointError,
    TrainConfig,
    VersionError,
    build_model,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    schedule_lr,
    train,
)

REG = default_registry()
CONS = default_constants()


def synth_examples(n, seed=0, steps=((1, 1.0), (2, 1.0)), operators=("add", "subtract")):
    cfg = SynthConfig(n_examples=n, seed=seed, steps=steps, operators=operators, max_distractors=1)
    return [bind_record(r, REG, CONS) for r in generate_synthetic(cfg)]


SMALL = TrainConfig(
    epochs=2,
    batch_size=4,
    lr=1e-3,
    hidden=16,
    gru_layers=1,
    dropout=0.1,
    max_vocab=200,
    seed=0,
)


# --------------------------------------------------------------------------
# schedule and wiring


def test_lr_schedule_halves():
    assert schedule_lr(1e-3, 0, 10) == 1e-3
    assert schedule_lr(1e-3, 9, 10) == 1e-3
    assert schedule_lr(1e-3, 10, 10) == 5e-4
    assert schedule_lr(1e-3, 25, 10) == 2.5e-4


def test_build_model_param_count_independent_of_memory_register():
    vocab = build_vocab([["count", "the", "coins"]])
    a = build_model(vocab, TrainConfig(hidden=16, gru_layers=1, memory_register=True))
    b = build_model(vocab, TrainConfig(hidden=16, gru_layers=1, memory_register=False))
    assert a.param_count() == b.param_count()


def test_evaluate_rejects_empty_set():
    vocab = build_vocab([["count"]])
    model = build_model(vocab, SMALL)
    with pytest.raises(ValueError):
        evaluate(model, [])


# --------------------------------------------------------------------------
# determinism


def test_training_is_deterministic():
    data = synth_examples(10)
    a = train(data, data[:4], SMALL, quiet=True)
    b = train(data, data[:4], SMALL, quiet=True)
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k].data, b.model.params[k].data)
    strip = lambda h: [{k: v for k, v in e.items() if k != "seconds"} for e in h]
    assert strip(a.history) == strip(b.history)


def test_training_seed_changes_outcome():
    data = synth_examples(10)
    a = train(data, data[:4], SMALL, quiet=True)
    b = train(data, data[:4], replace(SMALL, seed=1), quiet=True)
    assert any(
        not np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params
    )


def test_training_aborts_on_non_finite_loss(monkeypatch):
    data = synth_examples(6)

    def poisoned(vocab, config, registry=None, constants=None):
        model = build_model(vocab, config, registry, constants)
        model.params["dec.att.W1"].data[0, 0] = np.nan
        return model

    monkeypatch.setattr(training, "build_model", poisoned)
    with pytest.raises(RuntimeError, match="non-finite loss"):
        train(data, [], SMALL, quiet=True)


def test_training_rejects_empty_train_set():
    with pytest.raises(ValueError):
        train([], [], SMALL, quiet=True)


# --------------------------------------------------------------------------
# artifacts and model selection


def test_train_writes_log_and_checkpoint(tmp_path):
    data = synth_examples(8)
    result = train(data, data[:4], SMALL, out_dir=str(tmp_path), quiet=True)
    assert result.checkpoint_dir == str(tmp_path / "checkpoint")
    entries = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in entries] == [0, 1]
    assert all("dev_prog_acc" in e for e in entries)
    restored = load_checkpoint(result.checkpoint_dir)
    for k in result.model.params:
        np.testing.assert_array_equal(restored.params[k].data, result.model.params[k].data)


def test_best_epoch_weights_are_restored():
    data = synth_examples(10)
    result = train(data, data[:5], SMALL, quiet=True)
    report, _ = evaluate(result.model, data[:5])
    assert report.overall.rates()["prog_acc"] == result.best_dev["prog_acc"]
    assert result.best_epoch in {e["epoch"] for e in result.history}


# --------------------------------------------------------------------------
# checkpoints


def fresh_model(seed=0):
    data = synth_examples(6, seed=seed)
    vocab = build_vocab((ex.tokenization.tokens for ex in data))
    return build_model(vocab, SMALL), data


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model, data = fresh_model()
    path = str(tmp_path / "ck")
    save_checkpoint(path, model)
    restored = load_checkpoint(path)
    assert sorted(restored.params) == sorted(model.params)
    for k in model.params:
        np.testing.assert_array_equal(restored.params[k].data, model.params[k].data)
    ex = data[0]
    a = model.teacher_forced_loss(ex.tokenization, ex.program)
    b = restored.teacher_forced_loss(ex.tokenization, ex.program)
    assert a[0].item() == b[0].item() and a[1].item() == b[1].item()
    assert model.decode(ex.tokenization)[0] == restored.decode(ex.tokenization)[0]


def test_checkpoint_preserves_config_registry_constants(tmp_path):
    model, _ = fresh_model()
    path = str(tmp_path / "ck")
    save_checkpoint(path, model)
    restored = load_checkpoint(path)
    assert restored.config == model.config
    assert restored.registry.names() == model.registry.names()
    assert restored.constants.values == model.constants.values
    assert restored.encoder.vocab.tokens == model.encoder.vocab.tokens


def test_checkpoint_detects_weight_corruption(tmp_path):
    model, _ = fresh_model()
    path = tmp_path / "ck"
    save_checkpoint(str(path), model)
    blob = bytearray((path / "weights.bin").read_bytes())
    blob[100] ^= 0xFF
    (path / "weights.bin").write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_checkpoint(str(path))


def test_checkpoint_detects_vocab_corruption(tmp_path):
    model, _ = fresh_model()
    path = tmp_path / "ck"
    save_checkpoint(str(path), model)
    (path / "vocab.txt").write_text((path / "vocab.txt").read_text() + "stray\n")
    with pytest.raises(ChecksumError):
        load_checkpoint(str(path))


def test_checkpoint_rejects_unknown_version(tmp_path):
    model, _ = fresh_model()
    path = tmp_path / "ck"
    save_checkpoint(str(path), model)
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["format_version"] = 99
    (path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(VersionError):
        load_checkpoint(str(path))


def test_checkpoint_missing_directory(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "nowhere"))


# --------------------------------------------------------------------------
# end to end on a tiny corpus


def test_overfit_tiny_corpus():
    data = synth_examples(8, seed=1)
    cfg = TrainConfig(
        epochs=90,
        batch_size=2,
        lr=3e-3,
        halve_every=1000,
        hidden=24,
        gru_layers=1,
        dropout=0.0,
        seed=0,
        early_stop_acc=1.0,
    )
    result = train(data, data, cfg, quiet=True)
    assert result.best_dev["prog_acc"] == 1.0
    report, predictions = evaluate(result.model, data)
    assert report.overall.rates()["prog_acc"] == 1.0
    assert len(predictions) == len(data)
