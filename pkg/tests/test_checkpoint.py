import struct

import numpy as np
import pytest

from adan.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from adan.errors import CheckpointError
from adan.optim import AdamState, adam_step
from adan.trainer import evaluate, train

from conftest import tiny_data, tiny_model, tiny_train_config


@pytest.fixture(scope="module")
def trained():
    data = tiny_data()
    cfg = tiny_train_config()
    model, history = train(tiny_model(), data["src_train"], data["tgt_unlabeled"], data["tgt_dev"], cfg)
    return data, model, cfg, history


def test_roundtrip_is_byte_identical(tmp_path, trained):
    _, model, cfg, history = trained
    a = save_checkpoint(tmp_path / "a.ckpt", model, cfg, history).to_bytes()
    b = load_checkpoint(tmp_path / "a.ckpt").to_bytes()
    assert a == b == (tmp_path / "a.ckpt").read_bytes()


def test_loaded_model_reproduces_dev_accuracy(tmp_path, trained):
    data, model, cfg, history = trained
    save_checkpoint(tmp_path / "m.ckpt", model, cfg, history)
    ckpt = load_checkpoint(tmp_path / "m.ckpt")
    assert ckpt.dev_accuracy == history.best_accuracy
    assert ckpt.best_epoch == history.best_epoch
    assert ckpt.train_config == cfg
    assert ckpt.model_config == model.config
    assert evaluate(ckpt.to_model(), data["tgt_dev"]) == ckpt.dev_accuracy
    for k, v in model.state().items():
        np.testing.assert_array_equal(ckpt.state[k], v)


def test_layout_header(trained):
    _, model, cfg, history = trained
    blob = Checkpoint.from_model(model, cfg, history).to_bytes()
    assert blob[:8] == MAGIC and blob[8] == 1
    (n,) = struct.unpack("<I", blob[9:13])
    config = blob[13:13 + n].decode("utf-8").splitlines()
    assert config == sorted(config)
    assert "model.hidden_width=12" in config and "train.lam=0.1" in config
    (count,) = struct.unpack("<I", blob[13 + n:17 + n])
    assert count == len(model.state())
    # first record: name, rank, dims, then float64 values
    pos = 17 + n
    (ln,) = struct.unpack("<I", blob[pos:pos + 4])
    name = blob[pos + 4:pos + 4 + ln].decode()
    assert name == sorted(model.state())[0]
    rank = blob[pos + 4 + ln]
    dims = struct.unpack(f"<{rank}Q", blob[pos + 5 + ln:pos + 5 + ln + 8 * rank])
    assert dims == model.state()[name].shape


def test_optimizer_state_roundtrip():
    model = tiny_model()
    params = model.params(("q",))
    opt = AdamState(0.001)
    adam_step(params, {k: np.ones_like(v) for k, v in params.items()}, opt)
    ckpt = Checkpoint.from_model(model, optimizers={"q": opt})
    back = Checkpoint.from_bytes(ckpt.to_bytes())
    assert back.optimizers["q"].t == 1
    for k in opt.m:
        np.testing.assert_array_equal(back.optimizers["q"].m[k], opt.m[k])
        np.testing.assert_array_equal(back.optimizers["q"].v[k], opt.v[k])
    assert back.to_bytes() == ckpt.to_bytes()


def test_bad_magic():
    blob = bytearray(Checkpoint.from_model(tiny_model()).to_bytes())
    blob[0] ^= 0xFF
    with pytest.raises(CheckpointError, match="bad checkpoint magic"):
        Checkpoint.from_bytes(bytes(blob))


def test_truncated_and_trailing():
    blob = Checkpoint.from_model(tiny_model()).to_bytes()
    with pytest.raises(CheckpointError, match="truncated"):
        Checkpoint.from_bytes(blob[:-3])
    with pytest.raises(CheckpointError, match="trailing"):
        Checkpoint.from_bytes(blob + b"\0")


def test_bad_version():
    blob = bytearray(Checkpoint.from_model(tiny_model()).to_bytes())
    blob[8] = 9
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(bytes(blob))


def test_no_training_metadata():
    ckpt = Checkpoint.from_bytes(Checkpoint.from_model(tiny_model("dan")).to_bytes())
    assert ckpt.train_config is None and ckpt.best_epoch == -1
    assert np.isnan(ckpt.dev_accuracy)
