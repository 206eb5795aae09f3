import numpy as np
import pytest

from adan.model import ModelConfig, build_model
from adan.synthdata import SynthConfig, gen_synthetic
from adan.trainer import TrainConfig

TINY_SYNTH = dict(
    vocab_per_class=20, neutral_vocab=20, d=8,
    src_train=120, tgt_unlabeled=120, src_dev=60, tgt_dev=60,
)


def tiny_data(seed=0, **overrides):
    return gen_synthetic(SynthConfig(seed=seed, **{**TINY_SYNTH, **overrides}))


def tiny_model(mode="adan", seed=0, width=12, embed_dim=8, num_classes=3, **kw):
    cfg = ModelConfig(embed_dim, num_classes, hidden_width=width, mode=mode, **kw)
    return build_model(cfg, seed)


def tiny_train_config(mode="adan", **kw):
    base = dict(mode=mode, epochs=2, batch_size=16, lr_fp=1e-3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def data():
    return tiny_data()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def relu_margin(net, X, train=True):
    """(output, smallest |ReLU input|) of ``net`` on ``X``.

    Central differences are only an oracle where every ReLU input stays on one
    side of zero within the step size.
    """
    from adan.nn import ReLU

    margin = np.inf
    Y = X
    for _, layer in net:
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(Y).min()))
        Y, _ = layer.forward(Y, train=train)
    return Y, margin


def model_margin(model, labeled=None, src=None, tgt=None, features=None):
    """Smallest |ReLU input| over the forward passes a loss fragment performs."""
    margins = [np.inf]
    if labeled is not None:
        H, m = relu_margin(model.F, labeled)
        margins += [m, relu_margin(model.P, H)[1]]
    if src is not None:
        H, m = relu_margin(model.F, np.vstack([src, tgt]))
        margins += [m, relu_margin(model.Q, H)[1]]
    if features is not None:
        margins.append(relu_margin(model.Q, features)[1])
    return min(margins)
