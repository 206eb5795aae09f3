"""
The Y-shaped network: a shared extractor F over averaged embeddings feeding a
softmax classifier P and a language critic Q.

Layout at the default width (900):

    F: d -> 900 -> 900 -> 900          dense + ReLU per layer, no batch-norm
    P: 900 -> 900 -> 900 -> C          dense + batch-norm + ReLU per hidden layer
    Q: 900 -> 900 -> 900 -> 1 (or 2)   same as P; width-2 head in ``grl`` mode

Dense layers that feed a batch-norm carry no bias: the batch-norm shift
subsumes it, and a bias there would have an identically zero gradient.

Parameter names are prefixed with their branch (``f.``, ``p.``, ``q.``). When
P or Q see two batches at once (source and target critic batches, or labeled
source plus labeled target) the rows are concatenated into one batch, so
their batch-norm statistics cover both.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, ContractError, EmptyCorpusError, ModeError, ShapeError
from .nn import (
    BatchNorm, Dense, GradReverse, ReLU, Sequential, add_grads, promote, scalar, softmax_xent,
)

MODES = ("adan", "grl", "dan", "logreg")
BRANCHES = ("f", "p", "q")


class JfTerms(NamedTuple):
    loss: float
    jp: float
    gap: float
    grads: dict
    d_input: np.ndarray
    d_critic_input: Optional[np.ndarray]


class GrlTerms(NamedTuple):
    jp: float
    language_loss: float
    grads: dict
    d_input: np.ndarray
    d_critic_input: Optional[np.ndarray]


@dataclass
class ModelConfig:
    embed_dim: int
    num_classes: int
    hidden_width: int = 900
    f_depth: int = 3
    p_depth: int = 2
    q_depth: int = 2
    mode: str = "adan"
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "logreg":
            self.f_depth = self.p_depth = self.q_depth = 0
        if self.embed_dim < 1 or self.num_classes < 2:
            raise ConfigError(
                f"need embed_dim >= 1 and num_classes >= 2, got {self.embed_dim}, {self.num_classes}"
            )
        if self.mode != "logreg":
            if self.hidden_width < 1:
                raise ConfigError(f"hidden_width must be positive, got {self.hidden_width}")
            depths = {"f_depth": self.f_depth, "p_depth": self.p_depth}
            if self.has_critic:
                depths["q_depth"] = self.q_depth
            for key, value in depths.items():
                if value < 1:
                    raise ConfigError(f"{key} must be at least 1, got {value}")

    @property
    def has_critic(self):
        return self.mode in ("adan", "grl")

    @property
    def feature_dim(self):
        return self.embed_dim if self.f_depth == 0 else self.hidden_width


def _extractor(cfg, rng):
    layers = []
    width = cfg.embed_dim
    for i in range(cfg.f_depth):
        layers.append((f"dense{i}", Dense(width, cfg.hidden_width, rng)))
        layers.append((f"relu{i}", ReLU()))
        width = cfg.hidden_width
    return Sequential(layers)


def _head(cfg, depth, out_dim, rng):
    layers = []
    width = cfg.feature_dim
    for i in range(depth):
        layers.append((f"dense{i}", Dense(width, cfg.hidden_width, rng, bias=False)))
        layers.append((f"bn{i}", BatchNorm(cfg.hidden_width, cfg.bn_momentum, cfg.bn_epsilon)))
        layers.append((f"relu{i}", ReLU()))
        width = cfg.hidden_width
    layers.append(("out", Dense(width, out_dim, rng)))
    return Sequential(layers)


def _prefixed(prefix, mapping):
    return {f"{prefix}.{k}": v for k, v in mapping.items()}


class AdanModel:
    def __init__(self, config, F, P, Q=None):
        self.config = config
        self.F = F
        self.P = P
        self.Q = Q

    # parameter registry -------------------------------------------------

    def params(self, branches=BRANCHES):
        out = {}
        for b in branches:
            net = getattr(self, b.upper())
            if net is not None:
                out.update(_prefixed(b, net.params()))
        return out

    def buffers(self):
        out = {}
        for b in BRANCHES:
            net = getattr(self, b.upper())
            if net is not None:
                out.update(_prefixed(b, net.buffers()))
        return out

    def state(self):
        """Every parameter and running statistic, keyed by qualified name."""
        out = self.params()
        out.update(self.buffers())
        return out

    def load_state(self, state):
        own = self.state()
        if set(own) != set(state):
            raise ShapeError(
                f"state keys differ: missing={sorted(set(own) - set(state))} "
                f"unexpected={sorted(set(state) - set(own))}"
            )
        for name, arr in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != arr.shape:
                raise ShapeError(f"{name}: stored shape {value.shape}, model shape {arr.shape}")
            arr[...] = value

    def astype(self, dtype):
        """Convert all parameters and buffers to ``dtype``; used for extended-precision checks."""
        for b in BRANCHES:
            net = getattr(self, b.upper())
            if net is not None:
                net.astype(dtype)
        return self

    def copy_state(self):
        return {k: v.copy() for k, v in self.state().items()}

    def batchnorm_count(self, branch):
        net = getattr(self, branch.upper())
        if net is None:
            return 0
        return sum(isinstance(layer, BatchNorm) for _, layer in net)

    # forward pieces ------------------------------------------------------

    def _check_input(self, X):
        X = promote(X)
        if X.ndim != 2 or X.shape[1] != self.config.embed_dim:
            raise ShapeError(
                f"input has shape {X.shape}, model expects (B, {self.config.embed_dim})"
            )
        return X

    def feature_extract(self, X):
        H, _ = self.F.forward(self._check_input(X))
        return H

    def classify(self, H, train=False, update_stats=False):
        logits, _ = self.P.forward(H, train=train, update_stats=update_stats)
        return logits

    def classifier_hidden(self, H):
        """Activations of P's last hidden layer (infer mode)."""
        if self.config.p_depth == 0:
            raise ConfigError("classifier has no hidden layer in logreg mode")
        out, _ = self.P.forward(H, stop=len(self.P) - 1)
        return out

    def predict(self, X):
        return np.argmax(self.classify(self.feature_extract(X)), axis=1)

    def _require_critic(self):
        if self.Q is None:
            raise ModeError(f"{self.config.mode} model has no language critic")

    def critic_scores(self, H, train=False, update_stats=False):
        self._require_critic()
        if self.config.mode != "adan":
            raise ModeError("scalar critic scores exist only in adan mode")
        scores, _ = self.Q.forward(H, train=train, update_stats=update_stats)
        return scores[:, 0]

    def critic_gap(self, src_H, tgt_H, train=False):
        """mean Q(src) - mean Q(tgt); both batches go through Q together."""
        if len(src_H) == 0 or len(tgt_H) == 0:
            raise EmptyCorpusError("critic gap needs nonempty source and target batches")
        scores = self.critic_scores(np.concatenate([src_H, tgt_H]), train=train)
        n = len(src_H)
        return scalar(scores[:n].mean() - scores[n:].mean())

    # losses ---------------------------------------------------------------

    def _gap_backward(self, src_H, tgt_H, train=True, update_stats=False):
        """Gap value, θ_q grads of the gap, and d(gap)/dH for both batches."""
        if len(src_H) == 0 or len(tgt_H) == 0:
            raise EmptyCorpusError("critic gap needs nonempty source and target batches")
        ns, nt = len(src_H), len(tgt_H)
        scores, caches = self.Q.forward(
            np.concatenate([src_H, tgt_H]), train=train, update_stats=update_stats
        )
        gap = scalar(scores[:ns, 0].mean() - scores[ns:, 0].mean())
        d_scores = np.empty_like(scores)
        d_scores[:ns] = 1.0 / ns
        d_scores[ns:] = -1.0 / nt
        dH, q_grads = self.Q.backward(d_scores, caches)
        return gap, _prefixed("q", q_grads), dH

    def critic_loss(self, src_X, tgt_X, update_stats=False):
        """Critic objective as a loss: -(mean Q(F(src)) - mean Q(F(tgt))), grads for θ_q."""
        self._require_critic()
        H = self.feature_extract(np.concatenate([self._check_input(src_X), self._check_input(tgt_X)]))
        ns = len(src_X)
        gap, q_grads, _ = self._gap_backward(H[:ns], H[ns:], update_stats=update_stats)
        return -gap, {k: -g for k, g in q_grads.items()}

    def loss_jp(self, X, labels, update_stats=False, input_grad=False):
        """Cross-entropy of P(F(X)); grads for θ_f and θ_p."""
        if labels is None or any(label is None for label in labels):
            raise ContractError("loss_jp needs a fully labeled batch")
        H, f_caches = self.F.forward(self._check_input(X))
        logits, p_caches = self.P.forward(H, train=True, update_stats=update_stats)
        loss, d_logits = softmax_xent(logits, labels)
        dH, p_grads = self.P.backward(d_logits, p_caches)
        dX, f_grads = self.F.backward(dH, f_caches)
        grads = _prefixed("f", f_grads)
        grads.update(_prefixed("p", p_grads))
        if input_grad:
            return loss, grads, dX
        return loss, grads

    def jf_terms(self, lam, src_X, tgt_X, X, labels, update_stats=False):
        """J_p + lam * critic gap, with grads for θ_f and θ_p only.

        The gap term reaches θ_f through Q (train-mode batch statistics, no
        running-stat update); θ_q gets nothing. At ``lam == 0`` the gap is not
        evaluated and the grads are exactly those of ``loss_jp``.
        """
        if lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {lam}")
        self._require_critic()
        jp, grads, dX = self.loss_jp(X, labels, update_stats=update_stats, input_grad=True)
        if lam == 0:
            return JfTerms(jp, jp, float("nan"), grads, dX, None)
        XS = np.concatenate([self._check_input(src_X), self._check_input(tgt_X)])
        H, f_caches = self.F.forward(XS)
        ns = len(src_X)
        gap, _, dH = self._gap_backward(H[:ns], H[ns:], train=True, update_stats=False)
        dXS, f_grads = self.F.backward(lam * dH, f_caches)
        add_grads(grads, _prefixed("f", f_grads))
        return JfTerms(jp + lam * gap, jp, gap, grads, dX, dXS)

    def loss_jf_adversarial(self, lam, src_X, tgt_X, X, labels, update_stats=False):
        terms = self.jf_terms(lam, src_X, tgt_X, X, labels, update_stats=update_stats)
        return terms.loss, terms.grads

    def loss_language_xent(self, src_H, tgt_H, update_stats=False):
        """Source-vs-target cross-entropy of the grl-mode critic.

        Returns (loss, θ_q grads, dH) where dH is the gradient w.r.t. the
        concatenated ``[src_H; tgt_H]`` features, before any reversal.
        """
        self._require_critic()
        if self.config.mode != "grl":
            raise ModeError("language cross-entropy needs a grl-mode model")
        if len(src_H) == 0 or len(tgt_H) == 0:
            raise EmptyCorpusError("language loss needs nonempty source and target batches")
        H = np.concatenate([src_H, tgt_H])
        labels = np.concatenate([np.zeros(len(src_H), np.int64), np.ones(len(tgt_H), np.int64)])
        logits, caches = self.Q.forward(H, train=True, update_stats=update_stats)
        loss, d_logits = softmax_xent(logits, labels)
        dH, q_grads = self.Q.backward(d_logits, caches)
        return loss, _prefixed("q", q_grads), dH

    def grl_terms(self, lam, src_X, tgt_X, X, labels, update_stats=False):
        """J_p plus the language loss seen by F through a gradient reversal of ``lam``.

        Grads cover θ_f, θ_p and θ_q. With ``lam == 0`` nothing from Q reaches F.
        """
        jp, grads, dX = self.loss_jp(X, labels, update_stats=update_stats, input_grad=True)
        XS = np.concatenate([self._check_input(src_X), self._check_input(tgt_X)])
        H, f_caches = self.F.forward(XS)
        ns = len(src_X)
        grl = GradReverse(lam)
        Hq, grl_cache = grl.forward(H)
        lang, q_grads, dHq = self.loss_language_xent(Hq[:ns], Hq[ns:], update_stats=update_stats)
        grads.update(q_grads)
        dXS = None
        if lam != 0:
            dH, _ = grl.backward(dHq, grl_cache)
            dXS, f_grads = self.F.backward(dH, f_caches)
            add_grads(grads, _prefixed("f", f_grads))
        return GrlTerms(jp, lang, grads, dX, dXS)


def grl_transform(X, lam):
    """Gradient reversal as a pair (output, backward function)."""
    layer = GradReverse(lam)
    Y, cache = layer.forward(promote(X))
    return Y, lambda dY: layer.backward(promote(dY), cache)[0]


def build_model(config, seed=0):
    """Glorot-initialized model. F, P and Q draw from independent child seeds,
    so F and P start identical across modes for the same seed."""
    f_seq, p_seq, q_seq = np.random.SeedSequence(seed).spawn(3)
    F = _extractor(config, np.random.default_rng(f_seq))
    P = _head(config, config.p_depth, config.num_classes, np.random.default_rng(p_seq))
    Q = None
    if config.has_critic:
        out = 1 if config.mode == "adan" else 2
        Q = _head(config, config.q_depth, out, np.random.default_rng(q_seq))
    return AdanModel(config, F, P, Q)
