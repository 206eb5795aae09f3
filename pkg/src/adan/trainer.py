"""
Training loops for the adversarial (Wasserstein critic) and gradient-reversal
variants, plus evaluation and the k x lambda grid search.

Stream layout for one run, all seeded from ``TrainConfig.seed``:

* labeled source: one reshuffled pass per epoch (defines the epoch);
* critic source / critic target: endless cycling streams; the critic source
  stream runs over the labeled source corpus with labels ignored;
* labeled target (semi-supervised only): cycling, one batch per iteration.

The critic and F-step batches are drawn from the same cycling streams, so the
F-step always sees fresh source/target batches.
"""

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, DivergedError, EmptyCorpusError, ModeError, NumericError
from .model import build_model, _head
from .optim import AdamState, adam_step, clip_params
from .text_data import make_stream

NORM_PARAMS = (".gamma", ".beta")
_EVAL_CHUNK = 4096


@dataclass
class TrainConfig:
    lam: float = 0.1
    k: int = 5
    lr_fp: float = 0.05
    lr_q: float = 0.00005
    clip_bound: float = 0.01
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    mode: str = "adan"
    trainable_embeddings: bool = False
    # leave Q's batch-norm gamma/beta unclipped
    clip_exempt_norm: bool = False
    semi_supervised_target: Optional[object] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def header_items(self):
        """Serializable knobs in a fixed order (the semi-supervised corpus is omitted)."""
        return [
            ("mode", self.mode),
            ("lambda", self.lam),
            ("k", self.k),
            ("lr_fp", self.lr_fp),
            ("lr_q", self.lr_q),
            ("clip_bound", self.clip_bound),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("seed", self.seed),
            ("trainable_embeddings", int(self.trainable_embeddings)),
            ("clip_exempt_norm", int(self.clip_exempt_norm)),
        ]


@dataclass
class EpochRecord:
    epoch: int
    jp_mean: float
    gap_mean: float
    dev_accuracy: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    critic_updates: int = 0
    iterations: int = 0
    header: list = field(default_factory=list)

    @property
    def best_accuracy(self):
        if self.best_epoch < 0:
            return float("nan")
        return self.records[self.best_epoch].dev_accuracy

    def to_tsv(self):
        lines = [f"# {key}={_fmt(value)}" for key, value in self.header]
        lines.append(f"# best_epoch={self.best_epoch}")
        lines.append("epoch\tjp_mean\tgap_mean\tdev_accuracy")
        for r in self.records:
            lines.append(f"{r.epoch}\t{_fmt(r.jp_mean)}\t{_fmt(r.gap_mean)}\t{_fmt(r.dev_accuracy)}")
        return "\n".join(lines) + "\n"

    def write_tsv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_tsv())


def _fmt(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _child_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


class _Inputs:
    """Row access to a corpus' averaged embeddings, frozen or trainable."""

    def __init__(self, corpus, trainable):
        self.corpus = corpus
        self.trainable = trainable
        self.key = f"emb.{corpus.table.language}"
        self.A = corpus.operator()
        self.X = None if trainable else corpus.inputs()

    def rows(self, idx):
        if self.trainable:
            return np.asarray(self.A[idx] @ self.corpus.table.vectors)
        return self.X[idx]

    def backprop(self, idx, dX, grads):
        g = np.asarray(self.A[idx].T @ dX)
        grads[self.key] = grads[self.key] + g if self.key in grads else g


def accuracy_from_logits(logits, labels):
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def predict_logits(model, corpus):
    X = corpus.inputs()
    out = []
    for start in range(0, len(X), _EVAL_CHUNK):
        out.append(model.classify(model.feature_extract(X[start : start + _EVAL_CHUNK])))
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def evaluate(model, corpus):
    if not corpus.labeled:
        raise ContractError("evaluation needs a fully labeled corpus")
    return accuracy_from_logits(predict_logits(model, corpus), corpus.labels())


def _validate(model, src_labeled, tgt_unlabeled, dev, cfg):
    if cfg.mode != model.config.mode:
        raise ModeError(f"train config mode {cfg.mode!r} but model mode {model.config.mode!r}")
    if src_labeled is None or len(src_labeled) == 0:
        raise EmptyCorpusError("labeled source corpus is empty")
    if not src_labeled.labeled:
        raise ContractError("source training corpus must be fully labeled")
    if dev is None or not dev.labeled:
        raise ContractError("dev corpus must be nonempty and fully labeled")
    if model.config.has_critic and (tgt_unlabeled is None or len(tgt_unlabeled) == 0):
        raise EmptyCorpusError("unlabeled target corpus is empty")


class _Run:
    """State shared by both loops: streams, inputs, optimizers, early stopping."""

    def __init__(self, model, src_labeled, tgt_unlabeled, dev, cfg):
        _validate(model, src_labeled, tgt_unlabeled, dev, cfg)
        self.model = model
        self.cfg = cfg
        self.dev = dev
        trainable = cfg.trainable_embeddings
        self.src = _Inputs(src_labeled, trainable)
        self.y_src = src_labeled.labels()
        lab_seed, csrc_seed, ctgt_seed, semi_seed = _child_seeds(cfg.seed, 4)
        self.lab_seed = lab_seed
        bs = cfg.batch_size

        self.tgt = None
        if model.config.has_critic:
            self.tgt = _Inputs(tgt_unlabeled, trainable)
            self.csrc = make_stream(src_labeled, bs, csrc_seed, cycling=True)
            self.ctgt = make_stream(tgt_unlabeled, bs, ctgt_seed, cycling=True)

        semi = cfg.semi_supervised_target
        self.semi = None
        if semi is not None and len(semi) > 0:
            if not semi.labeled:
                raise ContractError("semi-supervised target corpus must be fully labeled")
            self.semi = _Inputs(semi, trainable)
            self.y_semi = semi.labels()
            self.semi_stream = make_stream(semi, bs, semi_seed, cycling=True)

        self.fp_params = model.params(("f", "p"))
        self.emb_inputs = {}
        if trainable:
            for inp in (self.src, self.tgt, self.semi):
                if inp is not None:
                    self.emb_inputs.setdefault(inp.key, inp.corpus.table.vectors)
            self.fp_params.update(self.emb_inputs)
        self.fp_state = AdamState(cfg.lr_fp)
        self.q_params = model.params(("q",)) if model.Q is not None else {}
        self.q_state = AdamState(cfg.lr_q)

        self.history = TrainHistory(header=cfg.header_items())
        self.best_state = None
        self.best_acc = -math.inf

    def labeled_batch(self, idx):
        X = self.src.rows(idx)
        y = self.y_src[idx]
        semi_idx = None
        if self.semi is not None:
            semi_idx = next(self.semi_stream)
            X = np.concatenate([X, self.semi.rows(semi_idx)])
            y = np.concatenate([y, self.y_semi[semi_idx]])
        return X, y, semi_idx

    def input_grads(self, grads, idx, semi_idx, d_lab, s_idx=None, t_idx=None, d_adv=None):
        """Route input gradients into embedding grads (trainable mode only)."""
        if not self.emb_inputs:
            return grads
        n = len(idx)
        self.src.backprop(idx, d_lab[:n], grads)
        if semi_idx is not None:
            self.semi.backprop(semi_idx, d_lab[n:], grads)
        if d_adv is not None:
            ns = len(s_idx)
            self.src.backprop(s_idx, d_adv[:ns], grads)
            self.tgt.backprop(t_idx, d_adv[ns:], grads)
        for key, table in self.emb_inputs.items():
            if key not in grads:
                grads[key] = np.zeros_like(table)
        return grads

    def step_fp(self, grads, where):
        try:
            adam_step(self.fp_params, {k: grads[k] for k in self.fp_params}, self.fp_state)
        except NumericError as exc:
            raise DivergedError(f"{exc} at {where}") from None

    def epoch_batches(self, epoch):
        stream = make_stream(self.src.corpus, self.cfg.batch_size, self.lab_seed, epoch=epoch)
        for idx in stream:
            # train-mode batch norm needs two rows; a trailing singleton is skipped
            if len(idx) + (self.cfg.batch_size if self.semi is not None else 0) < 2:
                continue
            yield idx

    def snapshot(self):
        state = self.model.copy_state()
        for key, table in self.emb_inputs.items():
            state[key] = table.copy()
        return state

    def end_epoch(self, epoch, jps, gaps, started):
        acc = evaluate(self.model, self.dev)
        self.history.records.append(
            EpochRecord(
                epoch,
                float(np.mean(jps)) if jps else float("nan"),
                float(np.mean(gaps)) if gaps else float("nan"),
                acc,
                time.perf_counter() - started,
            )
        )
        if acc > self.best_acc:
            self.best_acc = acc
            self.best_state = self.snapshot()
            self.history.best_epoch = epoch

    def finish(self):
        if self.best_state is not None:
            emb = {k: self.best_state.pop(k) for k in list(self.emb_inputs)}
            self.model.load_state(self.best_state)
            for key, values in emb.items():
                self.emb_inputs[key][...] = values
        return self.model, self.history


def train_adan(model, src_labeled, tgt_unlabeled, dev, cfg, on_critic_update=None):
    """Wasserstein-critic training; ``dan`` and ``logreg`` models skip the critic.

    Each main iteration runs ``cfg.k`` critic steps (one Adam step on θ_q
    ascending the source-minus-target score gap, then clipping θ_q) followed by
    one Adam step on θ_f and θ_p for J_p + lam * gap. ``on_critic_update`` is
    called as ``fn(model, update_count)`` right after every clip.
    Returns the model restored to its best dev epoch, and the history.
    """
    run = _Run(model, src_labeled, tgt_unlabeled, dev, cfg)
    adversarial = model.config.mode == "adan"
    if model.config.mode == "grl":
        raise ModeError("grl models are trained with train_grl")
    exempt = NORM_PARAMS if cfg.clip_exempt_norm else ()

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        jps, gaps = [], []
        for it, idx in enumerate(run.epoch_batches(epoch)):
            where = f"epoch {epoch} iteration {it}"
            if adversarial:
                for _ in range(cfg.k):
                    s_idx, t_idx = next(run.csrc), next(run.ctgt)
                    loss, q_grads = model.critic_loss(run.src.rows(s_idx), run.tgt.rows(t_idx),
                                                      update_stats=True)
                    if not math.isfinite(loss):
                        raise DivergedError(f"non-finite critic loss at {where}")
                    try:
                        adam_step(run.q_params, q_grads, run.q_state)
                    except NumericError as exc:
                        raise DivergedError(f"{exc} at {where}") from None
                    clip_params(run.q_params, cfg.clip_bound, exempt)
                    gaps.append(-loss)
                    run.history.critic_updates += 1
                    if on_critic_update is not None:
                        on_critic_update(model, run.history.critic_updates)

            X, y, semi_idx = run.labeled_batch(idx)
            if adversarial:
                s_idx, t_idx = next(run.csrc), next(run.ctgt)
                terms = model.jf_terms(cfg.lam, run.src.rows(s_idx), run.tgt.rows(t_idx), X, y,
                                       update_stats=True)
                loss, jp, grads = terms.loss, terms.jp, terms.grads
                run.input_grads(grads, idx, semi_idx, terms.d_input, s_idx, t_idx,
                                terms.d_critic_input)
            else:
                jp, grads, d_input = model.loss_jp(X, y, update_stats=True, input_grad=True)
                loss = jp
                run.input_grads(grads, idx, semi_idx, d_input)
            if not math.isfinite(loss):
                raise DivergedError(f"non-finite loss at {where}")
            run.step_fp(grads, where)
            jps.append(jp)
            run.history.iterations += 1
        run.end_epoch(epoch, jps, gaps, started)
    return run.finish()


def train_grl(model, src_labeled, tgt_unlabeled, dev, cfg):
    """Gradient-reversal variant.

    Every batch trains θ_p and θ_f on J_p and θ_q on the source-vs-target
    cross-entropy; the reversed language gradient (scaled by -lam) reaches θ_f
    only on iterations whose index is a multiple of ``k``. No clipping. The
    ``gap_mean`` column of the history holds the mean language loss.
    """
    if model.config.mode != "grl":
        raise ModeError("train_grl needs a grl-mode model")
    run = _Run(model, src_labeled, tgt_unlabeled, dev, cfg)
    step = 0
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        jps, langs = [], []
        for it, idx in enumerate(run.epoch_batches(epoch)):
            where = f"epoch {epoch} iteration {it}"
            lam = cfg.lam if step % cfg.k == 0 else 0.0
            s_idx, t_idx = next(run.csrc), next(run.ctgt)
            X, y, semi_idx = run.labeled_batch(idx)
            terms = model.grl_terms(lam, run.src.rows(s_idx), run.tgt.rows(t_idx), X, y,
                                    update_stats=True)
            if not (math.isfinite(terms.jp) and math.isfinite(terms.language_loss)):
                raise DivergedError(f"non-finite loss at {where}")
            grads = terms.grads
            run.input_grads(grads, idx, semi_idx, terms.d_input, s_idx, t_idx,
                            terms.d_critic_input)
            run.step_fp(grads, where)
            try:
                adam_step(run.q_params, {k: grads[k] for k in run.q_params}, run.q_state)
            except NumericError as exc:
                raise DivergedError(f"{exc} at {where}") from None
            jps.append(terms.jp)
            langs.append(terms.language_loss)
            step += 1
            run.history.iterations += 1
        run.end_epoch(epoch, jps, langs, started)
    return run.finish()


def train(model, src_labeled, tgt_unlabeled, dev, cfg, **kwargs):
    if cfg.mode == "grl":
        return train_grl(model, src_labeled, tgt_unlabeled, dev, cfg)
    return train_adan(model, src_labeled, tgt_unlabeled, dev, cfg, **kwargs)


def fresh_critic_gap(model, src, tgt, cfg, iterations=500, window=100, seed=12345):
    """Train a new clipped critic on the frozen features of ``model``.

    Returns the mean train-mode gap over the last ``window`` updates, i.e. an
    estimate of how separable the two feature populations are.
    """
    mc = dataclasses.replace(model.config, mode="adan", q_depth=max(model.config.q_depth, 1))
    cseed, sseed, tseed = _child_seeds(seed, 3)
    Q = _head(mc, mc.q_depth, 1, np.random.default_rng(cseed))
    Hs = model.feature_extract(src.inputs())
    Ht = model.feature_extract(tgt.inputs())
    params = Q.params()
    state = AdamState(cfg.lr_q)
    s_stream = make_stream(src, cfg.batch_size, sseed, cycling=True)
    t_stream = make_stream(tgt, cfg.batch_size, tseed, cycling=True)
    gaps = []
    for _ in range(iterations):
        hs, ht = Hs[next(s_stream)], Ht[next(t_stream)]
        scores, caches = Q.forward(np.concatenate([hs, ht]), train=True, update_stats=True)
        ns, nt = len(hs), len(ht)
        gaps.append(float(scores[:ns, 0].mean() - scores[ns:, 0].mean()))
        d = np.empty_like(scores)
        d[:ns] = -1.0 / ns
        d[ns:] = 1.0 / nt
        _, grads = Q.backward(d, caches)
        adam_step(params, grads, state)
        clip_params(params, cfg.clip_bound)
    return float(np.mean(gaps[-window:]))


@dataclass
class GridCell:
    k: int
    lam: float
    dev_accuracy: float


def grid_search(model_config, base_cfg, k_set, lam_set, src_labeled, tgt_unlabeled, dev,
                model_seed=None):
    """One full training per (k, lam) cell from the same initial model seed.

    A diverging cell is recorded with NaN accuracy.
    """
    if not k_set or not lam_set:
        raise ValueError("grid needs nonempty k and lambda sets")
    mc = dataclasses.replace(model_config, mode=base_cfg.mode)
    seed = base_cfg.seed if model_seed is None else model_seed
    cells = []
    for k in k_set:
        for lam in lam_set:
            cfg = dataclasses.replace(base_cfg, k=int(k), lam=float(lam))
            model = build_model(mc, seed)
            try:
                _, history = train(model, src_labeled, tgt_unlabeled, dev, cfg)
                acc = history.best_accuracy
            except NumericError:
                acc = float("nan")
            cells.append(GridCell(int(k), float(lam), acc))
    return cells


def grid_to_tsv(cells):
    lines = ["k\tlambda\tdev_accuracy"]
    for c in cells:
        lines.append(f"{c.k}\t{_fmt(c.lam)}\t{_fmt(c.dev_accuracy)}")
    return "\n".join(lines) + "\n"
