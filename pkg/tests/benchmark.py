"""
Desk-scale synthetic benchmark shared by the acceptance checks.

Synthetic data use the generator defaults (rotation pi/3). The network is
narrower than the 900-unit default and trains for fewer epochs so five paired
runs fit a CPU budget. Under weight clipping the critic's output scale grows
with width, so lambda is raised to keep the adversarial term comparable.
"""

import dataclasses
import time

import numpy as np

from adan.metrics import averaged_hausdorff, dump_features
from adan.model import ModelConfig, build_model
from adan.synthdata import SynthConfig, gen_synthetic
from adan.trainer import TrainConfig, evaluate, grid_search, train

BENCH_WIDTH = 128
BENCH_TRAIN = dict(lam=1.0, k=5, lr_fp=1e-3, lr_q=5e-5, clip_bound=0.01, epochs=20, batch_size=64)

_DATA_CACHE = {}


def bench_data(seed, tgt_train=0):
    key = (seed, tgt_train)
    if key not in _DATA_CACHE:
        _DATA_CACHE[key] = gen_synthetic(SynthConfig(seed=seed, tgt_train=tgt_train))
    return _DATA_CACHE[key]


def bench_model_config(data, mode):
    return ModelConfig(data.config.d, data.config.num_classes, hidden_width=BENCH_WIDTH, mode=mode)


def bench_run(seed, mode, semi=None, data=None, **overrides):
    """Train one benchmark model; dev selection on the target dev split."""
    data = data if data is not None else bench_data(seed)
    cfg = TrainConfig(mode=mode, seed=seed, semi_supervised_target=semi,
                      **{**BENCH_TRAIN, **overrides})
    model = build_model(bench_model_config(data, mode), seed)
    started = time.perf_counter()
    model, history = train(model, data["src_train"], data["tgt_unlabeled"], data["tgt_dev"], cfg)
    return model, history, time.perf_counter() - started


def transfer_pair(seed):
    """Paired adan / dan runs on one seed: accuracies and feature-space AHDs."""
    data = bench_data(seed)
    out = {"seed": seed}
    src_dev, tgt_dev = data["src_dev"], data["tgt_dev"]
    out["ahd_avg"] = averaged_hausdorff(dump_features(None, src_dev, "avg"),
                                        dump_features(None, tgt_dev, "avg"))
    for mode in ("adan", "dan"):
        model, history, seconds = bench_run(seed, mode, data=data)
        out[f"{mode}_src"] = evaluate(model, src_dev)
        out[f"{mode}_tgt"] = evaluate(model, tgt_dev)
        out[f"{mode}_ahd_F"] = averaged_hausdorff(dump_features(model, src_dev, "F"),
                                                  dump_features(model, tgt_dev, "F"))
        out[f"{mode}_seconds"] = seconds
    return out


def semi_supervised_runs(seed, sizes=(0, 200, 2000)):
    """Target-dev accuracy of adan training with ``n`` labeled target documents added."""
    data = bench_data(seed, tgt_train=max(sizes))
    pool = data["tgt_train"]
    out = {}
    for n in sizes:
        semi = pool.subset(range(n)) if n else None
        model, _, _ = bench_run(seed, "adan", semi=semi, data=data)
        out[n] = evaluate(model, data["tgt_dev"])
    return out


GRID_K = (1, 4, 16)
GRID_LAMBDA = (0.0125, 0.1, 0.8)


def stability_grid(mode, seed=0, **overrides):
    data = bench_data(seed)
    base = TrainConfig(mode=mode, seed=seed, **{**BENCH_TRAIN, **overrides})
    cells = grid_search(bench_model_config(data, mode), base, GRID_K, GRID_LAMBDA,
                        data["src_train"], data["tgt_unlabeled"], data["tgt_dev"])
    return cells


def summarize(values):
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std())
