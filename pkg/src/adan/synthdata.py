"""
Seeded "two-language" classification problem with a known cross-lingual map.

Each class has a prototype on the unit sphere of R^d. A source token is its
class prototype plus isotropic Gaussian noise; the neutral pool has a zero
prototype. The target vocabulary is a translation of the source one: target
token i is ``R @ source token i``, where R rotates by ``rotation_angle`` in
``num_planes`` disjoint coordinate planes picked at random. Documents draw 80%
of their tokens from their class pool and 20% from the neutral pool.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .text_data import SOURCE, TARGET, Corpus, Document, EmbeddingTable, dump_embeddings, write_corpus

SPLITS = ("src_train", "tgt_unlabeled", "src_dev", "tgt_dev", "tgt_train")

FILE_NAMES = {
    "src_emb": "src.emb",
    "tgt_emb": "tgt.emb",
    "src_train": "src_train.tsv",
    "tgt_unlabeled": "tgt_unlabeled.tsv",
    "src_dev": "src_dev.tsv",
    "tgt_dev": "tgt_dev.tsv",
    "tgt_train": "tgt_train.tsv",
    "manifest": "manifest.json",
}


@dataclass
class SynthConfig:
    num_classes: int = 3
    vocab_per_class: int = 100
    neutral_vocab: int = 100
    d: int = 20
    src_train: int = 5000
    tgt_unlabeled: int = 5000
    src_dev: int = 1000
    tgt_dev: int = 1000
    # labeled target documents for semi-supervised runs; 0 writes no file
    tgt_train: int = 0
    min_length: int = 5
    max_length: int = 20
    class_fraction: float = 0.8
    rotation_angle: float = np.pi / 3
    num_planes: int = -1  # -1: every coordinate pair (d // 2 planes)
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        counts = ("num_classes", "vocab_per_class", "neutral_vocab", "d", "src_train",
                  "tgt_unlabeled", "src_dev", "tgt_dev")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.tgt_train < 0:
            raise ConfigError(f"tgt_train must be nonnegative, got {self.tgt_train}")
        if not 1 <= self.min_length <= self.max_length:
            raise ConfigError(
                f"need 1 <= min_length <= max_length, got {self.min_length}, {self.max_length}"
            )
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if not 0.0 <= self.class_fraction <= 1.0:
            raise ConfigError(f"class_fraction must lie in [0, 1], got {self.class_fraction}")
        if self.num_planes > self.d // 2:
            raise ConfigError(f"at most {self.d // 2} disjoint planes fit in {self.d} dimensions")

    @property
    def planes(self):
        return self.d // 2 if self.num_planes < 0 else self.num_planes


def rotation_matrix(d, planes, angle):
    """Rotation by ``angle`` in each (i, j) plane, i < j, planes disjoint."""
    R = np.eye(d)
    c, s = np.cos(angle), np.sin(angle)
    for i, j in planes:
        R[i, i] = c
        R[j, j] = c
        R[i, j] = -s
        R[j, i] = s
    return R


class SyntheticData:
    """Result of :func:`gen_synthetic`. ``token_class[i]`` is -1 for neutral tokens."""

    def __init__(self, config, src_table, tgt_table, corpora, rotation, prototypes, token_class):
        self.config = config
        self.src_table = src_table
        self.tgt_table = tgt_table
        self.corpora = corpora
        self.rotation = rotation
        self.prototypes = prototypes
        self.token_class = token_class

    def __getitem__(self, split):
        return self.corpora[split]


def gen_synthetic(cfg):
    # independent child streams so resizing one split leaves the others unchanged
    streams = np.random.SeedSequence(cfg.seed).spawn(3 + len(SPLITS))
    proto_rng, noise_rng, plane_rng = (np.random.default_rng(s) for s in streams[:3])
    C, d = cfg.num_classes, cfg.d

    prototypes = proto_rng.standard_normal((C, d))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    token_class = np.concatenate(
        [np.repeat(np.arange(C), cfg.vocab_per_class), np.full(cfg.neutral_vocab, -1)]
    )
    centers = np.zeros((len(token_class), d))
    centers[: C * cfg.vocab_per_class] = prototypes[token_class[: C * cfg.vocab_per_class]]
    src_vectors = centers + cfg.noise_sigma * noise_rng.standard_normal(centers.shape)

    perm = plane_rng.permutation(d)
    planes = [tuple(sorted((int(perm[2 * p]), int(perm[2 * p + 1])))) for p in range(cfg.planes)]
    R = rotation_matrix(d, planes, cfg.rotation_angle)
    tgt_vectors = src_vectors @ R.T

    def names(prefix):
        out = []
        for c in range(C):
            out += [f"{prefix}_c{c}_{i}" for i in range(cfg.vocab_per_class)]
        out += [f"{prefix}_n_{i}" for i in range(cfg.neutral_vocab)]
        return out

    src_table = EmbeddingTable(SOURCE, names("en"), src_vectors)
    tgt_table = EmbeddingTable(TARGET, names("xx"), tgt_vectors)

    neutral_start = C * cfg.vocab_per_class
    corpora = {}
    for split, seq in zip(SPLITS, streams[3:]):
        n = getattr(cfg, split)
        if n == 0:
            continue
        rng = np.random.default_rng(seq)
        table = src_table if split.startswith("src") else tgt_table
        labeled = split != "tgt_unlabeled"
        labels = rng.integers(0, C, size=n)
        lengths = rng.integers(cfg.min_length, cfg.max_length + 1, size=n)
        docs = []
        for label, length in zip(labels, lengths):
            from_class = rng.random(length) < cfg.class_fraction
            class_ids = label * cfg.vocab_per_class + rng.integers(0, cfg.vocab_per_class, size=length)
            neutral_ids = neutral_start + rng.integers(0, cfg.neutral_vocab, size=length)
            ids = np.where(from_class, class_ids, neutral_ids)
            docs.append(Document(table.language, tuple(int(i) for i in ids),
                                 int(label) if labeled else None))
        corpora[split] = Corpus(docs, C, table)
    return SyntheticData(cfg, src_table, tgt_table, corpora, R, prototypes, token_class)


def write_synthetic(data, out_dir):
    """Write tables, corpora and a manifest; returns the written paths by role."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for role, table in (("src_emb", data.src_table), ("tgt_emb", data.tgt_table)):
        paths[role] = os.path.join(out_dir, FILE_NAMES[role])
        dump_embeddings(table, paths[role])
    for split, corpus in data.corpora.items():
        paths[split] = os.path.join(out_dir, FILE_NAMES[split])
        write_corpus(paths[split], corpus.documents, corpus.table)
    manifest = {
        "config": asdict(data.config),
        "files": {role: os.path.basename(p) for role, p in paths.items()},
        "rotation": data.rotation.tolist(),
    }
    paths["manifest"] = os.path.join(out_dir, FILE_NAMES["manifest"])
    with open(paths["manifest"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
