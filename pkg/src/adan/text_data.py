"""
Embedding tables, corpora and mini-batch streams.

File formats (UTF-8 text):

* embeddings: optional header ``"V d"``, then one ``token v1 ... vd`` line per
  word, single-space separated;
* corpora: one document per line, ``label<TAB>tok tok ...`` where ``label`` is
  a class index or ``-`` for unlabeled.

Documents are averaged through a sparse averaging operator whose rows hold the
sorted unique token ids with weight count/length. Row results therefore do not
depend on token order, and a single document averages to exactly the same
vector whether alone or in a batch.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, EmptyCorpusError, FormatError, LabelError

SOURCE = "source"
TARGET = "target"
LANGUAGES = (SOURCE, TARGET)

NEG, NEU, POS = 0, 1, 2


@dataclass
class EmbeddingTable:
    language: str
    tokens: list
    vectors: np.ndarray
    vocab: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.language not in LANGUAGES:
            raise ValueError(f"language must be one of {LANGUAGES}, got {self.language!r}")
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise DimensionError(
                f"{len(self.tokens)} tokens but vectors have shape {self.vectors.shape}"
            )
        self.vocab = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.vocab) != len(self.tokens):
            raise FormatError("duplicate tokens in embedding table")

    @property
    def size(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def _is_header(fields):
    return len(fields) == 2 and all(f.lstrip("-").isdigit() for f in fields)


def load_embeddings(path, language, like=None):
    """Read an embedding file; ``like`` is a table whose dimension must match."""
    tokens = []
    rows = []
    seen = {}
    header = None
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split(" ")
            if lineno == 1 and _is_header(fields):
                header = (int(fields[0]), int(fields[1]))
                dim = header[1]
                continue
            token, values = fields[0], fields[1:]
            if not token:
                raise FormatError("empty token", path, lineno)
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise FormatError(f"token {token!r} has no vector", path, lineno)
            if len(values) != dim:
                raise FormatError(
                    f"expected {dim} values for token {token!r}, found {len(values)}", path, lineno
                )
            if token in seen:
                raise FormatError(
                    f"duplicate token {token!r} (first seen on line {seen[token]})", path, lineno
                )
            try:
                rows.append([float(v) for v in values])
            except ValueError as exc:
                raise FormatError(f"bad number in row for {token!r}: {exc}", path, lineno) from None
            seen[token] = lineno
            tokens.append(token)
    if dim is None:
        raise FormatError("embedding file contains no vectors", path)
    if header is not None and header[0] != len(tokens):
        raise FormatError(f"header declares {header[0]} tokens, file has {len(tokens)}", path)
    if like is not None and like.dim != dim:
        raise DimensionError(
            f"{path} has dimension {dim}, previously loaded {like.language} table has {like.dim}"
        )
    vectors = np.array(rows, dtype=np.float64).reshape(len(tokens), dim)
    return EmbeddingTable(language, tokens, vectors)


def dump_embeddings(table, path, header=False):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(f"{table.size} {table.dim}\n")
        for token, row in zip(table.tokens, table.vectors.tolist()):
            fh.write(token + " " + " ".join(repr(v) for v in row) + "\n")


def random_embeddings(vocab, d, seed, language=SOURCE):
    """Uniform [-0.1, 0.1] table over ``vocab`` (a token list, or a size for tokens w0, w1, ...)."""
    if d <= 0:
        raise ValueError(f"embedding dimension must be positive, got {d}")
    tokens = [f"w{i}" for i in range(vocab)] if isinstance(vocab, int) else list(vocab)
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-0.1, 0.1, size=(len(tokens), d))
    return EmbeddingTable(language, tokens, vectors)


@dataclass(frozen=True)
class Document:
    language: str
    token_ids: tuple
    label: Optional[int] = None


@dataclass
class Corpus:
    documents: list
    num_classes: int
    table: Optional[EmbeddingTable] = None
    oov_count: int = 0
    _operator: Optional[sp.csr_matrix] = field(default=None, init=False, repr=False)

    def __len__(self):
        return len(self.documents)

    @property
    def labeled(self):
        return bool(self.documents) and all(d.label is not None for d in self.documents)

    @property
    def empty_count(self):
        return sum(1 for d in self.documents if not d.token_ids)

    @property
    def language(self):
        return self.table.language if self.table is not None else None

    def labels(self):
        if not self.labeled:
            raise LabelError("corpus is not fully labeled")
        return np.array([d.label for d in self.documents], dtype=np.int64)

    def subset(self, indices):
        docs = [self.documents[i] for i in indices]
        return Corpus(docs, self.num_classes, self.table)

    def unlabeled(self):
        docs = [Document(d.language, d.token_ids, None) for d in self.documents]
        return Corpus(docs, self.num_classes, self.table, self.oov_count)

    def operator(self):
        """Cached sparse averaging operator (N x V) for this corpus."""
        if self._operator is None:
            _check_languages(self.documents, self.table)
            self._operator = averaging_operator(self.documents, self.table.size)
        return self._operator

    def inputs(self):
        """Averaged embedding of every document (N x d) under the table's current vectors."""
        return np.asarray(self.operator() @ self.table.vectors)


def averaging_operator(documents, vocab_size):
    """Sparse N x V matrix whose product with an embedding matrix averages each document."""
    indptr = [0]
    indices = []
    data = []
    for doc in documents:
        if doc.token_ids:
            ids, counts = np.unique(np.asarray(doc.token_ids, dtype=np.int64), return_counts=True)
            indices.append(ids)
            data.append(counts / float(len(doc.token_ids)))
            indptr.append(indptr[-1] + len(ids))
        else:
            indptr.append(indptr[-1])
    indices = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
    data = np.concatenate(data) if data else np.zeros(0)
    return sp.csr_matrix((data, indices, np.array(indptr)), shape=(len(documents), vocab_size))


def _check_languages(documents, table):
    for doc in documents:
        if doc.language != table.language:
            raise ValueError(
                f"document language {doc.language!r} does not match table language {table.language!r}"
            )


def average_matrix(documents, table):
    _check_languages(documents, table)
    A = averaging_operator(documents, table.size)
    return np.asarray(A @ table.vectors)


def average_embed(doc, table):
    """Mean embedding of the document's tokens; the zero vector when it has none."""
    return average_matrix([doc], table)[0]


def map_labels_5to3(label):
    """Collapse a 1..5 rating onto NEG (1, 2), NEU (3) and POS (4, 5)."""
    if isinstance(label, bool) or not isinstance(label, (int, np.integer)) or not 1 <= label <= 5:
        raise LabelError(f"rating must be an integer in 1..5, got {label!r}")
    if label <= 2:
        return NEG
    if label == 3:
        return NEU
    return POS


def load_corpus(path, table, expect_labels, num_classes=None):
    """Read a corpus file, dropping out-of-vocabulary tokens (counted in ``oov_count``)."""
    docs = []
    oov = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise FormatError("expected '<label>\\t<tokens>'", path, lineno)
            label_field, text = line.split("\t", 1)
            label_field = label_field.strip()
            if label_field == "-":
                if expect_labels:
                    raise FormatError("missing label", path, lineno)
                label = None
            else:
                try:
                    label = int(label_field)
                except ValueError:
                    raise FormatError(f"bad label {label_field!r}", path, lineno) from None
                if label < 0 or (num_classes is not None and label >= num_classes):
                    raise FormatError(
                        f"label {label} outside [0, {num_classes})", path, lineno
                    )
            ids = []
            for tok in text.split():
                idx = table.vocab.get(tok)
                if idx is None:
                    oov += 1
                else:
                    ids.append(idx)
            docs.append(Document(table.language, tuple(ids), label))
    if num_classes is None:
        labels = [d.label for d in docs if d.label is not None]
        num_classes = max(labels) + 1 if labels else 0
    return Corpus(docs, num_classes, table, oov_count=oov)


def write_corpus(path, documents, table):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in documents:
            label = "-" if doc.label is None else str(doc.label)
            fh.write(label + "\t" + " ".join(table.tokens[i] for i in doc.token_ids) + "\n")


class BatchStream:
    """Seeded stream of index batches over ``n`` items.

    Non-cycling: one shuffle, then consecutive slices (the last may be short).
    Cycling: an endless concatenation of permutations, reshuffled at every
    wraparound with a seed derived from (seed, wrap count); batches running
    past a wraparound continue into the next permutation.
    """

    def __init__(self, n, batch_size, seed, cycling=False, epoch=0):
        if batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {batch_size}")
        if n < 1:
            raise EmptyCorpusError("cannot stream an empty corpus")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.cycling = cycling
        self._wrap = epoch
        self._order = self._permutation(epoch)
        self._pos = 0

    def _permutation(self, wrap):
        return np.random.default_rng([self.seed, wrap]).permutation(self.n)

    def __iter__(self):
        return self

    def __next__(self):
        if not self.cycling:
            if self._pos >= self.n:
                raise StopIteration
            batch = self._order[self._pos : self._pos + self.batch_size]
            self._pos += len(batch)
            return batch
        parts = []
        need = self.batch_size
        while need:
            if self._pos == self.n:
                self._wrap += 1
                self._order = self._permutation(self._wrap)
                self._pos = 0
            take = self._order[self._pos : self._pos + need]
            parts.append(take)
            self._pos += len(take)
            need -= len(take)
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


def make_stream(corpus, batch_size, seed, cycling=False, epoch=0):
    """Stream over ``corpus``; ``epoch`` selects which seeded permutation comes first."""
    return BatchStream(len(corpus), batch_size, seed, cycling, epoch)
