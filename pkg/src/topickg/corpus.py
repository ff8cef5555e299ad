"""Bag-of-words corpus loading, cleaning, and batching.

Two on-disk document formats are supported:
  * plain text: one document per line, whitespace-tokenized;
  * sparse triplets: ``doc_id word_id count`` per line (requires a vocab file).

Vocab files hold one token per line; the word id is the line number (0-based).
Label files hold one integer per line, aligned with the kept documents.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)

_TRIPLET_RE = re.compile(r"^\s*\d+\s+\d+\s+\d+\s*$")


class CorpusError(ValueError):
    pass


@dataclass
class Corpus:
    vocab: list
    counts: sparse.csr_matrix  # J x V, non-negative integers
    labels: np.ndarray | None = None
    train_idx: np.ndarray = field(default=None)
    test_idx: np.ndarray = field(default=None)
    dropped_docs: list = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.vocab)) != len(self.vocab):
            raise CorpusError("vocabulary contains duplicate tokens")
        if self.counts.shape[1] != len(self.vocab):
            raise CorpusError(
                f"count matrix has {self.counts.shape[1]} columns for a "
                f"{len(self.vocab)}-token vocabulary")
        if self.counts.nnz and self.counts.data.min() < 0:
            raise CorpusError("negative counts")
        row_tot = np.asarray(self.counts.sum(axis=1)).ravel()
        if np.any(row_tot == 0):
            raise CorpusError("corpus contains an all-zero document")
        if self.train_idx is None:
            self.train_idx = np.arange(self.counts.shape[0])
        if self.test_idx is None:
            self.test_idx = np.array([], dtype=int)

    @property
    def num_docs(self):
        return self.counts.shape[0]

    @property
    def vocab_size(self):
        return len(self.vocab)


@dataclass
class Batch:
    x: np.ndarray  # batch_size x V dense counts
    doc_ids: np.ndarray


def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().split("\n")
    except OSError as e:
        raise CorpusError(f"cannot read {path}: {e}") from e


def _load_stopwords(path):
    if path is None:
        return set()
    return {w.strip() for w in _read_lines(path) if w.strip()}


def load_vocab(path):
    vocab = [line.strip() for line in _read_lines(path)]
    while vocab and vocab[-1] == "":
        vocab.pop()
    if any(v == "" for v in vocab):
        raise CorpusError(f"{path}: empty token line")
    if len(set(vocab)) != len(vocab):
        raise CorpusError(f"{path}: duplicate tokens in vocabulary")
    return vocab


def load_corpus(docs_path, vocab_path=None, labels_path=None, stopwords_path=None,
                min_count=20, test_fraction=0.0, split_seed=0):
    """Load a corpus from disk, building a vocabulary if none is supplied.

    Without a vocab file the text is cleaned by dropping stop words and
    tokens occurring fewer than ``min_count`` times corpus-wide. Documents
    emptied by filtering are dropped and reported via ``dropped_docs``.
    """
    lines = _read_lines(docs_path)
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorpusError(f"{docs_path}: no documents")

    triplet = all(_TRIPLET_RE.match(l) for l in lines if l.strip())
    if triplet and vocab_path is None:
        raise CorpusError("triplet-format corpus requires a vocab file")

    if triplet:
        vocab = load_vocab(vocab_path)
        corpus = _load_triplets(lines, vocab, docs_path)
    else:
        stop = _load_stopwords(stopwords_path)
        if vocab_path is not None:
            vocab = load_vocab(vocab_path)
        else:
            tally = {}
            for line in lines:
                for tok in line.split():
                    if tok not in stop:
                        tally[tok] = tally.get(tok, 0) + 1
            vocab = sorted(t for t, n in tally.items() if n >= min_count)
            if not vocab:
                raise CorpusError("cleaning removed every token; lower min_count")
        corpus = _load_text(lines, vocab)

    if labels_path is not None:
        n_before = corpus.num_docs + len(corpus.dropped_docs)
        labels = _load_labels(labels_path, n_before)
        dropped = set(corpus.dropped_docs)
        keep = [i for i in range(n_before) if i not in dropped]
        corpus.labels = labels[keep]

    if test_fraction > 0.0:
        rng = np.random.Generator(np.random.PCG64(split_seed))
        order = rng.permutation(corpus.num_docs)
        n_test = int(round(test_fraction * corpus.num_docs))
        corpus.test_idx = np.sort(order[:n_test])
        corpus.train_idx = np.sort(order[n_test:])
    return corpus


def _load_labels(path, n_docs):
    raw = [l.strip() for l in _read_lines(path)]
    while raw and raw[-1] == "":
        raw.pop()
    if len(raw) != n_docs:
        raise CorpusError(f"{path}: {len(raw)} labels for {n_docs} documents")
    labels = np.empty(n_docs, dtype=int)
    for i, tok in enumerate(raw):
        try:
            labels[i] = int(tok)
        except ValueError:
            raise CorpusError(f"{path}:{i + 1}: malformed label {tok!r}")
    return labels


def _load_text(lines, vocab):
    index = {t: i for i, t in enumerate(vocab)}
    rows, cols, vals, dropped = [], [], [], []
    kept = 0
    for i, line in enumerate(lines):
        doc = {}
        for tok in line.split():
            j = index.get(tok)
            if j is not None:
                doc[j] = doc.get(j, 0) + 1
        if not doc:
            dropped.append(i)
            log.warning("document %d empty after filtering; dropped", i)
            continue
        for j, n in sorted(doc.items()):
            rows.append(kept)
            cols.append(j)
            vals.append(n)
        kept += 1
    if kept == 0:
        raise CorpusError("every document was emptied by filtering")
    counts = sparse.csr_matrix((vals, (rows, cols)), shape=(kept, len(vocab)), dtype=np.int64)
    return Corpus(vocab=vocab, counts=counts, dropped_docs=dropped)


def _load_triplets(lines, vocab, path):
    rows, cols, vals = [], [], []
    V = len(vocab)
    for ln, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CorpusError(f"{path}:{ln}: expected 'doc word count', got {line!r}")
        d, w, c = (int(p) for p in parts)
        if w >= V:
            raise CorpusError(f"{path}:{ln}: word id {w} out of range (V={V})")
        if c < 0:
            raise CorpusError(f"{path}:{ln}: negative count")
        if c > 0:
            rows.append(d)
            cols.append(w)
            vals.append(c)
    if not rows:
        raise CorpusError(f"{path}: no nonzero counts")
    n_docs = max(rows) + 1
    counts = sparse.csr_matrix((vals, (rows, cols)), shape=(n_docs, V), dtype=np.int64)
    counts.sum_duplicates()
    row_tot = np.asarray(counts.sum(axis=1)).ravel()
    keep = np.where(row_tot > 0)[0]
    dropped = [int(i) for i in np.where(row_tot == 0)[0]]
    for i in dropped:
        log.warning("document %d has no counts; dropped", i)
    return Corpus(vocab=vocab, counts=counts[keep], dropped_docs=dropped)


def save_corpus(corpus, docs_path, vocab_path, labels_path=None):
    """Write a corpus in triplet form; reloading reproduces identical counts."""
    with open(vocab_path, "w", encoding="utf-8") as fh:
        for tok in corpus.vocab:
            fh.write(tok + "\n")
    coo = corpus.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(docs_path, "w", encoding="utf-8") as fh:
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]}\n")
    if labels_path is not None and corpus.labels is not None:
        with open(labels_path, "w", encoding="utf-8") as fh:
            for lab in corpus.labels:
                fh.write(f"{int(lab)}\n")


def batches(corpus, batch_size, seed):
    """One epoch of training batches in a seed-determined permutation."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = corpus.train_idx[rng.permutation(len(corpus.train_idx))]
    for start in range(0, len(order), batch_size):
        ids = order[start:start + batch_size]
        x = np.asarray(corpus.counts[ids].todense(), dtype=np.float64)
        yield Batch(x=x, doc_ids=ids)
