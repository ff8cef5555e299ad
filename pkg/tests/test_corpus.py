import numpy as np
import pytest

from topickg.corpus import (Corpus, CorpusError, batches, load_corpus,
                            load_vocab, save_corpus)


@pytest.fixture
def text_corpus(tmp_path):
    docs = tmp_path / "docs.txt"
    docs.write_text("a a b\nb c\nc c c a\n", encoding="utf-8")
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("a\nb\nc\n", encoding="utf-8")
    return docs, vocab


def test_direct_count(text_corpus):
    docs, vocab = text_corpus
    corpus = load_corpus(docs, vocab_path=vocab)
    np.testing.assert_array_equal(corpus.counts.toarray()[0], [2, 1, 0])


def test_out_of_vocab_doc_dropped(tmp_path, caplog):
    docs = tmp_path / "docs.txt"
    docs.write_text("a b\nzzz qqq\nb b\n", encoding="utf-8")
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("a\nb\n", encoding="utf-8")
    with caplog.at_level("WARNING"):
        corpus = load_corpus(docs, vocab_path=vocab)
    assert corpus.num_docs == 2
    assert corpus.dropped_docs == [1]
    assert "dropped" in caplog.text


def test_vocab_built_by_min_count(tmp_path):
    lines = []
    for _ in range(25):
        lines.append("apple banana")
    lines.append("cherry cherry")
    docs = tmp_path / "docs.txt"
    docs.write_text("\n".join(lines) + "\n", encoding="utf-8")
    corpus = load_corpus(docs, min_count=20)
    assert corpus.vocab == ["apple", "banana"]
    totals = np.asarray(corpus.counts.sum(axis=0)).ravel()
    assert np.all(totals >= 20)


def test_min_count_recount_oracle(tmp_path):
    rng = np.random.Generator(np.random.PCG64(3))
    words = [f"w{i}" for i in range(40)]
    lines = []
    for _ in range(100):
        n = rng.integers(3, 15)
        lines.append(" ".join(rng.choice(words, size=n)))
    docs = tmp_path / "docs.txt"
    docs.write_text("\n".join(lines) + "\n", encoding="utf-8")
    corpus = load_corpus(docs, min_count=20)
    # independent recount over the raw text
    tally = {}
    for line in lines:
        for tok in line.split():
            tally[tok] = tally.get(tok, 0) + 1
    expected = sorted(t for t, n in tally.items() if n >= 20)
    assert corpus.vocab == expected
    totals = np.asarray(corpus.counts.sum(axis=0)).ravel()
    for i, tok in enumerate(corpus.vocab):
        assert totals[i] == tally[tok]


def test_stopwords_removed(tmp_path):
    docs = tmp_path / "docs.txt"
    docs.write_text("\n".join(["the cat sat"] * 30) + "\n", encoding="utf-8")
    stop = tmp_path / "stop.txt"
    stop.write_text("the\n", encoding="utf-8")
    corpus = load_corpus(docs, stopwords_path=stop, min_count=20)
    assert "the" not in corpus.vocab


def test_labels_mismatch(tmp_path, text_corpus):
    docs, vocab = text_corpus
    labels = tmp_path / "labels.txt"
    labels.write_text("0\n1\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="labels"):
        load_corpus(docs, vocab_path=vocab, labels_path=labels)


def test_labels_aligned_after_drop(tmp_path):
    docs = tmp_path / "docs.txt"
    docs.write_text("a\nzz\nb\n", encoding="utf-8")
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("a\nb\n", encoding="utf-8")
    labels = tmp_path / "labels.txt"
    labels.write_text("5\n6\n7\n", encoding="utf-8")
    corpus = load_corpus(docs, vocab_path=vocab, labels_path=labels)
    np.testing.assert_array_equal(corpus.labels, [5, 7])


def test_triplet_format(tmp_path):
    docs = tmp_path / "docs.txt"
    docs.write_text("0 0 2\n0 1 1\n1 2 3\n", encoding="utf-8")
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("a\nb\nc\n", encoding="utf-8")
    corpus = load_corpus(docs, vocab_path=vocab)
    np.testing.assert_array_equal(corpus.counts.toarray(),
                                  [[2, 1, 0], [0, 0, 3]])


def test_triplet_requires_vocab(tmp_path):
    docs = tmp_path / "docs.txt"
    docs.write_text("0 0 2\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="vocab"):
        load_corpus(docs)


def test_triplet_word_out_of_range(tmp_path):
    docs = tmp_path / "docs.txt"
    docs.write_text("0 9 2\n", encoding="utf-8")
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("a\nb\n", encoding="utf-8")
    with pytest.raises(CorpusError, match=":1"):
        load_corpus(docs, vocab_path=vocab)


def test_duplicate_vocab_rejected(tmp_path):
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("a\na\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="duplicate"):
        load_vocab(vocab)


def test_round_trip_bit_exact(tmp_path, text_corpus):
    docs, vocab = text_corpus
    corpus = load_corpus(docs, vocab_path=vocab)
    corpus.labels = np.array([0, 1, 0])
    save_corpus(corpus, tmp_path / "d2.txt", tmp_path / "v2.txt", tmp_path / "l2.txt")
    again = load_corpus(tmp_path / "d2.txt", vocab_path=tmp_path / "v2.txt",
                        labels_path=tmp_path / "l2.txt")
    assert np.array_equal(corpus.counts.toarray(), again.counts.toarray())
    assert corpus.vocab == again.vocab
    assert np.array_equal(corpus.labels, again.labels)


def test_doc_count_sums_match_tokens(tmp_path):
    docs = tmp_path / "docs.txt"
    lines = ["a b c a", "b b", "c a c"]
    docs.write_text("\n".join(lines) + "\n", encoding="utf-8")
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("a\nb\nc\n", encoding="utf-8")
    corpus = load_corpus(docs, vocab_path=vocab)
    sums = np.asarray(corpus.counts.sum(axis=1)).ravel()
    np.testing.assert_array_equal(sums, [len(l.split()) for l in lines])


def test_split_partitions_docs(text_corpus):
    docs, vocab = text_corpus
    corpus = load_corpus(docs, vocab_path=vocab, test_fraction=0.34, split_seed=1)
    joined = np.sort(np.concatenate([corpus.train_idx, corpus.test_idx]))
    np.testing.assert_array_equal(joined, np.arange(corpus.num_docs))
    assert len(corpus.test_idx) == 1


class TestBatches:
    def _corpus(self):
        counts = np.eye(5, dtype=np.int64) + 1
        from scipy import sparse
        return Corpus(vocab=[f"w{i}" for i in range(5)],
                      counts=sparse.csr_matrix(counts))

    def test_partition_sizes(self):
        sizes = [len(b.doc_ids) for b in batches(self._corpus(), 2, seed=0)]
        assert sizes == [2, 2, 1]

    def test_same_seed_same_order(self):
        a = np.concatenate([b.doc_ids for b in batches(self._corpus(), 2, seed=7)])
        b = np.concatenate([b.doc_ids for b in batches(self._corpus(), 2, seed=7)])
        np.testing.assert_array_equal(a, b)

    def test_epoch_covers_training_split(self):
        corpus = self._corpus()
        corpus.train_idx = np.array([0, 2, 4])
        seen = np.concatenate([b.doc_ids for b in batches(corpus, 2, seed=3)])
        assert sorted(seen.tolist()) == [0, 2, 4]

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            list(batches(self._corpus(), 0, seed=0))
