"""Topic-quality metrics, theta-based document classification, topic-tree
export, and hyperparameter sweeps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

NPMI_EPS = 1e-12


def phi_chain(phis, layer):
    """Word distribution of layer-``layer`` topics: Phi^(1) ... Phi^(layer)."""
    out = phis[0]
    for l in range(1, layer):
        out = out @ phis[l]
    return out


def top_words(phis, layer, topic, n):
    """Top-n word ids of one topic, probabilities descending, ties broken by
    lower word id."""
    dist = phi_chain(phis, layer)[:, topic]
    if n > dist.shape[0]:
        raise ValueError(f"requested {n} words from a {dist.shape[0]}-word vocabulary")
    order = np.lexsort((np.arange(dist.shape[0]), -dist))
    ids = order[:n]
    return list(ids), dist[ids].copy()


def topic_word_lists(phis, layer, n):
    dist = phi_chain(phis, layer)
    return [top_words(phis, layer, k, n)[0] for k in range(dist.shape[1])]


def _doc_freq(counts):
    """Boolean document-word incidence from a sparse count matrix."""
    inc = counts.copy()
    inc.data = np.ones_like(inc.data)
    return inc.tocsc()


def topic_coherence_npmi(word_lists, counts):
    """Mean NPMI over all word pairs in each topic's list, then over topics.

    Probabilities are document frequencies over the reference corpus; words
    absent from the corpus make their pairs skipped (counted as coverage
    misses).
    """
    inc = _doc_freq(counts)
    n_docs = counts.shape[0]
    df = np.asarray(inc.sum(axis=0)).ravel()
    skipped = 0
    per_topic = []
    for words in word_lists:
        scores = []
        for i in range(len(words)):
            for j in range(i + 1, len(words)):
                wi, wj = words[i], words[j]
                if df[wi] == 0 or df[wj] == 0:
                    skipped += 1
                    continue
                joint = inc[:, wi].multiply(inc[:, wj]).sum()
                p_i = max(df[wi] / n_docs, NPMI_EPS)
                p_j = max(df[wj] / n_docs, NPMI_EPS)
                p_ij = max(joint / n_docs, NPMI_EPS)
                scores.append(np.log(p_ij / (p_i * p_j)) / (-np.log(p_ij)))
        if scores:
            per_topic.append(float(np.mean(scores)))
    if skipped:
        log.warning("NPMI: skipped %d pairs with out-of-corpus words", skipped)
    return float(np.mean(per_topic)) if per_topic else 0.0


def topic_diversity(word_lists):
    """Fraction of unique words across the topics' top-word lists."""
    if not word_lists:
        raise ValueError("no topics given")
    n = len(word_lists[0])
    unique = set()
    for words in word_lists:
        unique.update(words)
    return len(unique) / (n * len(word_lists))


def word_embedding_coherence(word_lists, embeddings):
    """Mean over topics of mean pairwise cosine similarity of top-word
    embeddings. ``embeddings`` is d x V (one column per vocab word)."""
    emb = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=0)
    per_topic = []
    for words in word_lists:
        kept = [w for w in words if norms[w] > 0]
        if len(kept) < len(words):
            log.warning("WE: skipped %d zero-embedding words", len(words) - len(kept))
        sims = []
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                a, b = kept[i], kept[j]
                sims.append(float(emb[:, a] @ emb[:, b] / (norms[a] * norms[b])))
        if sims:
            per_topic.append(float(np.mean(sims)))
    return float(np.mean(per_topic)) if per_topic else 0.0


def evaluate_topics(phis, counts, embeddings, top_n_tc=10, top_n_td=25):
    """Per-layer TC/TD/WE table."""
    rows = []
    for layer in range(1, len(phis) + 1):
        v = phis[0].shape[0]
        lists_tc = topic_word_lists(phis, layer, min(top_n_tc, v))
        lists_td = topic_word_lists(phis, layer, min(top_n_td, v))
        rows.append({
            "layer": layer,
            "tc": topic_coherence_npmi(lists_tc, counts),
            "td": topic_diversity(lists_td),
            "we": word_embedding_coherence(lists_tc, embeddings),
        })
    return rows


# ---------------------------------------------------------------------------
# classification on document representations
# ---------------------------------------------------------------------------

def _f1_scores(y_true, y_pred, n_classes):
    tp = np.zeros(n_classes)
    fp = np.zeros(n_classes)
    fn = np.zeros(n_classes)
    for c in range(n_classes):
        tp[c] = np.sum((y_pred == c) & (y_true == c))
        fp[c] = np.sum((y_pred == c) & (y_true != c))
        fn[c] = np.sum((y_pred != c) & (y_true == c))
    micro_p = tp.sum() / max(tp.sum() + fp.sum(), 1)
    micro_r = tp.sum() / max(tp.sum() + fn.sum(), 1)
    micro = 2 * micro_p * micro_r / max(micro_p + micro_r, NPMI_EPS)
    per_class = []
    for c in range(n_classes):
        p = tp[c] / max(tp[c] + fp[c], 1)
        r = tp[c] / max(tp[c] + fn[c], 1)
        per_class.append(2 * p * r / max(p + r, NPMI_EPS))
    return float(micro), float(np.mean(per_class))


def classify_theta(train_theta, train_labels, test_theta, test_labels,
                   l2=1e-4, steps=500, lr=0.1, seed=0):
    """Multinomial logistic regression on topic proportions; returns
    (micro F1, macro F1) on the test split."""
    y = np.asarray(train_labels, dtype=int)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training labels contain a single class")
    remap = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([remap[c] for c in y])
    x = np.asarray(train_theta, dtype=np.float64)
    scale = max(np.abs(x).max(), 1.0)
    x = x / scale
    n, d = x.shape
    n_classes = classes.size

    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.normal(0.0, 0.01, size=(d, n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y_idx]
    for _ in range(steps):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        err = (p - onehot) / n
        w -= lr * (x.T @ err + l2 * w)
        b -= lr * err.sum(axis=0)

    xt = np.asarray(test_theta, dtype=np.float64) / scale
    pred_idx = np.argmax(xt @ w + b, axis=1)
    y_test = np.array([remap.get(c, -1) for c in np.asarray(test_labels, dtype=int)])
    return _f1_scores(y_test, pred_idx, n_classes)


# ---------------------------------------------------------------------------
# tree export
# ---------------------------------------------------------------------------

def export_tree(phis, mats, vocab, top_k=10, prior_s=None, prior_c=None,
                topic_names=None, fmt="text"):
    """Readable dump of the learned hierarchy.

    Per topic: its layer, name (when the prior tree supplies one), top
    keywords, child links with their topic-matrix weights, and concept-word
    links. Edges absent from ``prior_s``/``prior_c`` (added by structure
    revision) are marked NEW.
    """
    if fmt not in ("text", "dot"):
        raise ValueError(f"unknown export format {fmt!r}")
    sizes = mats.layer_sizes
    L = len(sizes) - 1
    lines = []
    if fmt == "dot":
        lines.append("digraph topics {")
    for layer in range(L, 0, -1):
        for k in range(sizes[layer]):
            ids, _probs = top_words(phis, layer, k, min(top_k, sizes[0]))
            words = " ".join(vocab[i] for i in ids)
            name = topic_names[layer][k] if topic_names else f"topic_{layer}_{k}"
            if fmt == "text":
                lines.append(f"TOPIC {layer} {k} {name}")
                lines.append("  KEYWORDS " + words)
                for i in np.where(mats.S[layer - 1][:, k] > 0)[0]:
                    new = prior_s is not None and prior_s[layer - 1][i, k] == 0
                    lines.append(f"  CHILD {layer - 1} {int(i)} "
                                 f"{float(phis[layer - 1][i, k]):.6f}"
                                 f"{' NEW' if new else ''}")
                for v in np.where(mats.C[layer - 1][:, k] > 0)[0]:
                    new = prior_c is not None and prior_c[layer - 1][v, k] == 0
                    lines.append(f"  CONCEPT {vocab[v]}{' NEW' if new else ''}")
            else:
                lines.append(f'  "n{layer}_{k}" [label="{name}\\n{words}"];')
                for i in np.where(mats.S[layer - 1][:, k] > 0)[0]:
                    lines.append(f'  "n{layer}_{k}" -> "n{layer - 1}_{int(i)}";')
    if fmt == "dot":
        lines.append("}")
    return "\n".join(lines) + "\n"


def parse_exported_tree(text):
    """Reload node/edge sets from a text-format export."""
    topics, edges = set(), set()
    current = None
    for line in text.splitlines():
        if line.startswith("TOPIC "):
            _, layer, k, _name = line.split(" ", 3)
            current = (int(layer), int(k))
            topics.add(current)
        elif line.strip().startswith("CHILD "):
            parts = line.split()
            edges.add((current, (int(parts[1]), int(parts[2]))))
    return topics, edges


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepGrid:
    cells: list = field(default_factory=list)  # records per (beta, s) pair

    def write_csv(self, path):
        fields = ("graph_weight", "threshold", "metric", "mean", "std", "n_seeds", "failures")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.cells)


def sweep(grid, seeds, run_cell):
    """Run ``run_cell(beta, s, seed) -> dict of metric -> value`` per grid
    cell per seed; aggregate mean and std. Cell failures are recorded and the
    sweep continues."""
    if not grid:
        raise ValueError("empty sweep grid")
    out = SweepGrid()
    for beta, s in grid:
        results = []
        failures = 0
        for seed in seeds:
            try:
                results.append(run_cell(beta, s, seed))
            except Exception:  # noqa: BLE001 - sweep must survive cell failures
                log.exception("sweep cell (beta=%s, s=%s, seed=%s) failed", beta, s, seed)
                failures += 1
        metrics = sorted({k for r in results for k in r})
        for metric in metrics:
            vals = np.array([r[metric] for r in results if metric in r])
            out.cells.append({
                "graph_weight": beta, "threshold": s, "metric": metric,
                "mean": float(vals.mean()), "std": float(vals.std()),
                "n_seeds": int(vals.size), "failures": failures,
            })
        if not results:
            out.cells.append({"graph_weight": beta, "threshold": s, "metric": "",
                              "mean": float("nan"), "std": float("nan"),
                              "n_seeds": 0, "failures": failures})
    return out
