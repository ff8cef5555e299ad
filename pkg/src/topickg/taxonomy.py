"""Prior topic tree: construction from a hypernym lexicon and the graph
matrices (S, C, A, normalized A) the model consumes.

Global node ordering is layer 0 (the vocabulary) first, then layer 1 up to
the root layer; every module indexes nodes the same way.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ROOT_NAME = "<root>"

_TOKEN_RE = re.compile(r"[^\W\d_]+", re.UNICODE)


class TaxonomyError(ValueError):
    pass


class CycleError(TaxonomyError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("hypernym lexicon contains a cycle: " + " -> ".join(self.cycle))


@dataclass
class TopicTree:
    layers: list            # layers[l] = list of node names; layers[0] = vocab
    edges: set              # (parent_gid, child_gid), layers adjacent
    concepts: dict = field(default_factory=dict)   # topic gid -> sorted word ids
    defs: dict = field(default_factory=dict)       # gid -> definition text
    report: dict = field(default_factory=dict)

    @property
    def num_layers(self):
        """Number of topic layers (excludes the word layer)."""
        return len(self.layers) - 1

    @property
    def layer_sizes(self):
        return [len(layer) for layer in self.layers]

    @property
    def num_nodes(self):
        return sum(self.layer_sizes)

    def offsets(self):
        off, total = [], 0
        for layer in self.layers:
            off.append(total)
            total += len(layer)
        return off

    def gid(self, layer, idx):
        return self.offsets()[layer] + idx

    def layer_of(self, gid):
        off = self.offsets()
        for l in range(len(self.layers) - 1, -1, -1):
            if gid >= off[l]:
                return l, gid - off[l]
        raise IndexError(gid)

    def validate(self):
        off = self.offsets()
        n = self.num_nodes
        for p, c in self.edges:
            if not (0 <= p < n and 0 <= c < n):
                raise TaxonomyError(f"edge ({p},{c}) references unknown node")
            lp, _ = self.layer_of(p)
            lc, _ = self.layer_of(c)
            if lp != lc + 1:
                raise TaxonomyError(f"edge ({p},{c}) spans layers {lp},{lc}")
        for t, words in self.concepts.items():
            lt, _ = self.layer_of(t)
            if lt < 1:
                raise TaxonomyError(f"concept entry on word node {t}")
            for w in words:
                if not (0 <= w < len(self.layers[0])):
                    raise TaxonomyError(f"concept word id {w} out of range")
        if len(self.layers[-1]) != 1:
            raise TaxonomyError("top layer must hold a single root")


@dataclass
class GraphMatrices:
    S: list          # S[l-1] has shape K_{l-1} x K_l, binary, l = 1..L
    C: list          # C[l-1] has shape V x K_l, binary
    A: np.ndarray    # N x N symmetric with self-loops
    A_norm: np.ndarray
    layer_sizes: list


def _find_cycle(parent_map):
    color = {}
    stack_path = []

    def visit(n):
        color[n] = 1
        stack_path.append(n)
        for p in parent_map.get(n, ()):
            if color.get(p, 0) == 1:
                i = stack_path.index(p)
                return stack_path[i:] + [p]
            if color.get(p, 0) == 0:
                found = visit(p)
                if found:
                    return found
        stack_path.pop()
        color[n] = 2
        return None

    for node in list(parent_map):
        if color.get(node, 0) == 0:
            found = visit(node)
            if found:
                return found
    return None


def _name_tokens(text):
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def build_tree(vocab, hypernym_pairs, max_layers, defs=None):
    """Build a topic tree whose leaves are the vocabulary.

    Words found in the lexicon climb their hypernym chains; a chain position
    becomes the node's layer (longest distance from any leaf). Ancestors
    beyond ``max_layers`` collapse into the root; gaps between a child and a
    higher parent are bridged by repeating the child at the skipped layers.
    Words without a lexicon entry stay at layer 0 with no parent edges.
    """
    L = int(max_layers)
    if L < 1:
        raise TaxonomyError("max_layers must be >= 1")
    defs = dict(defs or {})
    vocab = list(vocab)
    vocab_index = {w: i for i, w in enumerate(vocab)}

    parent_map = {}
    for child, parent in hypernym_pairs:
        if child == parent:
            raise CycleError([child, parent])
        parent_map.setdefault(child, set()).add(parent)
    cycle = _find_cycle(parent_map)
    if cycle:
        raise CycleError(cycle)

    leaves = [w for w in vocab if w in parent_map]
    excluded = [w for w in vocab if w not in parent_map]
    if not leaves:
        raise TaxonomyError("vocabulary has no intersection with the lexicon")

    # collect every ancestor reachable from a leaf word
    relevant = set()
    frontier = list(leaves)
    while frontier:
        nxt = []
        for n in frontier:
            for p in parent_map.get(n, ()):
                if p not in relevant:
                    relevant.add(p)
                    nxt.append(p)
        frontier = nxt

    children_of = {}
    for child, parents in parent_map.items():
        if child in vocab_index or child in relevant:
            for p in parents:
                if p in relevant:
                    children_of.setdefault(p, set()).add(child)

    depth = {}

    def compute_depth(n):
        stack = [(n, iter(children_of.get(n, ())))]
        on_path = {n}
        while stack:
            node, it = stack[-1]
            advanced = False
            for c in it:
                if c in relevant and c not in depth and c not in on_path:
                    stack.append((c, iter(children_of.get(c, ()))))
                    on_path.add(c)
                    advanced = True
                    break
            if advanced:
                continue
            best = 0
            for c in children_of.get(node, ()):
                if c in vocab_index:
                    best = max(best, 1)
                if c in relevant:
                    best = max(best, depth.get(c, 0) + 1)
            depth[node] = best
            on_path.discard(node)
            stack.pop()

    for n in relevant:
        if n not in depth:
            compute_depth(n)

    tops = [n for n in relevant if not (parent_map.get(n, set()) & relevant)]
    if len(tops) == 1 and depth[tops[0]] <= L:
        root_name = tops[0]
    else:
        root_name = ROOT_NAME

    def placement(name):
        """Layer a lexicon node lives at as a topic, or L if merged into root."""
        if name == root_name:
            return L
        d = depth[name]
        return L if d >= L else d

    # instantiate (name, layer) topic nodes
    topic_nodes = {}  # (name, layer) -> index within layer
    topic_layers = [[] for _ in range(L + 1)]

    def ensure(name, layer):
        key = (name, layer)
        if key not in topic_nodes:
            topic_nodes[key] = len(topic_layers[layer])
            topic_layers[layer].append(name)
        return key

    ensure(root_name, L)
    raw_edges = set()  # ((cname, clayer), (pname, player))

    def connect(child_key, parent_name):
        cname, clayer = child_key
        player = placement(parent_name)
        pname = root_name if player == L else parent_name
        if player <= clayer:
            return
        cur = child_key
        for layer in range(clayer + 1, player):
            nxt = ensure(cname, layer)
            raw_edges.add((cur, nxt))
            cur = nxt
        raw_edges.add((cur, ensure(pname, player)))

    for w in leaves:
        for p in parent_map[w]:
            if p in relevant:
                connect((w, 0), p)
    for n in relevant:
        player_n = placement(n)
        if player_n >= L:
            continue
        key = ensure(n, player_n)
        parents = parent_map.get(n, set()) & relevant
        if not parents:
            connect(key, root_name)
        for p in parents:
            connect(key, p)

    # ensure every non-root topic layer node reaches upward (tops below L-1)
    for (name, layer), _idx in list(topic_nodes.items()):
        if layer == L:
            continue
        has_parent = any(c == (name, layer) for c, _p in raw_edges)
        if not has_parent:
            connect((name, layer), root_name)

    layers = [vocab] + topic_layers[1:]
    tree = TopicTree(layers=layers, edges=set())
    off = tree.offsets()

    def gid_of(key):
        name, layer = key
        if layer == 0:
            return vocab_index[name]
        return off[layer] + topic_nodes[key]

    for c_key, p_key in raw_edges:
        tree.edges.add((gid_of(p_key), gid_of(c_key)))

    # concept words from definitions, falling back to the node name
    for (name, layer), _idx in topic_nodes.items():
        g = gid_of((name, layer))
        text = defs.get(name, "")
        words = {vocab_index[t] for t in _name_tokens(text) if t in vocab_index}
        if not words:
            words = {vocab_index[t] for t in _name_tokens(name) if t in vocab_index}
        if name in vocab_index:
            words.add(vocab_index[name])
        if words:
            tree.concepts[g] = sorted(words)
        if text:
            tree.defs[g] = text

    tree.report = {
        "layer_sizes": tree.layer_sizes,
        "leaves": len(leaves),
        "excluded_words": excluded,
        "root": root_name,
    }
    tree.validate()
    return tree


def to_matrices(tree):
    """Materialize S, C, the flat symmetric self-looped adjacency A, and its
    degree-normalized form."""
    sizes = tree.layer_sizes
    L = tree.num_layers
    V = sizes[0]
    N = tree.num_nodes
    off = tree.offsets()

    S = [np.zeros((sizes[l - 1], sizes[l])) for l in range(1, L + 1)]
    C = [np.zeros((V, sizes[l])) for l in range(1, L + 1)]
    A = np.eye(N)

    for p, c in tree.edges:
        lp, ip = tree.layer_of(p)
        lc, ic = tree.layer_of(c)
        S[lp - 1][ic, ip] = 1.0
        A[p, c] = A[c, p] = 1.0
    for t, words in tree.concepts.items():
        lt, it = tree.layer_of(t)
        for w in words:
            C[lt - 1][w, it] = 1.0
            A[w, t] = A[t, w] = 1.0

    deg = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    A_norm = A * inv_sqrt[:, None] * inv_sqrt[None, :]
    return GraphMatrices(S=S, C=C, A=A, A_norm=A_norm, layer_sizes=sizes)


def adaptive_adjacency(E_A):
    """Row-softmax of pairwise cosine similarities between node embeddings.

    ``E_A`` is d x N (one column per node); each output row sums to 1.
    """
    return ad.softmax(ad.cosine_similarity_matrix(E_A), axis=1)


def revise_adjacency(A_norm, A_ada):
    """Combine the normalized prior adjacency with the adaptive one."""
    if tuple(np.shape(A_norm)) != tuple(A_ada.shape):
        raise ad.ShapeMismatch("revise_adjacency", np.shape(A_norm), A_ada.shape)
    return ad.add(ad.as_tensor(A_norm), A_ada)


# ---------------------------------------------------------------------------
# tree file format
# ---------------------------------------------------------------------------

def save_tree(tree, path):
    off = tree.offsets()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"LAYERS {tree.num_layers + 1}\n")
        for l, layer in enumerate(tree.layers):
            for i, name in enumerate(layer):
                fh.write(f"NODE {off[l] + i} {l} {name}\n")
        for p, c in sorted(tree.edges):
            fh.write(f"EDGE {p} {c}\n")
        for t in sorted(tree.concepts):
            for w in tree.concepts[t]:
                fh.write(f"CONCEPT {t} {w}\n")
        for g in sorted(tree.defs):
            fh.write(f"DEF {g} {tree.defs[g]}\n")


def load_tree(path):
    n_layers = None
    nodes = {}
    edges = set()
    concepts = {}
    defs = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            kind, _, rest = line.partition(" ")
            if kind == "LAYERS":
                n_layers = int(rest)
            elif kind == "NODE":
                gid_s, _, tail = rest.partition(" ")
                layer_s, _, name = tail.partition(" ")
                nodes[int(gid_s)] = (int(layer_s), name)
            elif kind == "EDGE":
                p, c = rest.split()
                edges.add((int(p), int(c)))
            elif kind == "CONCEPT":
                t, w = rest.split()
                concepts.setdefault(int(t), []).append(int(w))
            elif kind == "DEF":
                g, _, text = rest.partition(" ")
                defs[int(g)] = text
            else:
                raise TaxonomyError(f"{path}:{ln}: unknown record {kind!r}")
    if n_layers is None:
        raise TaxonomyError(f"{path}: missing LAYERS header")
    layers = [[] for _ in range(n_layers)]
    for gid in sorted(nodes):
        layer, name = nodes[gid]
        layers[layer].append(name)
    tree = TopicTree(layers=layers, edges=edges,
                     concepts={t: sorted(ws) for t, ws in concepts.items()},
                     defs=defs)
    tree.validate()
    return tree


def save_lexicon(pairs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for child, parent in pairs:
            fh.write(f"{child} {parent}\n")


def load_lexicon(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise TaxonomyError(f"{path}:{ln}: expected 'child parent'")
            pairs.append((parts[0], parts[1]))
    return pairs
