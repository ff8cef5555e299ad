"""Training: the full ELBO, the optimization loop, and the annealed
structure updates of the adaptive variant."""

from __future__ import annotations

import csv
import io
import json
import time
import zipfile
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import model as M
from . import taxonomy
from .autodiff import Tensor
from .corpus import batches


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    layer_sizes: list = None      # [V, K_1, ..., K_L]
    embed_dim: int = 50
    hidden_dim: int = 256
    gcn_depth: int = 2
    graph_weight: float = 50.0    # belief in the prior tree
    threshold: float = 0.4        # structure-update cutoff
    anneal_every: int = 200       # iterations between structure updates
    batch_size: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 0.01
    iterations: int = 1000
    seed: int = 0
    mode: str = "topickg"         # "topickg" | "topickga"
    gamma_prior: float = 0.1
    rate_prior: float = 1.0

    def validate(self):
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        if self.graph_weight < 0:
            raise ValueError("graph_weight must be >= 0")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")
        if self.anneal_every < 1:
            raise ValueError("anneal_every must be >= 1")
        if self.mode not in ("topickg", "topickga"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.layer_sizes is not None and len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs the word layer plus >= 1 topic layer")

    @property
    def adaptive(self):
        return self.mode == "topickga"


_INT_KEYS = {"embed_dim", "hidden_dim", "gcn_depth", "anneal_every",
             "batch_size", "iterations", "seed"}
_FLOAT_KEYS = {"graph_weight", "threshold", "learning_rate", "weight_decay",
               "gamma_prior", "rate_prior"}


def load_config(path):
    cfg = TrainConfig()
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "layer_sizes":
                cfg.layer_sizes = [int(v) for v in value.replace(",", " ").split()]
            elif key in _INT_KEYS:
                setattr(cfg, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(cfg, key, float(value))
            elif key == "mode":
                cfg.mode = value
            else:
                raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
    cfg.validate()
    return cfg


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in asdict(cfg).items():
            if value is None:
                continue
            if key == "layer_sizes":
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)       # per-iteration records
    revisions: list = field(default_factory=list)  # structure-update events

    FIELDS = ("iteration", "nll", "graph_ll", "kl", "elbo", "wall_ms")

    def log(self, iteration, nll, graph_ll, kl, elbo, wall_ms):
        self.rows.append({"iteration": iteration, "nll": nll, "graph_ll": graph_ll,
                          "kl": kl, "elbo": elbo, "wall_ms": wall_ms})

    def nll_curve(self):
        return np.array([r["nll"] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.FIELDS)
            writer.writeheader()
            writer.writerows(self.rows)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def elbo(x, params, mats, config, uniforms=None, rng=None):
    """Evidence lower bound of one batch, with its decomposition.

    Returns (elbo_tensor, parts) where parts holds the reconstruction,
    graph, and KL totals plus the per-document NLL, the encoder state, the
    topic matrices, and (adaptive mode) the revised adjacency value.
    """
    sizes = mats.layer_sizes
    L = len(sizes) - 1
    gcn_weights = [params[f"W_g{t}"] for t in range(config.gcn_depth)]

    a_rev = None
    if config.adaptive:
        a_ada = taxonomy.adaptive_adjacency(params["E_A"])
        a_eff = taxonomy.revise_adjacency(mats.A_norm, a_ada)
        a_rev = a_eff
    else:
        a_eff = ad.as_tensor(mats.A_norm)

    e_t = M.gcn_forward(a_eff, params["E"], gcn_weights)
    phis = M.compute_phi(e_t, sizes)
    graph_ll = M.edge_log_probs(e_t, params["W_edge"], mats.S, mats.C, sizes)

    state = M.encode(x, phis, params, sizes, uniforms=uniforms, rng=rng)
    doc_ll = M.poisson_log_lik(x, phis[0], state.theta[0])
    recon = ad.tsum(doc_ll)

    kl_total = None
    gamma_vec = np.full(sizes[L], config.gamma_prior)
    for l in range(1, L + 1):
        if l == L:
            alpha = ad.as_tensor(gamma_vec)
        else:
            alpha = ad.clamp(state.prior_shape[l - 1], lo=1e-10)
        kl_l = ad.tsum(ad.kl_weibull_gamma(state.k[l - 1], state.lam[l - 1],
                                           alpha, config.rate_prior))
        kl_total = kl_l if kl_total is None else ad.add(kl_total, kl_l)

    total = ad.sub(ad.add(recon, ad.mul(config.graph_weight, graph_ll)), kl_total)
    parts = {
        "recon": float(recon.data),
        "graph_ll": float(graph_ll.data),
        "kl": float(kl_total.data),
        "elbo": float(total.data),
        "nll_per_doc": -doc_ll.data.copy(),
        "state": state,
        "phis": phis,
        "a_rev": a_rev,
    }
    return total, parts


# ---------------------------------------------------------------------------
# annealed structure update
# ---------------------------------------------------------------------------

def anneal_update(a_rev, mats, prior_S, prior_C, threshold):
    """Re-binarize S and C from the revised adjacency.

    Sub-block entries above ``threshold`` become edges; the result is
    unioned with the original prior structure so prior edges are never
    deleted. Returns (new_S, new_C, delta) where delta records the edges
    added relative to the current matrices.
    """
    sizes = mats.layer_sizes
    slices = M.layer_slices(sizes)
    new_S, new_C = [], []
    delta = {"s_added": [], "c_added": []}
    for l in range(1, len(sizes)):
        lo_a, lo_b = slices[l - 1]
        hi_a, hi_b = slices[l]
        w_a, w_b = slices[0]
        s_block = a_rev[lo_a:lo_b, hi_a:hi_b]
        c_block = a_rev[w_a:w_b, hi_a:hi_b]
        s_new = np.where((s_block > threshold) | (prior_S[l - 1] > 0), 1.0, 0.0)
        c_new = np.where((c_block > threshold) | (prior_C[l - 1] > 0), 1.0, 0.0)
        for i, k in zip(*np.where((s_new > 0) & (mats.S[l - 1] == 0))):
            delta["s_added"].append((l, int(i), int(k)))
        for v, k in zip(*np.where((c_new > 0) & (mats.C[l - 1] == 0))):
            delta["c_added"].append((l, int(v), int(k)))
        new_S.append(s_new)
        new_C.append(c_new)
    return new_S, new_C, delta


def rebuild_matrices(S, C, layer_sizes):
    """Fresh adjacency snapshot from (possibly revised) S and C."""
    N = sum(layer_sizes)
    slices = M.layer_slices(layer_sizes)
    A = np.eye(N)
    for l in range(1, len(layer_sizes)):
        lo_a, _ = slices[l - 1]
        hi_a, _ = slices[l]
        w_a, _ = slices[0]
        rows, cols = np.where(S[l - 1] > 0)
        A[lo_a + rows, hi_a + cols] = 1.0
        A[hi_a + cols, lo_a + rows] = 1.0
        rows, cols = np.where(C[l - 1] > 0)
        A[w_a + rows, hi_a + cols] = 1.0
        A[hi_a + cols, w_a + rows] = 1.0
    deg = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    A_norm = A * inv_sqrt[:, None] * inv_sqrt[None, :]
    return taxonomy.GraphMatrices(S=[s.copy() for s in S], C=[c.copy() for c in C],
                                  A=A, A_norm=A_norm, layer_sizes=list(layer_sizes))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _batch_stream(corpus, batch_size, seed):
    epoch = 0
    while True:
        for batch in batches(corpus, batch_size, seed + epoch):
            yield batch
        epoch += 1


def train(corpus, tree, config, checkpoint_path=None, log_every=1):
    """Run the optimization loop; returns (params, mats, report)."""
    config.validate()
    mats = taxonomy.to_matrices(tree)
    if config.layer_sizes is None:
        config.layer_sizes = list(mats.layer_sizes)
    if list(config.layer_sizes) != list(mats.layer_sizes):
        raise ValueError(f"config layer_sizes {config.layer_sizes} do not match "
                         f"tree layer sizes {mats.layer_sizes}")
    prior_S = [s.copy() for s in mats.S]
    prior_C = [c.copy() for c in mats.C]

    params = M.init_params(mats.layer_sizes, config.embed_dim, config.hidden_dim,
                           config.gcn_depth, config.seed, adaptive=config.adaptive)
    opt = ad.AdamW(params, lr=config.learning_rate,
                   weight_decay=config.weight_decay)
    sample_rng = np.random.Generator(np.random.PCG64(config.seed + 500))
    stream = _batch_stream(corpus, config.batch_size, config.seed + 1000)
    report = TrainReport()

    for it in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        batch = next(stream)
        total, parts = elbo(batch.x, params, mats, config, rng=sample_rng)
        loss_val = -float(total.data)
        if not np.isfinite(loss_val):
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, params, config, mats,
                                node_names=tree.layers)
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: "
                f"recon={parts['recon']:.3e} graph={parts['graph_ll']:.3e} "
                f"kl={parts['kl']:.3e}")
        opt.zero_grad()
        ad.backward(ad.mul(total, -1.0))
        opt.step()

        if config.adaptive and it % config.anneal_every == 0:
            new_S, new_C, delta = anneal_update(parts["a_rev"].data, mats,
                                                prior_S, prior_C, config.threshold)
            mats = rebuild_matrices(new_S, new_C, mats.layer_sizes)
            report.revisions.append({"iteration": it, **delta})

        if it % log_every == 0:
            wall_ms = (time.perf_counter() - t0) * 1e3
            report.log(it, float(parts["nll_per_doc"].mean()), parts["graph_ll"],
                       parts["kl"], parts["elbo"], wall_ms)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, config, mats,
                        node_names=tree.layers)
    return params, mats, report


def infer_theta(x, params, mats, config):
    """Deterministic per-document topic proportions (Weibull means)."""
    gcn_weights = [params[f"W_g{t}"] for t in range(config.gcn_depth)]
    if config.adaptive:
        a_eff = taxonomy.revise_adjacency(
            mats.A_norm, taxonomy.adaptive_adjacency(params["E_A"]))
    else:
        a_eff = ad.as_tensor(mats.A_norm)
    e_t = M.gcn_forward(a_eff, params["E"], gcn_weights)
    phis = M.compute_phi(e_t, mats.layer_sizes)
    state = M.encode(x, phis, params, mats.layer_sizes, deterministic=True)
    return [t.data.copy() for t in state.theta], [p.data.copy() for p in phis]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, config, mats, node_names=None):
    """Named little-endian float64 arrays plus a JSON manifest; reload is
    bit-exact."""
    arrays = {f"param/{name}": np.ascontiguousarray(p.data, dtype="<f8")
              for name, p in params.items()}
    for l, s in enumerate(mats.S, start=1):
        arrays[f"S/{l}"] = np.ascontiguousarray(s, dtype="<f8")
    for l, c in enumerate(mats.C, start=1):
        arrays[f"C/{l}"] = np.ascontiguousarray(c, dtype="<f8")
    manifest = {
        "config": asdict(config),
        "param_names": sorted(params),
        "layer_sizes": list(mats.layer_sizes),
        "node_names": node_names,
    }
    def entry(name):
        # fixed timestamp so identical runs give byte-identical files
        info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
        info.external_attr = 0o644 << 16
        return info

    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(entry("manifest.json"),
                    json.dumps(manifest, indent=1, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, arrays[name])
            zf.writestr(entry(name.replace("/", "__") + ".npy"), buf.getvalue())


def load_checkpoint(path):
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        arrays = {}
        for info in zf.infolist():
            if info.filename.endswith(".npy"):
                arrays[info.filename[:-4].replace("__", "/")] = np.load(
                    io.BytesIO(zf.read(info.filename)))
    cfg = TrainConfig(**manifest["config"])
    params = {name: Tensor(arrays[f"param/{name}"], requires_grad=True, name=name)
              for name in manifest["param_names"]}
    sizes = manifest["layer_sizes"]
    L = len(sizes) - 1
    S = [arrays[f"S/{l}"] for l in range(1, L + 1)]
    C = [arrays[f"C/{l}"] for l in range(1, L + 1)]
    mats = rebuild_matrices(S, C, sizes)
    return params, cfg, mats, manifest
