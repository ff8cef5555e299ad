"""TopicKG / TopicKGA networks.

Pieces: residual GCN over the topic-tree adjacency, topic matrices from
embedding inner products, Bernoulli log-likelihood of the tree edges, the
Weibull upward-downward encoder, and the Poisson decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import autodiff as ad
from .autodiff import Tensor

K_MIN, K_MAX = 0.1, 10.0
LAM_MIN, LAM_MAX = 1e-4, 1e4
RATE_FLOOR = 1e-10


@dataclass
class VariationalState:
    """Per-batch encoder outputs, one entry per topic layer (index 0 = layer 1)."""
    k: list        # Weibull shapes, each B x K_l
    lam: list      # Weibull scales, each B x K_l
    theta: list    # samples (or means in deterministic mode), each B x K_l
    prior_shape: list = field(default_factory=list)  # Phi^(l+1) theta^(l+1); None at the top


def layer_slices(layer_sizes):
    """Column ranges of each layer in the global node ordering."""
    out, start = [], 0
    for n in layer_sizes:
        out.append((start, start + n))
        start += n
    return out


def init_params(layer_sizes, embed_dim, hidden_dim, gcn_depth, seed,
                adaptive=False, init_std=0.02):
    """Initialize all learnable tensors. ``layer_sizes`` is [V, K_1, .., K_L]."""
    rng = np.random.Generator(np.random.PCG64(seed))
    V = layer_sizes[0]
    N = sum(layer_sizes)
    L = len(layer_sizes) - 1
    d, H = embed_dim, hidden_dim

    def gauss(*shape):
        return rng.normal(0.0, init_std, size=shape)

    params = {
        "E": Tensor(gauss(d, N), requires_grad=True, name="E"),
        "W_edge": Tensor(gauss(d, d), requires_grad=True, name="W_edge"),
        "W_in": Tensor(gauss(H, V), requires_grad=True, name="W_in"),
        "b_in": Tensor(np.zeros(H), requires_grad=True, name="b_in"),
    }
    if adaptive:
        params["E_A"] = Tensor(gauss(d, N), requires_grad=True, name="E_A")
    for t in range(gcn_depth):
        params[f"W_g{t}"] = Tensor(gauss(d, d), requires_grad=True, name=f"W_g{t}")
    for l in range(1, L + 1):
        K = layer_sizes[l]
        params[f"W_h1_{l}"] = Tensor(gauss(H, H), requires_grad=True)
        params[f"b_h1_{l}"] = Tensor(np.zeros(H), requires_grad=True)
        params[f"W_h2_{l}"] = Tensor(gauss(H, H), requires_grad=True)
        params[f"b_h2_{l}"] = Tensor(np.zeros(H), requires_grad=True)
        params[f"W_k_{l}"] = Tensor(gauss(K, H), requires_grad=True)
        params[f"b_k_{l}"] = Tensor(np.zeros(K), requires_grad=True)
        params[f"W_lam_{l}"] = Tensor(gauss(K, H), requires_grad=True)
        params[f"b_lam_{l}"] = Tensor(np.zeros(K), requires_grad=True)
        params[f"F_k_{l}"] = Tensor(gauss(K, 2 * K), requires_grad=True)
        params[f"g_k_{l}"] = Tensor(np.zeros(K), requires_grad=True)
        params[f"F_lam_{l}"] = Tensor(gauss(K, 2 * K), requires_grad=True)
        params[f"g_lam_{l}"] = Tensor(np.zeros(K), requires_grad=True)
    # raw top-layer prior context; softplus'd where used
    params["top_prior"] = Tensor(np.zeros(layer_sizes[L]), requires_grad=True)
    return params


def gcn_forward(A_eff, E, gcn_weights):
    """Residual graph convolution: E <- E + relu(W_g E A_eff), repeated."""
    A_eff = ad.as_tensor(A_eff)
    out = E
    for W_g in gcn_weights:
        out = ad.add(out, ad.relu(ad.matmul(ad.matmul(W_g, out), A_eff)))
    return out


def compute_phi(E_T, layer_sizes):
    """Topic matrices: Phi^(l)[:, k] = softmax over layer-(l-1) nodes of
    inner products between adjacent-layer embeddings."""
    slices = layer_slices(layer_sizes)
    phis = []
    for l in range(1, len(layer_sizes)):
        a0, b0 = slices[l - 1]
        a1, b1 = slices[l]
        low = E_T[:, a0:b0]
        high = E_T[:, a1:b1]
        psi = ad.matmul(ad.transpose(low), high)   # K_{l-1} x K_l
        phis.append(ad.softmax(psi, axis=0))
    return phis


def edge_log_probs(E_T, W_edge, S, C, layer_sizes):
    """Dense Bernoulli log-likelihood of every S and C entry.

    S edges use the bilinear directed logit e_child^T W e_parent; C edges use
    the symmetric inner product with the word embeddings.
    """
    slices = layer_slices(layer_sizes)
    a0, b0 = slices[0]
    E_words = E_T[:, a0:b0]
    total = None
    for l in range(1, len(layer_sizes)):
        al, bl = slices[l]
        E_low = E_T[:, slices[l - 1][0]:slices[l - 1][1]]
        E_l = E_T[:, al:bl]
        z_s = ad.matmul(ad.matmul(ad.transpose(E_low), W_edge), E_l)
        z_c = ad.matmul(ad.transpose(E_words), E_l)
        s_mat, c_mat = S[l - 1], C[l - 1]
        # s*log(sig(z)) + (1-s)*log(1-sig(z)) via stable softplus
        ll_s = ad.sub(ad.mul(s_mat, z_s), ad.softplus(z_s))
        ll_c = ad.sub(ad.mul(c_mat, z_c), ad.softplus(z_c))
        term = ad.add(ad.tsum(ll_s), ad.tsum(ll_c))
        total = term if total is None else ad.add(total, term)
    return total


def _affine(x, W, b):
    return ad.add(ad.matmul(x, ad.transpose(W)), b)


def encode(x, phis, params, layer_sizes, uniforms=None, rng=None, deterministic=False):
    """Weibull upward-downward encoder.

    ``x`` is a dense B x V count batch. Upward: a V->H projection followed by
    one two-layer residual block per topic layer. Downward (top to bottom):
    ReLU projections give provisional shape/scale, concatenated with the
    prior context Phi^(l+1) theta^(l+1) (a learned positive constant at the
    top), mapped through single-layer heads, softplus'd and clamped. Samples
    come from the reparameterized Weibull; in deterministic mode theta is the
    Weibull mean.
    """
    L = len(layer_sizes) - 1
    B = x.shape[0]
    h = ad.relu(_affine(ad.as_tensor(np.asarray(x, dtype=np.float64)),
                        params["W_in"], params["b_in"]))
    ups = []
    for l in range(1, L + 1):
        inner = ad.relu(_affine(h, params[f"W_h1_{l}"], params[f"b_h1_{l}"]))
        h = ad.add(h, _affine(inner, params[f"W_h2_{l}"], params[f"b_h2_{l}"]))
        ups.append(h)

    ks, lams, thetas = [None] * L, [None] * L, [None] * L
    priors = [None] * L
    context = None  # Phi^(l+1) theta^(l+1), B x K_l
    for l in range(L, 0, -1):
        h_l = ups[l - 1]
        K = layer_sizes[l]
        k_hat = ad.relu(_affine(h_l, params[f"W_k_{l}"], params[f"b_k_{l}"]))
        lam_hat = ad.relu(_affine(h_l, params[f"W_lam_{l}"], params[f"b_lam_{l}"]))
        if l == L:
            context = ad.mul(ad.as_tensor(np.ones((B, K))),
                             ad.softplus(params["top_prior"]))
        else:
            priors[l - 1] = context
        k = ad.clamp(ad.softplus(_affine(ad.concat([context, k_hat], axis=1),
                                         params[f"F_k_{l}"], params[f"g_k_{l}"])),
                     K_MIN, K_MAX)
        lam = ad.clamp(ad.softplus(_affine(ad.concat([context, lam_hat], axis=1),
                                           params[f"F_lam_{l}"], params[f"g_lam_{l}"])),
                       LAM_MIN, LAM_MAX)
        if deterministic:
            theta = ad.weibull_mean(k, lam)
        else:
            if uniforms is not None:
                u = uniforms[l - 1]
            else:
                u = rng.uniform(size=(B, K))
            theta = ad.weibull_sample(k, lam, u)
        ks[l - 1], lams[l - 1], thetas[l - 1] = k, lam, theta
        if l > 1:
            context = ad.matmul(theta, ad.transpose(phis[l - 1]))  # B x K_{l-1}
    return VariationalState(k=ks, lam=lams, theta=thetas, prior_shape=priors)


def poisson_log_lik(x, phi1, theta1):
    """Per-document Poisson log-likelihood (length-B tensor).

    rate = theta^(1) Phi^(1)T per document, floored at RATE_FLOOR.
    """
    rate = ad.clamp(ad.matmul(theta1, ad.transpose(phi1)), lo=RATE_FLOOR)
    x_arr = np.asarray(x, dtype=np.float64)
    log_fact = gammaln(x_arr + 1.0).sum(axis=1)
    ll = ad.sub(ad.tsum(ad.sub(ad.mul(x_arr, ad.log(rate)), rate), axis=1),
                ad.as_tensor(log_fact))
    return ll
