"""scikit-learn style front end.

``TopicKG`` (and its adaptive subclass ``TopicKGA``) fit on a document-term
count matrix and transform documents into layer-1 topic proportions, so the
models compose with sklearn pipelines and downstream classifiers.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import trainer
from .corpus import Corpus
from .trainer import TrainConfig


class TopicKG(BaseEstimator, TransformerMixin):
    """Knowledge-graph guided hierarchical embedded topic model.

    Parameters mirror TrainConfig; ``tree`` is a taxonomy.TopicTree whose
    word layer must match the columns of X.
    """

    _mode = "topickg"

    def __init__(self, tree=None, embed_dim=50, hidden_dim=256, gcn_depth=2,
                 graph_weight=50.0, threshold=0.4, anneal_every=200,
                 batch_size=200, learning_rate=0.01, weight_decay=0.01,
                 iterations=1000, seed=0, gamma_prior=0.1, rate_prior=1.0):
        self.tree = tree
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.gcn_depth = gcn_depth
        self.graph_weight = graph_weight
        self.threshold = threshold
        self.anneal_every = anneal_every
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.iterations = iterations
        self.seed = seed
        self.gamma_prior = gamma_prior
        self.rate_prior = rate_prior

    def _config(self):
        return TrainConfig(
            layer_sizes=None, embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
            gcn_depth=self.gcn_depth, graph_weight=self.graph_weight,
            threshold=self.threshold, anneal_every=self.anneal_every,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, iterations=self.iterations,
            seed=self.seed, mode=self._mode, gamma_prior=self.gamma_prior,
            rate_prior=self.rate_prior)

    def _validate_counts(self, X):
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        data = X.data if sparse.issparse(X) else X
        if np.any(data < 0):
            raise ValueError("X must hold non-negative counts")
        return X

    @staticmethod
    def _dense(X):
        return np.asarray(X.todense() if sparse.issparse(X) else X, dtype=np.float64)

    def fit(self, X, y=None):
        if self.tree is None:
            raise ValueError("a prior topic tree is required; pass tree=...")
        X = self._validate_counts(X)
        if X.shape[1] != len(self.tree.layers[0]):
            raise ValueError(
                f"X has {X.shape[1]} columns but the tree's word layer has "
                f"{len(self.tree.layers[0])} nodes")
        counts = sparse.csr_matrix(self._dense(X).astype(np.int64))
        corpus = Corpus(vocab=list(self.tree.layers[0]), counts=counts)
        config = self._config()
        params, mats, report = trainer.train(corpus, self.tree, config)
        self.params_ = params
        self.mats_ = mats
        self.report_ = report
        self.config_ = config
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = self._validate_counts(X)
        thetas, _phis = trainer.infer_theta(self._dense(X), self.params_,
                                            self.mats_, self.config_)
        return thetas[0]

    def topic_matrices(self):
        """Learned Phi matrices as numpy arrays (column-stochastic)."""
        check_is_fitted(self, "params_")
        _thetas, phis = trainer.infer_theta(
            np.zeros((1, self.n_features_in_)), self.params_, self.mats_, self.config_)
        return phis

    def word_embeddings(self):
        check_is_fitted(self, "params_")
        return self.params_["E"].data[:, :self.n_features_in_].copy()


class TopicKGA(TopicKG):
    """Adaptive variant: learns an extra adjacency from node embeddings and
    periodically revises the prior tree structure."""

    _mode = "topickga"
