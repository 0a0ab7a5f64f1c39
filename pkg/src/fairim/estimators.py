"""scikit-learn style wrappers around training and seed selection.

>>> emb = FairInfluenceEmbedding(mode="fac", epochs=5).fit(train_log, profiles=p, attr="gender")
>>> sel = FairGreedySelector(k=10, alpha=0.2).fit(emb, log=train_log, profiles=p, attr="gender")
>>> sel.predict()  # seed ids
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_alpha, check_attr, check_cascade_log, check_k
from .embedding import EmbeddingModel, TrainConfig, train
from .evaluation import dni, spread_fairness
from .fairness import population_counts
from .selection import (
    SelectionInputs,
    build_selection_inputs,
    diffusion_matrix,
    fair_greedy,
    naive_fair_greedy,
)


class FairInfluenceEmbedding(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Learn influencer/susceptible embeddings from a training cascade log.

    ``fit`` takes the log as ``X``; ``transform`` maps influencer ids to their
    embedding rows and ``predict_proba`` to diffusion-probability rows.
    """

    def __init__(
        self,
        mode="fac",
        embed_dim=50,
        epochs=10,
        learning_rate=0.1,
        negatives=10,
        eta_percent=120.0,
        noise_exponent=0.75,
        min_cascades=3,
        fairness_target="pooled",
        random_state=0,
    ):
        self.mode = mode
        self.embed_dim = embed_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.negatives = negatives
        self.eta_percent = eta_percent
        self.noise_exponent = noise_exponent
        self.min_cascades = min_cascades
        self.fairness_target = fairness_target
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            embed_dim=self.embed_dim, epochs=self.epochs, learning_rate=self.learning_rate,
            negatives=self.negatives, eta_percent=self.eta_percent, mode=self.mode,
            seed=int(self.random_state), noise_exponent=self.noise_exponent,
            min_cascades=self.min_cascades, fairness_target=self.fairness_target,
        )

    def fit(self, X, y=None, *, profiles, attr, nodes=None, population=None):
        log = check_cascade_log(X)
        check_attr(profiles, attr)
        self.model_ = train(log, profiles, attr, self._config(), nodes=nodes, population=population)
        self._set_fitted()
        return self

    @classmethod
    def from_model(cls, model: EmbeddingModel) -> "FairInfluenceEmbedding":
        est = cls(mode=model.mode if model.mode != "concat" else "fac", embed_dim=model.embed_dim)
        est.model_ = model
        est._set_fitted()
        return est

    def _set_fitted(self):
        m = self.model_
        self.influencers_ = m.influencers
        self.nodes_ = m.nodes
        self.n_features_out_ = m.embed_dim
        self.loss_history_ = [h["nce_loss"] for h in m.history]

    def _rows(self, X):
        if X is None:
            return np.arange(len(self.influencers_))
        return np.array([self.model_.row(u) for u in X], dtype=np.int64)

    def transform(self, X=None):
        """Influence embeddings for the influencer ids in ``X`` (all when ``None``)."""
        check_is_fitted(self, "model_")
        return self.model_.theta[self._rows(X)].astype(np.float64)

    def predict_proba(self, X=None, include_bias=False):
        check_is_fitted(self, "model_")
        return diffusion_matrix(self.model_, include_bias)[self._rows(X)]

    def fairness_output(self, X=None):
        check_is_fitted(self, "model_")
        return self.model_.fairness_output()[self._rows(X)]


class FairGreedySelector(BaseEstimator):
    """Pick ``k`` spread seeds trading expected spread against fairness.

    ``fit`` accepts a fitted :class:`FairInfluenceEmbedding`, a raw
    :class:`EmbeddingModel` or prepared :class:`SelectionInputs`.
    """

    def __init__(self, k=10, alpha=0.2, include_bias=False, lazy=True):
        self.k = k
        self.alpha = alpha
        self.include_bias = include_bias
        self.lazy = lazy

    def fit(self, X, y=None, *, log=None, profiles=None, attr=None, population=None):
        alpha = check_alpha(self.alpha)
        if isinstance(X, SelectionInputs):
            inputs = X
        else:
            model = X.model_ if isinstance(X, FairInfluenceEmbedding) else X
            if not isinstance(model, EmbeddingModel):
                raise TypeError("X must be a fitted FairInfluenceEmbedding, EmbeddingModel or SelectionInputs")
            check_cascade_log(log)
            check_attr(profiles, attr)
            inputs = build_selection_inputs(model, log, profiles, attr, population, self.include_bias)
        k = check_k(self.k, inputs.D.shape[0])
        run = fair_greedy if self.lazy else naive_fair_greedy
        self.inputs_ = inputs
        self.seeds_ = run(inputs, k, alpha)
        return self

    def predict(self, X=None):
        """Selected seed ids in selection order."""
        check_is_fitted(self, "seeds_")
        return list(self.seeds_.ids)

    def fit_predict(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).predict()

    def score(self, X, y=None, *, profiles=None, attr=None, population=None):
        """DNI on the held-out log ``X``; with ``profiles``/``attr`` returns (dni, fairness)."""
        check_is_fitted(self, "seeds_")
        n, influenced = dni(self.seeds_, check_cascade_log(X, allow_empty=True))
        if profiles is None:
            return n
        if population is None:
            population = population_counts(profiles, attr, self.inputs_.nodes)
        return n, spread_fairness(influenced, profiles, attr, population).value
